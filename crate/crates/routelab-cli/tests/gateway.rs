//! Gateway behavior: health gating, guard-before-router ordering, parity
//! with the offline decision path, and the latency budget.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Instant;

use routelab::corpus::Split;
use routelab::guard::deploy_vote;
use routelab::pipeline::{Pipeline, PipelineConfig};
use routelab::routers::Router;
use routelab::GateDecision;
use routelab_cli::gateway::{app, gateway_query, GatewayState, LoadedGateway};

fn tiny_pipeline(dir: &std::path::Path) -> Pipeline {
    let mut cfg = PipelineConfig::default();
    cfg.root_seed = 11;
    cfg.corpus.n_simple = 60;
    cfg.corpus.n_complex = 60;
    cfg.router_epochs = 8;
    cfg.attack.trigger_len = 6;
    cfg.attack.iterations = 40;
    cfg.attack.neighbors_per_step = 8;
    cfg.attack.topk_candidates = 4;
    cfg.attack.whitebox_batch = 32;
    cfg.attack.triggers_per_method = 5;
    let p = Pipeline::new(cfg, dir).unwrap();
    p.gen_data().unwrap();
    p.train_routers().unwrap();
    p.calibrate().unwrap();
    p.attack().unwrap();
    p.train_guard().unwrap();
    p
}

fn http_request(addr: &str, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    let request = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    let status: u16 = response
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .expect("status line");
    let payload = response
        .split("\r\n\r\n")
        .nth(1)
        .unwrap_or_default()
        .to_string();
    (status, payload)
}

fn spawn_gateway(state: GatewayState) -> (tokio::runtime::Runtime, String) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    rt.spawn(async move {
        axum::serve(listener, app(state)).await.unwrap();
    });
    (rt, addr)
}

#[test]
fn health_returns_503_before_models_load() {
    let (_rt, addr) = spawn_gateway(GatewayState { loaded: None });
    let (status, _) = http_request(&addr, "GET", "/health", None);
    assert_eq!(status, 503);
    let (status, _) = http_request(&addr, "POST", "/route", Some(r#"{"query":"hi"}"#));
    assert_eq!(status, 503);
}

#[test]
fn gateway_decisions_match_offline_path() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = tiny_pipeline(dir.path());
    let loaded = LoadedGateway::from_pipeline(&pipeline, "r_cls").unwrap();
    let deploy_seed = loaded.deploy_seed;
    let k = loaded.guard_cfg.k_references;
    let guard = loaded.guard.clone();
    let pool = loaded.reference_pool.clone();
    let cal = loaded.router.clone();
    let state = GatewayState {
        loaded: Some(Arc::new(loaded)),
    };
    let (_rt, addr) = spawn_gateway(state);

    let (status, _) = http_request(&addr, "GET", "/health", None);
    assert_eq!(status, 200);

    // Benign query: decision equals offline deploy_vote + route with the
    // same checkpoints and seed derivation.
    let text = "what is the capital of france?";
    let (status, body) = http_request(
        &addr,
        "POST",
        "/route",
        Some(&format!(r#"{{"query":"{text}"}}"#)),
    );
    assert_eq!(status, 200, "{body}");
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    let offline_query = gateway_query(text);
    let (offline_gate, offline_record) =
        deploy_vote(&guard, &offline_query, &pool, k, deploy_seed).unwrap();
    if offline_gate == GateDecision::Block {
        assert_eq!(v["decision"], "Blocked");
    } else {
        let offline_route = cal.route(text).unwrap();
        let expect = match offline_route.model {
            routelab::routers::ModelChoice::Strong => "Strong",
            routelab::routers::ModelChoice::Weak => "Weak",
        };
        assert_eq!(v["decision"], expect);
        let wr = v["win_rate"].as_f64().unwrap();
        assert!((wr - offline_route.win_rate.value()).abs() < 1e-12);
    }
    assert_eq!(v["guard_votes"]["K"].as_u64().unwrap() as usize, k);
    assert_eq!(
        v["guard_votes"]["adv"].as_u64().unwrap() as usize,
        offline_record.adv_votes
    );
    assert!(v["latency_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["router"], "r_cls");

    // Some training trigger prepended to a benign query gets blocked,
    // and a blocked response carries no model decision.
    let triggers = pipeline.load_triggers().unwrap();
    let mut blocked_seen = false;
    for trigger in triggers.iter().filter(|t| t.split == Split::Train) {
        let adv_text = format!("{} {}", trigger.text, text);
        let (status, body) = http_request(
            &addr,
            "POST",
            "/route",
            Some(&serde_json::json!({"query": adv_text}).to_string()),
        );
        assert_eq!(status, 200);
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        if v["decision"] == "Blocked" {
            blocked_seen = true;
            assert!(v.get("win_rate").is_none() || v["win_rate"].is_null());
            assert!(v["guard_votes"]["adv"].as_u64().unwrap() * 2 > k as u64);
            break;
        }
    }
    assert!(blocked_seen, "no training trigger was blocked by the gateway");

    // Malformed body is a 400.
    let (status, _) = http_request(&addr, "POST", "/route", Some("{not json"));
    assert_eq!(status, 400);
    let (status, _) = http_request(&addr, "POST", "/route", Some(r#"{"query":""}"#));
    assert_eq!(status, 400);

    // Guard-before-router ordering is observable in the decision log:
    // every line carries the guard record, and blocked lines carry no
    // router decision.
    let log = std::fs::read_to_string(pipeline.path("gateway_decisions.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 2);
    for line in &lines {
        assert!(line["guard"]["pair_probs"].as_array().is_some());
        let blocked = line["guard"]["decision"] == "block";
        if blocked {
            assert!(line.get("router_model").is_none() || line["router_model"].is_null());
        }
    }
    assert!(lines
        .iter()
        .any(|l| l["guard"]["decision"] == "block"));
}

#[test]
fn guard_inference_latency_is_under_five_millis_median() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = tiny_pipeline(dir.path());
    let (guard, gcfg) = pipeline.load_guard().unwrap();
    let (normal, _) = pipeline.load_pools().unwrap();
    let pool: Vec<_> = normal
        .into_iter()
        .filter(|q| q.split == Split::Train)
        .collect();
    let mut latencies: Vec<f64> = Vec::new();
    for i in 0..60 {
        let q = gateway_query(&format!("what is the capital of country number {i}?"));
        let t0 = Instant::now();
        let _ = deploy_vote(&guard, &q, &pool, gcfg.k_references, 3).unwrap();
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    latencies.sort_by(|a, b| a.total_cmp(b));
    let median = latencies[latencies.len() / 2];
    assert!(median < 5.0, "median guard latency {median:.3} ms");

    // And the guard stays cheaper than the similarity-store router.
    let routers = pipeline.load_calibrated_routers().unwrap();
    let sw = routers.iter().find(|r| r.router.id() == "r_sw").unwrap();
    let mut sw_lat: Vec<f64> = Vec::new();
    for i in 0..20 {
        let text = format!("what is the capital of country number {i}?");
        let t0 = Instant::now();
        let _ = sw.router.win_rate(&text).unwrap();
        sw_lat.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    sw_lat.sort_by(|a, b| a.total_cmp(b));
    let sw_median = sw_lat[sw_lat.len() / 2];
    assert!(
        median < sw_median * 5.0,
        "guard {median:.3} ms vs r_sw {sw_median:.3} ms"
    );
}
