//! Minimal routing gateway: the guard votes first and a block
//! short-circuits the router. Decisions append to a JSON-Lines log with a
//! single writer. Intentionally bare (no auth, no TLS): it demonstrates
//! the middleware contract.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router as AxumRouter};
use serde::{Deserialize, Serialize};

use routelab::corpus::{Query, Split};
use routelab::guard::{deploy_vote, GuardConfig, SiameseModel, VoteRecord};
use routelab::pipeline::Pipeline;
use routelab::routers::{CalibratedRouter, ModelChoice, Router};
use routelab::seeding::derive_seed;
use routelab::GateDecision;

#[derive(Debug, Deserialize)]
pub struct RouteRequest {
    pub query: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GuardVotes {
    pub adv: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteResponse {
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<f64>,
    pub guard_votes: GuardVotes,
    pub router: String,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize)]
struct DecisionLogLine<'a> {
    query_id: &'a str,
    guard: &'a VoteRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    router_model: Option<ModelChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    win_rate: Option<f64>,
}

pub struct LoadedGateway {
    pub guard: SiameseModel,
    pub guard_cfg: GuardConfig,
    pub router: CalibratedRouter,
    pub reference_pool: Vec<Query>,
    pub deploy_seed: u64,
    log: Mutex<std::io::BufWriter<std::fs::File>>,
}

#[derive(Clone)]
pub struct GatewayState {
    pub loaded: Option<Arc<LoadedGateway>>,
}

impl LoadedGateway {
    /// Load artifacts for the given router id from a pipeline directory.
    pub fn from_pipeline(pipeline: &Pipeline, router_id: &str) -> routelab::Result<Self> {
        let (guard, guard_cfg) = pipeline.load_guard()?;
        let routers = pipeline.load_calibrated_routers()?;
        let router = routers
            .into_iter()
            .find(|r| r.router.id() == router_id)
            .ok_or_else(|| routelab::Error::Config(format!("unknown router {router_id}")))?;
        let (normal, _) = pipeline.load_pools()?;
        let reference_pool: Vec<Query> = normal
            .into_iter()
            .filter(|q| q.split == Split::Train)
            .collect();
        let log_path = pipeline.path("gateway_decisions.jsonl");
        let log = open_log(&log_path)?;
        Ok(LoadedGateway {
            guard,
            guard_cfg,
            router,
            reference_pool,
            deploy_seed: derive_seed(pipeline.cfg.root_seed, "deploy", 0),
            log,
        })
    }
}

fn open_log(path: &Path) -> routelab::Result<Mutex<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    Ok(Mutex::new(std::io::BufWriter::new(file)))
}

/// Stable id for an ad-hoc gateway query, derived from its text so the
/// reference draw matches the offline path.
pub fn gateway_query(text: &str) -> Query {
    let id = format!("g{:016x}", derive_seed(0x9a7e, text, 0));
    Query {
        id,
        text: text.to_string(),
        complexity: routelab::corpus::Complexity::Unknown,
        origin: "gateway".to_string(),
        split: Split::Unassigned,
    }
}

async fn health(State(state): State<GatewayState>) -> impl IntoResponse {
    if state.loaded.is_some() {
        (StatusCode::OK, "ready")
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, "models not loaded")
    }
}

async fn route_handler(
    State(state): State<GatewayState>,
    body: String,
) -> (StatusCode, Json<serde_json::Value>) {
    let Some(gw) = state.loaded else {
        return (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({"error": "models not loaded"})),
        );
    };
    let request: RouteRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(serde_json::json!({"error": format!("malformed body: {e}")})),
            );
        }
    };
    if request.query.is_empty() {
        return (
            StatusCode::BAD_REQUEST,
            Json(serde_json::json!({"error": "query must be non-empty"})),
        );
    }

    let started = Instant::now();
    let query = gateway_query(&request.query);
    // Guard gate first; a block short-circuits the router.
    let vote = deploy_vote(
        &gw.guard,
        &query,
        &gw.reference_pool,
        gw.guard_cfg.k_references,
        gw.deploy_seed,
    );
    let (decision, record) = match vote {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(serde_json::json!({"error": e.to_string()})),
            );
        }
    };
    let (decision_str, win_rate, router_model) = if decision == GateDecision::Block {
        ("Blocked".to_string(), None, None)
    } else {
        match gw.router.route(&request.query) {
            Ok(d) => {
                let name = match d.model {
                    ModelChoice::Strong => "Strong",
                    ModelChoice::Weak => "Weak",
                };
                (name.to_string(), Some(d.win_rate.value()), Some(d.model))
            }
            Err(e) => {
                return (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(serde_json::json!({"error": e.to_string()})),
                );
            }
        }
    };
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;

    {
        let line = DecisionLogLine {
            query_id: &record.query_id,
            guard: &record,
            router_model,
            win_rate,
        };
        if let Ok(mut log) = gw.log.lock() {
            let _ = serde_json::to_writer(&mut *log, &line);
            let _ = log.write_all(b"\n");
            let _ = log.flush();
        }
    }

    let response = RouteResponse {
        decision: decision_str,
        win_rate,
        guard_votes: GuardVotes {
            adv: record.adv_votes,
            k: record.k,
        },
        router: gw.router.router.id().to_string(),
        latency_ms,
    };
    (
        StatusCode::OK,
        Json(serde_json::to_value(response).expect("serializable response")),
    )
}

pub fn app(state: GatewayState) -> AxumRouter {
    AxumRouter::new()
        .route("/health", get(health))
        .route("/route", post(route_handler))
        .with_state(state)
}

pub async fn serve(addr: &str, state: GatewayState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("gateway listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state)).await?;
    Ok(())
}
