//! Experiment pipeline CLI and routing gateway.
//!
//! Stages run in dependency order (`gen-data`, `train-routers`,
//! `calibrate`, `attack`, `train-guard`, `eval`, `report`); each validates
//! its upstream artifacts and fails with exit code 3 when one is missing
//! or stale, naming the stage to run. Config problems exit with 2.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use routelab_cli::config::FileConfig;
use routelab_cli::gateway;
use routelab::attacks::{graybox_optimize, whitebox_optimize, AttackConfig, AttackRunRecord};
use routelab::corpus::{save_jsonl, Split, TriggerMethod};
use routelab::pipeline::Pipeline;
use routelab::routers::{ModelChoice, Router};

#[derive(Parser)]
#[command(name = "routelab", about = "LLM-routing security workbench", version)]
struct Cli {
    /// TOML config with per-stage sections; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (also settable via ROUTELAB_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, preferences, and vocabulary.
    GenData,
    /// Train all four routers on the corpus.
    TrainRouters,
    /// Calibrate thresholds and build the normal/complex pools.
    Calibrate,
    /// Optimize the trigger sets (plus standalone batches via --method).
    Attack {
        /// Run one standalone batch for a single method instead of the
        /// full stage.
        #[arg(long)]
        method: Option<String>,
        /// Target model for a standalone batch.
        #[arg(long, default_value = "strong")]
        target: String,
        /// Triggers per standalone batch.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the pair detector and the single-query ablation baseline.
    TrainGuard,
    /// Run all measurements and write eval/report.jsonl.
    Eval,
    /// Render tables, CDF and 2-D point files from the eval output.
    Report,
    /// Run every stage in order.
    RunAll,
    /// Serve the routing gateway over HTTP.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        router: Option<String>,
    },
}

fn exit_code_for(err: &routelab::Error) -> u8 {
    match err {
        routelab::Error::MissingArtifact { .. } | routelab::Error::StaleArtifact { .. } => 3,
        routelab::Error::Config(_) => 2,
        _ => 1,
    }
}

fn parse_target(target: &str) -> Result<ModelChoice, routelab::Error> {
    match target {
        "strong" => Ok(ModelChoice::Strong),
        "weak" => Ok(ModelChoice::Weak),
        other => Err(routelab::Error::Config(format!(
            "unknown target `{other}` (use strong|weak)"
        ))),
    }
}

fn parse_method(method: &str) -> Result<TriggerMethod, routelab::Error> {
    match method {
        "graybox" => Ok(TriggerMethod::GrayBox),
        "whitebox" => Ok(TriggerMethod::WhiteBox),
        "boxfree" => Ok(TriggerMethod::BoxFree),
        other => Err(routelab::Error::Config(format!(
            "unknown method `{other}` (use graybox|whitebox|boxfree)"
        ))),
    }
}

/// One standalone attack batch: `count` independently seeded runs of one
/// method, written to their own result file.
fn standalone_attack(
    pipeline: &Pipeline,
    method: TriggerMethod,
    target: ModelChoice,
    count: usize,
) -> routelab::Result<PathBuf> {
    let (queries, _, vocab) = pipeline.load_corpus()?;
    let routers = pipeline.load_calibrated_routers()?;
    let differentiable: Vec<_> = routers
        .iter()
        .filter(|r| r.router.differentiable().is_some())
        .collect();
    let mut runs = Vec::with_capacity(count);
    for i in 0..count {
        let seed = routelab::seeding::derive_seed(
            pipeline.cfg.root_seed,
            &format!("standalone:{}:{target:?}", method.as_str()),
            i as u64,
        );
        let cfg = AttackConfig {
            trigger_len: pipeline.cfg.attack.trigger_len,
            iterations: pipeline.cfg.attack.iterations,
            neighbors_per_step: pipeline.cfg.attack.neighbors_per_step,
            topk_candidates: pipeline.cfg.attack.topk_candidates,
            batch_size: pipeline.cfg.attack.whitebox_batch,
            target,
            seed,
        };
        let record = match method {
            TriggerMethod::GrayBox => {
                let router = &routers[i % routers.len()];
                let (trigger, trace) = graybox_optimize(&router.router, &vocab, &cfg)?;
                AttackRunRecord {
                    method,
                    target,
                    trigger,
                    objective_trace: trace.objective,
                    seed,
                    router: Some(router.router.id().to_string()),
                }
            }
            TriggerMethod::WhiteBox => {
                let (normal, _) = pipeline.load_pools()?;
                let train: Vec<_> = normal
                    .into_iter()
                    .filter(|q| q.split == Split::Train)
                    .collect();
                let router = differentiable[i % differentiable.len()];
                let dr = router.router.differentiable().unwrap();
                let (trigger, trace) = whitebox_optimize(dr, &train, &cfg)?;
                AttackRunRecord {
                    method,
                    target,
                    trigger,
                    objective_trace: trace.objective,
                    seed,
                    router: Some(router.router.id().to_string()),
                }
            }
            TriggerMethod::BoxFree => {
                let summarizer = routelab::attacks::LogOddsSummarizer {
                    num_phrases: (pipeline.cfg.attack.trigger_len / 3).max(1),
                    pool_factor: 3,
                };
                let trigger = routelab::attacks::boxfree_optimize(
                    &routers, &queries, &summarizer, target, seed,
                )?;
                AttackRunRecord {
                    method,
                    target,
                    trigger,
                    objective_trace: Vec::new(),
                    seed,
                    router: None,
                }
            }
        };
        runs.push(record);
    }
    std::fs::create_dir_all(pipeline.path("attacks"))?;
    let rel = format!(
        "attacks/standalone-{}-{}.jsonl",
        method.as_str(),
        match target {
            ModelChoice::Strong => "strong",
            ModelChoice::Weak => "weak",
        }
    );
    let path = pipeline.path(&rel);
    save_jsonl(&path, &runs)?;
    Ok(path)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file_cfg = match FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(2);
        }
    };
    let out = file_cfg.resolve_out(cli.out);
    let pipeline = match Pipeline::new(file_cfg.pipeline.clone(), &out) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(exit_code_for(&e));
        }
    };
    std::fs::create_dir_all(&out)?;

    let outcome: routelab::Result<()> = match &cli.command {
        Command::GenData => pipeline.gen_data(),
        Command::TrainRouters => pipeline.train_routers(),
        Command::Calibrate => pipeline.calibrate(),
        Command::Attack {
            method: None,
            target,
            count,
        } => {
            if count.is_some() || target != "strong" {
                eprintln!("note: --count/--target apply to standalone batches (--method)");
            }
            pipeline.attack()
        }
        Command::Attack {
            method: Some(method),
            target,
            count,
        } => (|| {
            let method = parse_method(method)?;
            let target = parse_target(target)?;
            let count = count.unwrap_or(pipeline.cfg.attack.runs_per_batch);
            let path = standalone_attack(&pipeline, method, target, count)?;
            println!("wrote {} triggers to {}", count, path.display());
            Ok(())
        })(),
        Command::TrainGuard => pipeline.train_guard(),
        Command::Eval => pipeline.eval(),
        Command::Report => pipeline.report(),
        Command::RunAll => pipeline.run_all(),
        Command::Serve { addr, router } => {
            let addr = addr.clone().unwrap_or(file_cfg.serve.addr.clone());
            let router_id = router.clone().unwrap_or(file_cfg.serve.router.clone());
            match gateway::LoadedGateway::from_pipeline(&pipeline, &router_id) {
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(exit_code_for(&e));
                }
                Ok(loaded) => {
                    let state = gateway::GatewayState {
                        loaded: Some(std::sync::Arc::new(loaded)),
                    };
                    let runtime = tokio::runtime::Runtime::new()?;
                    runtime.block_on(gateway::serve(&addr, state))?;
                    Ok(())
                }
            }
        }
    };

    match outcome {
        Ok(()) => {
            println!("ok: {} (out: {})", command_name(&cli.command), out.display());
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(exit_code_for(&e))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData => "gen-data",
        Command::TrainRouters => "train-routers",
        Command::Calibrate => "calibrate",
        Command::Attack { .. } => "attack",
        Command::TrainGuard => "train-guard",
        Command::Eval => "eval",
        Command::Report => "report",
        Command::RunAll => "run-all",
        Command::Serve { .. } => "serve",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
