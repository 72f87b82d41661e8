//! Subcommand implementations behind the `feedsim` binary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use feedsim_core::acquire::bandit::BanditState;
use feedsim_core::acquire::dataset::TrajectoryDataset;
use feedsim_core::acquire::kmedoids::{k_medoids, NUM_ACTIONS};
use feedsim_core::scenario::{build_library, build_robot, run_scenario_with, Scenario};

use crate::config::ServiceConfig;
use crate::http::router;
use crate::service::{Service, ServiceOptions};

#[derive(Debug, Parser)]
#[command(name = "feedsim", version, about = "Deterministic robot-assisted feeding simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP and WebSocket interface over a live simulation.
    Serve(ServeArgs),
    /// Run a scripted meal headless and write a JSON report.
    Run(RunArgs),
    /// Build an action library from an expert dataset.
    AcquireTrain(TrainArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the configured port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Overrides the configured speedup.
    #[arg(long)]
    pub speedup: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Bandit state to resume from; rewritten with the final state afterwards.
    #[arg(long)]
    pub bandit_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSON; a synthetic dataset is generated when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = feedsim_core::acquire::dataset::DEFAULT_DATASET_SIZE)]
    pub dataset_size: usize,
    #[arg(long, default_value_t = NUM_ACTIONS)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s = Scenario::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    s.validate()?;
    Ok(s)
}

pub fn run(args: &RunArgs) -> anyhow::Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let checkpoint = match &args.bandit_checkpoint {
        Some(p) if p.exists() => {
            let text = std::fs::read_to_string(p)?;
            Some(serde_json::from_str::<BanditState>(&text).context("bandit checkpoint")?)
        }
        _ => None,
    };
    let (report, timing, bandit) = run_scenario_with(&scenario, args.seed, checkpoint)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.report {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = &args.bandit_checkpoint {
        std::fs::write(p, serde_json::to_string_pretty(&bandit)?)?;
    }
    let s = &report.summary;
    log::info!(
        "acquisitions {}/{} transfers {} ticks {} library {:.2}s meal {:.2}s hash {}",
        s.acquisitions_succeeded,
        s.acquisition_attempts,
        s.transfers_succeeded,
        s.ticks,
        timing.library_seconds,
        timing.meal_seconds,
        report.hash
    );
    if s.halted {
        bail!("meal halted before the script finished");
    }
    if !s.utensil_intact {
        bail!("utensil broke during the meal");
    }
    Ok(())
}

pub fn acquire_train(args: &TrainArgs) -> anyhow::Result<()> {
    let data = match &args.dataset {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let d: TrajectoryDataset = serde_json::from_str(&text).context("dataset")?;
            d.validate()?;
            d
        }
        None => TrajectoryDataset::synthetic(args.dataset_size, args.seed),
    };
    let lib = k_medoids(&data, args.k, args.seed)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&lib)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} medoids to {}", lib.len(), args.out.display());
    Ok(())
}

pub async fn serve(args: &ServeArgs, cfg: ServiceConfig) -> anyhow::Result<()> {
    let mut scenario = load_scenario(&args.scenario)?;
    scenario.params = cfg.params.overlay(&scenario.params);
    let (library, _) = build_library(&scenario.library)?;
    let robot = build_robot(&scenario, Some(library))?;
    let service = Service::spawn(
        robot,
        ServiceOptions {
            speedup: args.speedup.unwrap_or(cfg.speedup),
            violation_log: cfg.violation_log.clone(),
        },
    )?;
    let addr: SocketAddr = format!("{}:{}", cfg.bind, args.port.unwrap_or(cfg.port))
        .parse()
        .context("bind address")?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service.handle.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    service.shutdown();
    Ok(())
}
