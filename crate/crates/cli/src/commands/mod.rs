//! Subcommand implementations.

pub mod benchmark;
pub mod eval;
pub mod oracle;
pub mod train;
pub mod validate;

use anyhow::{anyhow, bail, Result};
use gridrestore_core::env::RestorationEnv;
use gridrestore_core::feeder::FeederGraph;
use gridrestore_core::happo::{train_single_seed, Algorithm, SeedRunSummary, TrainOptions};
use crate::runconfig::{RunAlgorithm, RunConfig};
use std::path::Path;
use std::sync::Arc;

/// Command failures carry the exit-code class: config errors exit 1,
/// runtime failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
    pub fn message(&self) -> String {
        match self {
            CliError::Config(e) => format!("config error: {e:#}"),
            CliError::Runtime(e) => format!("runtime error: {e:#}"),
        }
    }
}

pub fn config_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Config(e.into())
}
pub fn runtime_err<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

pub type CmdResult = Result<(), CliError>;

pub fn load_graph(config: &RunConfig) -> Result<Arc<FeederGraph>, CliError> {
    gridrestore_core::feeder::load_feeder(&config.feeder)
        .map(Arc::new)
        .map_err(config_err)
}

pub fn make_env(
    graph: &Arc<FeederGraph>,
    config: &RunConfig,
    scenario_stream_seed: u64,
) -> Result<RestorationEnv, CliError> {
    RestorationEnv::new(
        graph.clone(),
        config.scenario.clone(),
        config.reward.clone(),
        scenario_stream_seed,
    )
    .map_err(config_err)
}

/// Creates the run directory, refusing to reuse one that already holds a
/// resolved config unless `force` is set. Writes the resolved dump.
pub fn prepare_run_dir(config: &RunConfig, force: bool) -> CmdResult {
    let marker = config.out_dir.join("resolved-config.toml");
    if marker.exists() && !force {
        return Err(CliError::Config(anyhow!(
            "output directory {} already holds a run (use --force to overwrite)",
            config.out_dir.display()
        )));
    }
    std::fs::create_dir_all(&config.out_dir).map_err(runtime_err)?;
    std::fs::write(&marker, config.resolved_dump()).map_err(runtime_err)?;
    Ok(())
}

/// Applies the GRIDRESTORE_SEED escape hatch: a single seed for CI smoke
/// runs.
pub fn apply_seed_env(config: &mut RunConfig) -> CmdResult {
    if let Ok(raw) = std::env::var("GRIDRESTORE_SEED") {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Config(anyhow!("GRIDRESTORE_SEED '{raw}' is not a u64")))?;
        config.seeds = vec![seed];
    }
    Ok(())
}

pub fn to_core_algorithm(algo: RunAlgorithm) -> Option<Algorithm> {
    match algo {
        RunAlgorithm::Happo => Some(Algorithm::Happo),
        RunAlgorithm::IndependentPpo => Some(Algorithm::IndependentPpo),
        _ => None,
    }
}

/// Trains every seed as an independent concurrent job; artifacts land in
/// `<out>/seed_<n>/`. Summaries come back in seed order.
pub fn run_training_seeds(
    graph: &Arc<FeederGraph>,
    config: &RunConfig,
    algorithm: Algorithm,
    out_dir: &Path,
) -> Result<Vec<SeedRunSummary>, CliError> {
    let results: Vec<Result<SeedRunSummary, String>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for &seed in &config.seeds {
            let graph = graph.clone();
            let config = config.clone();
            let out = out_dir.join(format!("seed_{seed}"));
            handles.push(scope.spawn(move || {
                let env = RestorationEnv::new(
                    graph,
                    config.scenario.clone(),
                    config.reward.clone(),
                    seed,
                )
                .map_err(|e| e.to_string())?;
                let options = TrainOptions {
                    out_dir: Some(out),
                    checkpoint_every: config.checkpoint_every,
                    freeze_audit: false,
                };
                train_single_seed(env, &config.train, algorithm, seed, &options)
                    .map_err(|e| e.to_string())
            }));
        }
        handles.into_iter().map(|h| h.join().expect("seed job panicked")).collect()
    });

    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        summaries.push(r.map_err(|e| CliError::Runtime(anyhow!(e)))?);
    }
    Ok(summaries)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn parse_seed_list(raw: &str) -> Result<Vec<u64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        bail!("scenario list is empty");
    }
    trimmed
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| anyhow!("'{s}' is not a valid scenario seed"))
        })
        .collect()
}
