//! `oracle`: exhaustive optimal-configuration report for one scenario.

use super::*;
use crate::runconfig::RunConfig;
use anyhow::anyhow;
use gridrestore_core::env::{sample_scenario, ScenarioConfig};
use gridrestore_core::oracle::{exhaustive_oracle, OracleError, OracleMode};
use gridrestore_core::reward::RewardConfig;
use std::path::PathBuf;

pub fn cmd_oracle(
    feeder: PathBuf,
    scenario_seed: u64,
    mode: String,
    config_path: Option<PathBuf>,
) -> CmdResult {
    let mode = match mode.as_str() {
        "strict" => OracleMode::Strict,
        "penalty-free-best" => OracleMode::PenaltyFreeBest,
        other => {
            return Err(CliError::Config(anyhow!(
                "unknown oracle mode '{other}' (expected strict | penalty-free-best)"
            )))
        }
    };
    let (scenario_cfg, reward_cfg) = match config_path {
        Some(path) => {
            let rc = RunConfig::load(&path, &[]).map_err(CliError::Config)?;
            (rc.scenario, rc.reward)
        }
        None => (ScenarioConfig::default(), RewardConfig::default()),
    };

    let graph = gridrestore_core::feeder::load_feeder(&feeder).map_err(config_err)?;
    let spec = sample_scenario(&graph, scenario_seed, &scenario_cfg).map_err(config_err)?;

    let started = std::time::Instant::now();
    let result = exhaustive_oracle(&graph, &spec, mode, &reward_cfg).map_err(|e| match e {
        OracleError::TooLarge { .. } => config_err(e),
        OracleError::Env(e) => runtime_err(e),
    })?;
    let elapsed = started.elapsed().as_secs_f64();

    let bits: String = result
        .best_bits
        .iter()
        .map(|&b| if b { '1' } else { '0' })
        .collect();
    println!("mode = \"{}\"", match mode {
        OracleMode::Strict => "strict",
        OracleMode::PenaltyFreeBest => "penalty-free-best",
    });
    println!("feeder = \"{}\"", feeder.display());
    println!("scenario_seed = {scenario_seed}");
    println!("faulted_branches = {:?}", spec.faulted_branch_ids);
    println!("der_scale = {}", spec.der_scale);
    println!("configs_evaluated = {}", result.configs_evaluated);
    println!("best_weighted_kw = {}", result.best_weighted_kw);
    println!("best_fraction = {}", result.best_fraction);
    println!("best_served_kw = {}", result.best_served_kw);
    println!("best_bits = \"{bits}\"");
    println!("best_feasible = {}", result.best_feasible);
    println!("ties = {}", result.ties);
    println!("configs_per_second = {:.1}", result.configs_evaluated as f64 / elapsed.max(1e-9));
    Ok(())
}
