//! `eval`: roll a trained checkpoint over explicit scenarios.

use super::*;
use crate::runconfig::RunConfig;
use anyhow::anyhow;
use gridrestore_core::checkpoint::Checkpoint;
use gridrestore_core::happo::{eval_policy, feeder_fingerprint, Learner};
use gridrestore_core::rngstream::seeded_stream;
use std::fmt::Write as _;
use std::path::PathBuf;

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    config_path: PathBuf,
    checkpoint_path: PathBuf,
    scenarios: Option<String>,
    greedy: bool,
    sample_seed: u64,
    out: Option<PathBuf>,
) -> CmdResult {
    let config = RunConfig::load(&config_path, &[]).map_err(CliError::Config)?;
    let graph = load_graph(&config)?;

    let scenario_seeds = match scenarios {
        Some(raw) => parse_seed_list(&raw).map_err(CliError::Config)?,
        None => config.eval_scenario_seeds.clone(),
    };
    if scenario_seeds.is_empty() {
        return Err(CliError::Config(anyhow!("no evaluation scenarios given")));
    }

    let ck = Checkpoint::load(&checkpoint_path).map_err(config_err)?;
    let expected = feeder_fingerprint(&graph);
    if ck.feeder_fingerprint != expected {
        return Err(CliError::Config(anyhow!(
            "checkpoint/feeder mismatch: checkpoint was trained on [{}], feeder is [{}]",
            ck.feeder_fingerprint,
            expected
        )));
    }
    let learner = Learner::from_checkpoint(&ck);

    let mut env = make_env(&graph, &config, 0)?;
    let mut rng = seeded_stream(sample_seed, 9);
    let episodes =
        eval_policy(&mut env, &learner.agents, &scenario_seeds, greedy, &mut rng).map_err(runtime_err)?;

    let mut csv = String::from("scenario_seed,restored_frac,weighted_kw,xi_final,mean_reward,actions\n");
    for ep in &episodes {
        let trace = ep
            .actions
            .iter()
            .map(|joint| {
                joint
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            csv,
            "{},{},{},{},{},{trace}",
            ep.scenario_seed, ep.restored_frac, ep.weighted_kw, ep.final_xi, ep.mean_reward
        )
        .expect("string write");
    }

    match out {
        Some(path) => {
            std::fs::write(&path, csv).map_err(runtime_err)?;
            println!("wrote {} scenario rows to {}", episodes.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
