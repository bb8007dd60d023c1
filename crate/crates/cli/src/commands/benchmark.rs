//! `benchmark`: train/evaluate the configured algorithms and emit a
//! comparison table. Deterministic metrics go to benchmark.csv; wallclock
//! and latency to benchmark_timing.csv.

use super::*;
use crate::runconfig::{RunAlgorithm, RunConfig};
use gridrestore_core::checkpoint::Checkpoint;
use gridrestore_core::env::sample_scenario;
use gridrestore_core::happo::{eval_policy, Learner};
use gridrestore_core::oracle::{
    exhaustive_oracle, greedy_policy, random_policy_on_scenarios, OracleMode,
};
use gridrestore_core::rngstream::seeded_stream;
use std::io::Write;
use std::path::PathBuf;

struct BenchRow {
    algorithm: &'static str,
    frac_mean: f64,
    frac_std: f64,
    weighted_kw_mean: f64,
    oracle_gap_pct: f64,
    train_wallclock_s: f64,
    eval_latency_ms: f64,
}

pub fn cmd_benchmark(config_path: PathBuf, overrides: Vec<String>, force: bool) -> CmdResult {
    let mut config = RunConfig::load(&config_path, &overrides).map_err(CliError::Config)?;
    apply_seed_env(&mut config)?;
    let graph = load_graph(&config)?;
    prepare_run_dir(&config, force)?;

    let suite = config.benchmark.scenario_seeds.clone();
    if suite.is_empty() {
        return Err(CliError::Config(anyhow::anyhow!(
            "benchmark.scenario_seeds is empty"
        )));
    }

    // Strict-feasible optimum per scenario, the gap denominator.
    let mut oracle_kw = Vec::with_capacity(suite.len());
    for &seed in &suite {
        let spec = sample_scenario(&graph, seed, &config.scenario).map_err(config_err)?;
        let r = exhaustive_oracle(&graph, &spec, OracleMode::Strict, &config.reward)
            .map_err(|e| runtime_err(anyhow::anyhow!(e.to_string())))?;
        oracle_kw.push(r.best_weighted_kw);
    }

    let mut rows = Vec::new();
    for &algo in &config.benchmark.algorithms.clone() {
        let row = match to_core_algorithm(algo) {
            Some(core_algo) => {
                let out = config.out_dir.join(algo.name());
                let summaries = run_training_seeds(&graph, &config, core_algo, &out)?;
                let train_wallclock: f64 =
                    summaries.iter().map(|s| s.wallclock_s).sum::<f64>() / summaries.len() as f64;

                let mut fracs = Vec::new();
                let mut kws = Vec::new();
                let mut ratios = Vec::new();
                let mut eval_steps = 0usize;
                let eval_started = std::time::Instant::now();
                for &seed in &config.seeds {
                    let ck_path = out.join(format!("seed_{seed}/checkpoint_final.json"));
                    let ck = Checkpoint::load(&ck_path).map_err(runtime_err)?;
                    let learner = Learner::from_checkpoint(&ck);
                    let mut env = make_env(&graph, &config, seed)?;
                    let mut rng = seeded_stream(seed, 9);
                    let eps = eval_policy(&mut env, &learner.agents, &suite, true, &mut rng)
                        .map_err(runtime_err)?;
                    eval_steps += eps.iter().map(|e| e.actions.len()).sum::<usize>();
                    let seed_frac =
                        eps.iter().map(|e| e.restored_frac).sum::<f64>() / eps.len() as f64;
                    fracs.push(seed_frac);
                    kws.push(eps.iter().map(|e| e.weighted_kw).sum::<f64>() / eps.len() as f64);
                    ratios.push(
                        eps.iter()
                            .zip(oracle_kw.iter())
                            .map(|(e, &j)| e.weighted_kw / j.max(1e-9))
                            .sum::<f64>()
                            / eps.len() as f64,
                    );
                }
                let eval_latency_ms =
                    eval_started.elapsed().as_secs_f64() * 1000.0 / eval_steps.max(1) as f64;
                let (frac_mean, frac_std) = mean_std(&fracs);
                let (kw_mean, _) = mean_std(&kws);
                let (ratio_mean, _) = mean_std(&ratios);
                BenchRow {
                    algorithm: algo.name(),
                    frac_mean,
                    frac_std,
                    weighted_kw_mean: kw_mean,
                    oracle_gap_pct: 100.0 * (1.0 - ratio_mean),
                    train_wallclock_s: train_wallclock,
                    eval_latency_ms,
                }
            }
            None => {
                let mut fracs = Vec::new();
                let mut kws = Vec::new();
                let mut ratios = Vec::new();
                let mut eval_steps = 0usize;
                let eval_started = std::time::Instant::now();
                for &seed in &config.seeds {
                    let mut env = make_env(&graph, &config, seed)?;
                    let summary = match algo {
                        RunAlgorithm::Random => {
                            // repeat the suite for a steadier mean
                            let mut seeds_rep = Vec::new();
                            for _ in 0..config.benchmark.random_episodes {
                                seeds_rep.extend_from_slice(&suite);
                            }
                            let mut rng = seeded_stream(seed, 8);
                            eval_steps += seeds_rep.len() * env.horizon();
                            random_policy_on_scenarios(&mut env, &seeds_rep, &mut rng)
                                .map_err(runtime_err)?
                        }
                        RunAlgorithm::Greedy => {
                            eval_steps += suite.len() * env.horizon();
                            greedy_policy(&mut env, &suite).map_err(runtime_err)?
                        }
                        _ => unreachable!(),
                    };
                    fracs.push(summary.mean_final_frac);
                    kws.push(summary.mean_final_weighted_kw);
                    let mean_oracle = oracle_kw.iter().sum::<f64>() / oracle_kw.len() as f64;
                    ratios.push(summary.mean_final_weighted_kw / mean_oracle.max(1e-9));
                }
                let eval_latency_ms =
                    eval_started.elapsed().as_secs_f64() * 1000.0 / eval_steps.max(1) as f64;
                let (frac_mean, frac_std) = mean_std(&fracs);
                let (kw_mean, _) = mean_std(&kws);
                let (ratio_mean, _) = mean_std(&ratios);
                BenchRow {
                    algorithm: algo.name(),
                    frac_mean,
                    frac_std,
                    weighted_kw_mean: kw_mean,
                    oracle_gap_pct: 100.0 * (1.0 - ratio_mean),
                    train_wallclock_s: 0.0,
                    eval_latency_ms,
                }
            }
        };
        println!(
            "{:16} restored_frac {:.4} ± {:.4}  oracle gap {:+.1}%",
            row.algorithm, row.frac_mean, row.frac_std, row.oracle_gap_pct
        );
        rows.push(row);
    }

    let table = config.out_dir.join("benchmark.csv");
    let mut f = std::fs::File::create(&table).map_err(runtime_err)?;
    writeln!(
        f,
        "algorithm,final_restored_frac_mean,final_restored_frac_std,weighted_kw_mean,oracle_gap_pct"
    )
    .map_err(runtime_err)?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.algorithm, r.frac_mean, r.frac_std, r.weighted_kw_mean, r.oracle_gap_pct
        )
        .map_err(runtime_err)?;
    }
    let timing = config.out_dir.join("benchmark_timing.csv");
    let mut f = std::fs::File::create(&timing).map_err(runtime_err)?;
    writeln!(f, "algorithm,train_wallclock_s,eval_latency_ms_per_step").map_err(runtime_err)?;
    for r in &rows {
        writeln!(f, "{},{},{}", r.algorithm, r.train_wallclock_s, r.eval_latency_ms)
            .map_err(runtime_err)?;
    }
    println!("benchmark table in {}", table.display());
    Ok(())
}
