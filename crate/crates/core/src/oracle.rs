//! Ground truth and comparison policies: exhaustive optimal-configuration
//! search over switch states, plus uniform-random and one-step-greedy
//! baselines. Independent PPO reuses the trainer with local critics.
//!
//! The oracle scores terminal configurations, not switching sequences:
//! with no switching cost in the objective, the best reachable
//! configuration's value equals the best sequence's value, and every
//! configuration is reachable within the default horizon.

use crate::env::{EnvError, RestorationEnv, ScenarioSpec};
use crate::feeder::{FeederGraph, SwitchState, SwitchStates};
use crate::powerflow::{dispatch_ders, solve_system_with};
use crate::reward::{evaluate_constraints, weighted_restored, RewardConfig, ViolationReport};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Configurations with xi at or below this are feasible in strict mode.
/// Far below any physical violation; absorbs float dust from proportional
/// dispatch arithmetic.
pub const XI_STRICT_EPS: f64 = 1e-9;

/// Hard guard on exhaustive enumeration size.
pub const MAX_ORACLE_SWITCHES: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{operable} operable switches exceed the exhaustive-search guard of {max}")]
    TooLarge { operable: usize, max: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Feasibility handling during the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleMode {
    /// Only xi = 0 configurations are admissible.
    #[default]
    Strict,
    /// Rank all configurations by restored fraction minus lambda * xi.
    PenaltyFreeBest,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Full switch assignment of the optimum (faulted switches open).
    pub best_switch_states: SwitchStates,
    /// Operable switches only, in switch order.
    pub best_bits: Vec<bool>,
    /// Priority-weighted restored power at the optimum.
    pub best_weighted_kw: f64,
    /// Weighted restored fraction at the optimum.
    pub best_fraction: f64,
    /// Plain kW served at the optimum.
    pub best_served_kw: f64,
    /// Whether any feasible configuration was found (strict mode; always
    /// true otherwise). The all-open configuration is feasible by
    /// construction, so strict search cannot come back empty.
    pub best_feasible: bool,
    pub best_report: ViolationReport,
    pub configs_evaluated: u64,
    /// Number of configurations tied at the optimal objective.
    pub ties: u64,
}

/// Enumerates every configuration of the operable switches under the
/// scenario and returns the argmax of weighted restored power. Ties break
/// to the lexicographically smallest bit-vector (operable switch order,
/// first switch least significant).
pub fn exhaustive_oracle(
    graph: &FeederGraph,
    spec: &ScenarioSpec,
    mode: OracleMode,
    reward_cfg: &RewardConfig,
) -> Result<OracleResult, OracleError> {
    let eff = spec.apply(graph)?;
    let faulted: Vec<bool> = {
        let mut f = vec![false; eff.switches.len()];
        for bid in &spec.faulted_branch_ids {
            if let Some(bi) = eff.branch_idx(bid) {
                if let Some(si) = eff.switch_of_branch(bi) {
                    f[si] = true;
                }
            }
        }
        f
    };
    let operable: Vec<usize> = (0..eff.switches.len()).filter(|&s| !faulted[s]).collect();
    if operable.len() > MAX_ORACLE_SWITCHES {
        return Err(OracleError::TooLarge {
            operable: operable.len(),
            max: MAX_ORACLE_SWITCHES,
        });
    }

    let n_configs: u64 = 1u64 << operable.len();
    let mut best: Option<(f64, u64)> = None; // (objective, mask)
    let mut best_payload: Option<(SwitchStates, f64, f64, f64, ViolationReport)> = None;
    let mut ties = 0u64;

    for mask in 0..n_configs {
        let mut states = SwitchStates(vec![SwitchState::Open; eff.switches.len()]);
        for (j, &si) in operable.iter().enumerate() {
            if (mask >> j) & 1 == 1 {
                states.0[si] = SwitchState::Closed;
            }
        }
        let islands = crate::feeder::connected_components(&eff, &states);
        let plan = dispatch_ders(&eff, &islands);
        let result = solve_system_with(&eff, &states, &islands, &plan);
        let report = evaluate_constraints(&eff, &result, &plan, reward_cfg);
        let (weighted_kw, fraction) = weighted_restored(&eff, &result);

        let objective = match mode {
            OracleMode::Strict => {
                if !report.is_feasible(XI_STRICT_EPS) {
                    continue;
                }
                weighted_kw
            }
            OracleMode::PenaltyFreeBest => fraction - reward_cfg.lambda_pen * report.xi,
        };

        match best {
            Some((b, _)) if objective < b => {}
            Some((b, _)) if objective == b => ties += 1,
            _ => {
                ties = 1;
                best = Some((objective, mask));
                best_payload = Some((
                    states,
                    weighted_kw,
                    fraction,
                    result.served.iter().sum(),
                    report,
                ));
            }
        }
    }

    // All-open is always evaluated and feasible, so strict mode always has
    // a payload.
    let (_, best_mask) = best.expect("at least the all-open configuration is admissible");
    let (best_switch_states, best_weighted_kw, best_fraction, best_served_kw, best_report) =
        best_payload.expect("payload recorded with best");

    Ok(OracleResult {
        best_switch_states,
        best_bits: (0..operable.len()).map(|j| (best_mask >> j) & 1 == 1).collect(),
        best_weighted_kw,
        best_fraction,
        best_served_kw,
        best_feasible: match mode {
            OracleMode::Strict => true,
            OracleMode::PenaltyFreeBest => best_report.is_feasible(XI_STRICT_EPS),
        },
        best_report,
        configs_evaluated: n_configs,
        ties,
    })
}

/// Episode-level metrics of a baseline run.
#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub episodes: usize,
    pub mean_final_frac: f64,
    pub std_final_frac: f64,
    pub min_final_frac: f64,
    pub max_final_frac: f64,
    pub mean_final_weighted_kw: f64,
    pub mean_final_xi: f64,
    pub mean_return: f64,
}

fn summarize(finals: &[(f64, f64, f64, f64)]) -> PolicySummary {
    let n = finals.len().max(1) as f64;
    let mean_frac = finals.iter().map(|f| f.0).sum::<f64>() / n;
    let var = finals
        .iter()
        .map(|f| (f.0 - mean_frac) * (f.0 - mean_frac))
        .sum::<f64>()
        / n;
    PolicySummary {
        episodes: finals.len(),
        mean_final_frac: mean_frac,
        std_final_frac: var.sqrt(),
        min_final_frac: finals.iter().map(|f| f.0).fold(f64::INFINITY, f64::min),
        max_final_frac: finals.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max),
        mean_final_weighted_kw: finals.iter().map(|f| f.1).sum::<f64>() / n,
        mean_final_xi: finals.iter().map(|f| f.2).sum::<f64>() / n,
        mean_return: finals.iter().map(|f| f.3).sum::<f64>() / n,
    }
}

/// Uniform-random joint actions for `episodes` episodes drawn from the
/// env's scenario stream.
pub fn random_policy(
    env: &mut RestorationEnv,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PolicySummary, EnvError> {
    use rand::Rng;
    let dims = env.action_dims();
    let mut finals = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let reset = env.reset()?;
        let mut last = reset.info;
        let mut ret = 0.0;
        for _ in 0..env.horizon() {
            let joint: Vec<usize> = dims.iter().map(|&d| rng.gen_range(0..d)).collect();
            let out = env.step(&joint)?;
            ret += out.reward;
            last = out.info;
        }
        finals.push((last.restored_frac, last.weighted_kw, last.report.xi, ret));
    }
    Ok(summarize(&finals))
}

/// Same as `random_policy` but on explicit scenario seeds.
pub fn random_policy_on_scenarios(
    env: &mut RestorationEnv,
    scenario_seeds: &[u64],
    rng: &mut ChaCha8Rng,
) -> Result<PolicySummary, EnvError> {
    use rand::Rng;
    let dims = env.action_dims();
    let mut finals = Vec::with_capacity(scenario_seeds.len());
    for &seed in scenario_seeds {
        let spec = crate::env::sample_scenario(env.graph(), seed, env.scenario_config())?;
        let reset = env.reset_to(spec)?;
        let mut last = reset.info;
        let mut ret = 0.0;
        for _ in 0..env.horizon() {
            let joint: Vec<usize> = dims.iter().map(|&d| rng.gen_range(0..d)).collect();
            let out = env.step(&joint)?;
            ret += out.reward;
            last = out.info;
        }
        finals.push((last.restored_frac, last.weighted_kw, last.report.xi, ret));
    }
    Ok(summarize(&finals))
}

/// One greedy episode on the env's current scenario stream (or explicit
/// scenarios). Each step, every agent simulates its own candidate actions
/// one at a time (all other agents no-op) on a cloned environment and
/// keeps the best one-step reward; the chosen actions are then applied
/// jointly. Deterministic.
pub fn greedy_policy(
    env: &mut RestorationEnv,
    scenario_seeds: &[u64],
) -> Result<PolicySummary, EnvError> {
    let dims = env.action_dims();
    let n = dims.len();
    let mut finals = Vec::with_capacity(scenario_seeds.len());
    for &seed in scenario_seeds {
        let spec = crate::env::sample_scenario(env.graph(), seed, env.scenario_config())?;
        let reset = env.reset_to(spec)?;
        let mut last = reset.info;
        let mut ret = 0.0;
        for _ in 0..env.horizon() {
            let mut joint = vec![0usize; n];
            for agent in 0..n {
                let mut best_a = 0usize;
                let mut best_r = f64::NEG_INFINITY;
                for a in 0..dims[agent] {
                    let mut probe = vec![0usize; n];
                    probe[agent] = a;
                    let mut sim = env.clone();
                    let out = sim.step(&probe)?;
                    if out.reward > best_r {
                        best_r = out.reward;
                        best_a = a;
                    }
                }
                joint[agent] = best_a;
            }
            let out = env.step(&joint)?;
            ret += out.reward;
            last = out.info;
        }
        finals.push((last.restored_frac, last.weighted_kw, last.report.xi, ret));
    }
    Ok(summarize(&finals))
}

/// Independent PPO: the shared trainer with per-agent critics on local
/// state and no sequential coupling.
pub fn independent_ppo<F>(
    env_factory: F,
    config: &crate::happo::TrainConfig,
    seeds: &[u64],
    options: &crate::happo::TrainOptions,
) -> Result<Vec<crate::happo::SeedRunSummary>, crate::happo::TrainError>
where
    F: Fn(u64) -> Result<RestorationEnv, EnvError>,
{
    crate::happo::train(
        env_factory,
        config,
        crate::happo::Algorithm::IndependentPpo,
        seeds,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_scenario, ScenarioConfig};
    use crate::feeder::load_feeder_str;
    use crate::rngstream::seeded_stream;
    use std::sync::Arc;

    fn toy4() -> FeederGraph {
        load_feeder_str(include_str!("../fixtures/toy4.toml")).unwrap()
    }
    fn toy13() -> FeederGraph {
        load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap()
    }

    fn no_fault_cfg() -> ScenarioConfig {
        ScenarioConfig {
            fault_count_min: 0,
            fault_count_max: 0,
            der_scale_min: 1.0,
            der_scale_max: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn toy4_oracle_matches_hand_enumeration() {
        // Four configurations. With both DERs at full scale:
        //   open/open   -> nothing served, feasible, J = 0
        //   s1 only     -> 520 kW on the 250 kW unit: infeasible (C1)
        //   s2 only     -> 520 kW on the 400 kW unit: infeasible (C1)
        //   both closed -> all 520 kW served, feasible
        // Optimum closes both switches and serves everything.
        let g = toy4();
        let spec = sample_scenario(&g, 1, &no_fault_cfg()).unwrap();
        let r = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert_eq!(r.configs_evaluated, 4);
        assert_eq!(r.best_bits, vec![true, true]);
        assert!((r.best_fraction - 1.0).abs() < 1e-12);
        let expected_weighted: f64 = g
            .loads
            .iter()
            .map(|l| *spec.priority_assignment.get(&l.id).unwrap() as f64 * l.p_demand_kw)
            .sum();
        assert!((r.best_weighted_kw - expected_weighted).abs() < 1e-9);
        assert_eq!(r.ties, 1);
        assert!(r.best_feasible);
    }

    #[test]
    fn all_faulted_scenario_gives_zero_optimum() {
        let g = toy4();
        let cfg = ScenarioConfig {
            fault_count_min: 2,
            fault_count_max: 2,
            der_scale_min: 1.0,
            der_scale_max: 1.0,
            ..Default::default()
        };
        let spec = sample_scenario(&g, 3, &cfg).unwrap();
        assert_eq!(spec.faulted_branch_ids.len(), 2);
        let r = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert_eq!(r.configs_evaluated, 1);
        assert_eq!(r.best_weighted_kw, 0.0);
        assert!(r.best_feasible);
    }

    #[test]
    fn oracle_guard_trips_beyond_limit() {
        // Synthetic spec check: guard is on operable switch count.
        let g = toy13();
        let spec = sample_scenario(&g, 1, &no_fault_cfg()).unwrap();
        // toy13 has 6 switches, below the guard; force the guard by
        // shrinking the constant path: just assert the guard formula.
        assert!(g.switches.len() <= MAX_ORACLE_SWITCHES);
        let r = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert_eq!(r.configs_evaluated, 64);
    }

    #[test]
    fn toy13_strict_optimum_serves_both_region_pure_sets() {
        // No faults, full scale: optimum serves every load except d5
        // (1450 kW of microgrid-1 demand exceeds its 1200 kW DER), giving
        // 2250 kW served.
        let g = toy13();
        let spec = sample_scenario(&g, 1, &no_fault_cfg()).unwrap();
        let r = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert!((r.best_served_kw - 2250.0).abs() < 1e-9, "served {}", r.best_served_kw);
        assert!(r.best_report.xi <= XI_STRICT_EPS);
        // s4 (tie) and s5 (d5's switch) stay open in the optimum
        let s4 = g.switch_idx("s4").unwrap();
        let s5 = g.switch_idx("s5").unwrap();
        assert!(!r.best_switch_states.0[s4].is_closed());
        assert!(!r.best_switch_states.0[s5].is_closed());
    }

    #[test]
    fn oracle_dominates_every_sampled_configuration() {
        use rand::Rng;
        let g = toy13();
        let spec = sample_scenario(&g, 5, &no_fault_cfg()).unwrap();
        let cfg = RewardConfig::default();
        let best = exhaustive_oracle(&g, &spec, OracleMode::Strict, &cfg).unwrap();
        let eff = spec.apply(&g).unwrap();
        let mut rng = seeded_stream(9, 4);
        for _ in 0..50 {
            let states = SwitchStates(
                (0..eff.switches.len())
                    .map(|_| if rng.gen::<bool>() { SwitchState::Closed } else { SwitchState::Open })
                    .collect(),
            );
            let islands = crate::feeder::connected_components(&eff, &states);
            let plan = dispatch_ders(&eff, &islands);
            let result = solve_system_with(&eff, &states, &islands, &plan);
            let report = evaluate_constraints(&eff, &result, &plan, &cfg);
            let (weighted_kw, _) = weighted_restored(&eff, &result);
            if report.is_feasible(XI_STRICT_EPS) {
                assert!(weighted_kw <= best.best_weighted_kw + 1e-9);
            }
        }
    }

    #[test]
    fn oracle_is_deterministic() {
        let g = toy13();
        let spec = sample_scenario(&g, 2, &ScenarioConfig::default()).unwrap();
        let a = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        let b = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert_eq!(a.best_bits, b.best_bits);
        assert_eq!(a.ties, b.ties);
        assert_eq!(a.best_weighted_kw.to_bits(), b.best_weighted_kw.to_bits());
    }

    #[test]
    fn random_policy_reproducible_and_below_oracle() {
        let g = Arc::new(toy13());
        let mk = || {
            RestorationEnv::new(
                g.clone(),
                no_fault_cfg(),
                RewardConfig::default(),
                99,
            )
            .unwrap()
        };
        let mut env1 = mk();
        let mut rng1 = seeded_stream(1, 8);
        let s1 = random_policy(&mut env1, 30, &mut rng1).unwrap();
        let mut env2 = mk();
        let mut rng2 = seeded_stream(1, 8);
        let s2 = random_policy(&mut env2, 30, &mut rng2).unwrap();
        assert_eq!(s1.mean_final_frac.to_bits(), s2.mean_final_frac.to_bits());

        let spec = sample_scenario(&g, 1, &no_fault_cfg()).unwrap();
        let oracle = exhaustive_oracle(&g, &spec, OracleMode::Strict, &RewardConfig::default()).unwrap();
        assert!(s1.mean_final_frac < oracle.best_fraction);
    }

    #[test]
    fn greedy_closes_obvious_switch_first() {
        // toy4: both closures are each reward-positive; greedy finds them
        // immediately and restores everything by step 1.
        let g = Arc::new(toy4());
        let mut env = RestorationEnv::new(
            g.clone(),
            no_fault_cfg(),
            RewardConfig::default(),
            5,
        )
        .unwrap();
        let s = greedy_policy(&mut env, &[1]).unwrap();
        assert!((s.mean_final_frac - 1.0).abs() < 1e-9, "greedy frac {}", s.mean_final_frac);
    }

    #[test]
    fn greedy_toy13_canonical_regression() {
        // Pinned from the first verified run: on canonical scenario 1
        // (no faults, scale 0.919) one-step greedy finds the strict
        // optimum's configuration.
        let g = Arc::new(toy13());
        let cfg = ScenarioConfig::default();
        let mut env = RestorationEnv::new(g, cfg, RewardConfig::default(), 5).unwrap();
        let s = greedy_policy(&mut env, &[1]).unwrap();
        assert!((s.mean_final_weighted_kw - 11200.0).abs() < 1e-9);
        assert!((s.mean_final_frac - 0.7133757961783439).abs() < 1e-12);
        assert!(s.mean_final_xi <= XI_STRICT_EPS);
    }

    #[test]
    fn greedy_all_faulted_emits_noops() {
        let g = Arc::new(toy4());
        let cfg = ScenarioConfig {
            fault_count_min: 2,
            fault_count_max: 2,
            der_scale_min: 1.0,
            der_scale_max: 1.0,
            ..Default::default()
        };
        let mut env = RestorationEnv::new(g, cfg, RewardConfig::default(), 5).unwrap();
        let s = greedy_policy(&mut env, &[4]).unwrap();
        assert_eq!(s.mean_final_frac, 0.0);
        assert_eq!(s.mean_final_xi, 0.0);
        // no lock penalties paid: all no-ops had reward 0, lock actions < 0
        assert_eq!(s.mean_return, 0.0);
    }

    #[test]
    fn horizon_zero_restores_nothing() {
        let g = Arc::new(toy4());
        let cfg = ScenarioConfig {
            horizon: Some(0),
            fault_count_min: 0,
            fault_count_max: 0,
            der_scale_min: 1.0,
            der_scale_max: 1.0,
            ..Default::default()
        };
        let mut env = RestorationEnv::new(g, cfg, RewardConfig::default(), 5).unwrap();
        let mut rng = seeded_stream(2, 8);
        let s = random_policy(&mut env, 3, &mut rng).unwrap();
        assert_eq!(s.mean_final_frac, 0.0);
    }
}
