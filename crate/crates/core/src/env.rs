//! The multi-agent episodic restoration MDP.
//!
//! One agent per microgrid. Episodes start fully de-energized (every
//! operable switch open, faulted branches locked), run for a fixed horizon
//! with no early termination, and step by applying all agents' switch
//! toggles simultaneously, re-solving the power flow, and emitting one
//! shared reward. Actions on faulted switches degrade to no-ops that add a
//! fixed lock penalty to the violation aggregate.

use crate::feeder::{FeederGraph, SwitchState, SwitchStates};
use crate::powerflow::{dispatch_ders, solve_system_with, PowerFlowResult};
use crate::reward::{evaluate_constraints, step_reward, weighted_restored, DeltaMode, RewardConfig, ViolationReport};
use crate::rngstream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("config error: {0}")]
    Config(String),
    #[error("agent {agent} action {action} out of bounds (dim {dim})")]
    OutOfBoundsAction { agent: usize, action: usize, dim: usize },
    #[error("environment used before reset")]
    NotReset,
}

/// Episode randomization knobs, sourced from the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub fault_count_min: usize,
    pub fault_count_max: usize,
    pub der_scale_min: f64,
    pub der_scale_max: f64,
    /// Episode length; defaults to twice the switch count.
    pub horizon: Option<usize>,
    /// Added to xi for each action that targets a faulted switch.
    pub lock_penalty: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            fault_count_min: 0,
            fault_count_max: 1,
            der_scale_min: 0.85,
            der_scale_max: 1.0,
            horizon: None,
            lock_penalty: 0.1,
        }
    }
}

/// One episode's randomized outage conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Faulted (permanently inoperable) switched branches, by branch id.
    pub faulted_branch_ids: Vec<String>,
    /// Priority reassignment covering every load.
    pub priority_assignment: BTreeMap<String, u8>,
    /// Multiplier on every DER's p_max, drawn from the configured range.
    pub der_scale: f64,
    /// Start-of-episode switch assignment: every operable switch open.
    pub initial_switch_states: Vec<SwitchState>,
}

impl ScenarioSpec {
    /// Produces the episode's effective graph: scaled DER capacities and
    /// reassigned priorities.
    pub fn apply(&self, graph: &FeederGraph) -> Result<FeederGraph, EnvError> {
        let mut ders = graph.ders.clone();
        for d in &mut ders {
            d.p_max_kw *= self.der_scale;
            d.p_min_kw = d.p_min_kw.min(d.p_max_kw);
        }
        let mut loads = graph.loads.clone();
        for l in &mut loads {
            match self.priority_assignment.get(&l.id) {
                Some(&p) => l.priority = p,
                None => {
                    return Err(EnvError::Config(format!(
                        "scenario priority assignment missing load '{}'",
                        l.id
                    )))
                }
            }
        }
        FeederGraph::new(
            graph.s_base_kva,
            graph.p_gen_cap_kw,
            graph.buses.clone(),
            graph.branches.clone(),
            graph.switches.clone(),
            loads,
            ders,
            graph.microgrids.clone(),
        )
        .map_err(|e| EnvError::Config(format!("scenario produced invalid graph: {e}")))
    }
}

/// Draws a scenario from the configured distribution. Reproducible: the
/// spec is a pure function of `(graph, seed, config)`. Draw order is
/// fault count, fault set, per-load priorities, DER scale.
pub fn sample_scenario(
    graph: &FeederGraph,
    seed: u64,
    config: &ScenarioConfig,
) -> Result<ScenarioSpec, EnvError> {
    let switched = graph.switched_branches();
    if config.fault_count_min > config.fault_count_max {
        return Err(EnvError::Config(format!(
            "fault count range [{}, {}] is empty",
            config.fault_count_min, config.fault_count_max
        )));
    }
    if config.fault_count_max > switched.len() {
        return Err(EnvError::Config(format!(
            "fault_count_max {} exceeds switch count {}",
            config.fault_count_max,
            switched.len()
        )));
    }
    if !(config.der_scale_min <= config.der_scale_max) || config.der_scale_min < 0.0 {
        return Err(EnvError::Config(format!(
            "der scale range [{}, {}] invalid",
            config.der_scale_min, config.der_scale_max
        )));
    }

    let mut rng = rngstream::seeded_stream(seed, 0);
    let count = if config.fault_count_min == config.fault_count_max {
        config.fault_count_min
    } else {
        rng.gen_range(config.fault_count_min..=config.fault_count_max)
    };

    // Partial Fisher-Yates over the switched branch list.
    let mut pool = switched;
    let mut faulted_idx = Vec::with_capacity(count);
    for k in 0..count {
        let j = rng.gen_range(k..pool.len());
        pool.swap(k, j);
        faulted_idx.push(pool[k]);
    }
    faulted_idx.sort_unstable();
    let faulted_branch_ids = faulted_idx
        .iter()
        .map(|&bi| graph.branches[bi].id.clone())
        .collect();

    let mut priority_assignment = BTreeMap::new();
    for load in &graph.loads {
        priority_assignment.insert(load.id.clone(), rng.gen_range(1..=10u8));
    }

    let der_scale = if config.der_scale_min == config.der_scale_max {
        config.der_scale_min
    } else {
        rng.gen_range(config.der_scale_min..=config.der_scale_max)
    };

    Ok(ScenarioSpec {
        seed,
        faulted_branch_ids,
        priority_assignment,
        der_scale,
        initial_switch_states: vec![SwitchState::Open; graph.switches.len()],
    })
}

/// Shared per-step diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepInfo {
    pub report: ViolationReport,
    /// report.xi plus lock penalties incurred this step.
    pub xi_effective: f64,
    pub lock_violations: usize,
    pub served_kw: f64,
    pub weighted_kw: f64,
    pub restored_frac: f64,
    pub p_loss_kw: f64,
}

#[derive(Debug, Clone)]
pub struct ResetOutput {
    pub observations: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub observations: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Concatenates per-agent observations (agent order) and appends the global
/// scalars: restored fraction, xi, and normalized time.
pub fn build_global_state(observations: &[Vec<f64>], frac: f64, xi: f64, t_frac: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(observations.iter().map(|o| o.len()).sum::<usize>() + 3);
    for obs in observations {
        out.extend_from_slice(obs);
    }
    out.push(frac);
    out.push(xi);
    out.push(t_frac);
    out
}

#[derive(Debug, Clone)]
struct EpisodeState {
    spec: ScenarioSpec,
    eff: FeederGraph,
    states: SwitchStates,
    faulted_switch: Vec<bool>,
    t: usize,
    prev_measure: f64,
    last_result: PowerFlowResult,
    last_report: ViolationReport,
    last_weighted_kw: f64,
    last_frac: f64,
}

/// One stateful environment instance. Clone to branch a lookahead
/// simulation; stepping never touches the scenario RNG, so clones and
/// originals stay in sync.
#[derive(Debug, Clone)]
pub struct RestorationEnv {
    graph: Arc<FeederGraph>,
    scenario_cfg: ScenarioConfig,
    reward_cfg: RewardConfig,
    horizon: usize,
    rng: ChaCha8Rng,
    episode: Option<EpisodeState>,
}

impl RestorationEnv {
    pub fn new(
        graph: Arc<FeederGraph>,
        scenario_cfg: ScenarioConfig,
        reward_cfg: RewardConfig,
        scenario_stream_seed: u64,
    ) -> Result<Self, EnvError> {
        if graph.microgrids.is_empty() {
            return Err(EnvError::Config(
                "environment requires a feeder with a declared microgrid partition".into(),
            ));
        }
        // Surface range errors at construction rather than first reset.
        sample_scenario(&graph, 0, &scenario_cfg)?;
        let horizon = scenario_cfg.horizon.unwrap_or(2 * graph.switches.len());
        if horizon == 0 && scenario_cfg.horizon != Some(0) {
            return Err(EnvError::Config("feeder has no switches".into()));
        }
        Ok(RestorationEnv {
            rng: rngstream::seeded_stream(scenario_stream_seed, rngstream::stream::SCENARIO),
            graph,
            scenario_cfg,
            reward_cfg,
            horizon,
            episode: None,
        })
    }

    pub fn graph(&self) -> &FeederGraph {
        &self.graph
    }
    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }
    pub fn scenario_config(&self) -> &ScenarioConfig {
        &self.scenario_cfg
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn num_agents(&self) -> usize {
        self.graph.microgrids.len()
    }
    /// `2 * |switches owned|  + 1` discrete actions per agent.
    pub fn action_dims(&self) -> Vec<usize> {
        self.graph
            .microgrids
            .iter()
            .map(|mg| 2 * mg.switch_ids.len() + 1)
            .collect()
    }
    /// Fixed per-agent observation lengths for this feeder.
    pub fn obs_dims(&self) -> Vec<usize> {
        self.graph
            .microgrids
            .iter()
            .map(|mg| {
                mg.bus_ids.len() + 3 * mg.switch_ids.len() + mg.der_ids.len() + mg.load_ids.len() + 2
            })
            .collect()
    }
    pub fn global_state_dim(&self) -> usize {
        self.obs_dims().iter().sum::<usize>() + 3
    }
    pub fn current_spec(&self) -> Option<&ScenarioSpec> {
        self.episode.as_ref().map(|e| &e.spec)
    }
    pub fn switch_states(&self) -> Option<&SwitchStates> {
        self.episode.as_ref().map(|e| &e.states)
    }
    pub fn steps_taken(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.t)
    }

    /// Starts a new episode on a scenario drawn from the internal stream.
    pub fn reset(&mut self) -> Result<ResetOutput, EnvError> {
        let seed = self.rng.gen::<u64>();
        let spec = sample_scenario(&self.graph, seed, &self.scenario_cfg)?;
        self.reset_to(spec)
    }

    /// Starts a new episode on an explicit scenario. Does not consume the
    /// internal scenario stream.
    pub fn reset_to(&mut self, spec: ScenarioSpec) -> Result<ResetOutput, EnvError> {
        let eff = spec.apply(&self.graph)?;
        let mut faulted_switch = vec![false; self.graph.switches.len()];
        for bid in &spec.faulted_branch_ids {
            let Some(bi) = self.graph.branch_idx(bid) else {
                return Err(EnvError::Config(format!(
                    "scenario faults unknown branch '{bid}'"
                )));
            };
            let Some(si) = self.graph.switch_of_branch(bi) else {
                return Err(EnvError::Config(format!(
                    "scenario faults non-switchable branch '{bid}'"
                )));
            };
            faulted_switch[si] = true;
        }
        if spec.initial_switch_states.len() != self.graph.switches.len() {
            return Err(EnvError::Config(
                "scenario initial switch states do not cover the switch set".into(),
            ));
        }

        let states = SwitchStates(spec.initial_switch_states.clone());
        let (result, report, weighted_kw, frac) = self.solve(&eff, &states);
        let measure = self.measure(weighted_kw, frac);
        let episode = EpisodeState {
            spec,
            eff,
            states,
            faulted_switch,
            t: 0,
            prev_measure: measure,
            last_result: result,
            last_report: report,
            last_weighted_kw: weighted_kw,
            last_frac: frac,
        };
        self.episode = Some(episode);
        let ep = self.episode.as_ref().unwrap();
        let observations = self.build_observations(ep);
        let global_state = build_global_state(&observations, ep.last_frac, ep.last_report.xi, 0.0);
        let info = Self::info(ep, 0);
        Ok(ResetOutput {
            observations,
            global_state,
            info,
        })
    }

    /// Applies one joint action: all toggles simultaneously, then one power
    /// flow and one shared reward. Episodes end exactly at the horizon.
    pub fn step(&mut self, joint_action: &[usize]) -> Result<StepOutput, EnvError> {
        let dims = self.action_dims();
        {
            let Some(_) = self.episode.as_ref() else {
                return Err(EnvError::NotReset);
            };
            if joint_action.len() != dims.len() {
                return Err(EnvError::Config(format!(
                    "joint action covers {} agents, feeder has {}",
                    joint_action.len(),
                    dims.len()
                )));
            }
            for (agent, (&a, &dim)) in joint_action.iter().zip(dims.iter()).enumerate() {
                if a >= dim {
                    return Err(EnvError::OutOfBoundsAction { agent, action: a, dim });
                }
            }
        }

        let ep = self.episode.as_mut().unwrap();
        let mut lock_violations = 0usize;
        for (agent, &a) in joint_action.iter().enumerate() {
            if a == 0 {
                continue;
            }
            let local = (a - 1) / 2;
            let close = (a - 1) % 2 == 1;
            let sid = &self.graph.microgrids[agent].switch_ids[local];
            let si = self.graph.switch_idx(sid).expect("validated at load");
            if ep.faulted_switch[si] {
                lock_violations += 1;
                continue;
            }
            ep.states.0[si] = if close { SwitchState::Closed } else { SwitchState::Open };
        }

        let (result, report, weighted_kw, frac) = {
            let eff = &ep.eff;
            let states = &ep.states;
            let islands = crate::feeder::connected_components(eff, states);
            let plan = dispatch_ders(eff, &islands);
            let result = solve_system_with(eff, states, &islands, &plan);
            let report = evaluate_constraints(eff, &result, &plan, &self.reward_cfg);
            let (weighted_kw, frac) = weighted_restored(eff, &result);
            (result, report, weighted_kw, frac)
        };

        let mut effective_report = report.clone();
        effective_report.xi += self.scenario_cfg.lock_penalty * lock_violations as f64;
        let measure = match self.reward_cfg.delta_mode {
            DeltaMode::WeightedFraction => frac,
            DeltaMode::RawKw => result.served.iter().sum(),
        };
        let reward = step_reward(
            ep.prev_measure,
            measure,
            result.p_loss_kw,
            &effective_report,
            &ep.eff,
            &self.reward_cfg,
        );

        ep.prev_measure = measure;
        ep.t += 1;
        ep.last_result = result;
        ep.last_report = report;
        ep.last_weighted_kw = weighted_kw;
        ep.last_frac = frac;
        let done = ep.t >= self.horizon;
        let t_frac = ep.t as f64 / self.horizon.max(1) as f64;

        let ep = self.episode.as_ref().unwrap();
        let observations = self.build_observations(ep);
        let global_state =
            build_global_state(&observations, ep.last_frac, ep.last_report.xi, t_frac);
        let mut info = Self::info(ep, lock_violations);
        info.xi_effective = effective_report.xi;
        Ok(StepOutput {
            observations,
            global_state,
            reward,
            done,
            info,
        })
    }

    fn measure(&self, weighted_kw: f64, frac: f64) -> f64 {
        match self.reward_cfg.delta_mode {
            DeltaMode::WeightedFraction => frac,
            DeltaMode::RawKw => weighted_kw,
        }
    }

    fn solve(
        &self,
        eff: &FeederGraph,
        states: &SwitchStates,
    ) -> (PowerFlowResult, ViolationReport, f64, f64) {
        let islands = crate::feeder::connected_components(eff, states);
        let plan = dispatch_ders(eff, &islands);
        let result = solve_system_with(eff, states, &islands, &plan);
        let report = evaluate_constraints(eff, &result, &plan, &self.reward_cfg);
        let (weighted_kw, frac) = weighted_restored(eff, &result);
        (result, report, weighted_kw, frac)
    }

    fn info(ep: &EpisodeState, lock_violations: usize) -> StepInfo {
        StepInfo {
            report: ep.last_report.clone(),
            xi_effective: ep.last_report.xi,
            lock_violations,
            served_kw: ep.last_result.served.iter().sum(),
            weighted_kw: ep.last_weighted_kw,
            restored_frac: ep.last_frac,
            p_loss_kw: ep.last_result.p_loss_kw,
        }
    }

    /// Observation layout per agent, in region order:
    /// `[v_pu per region bus | state per owned switch | faulted flag per
    /// owned switch | loading fraction per owned switch's branch | p/p_max
    /// per region DER | served fraction per region load | global restored
    /// fraction | global xi]`.
    fn build_observations(&self, ep: &EpisodeState) -> Vec<Vec<f64>> {
        let eff = &ep.eff;
        let result = &ep.last_result;
        let mut out = Vec::with_capacity(self.graph.microgrids.len());
        for mg in &self.graph.microgrids {
            let mut obs = Vec::new();
            for bid in &mg.bus_ids {
                obs.push(result.v_pu[eff.bus_idx(bid).unwrap()]);
            }
            for sid in &mg.switch_ids {
                let si = eff.switch_idx(sid).unwrap();
                obs.push(if ep.states.0[si].is_closed() { 1.0 } else { 0.0 });
            }
            for sid in &mg.switch_ids {
                let si = eff.switch_idx(sid).unwrap();
                obs.push(if ep.faulted_switch[si] { 1.0 } else { 0.0 });
            }
            for sid in &mg.switch_ids {
                let si = eff.switch_idx(sid).unwrap();
                let bi = eff.branch_idx(&eff.switches[si].branch_id).unwrap();
                let s_max_kva = eff.branches[bi].s_max_pu * eff.s_base_kva;
                obs.push(result.flows[bi].s_kva / s_max_kva);
            }
            for did in &mg.der_ids {
                let di = eff.der_idx(did).unwrap();
                let p_max = eff.ders[di].p_max_kw;
                obs.push(if p_max > 0.0 { result.der_p_kw[di] / p_max } else { 0.0 });
            }
            for lid in &mg.load_ids {
                let li = eff.load_idx(lid).unwrap();
                let demand = eff.loads[li].p_demand_kw;
                obs.push(if demand > 0.0 { result.served[li] / demand } else { 0.0 });
            }
            obs.push(ep.last_frac);
            obs.push(ep.last_report.xi);
            debug_assert!(obs.iter().all(|x| x.is_finite()));
            out.push(obs);
        }
        out
    }
}
