//! Constraint evaluation and the shared step reward.
//!
//! Six operational limits are scored as nonnegative violation magnitudes in
//! their native units, normalized into the dimensionless aggregate `xi`,
//! which enters the reward as a differentiable penalty instead of action
//! masking:
//!
//!   c1  power balance      served + losses <= total DER output      (kW)
//!   c2  voltage band       v_min <= v <= v_max on energized buses   (pu)
//!   c3  DER limit box      required injection within [min,max]      (kW)
//!   c4  thermal rating     |S| <= s_max per branch                  (kVA)
//!   c5  generation cap     total DER output <= p_gen_cap_kw         (kW)
//!   c6  local balance      per-microgrid load <= local DER output   (kW)

use crate::feeder::FeederGraph;
use crate::powerflow::{DispatchPlan, IslandSlack, PowerFlowResult};
use serde::{Deserialize, Serialize};

/// Per-constraint violation magnitudes plus the normalized aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub c1_kw: f64,
    pub c2_pu: f64,
    pub c3_kw: f64,
    pub c4_kva: f64,
    pub c5_kw: f64,
    pub c6_kw: f64,
    pub xi: f64,
}

impl ViolationReport {
    pub fn is_feasible(&self, eps: f64) -> bool {
        self.xi <= eps
    }
}

/// How the restoration-progress term of the reward is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// Change in the priority-weighted restored fraction (feeder-independent
    /// reward scale).
    #[default]
    WeightedFraction,
    /// Change in raw restored kW divided by the generation cap.
    RawKw,
}

/// Normalization constants that make the six violation magnitudes
/// comparable inside `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintNorms {
    pub c1_kw: f64,
    pub c2_pu: f64,
    pub c3_kw: f64,
    pub c4_kva: f64,
    pub c5_kw: f64,
    pub c6_kw: f64,
}

impl ConstraintNorms {
    /// Default scaling: cap-relative for the power constraints, 1 pu for
    /// voltage, installed totals for DER and thermal headroom.
    pub fn for_graph(graph: &FeederGraph) -> Self {
        let p_max_total: f64 = graph.ders.iter().map(|d| d.p_max_kw).sum();
        let s_max_total: f64 = graph
            .branches
            .iter()
            .map(|b| b.s_max_pu * graph.s_base_kva)
            .sum();
        ConstraintNorms {
            c1_kw: graph.p_gen_cap_kw,
            c2_pu: 1.0,
            c3_kw: if p_max_total > 0.0 { p_max_total } else { graph.p_gen_cap_kw },
            c4_kva: if s_max_total > 0.0 { s_max_total } else { graph.s_base_kva },
            c5_kw: graph.p_gen_cap_kw,
            c6_kw: graph.p_gen_cap_kw,
        }
    }
}

/// Reward weights and operating bounds. File-level knobs of the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_pen: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub delta_mode: DeltaMode,
    /// Optional overrides; `None` falls back to `ConstraintNorms::for_graph`.
    pub norm_c1_kw: Option<f64>,
    pub norm_c2_pu: Option<f64>,
    pub norm_c3_kw: Option<f64>,
    pub norm_c4_kva: Option<f64>,
    pub norm_c5_kw: Option<f64>,
    pub norm_c6_kw: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            beta: 0.1,
            lambda_pen: 1.0,
            v_min_pu: 0.95,
            v_max_pu: 1.05,
            delta_mode: DeltaMode::WeightedFraction,
            norm_c1_kw: None,
            norm_c2_pu: None,
            norm_c3_kw: None,
            norm_c4_kva: None,
            norm_c5_kw: None,
            norm_c6_kw: None,
        }
    }
}

impl RewardConfig {
    pub fn norms(&self, graph: &FeederGraph) -> ConstraintNorms {
        let d = ConstraintNorms::for_graph(graph);
        ConstraintNorms {
            c1_kw: self.norm_c1_kw.unwrap_or(d.c1_kw),
            c2_pu: self.norm_c2_pu.unwrap_or(d.c2_pu),
            c3_kw: self.norm_c3_kw.unwrap_or(d.c3_kw),
            c4_kva: self.norm_c4_kva.unwrap_or(d.c4_kva),
            c5_kw: self.norm_c5_kw.unwrap_or(d.c5_kw),
            c6_kw: self.norm_c6_kw.unwrap_or(d.c6_kw),
        }
    }
}

/// Scores constraints C1-C6 against a solved snapshot.
pub fn evaluate_constraints(
    graph: &FeederGraph,
    result: &PowerFlowResult,
    plan: &DispatchPlan,
    config: &RewardConfig,
) -> ViolationReport {
    let norms = config.norms(graph);

    let served_total: f64 = result.served.iter().sum();
    let der_total: f64 = result.der_p_kw.iter().sum();
    let c1_kw = (served_total + result.p_loss_kw - der_total).max(0.0);

    let mut c2_pu = 0.0;
    for (b, &v) in result.v_pu.iter().enumerate() {
        if result.energized[b] {
            c2_pu += (v - config.v_max_pu).max(0.0) + (config.v_min_pu - v).max(0.0);
        }
    }

    // Overshoot of the injection the solve demanded beyond each dispatched
    // DER's limit box. Fixed setpoints are in-box by construction; the
    // slack requirement is not.
    let mut c3_kw = 0.0;
    let mut count_der = |d: usize| {
        let der = &graph.ders[d];
        let p = result.der_p_req_kw[d];
        let q = result.der_q_req_kvar[d];
        c3_kw += (p - der.p_max_kw).max(0.0)
            + (der.p_min_kw - p).max(0.0)
            + (q - der.q_max_kvar).max(0.0)
            + (der.q_min_kvar - q).max(0.0);
    };
    for slack in &plan.island_slack {
        if let IslandSlack::Der(d) = slack {
            let bus = graph.bus_idx(&graph.ders[*d].bus_id).unwrap();
            if result.energized[bus] {
                count_der(*d);
            }
        }
    }
    for &(d, _, _) in &plan.setpoints {
        let bus = graph.bus_idx(&graph.ders[d].bus_id).unwrap();
        if result.energized[bus] {
            count_der(d);
        }
    }

    let mut c4_kva = 0.0;
    for (bi, br) in graph.branches.iter().enumerate() {
        let s_max_kva = br.s_max_pu * graph.s_base_kva;
        c4_kva += (result.flows[bi].s_kva - s_max_kva).max(0.0);
    }

    let c5_kw = (der_total - graph.p_gen_cap_kw).max(0.0);

    let mut c6_kw = 0.0;
    for mg in &graph.microgrids {
        let load_m: f64 = mg
            .load_ids
            .iter()
            .map(|id| result.served[graph.load_idx(id).unwrap()])
            .sum();
        let gen_m: f64 = mg
            .der_ids
            .iter()
            .map(|id| result.der_p_kw[graph.der_idx(id).unwrap()])
            .sum();
        c6_kw += (load_m - gen_m).max(0.0);
    }

    let xi = c1_kw / norms.c1_kw
        + c2_pu / norms.c2_pu
        + c3_kw / norms.c3_kw
        + c4_kva / norms.c4_kva
        + c5_kw / norms.c5_kw
        + c6_kw / norms.c6_kw;

    ViolationReport {
        c1_kw,
        c2_pu,
        c3_kw,
        c4_kva,
        c5_kw,
        c6_kw,
        xi,
    }
}

/// Priority-weighted restored power and its fraction of total weighted
/// demand.
pub fn weighted_restored(graph: &FeederGraph, result: &PowerFlowResult) -> (f64, f64) {
    let mut weighted_kw = 0.0;
    let mut weighted_demand = 0.0;
    for (li, load) in graph.loads.iter().enumerate() {
        let c = load.priority as f64;
        weighted_kw += c * result.served[li];
        weighted_demand += c * load.p_demand_kw;
    }
    let fraction = if weighted_demand > 0.0 {
        weighted_kw / weighted_demand
    } else {
        0.0
    };
    (weighted_kw, fraction)
}

/// Shared step reward:
/// `alpha * delta_restored - beta * loss/cap - lambda * xi`.
///
/// `prev` and `curr` are the restoration measures selected by
/// `config.delta_mode` (weighted fraction by default, raw kW otherwise; in
/// raw mode the delta is divided by the generation cap).
pub fn step_reward(
    prev: f64,
    curr: f64,
    p_loss_kw: f64,
    report: &ViolationReport,
    graph: &FeederGraph,
    config: &RewardConfig,
) -> f64 {
    let delta = match config.delta_mode {
        DeltaMode::WeightedFraction => curr - prev,
        DeltaMode::RawKw => (curr - prev) / graph.p_gen_cap_kw,
    };
    config.alpha * delta - config.beta * (p_loss_kw / graph.p_gen_cap_kw)
        - config.lambda_pen * report.xi
}
