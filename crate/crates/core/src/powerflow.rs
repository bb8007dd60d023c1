//! Steady-state AC power flow on the energized islands of a radial feeder,
//! single-phase balanced equivalent.
//!
//! Each island is solved with the ladder-iterative backward/forward sweep:
//! backward pass accumulates branch currents from the leaves, forward pass
//! propagates voltages from the slack bus, repeated until the per-bus
//! complex power mismatch drops below `TOL_PU`. Loads are constant-PQ and
//! binary served/unserved: a load on an energized island draws its full
//! demand, everything else draws nothing.
//!
//! Islands that contain a cycle or fail to converge are reported and
//! treated as unserved; an episode never aborts on solver trouble.

use crate::feeder::{branch_active, FeederGraph, IslandSet, SwitchStates};
use num_complex::Complex64;

/// Convergence threshold on per-bus complex power mismatch (per-unit).
pub const TOL_PU: f64 = 1e-8;
/// Sweep iteration cap per island.
pub const MAX_SWEEPS: usize = 100;

/// Slack assignment for one island.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandSlack {
    /// Substation bus holds the island voltage; unbounded injection.
    Source(usize),
    /// DER (by index) holds the island voltage; injection clamped to its
    /// limits after the solve.
    Der(usize),
    /// No source and no DER: the island stays dark.
    None,
}

/// Generator schedule for one switch configuration.
#[derive(Debug, Clone)]
pub struct DispatchPlan {
    /// Fixed injections `(der index, p_kw, q_kvar)` for every energized
    /// non-slack DER.
    pub setpoints: Vec<(usize, f64, f64)>,
    /// Slack choice per island, aligned with the island list the plan was
    /// built from.
    pub island_slack: Vec<IslandSlack>,
}

/// Why an island could not be energized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandStatus {
    Energized,
    /// No slack available.
    DeEnergized,
    /// The island contains a cycle; refused, treated as unserved.
    NotRadial,
    /// Sweep iteration cap hit; treated as unserved.
    NoConvergence,
}

#[derive(Debug, Clone)]
pub struct IslandOutcome {
    pub buses: IslandSet,
    pub status: IslandStatus,
    pub iterations: usize,
}

/// Per-branch sending-end flow.
#[derive(Debug, Clone, Copy, Default)]
pub struct BranchFlow {
    pub p_kw: f64,
    pub q_kvar: f64,
    pub s_kva: f64,
}

/// One power-flow-consistent system snapshot.
#[derive(Debug, Clone)]
pub struct PowerFlowResult {
    /// True when every island that had a slack solved radially within the
    /// iteration cap.
    pub converged: bool,
    /// Voltage magnitude per bus; 0.0 on de-energized buses.
    pub v_pu: Vec<f64>,
    /// Sending-end flow per branch; zero on open or dark branches.
    pub flows: Vec<BranchFlow>,
    /// Total series losses over all energized islands.
    pub p_loss_kw: f64,
    /// Active power served per load; full demand or zero.
    pub served: Vec<f64>,
    pub energized: Vec<bool>,
    /// Max sweep count over islands.
    pub iterations: usize,
    pub islands: Vec<IslandOutcome>,
    /// DER outputs after clamping to their limit boxes.
    pub der_p_kw: Vec<f64>,
    pub der_q_kvar: Vec<f64>,
    /// DER injections the solve actually required (slack before clamping);
    /// conservation holds against these.
    pub der_p_req_kw: Vec<f64>,
    pub der_q_req_kvar: Vec<f64>,
    /// Substation injection per bus (nonzero only on source-slack buses).
    pub source_p_kw: Vec<f64>,
    pub source_q_kvar: Vec<f64>,
}

impl PowerFlowResult {
    fn dark(graph: &FeederGraph) -> Self {
        PowerFlowResult {
            converged: true,
            v_pu: vec![0.0; graph.buses.len()],
            flows: vec![BranchFlow::default(); graph.branches.len()],
            p_loss_kw: 0.0,
            served: vec![0.0; graph.loads.len()],
            energized: vec![false; graph.buses.len()],
            iterations: 0,
            islands: Vec::new(),
            der_p_kw: vec![0.0; graph.ders.len()],
            der_q_kvar: vec![0.0; graph.ders.len()],
            der_p_req_kw: vec![0.0; graph.ders.len()],
            der_q_req_kvar: vec![0.0; graph.ders.len()],
            source_p_kw: vec![0.0; graph.buses.len()],
            source_q_kvar: vec![0.0; graph.buses.len()],
        }
    }

    /// Sum of priority-unweighted served active power.
    pub fn total_served_kw(&self) -> f64 {
        self.served.iter().sum()
    }
}

/// Assigns an island slack and fixed DER setpoints for each island.
///
/// Rules: a source bus wins the slack role; otherwise the largest-capacity
/// DER (ties broken by index). Remaining DERs hold a fixed injection
/// proportional to capacity, scaled by island demand so the island's total
/// DER capacity is never exceeded. Islands without source or DER stay dark.
pub fn dispatch_ders(graph: &FeederGraph, islands: &[IslandSet]) -> DispatchPlan {
    let mut setpoints = Vec::new();
    let mut island_slack = Vec::with_capacity(islands.len());

    for island in islands {
        let source = island.iter().copied().find(|&b| graph.buses[b].is_source);
        let mut ders: Vec<usize> = Vec::new();
        for &b in island {
            ders.extend_from_slice(graph.ders_at_bus(b));
        }
        ders.sort_unstable();

        let slack = match source {
            Some(bus) => IslandSlack::Source(bus),
            None => match ders
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    graph.ders[a]
                        .p_max_kw
                        .partial_cmp(&graph.ders[b].p_max_kw)
                        .unwrap()
                        // ties: prefer the lowest index, so compare reversed
                        .then(b.cmp(&a))
                }) {
                Some(d) => IslandSlack::Der(d),
                None => IslandSlack::None,
            },
        };

        if matches!(slack, IslandSlack::None) {
            island_slack.push(slack);
            continue;
        }

        let p_demand: f64 = island
            .iter()
            .flat_map(|&b| graph.loads_at_bus(b))
            .map(|&l| graph.loads[l].p_demand_kw)
            .sum();
        let q_demand: f64 = island
            .iter()
            .flat_map(|&b| graph.loads_at_bus(b))
            .map(|&l| graph.loads[l].q_demand_kvar)
            .sum();
        let p_cap: f64 = ders.iter().map(|&d| graph.ders[d].p_max_kw).sum();
        let q_cap: f64 = ders.iter().map(|&d| graph.ders[d].q_max_kvar.max(0.0)).sum();
        let p_ratio = if p_cap > 0.0 { (p_demand / p_cap).clamp(0.0, 1.0) } else { 0.0 };
        let q_ratio = if q_cap > 0.0 { (q_demand / q_cap).clamp(0.0, 1.0) } else { 0.0 };

        for &d in &ders {
            if slack == IslandSlack::Der(d) {
                continue;
            }
            let der = &graph.ders[d];
            let p = (der.p_max_kw * p_ratio).clamp(der.p_min_kw, der.p_max_kw);
            let q = (der.q_max_kvar.max(0.0) * q_ratio).clamp(der.q_min_kvar, der.q_max_kvar);
            setpoints.push((d, p, q));
        }
        island_slack.push(slack);
    }

    DispatchPlan {
        setpoints,
        island_slack,
    }
}

/// Solution of one energized island before merging.
#[derive(Debug, Clone)]
pub struct IslandSolution {
    pub v: Vec<Complex64>,
    /// Parallel to `island`: per-bus voltage.
    pub p_loss_kw: f64,
    pub q_loss_kvar: f64,
    /// Sending-end flow per active branch `(branch index, flow)`.
    pub flows: Vec<(usize, BranchFlow)>,
    /// Slack injection required by the physics (unclamped), in kW/kvar.
    pub slack_p_kw: f64,
    pub slack_q_kvar: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandIssue {
    NotRadial,
    NoConvergence,
}

/// Solves one island with the given slack and fixed injections.
///
/// `island` must be a connected component under `states`. Returns
/// `IslandIssue` when the island has a cycle or the sweep fails to reach
/// `TOL_PU` within `MAX_SWEEPS`.
pub fn solve_island(
    graph: &FeederGraph,
    island: &IslandSet,
    slack: IslandSlack,
    plan: &DispatchPlan,
    states: &SwitchStates,
) -> Result<IslandSolution, IslandIssue> {
    let n = island.len();
    let mut local = vec![usize::MAX; graph.buses.len()];
    for (li, &b) in island.iter().enumerate() {
        local[b] = li;
    }

    let root_bus = match slack {
        IslandSlack::Source(b) => b,
        IslandSlack::Der(d) => graph.bus_idx(&graph.ders[d].bus_id).expect("der bus exists"),
        IslandSlack::None => panic!("solve_island called without a slack"),
    };
    let root = local[root_bus];
    assert!(root != usize::MAX, "slack bus must lie in the island");

    // Active branches inside the island; more than n-1 means a cycle.
    let mut active = Vec::new();
    for (bi, br) in graph.branches.iter().enumerate() {
        let f = graph.bus_idx(&br.from_bus).unwrap();
        let t = graph.bus_idx(&br.to_bus).unwrap();
        if local[f] != usize::MAX && local[t] != usize::MAX && branch_active(graph, bi, states) {
            active.push((bi, local[f], local[t]));
        }
    }
    if active.len() != n - 1 {
        return Err(IslandIssue::NotRadial);
    }

    // BFS tree from the slack.
    let mut adj = vec![Vec::new(); n];
    for &(bi, f, t) in &active {
        adj[f].push((bi, t));
        adj[t].push((bi, f));
    }
    let mut parent_edge: Vec<Option<(usize, usize)>> = vec![None; n]; // (branch, parent local)
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[root] = true;
    queue.push_back(root);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        for &(bi, other) in &adj[b] {
            if !seen[other] {
                seen[other] = true;
                parent_edge[other] = Some((bi, b));
                queue.push_back(other);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "island must be connected");

    // Net constant-PQ consumption per local bus (per-unit): loads minus
    // fixed DER injections.
    let s_base = graph.s_base_kva;
    let mut s_cons = vec![Complex64::new(0.0, 0.0); n];
    for (li_bus, &b) in island.iter().enumerate() {
        for &l in graph.loads_at_bus(b) {
            s_cons[li_bus] += Complex64::new(
                graph.loads[l].p_demand_kw / s_base,
                graph.loads[l].q_demand_kvar / s_base,
            );
        }
    }
    for &(d, p_kw, q_kvar) in &plan.setpoints {
        let b = graph.bus_idx(&graph.ders[d].bus_id).unwrap();
        if local[b] != usize::MAX {
            s_cons[local[b]] -= Complex64::new(p_kw / s_base, q_kvar / s_base);
        }
    }

    let z: Vec<Complex64> = graph
        .branches
        .iter()
        .map(|br| Complex64::new(br.r_pu, br.x_pu))
        .collect();

    let mut v = vec![Complex64::new(1.0, 0.0); n];
    let mut branch_current = vec![Complex64::new(0.0, 0.0); n]; // keyed by child bus
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_SWEEPS {
        iterations += 1;

        // Backward: accumulate currents from the leaves toward the root.
        let mut inj = Vec::with_capacity(n);
        for li in 0..n {
            let vm = v[li];
            let c = if vm.norm_sqr() > 1e-12 {
                (s_cons[li] / vm).conj()
            } else {
                Complex64::new(0.0, 0.0)
            };
            inj.push(c);
        }
        let mut acc = inj;
        for &b in order.iter().rev() {
            if let Some((_, p)) = parent_edge[b] {
                branch_current[b] = acc[b];
                acc[p] = acc[p] + acc[b];
            }
        }

        // Forward: propagate voltages from the slack.
        for &b in &order {
            if let Some((bi, p)) = parent_edge[b] {
                v[b] = v[p] - z[bi] * branch_current[b];
            }
        }

        // Mismatch check: recompute absorbed power per non-root bus.
        let mut max_mismatch: f64 = 0.0;
        for &b in &order {
            if parent_edge[b].is_none() {
                continue;
            }
            // absorbed current = inflow from parent minus outflow to children
            let mut absorbed = branch_current[b];
            for &(bi2, c) in &adj[b] {
                if let Some((pe_bi, pe_p)) = parent_edge[c] {
                    if pe_p == b && pe_bi == bi2 {
                        absorbed -= branch_current[c];
                    }
                }
            }
            let s_abs = v[b] * absorbed.conj();
            max_mismatch = max_mismatch.max((s_abs - s_cons[b]).norm());
        }
        if max_mismatch < TOL_PU {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(IslandIssue::NoConvergence);
    }

    // Flows, losses, slack injection.
    let mut flows = Vec::new();
    let mut loss = Complex64::new(0.0, 0.0);
    for &b in &order {
        if let Some((bi, p)) = parent_edge[b] {
            let s_send = v[p] * branch_current[b].conj();
            flows.push((
                bi,
                BranchFlow {
                    p_kw: s_send.re * s_base,
                    q_kvar: s_send.im * s_base,
                    s_kva: s_send.norm() * s_base,
                },
            ));
            loss += z[bi] * branch_current[b].norm_sqr();
        }
    }
    let mut slack_out = Complex64::new(0.0, 0.0);
    for &(_, c) in &adj[root] {
        if let Some((_, pe_p)) = parent_edge[c] {
            if pe_p == root {
                slack_out += v[root] * branch_current[c].conj();
            }
        }
    }
    let s_slack = slack_out + s_cons[root];

    Ok(IslandSolution {
        v,
        p_loss_kw: loss.re * s_base,
        q_loss_kvar: loss.im * s_base,
        flows,
        slack_p_kw: s_slack.re * s_base,
        slack_q_kvar: s_slack.im * s_base,
        iterations,
    })
}

/// Solves every island under the given switch assignment and merges the
/// results into one system snapshot. Never fails: solver trouble is flagged
/// per island and those islands contribute zero service.
pub fn solve_system(graph: &FeederGraph, states: &SwitchStates) -> PowerFlowResult {
    let islands = crate::feeder::connected_components(graph, states);
    let plan = dispatch_ders(graph, &islands);
    solve_system_with(graph, states, &islands, &plan)
}

/// `solve_system` with a caller-provided island partition and dispatch plan.
pub fn solve_system_with(
    graph: &FeederGraph,
    states: &SwitchStates,
    islands: &[IslandSet],
    plan: &DispatchPlan,
) -> PowerFlowResult {
    let mut out = PowerFlowResult::dark(graph);

    for (ii, island) in islands.iter().enumerate() {
        let slack = plan.island_slack[ii];
        if matches!(slack, IslandSlack::None) {
            out.islands.push(IslandOutcome {
                buses: island.clone(),
                status: IslandStatus::DeEnergized,
                iterations: 0,
            });
            continue;
        }
        match solve_island(graph, island, slack, plan, states) {
            Ok(sol) => {
                for (li, &b) in island.iter().enumerate() {
                    out.v_pu[b] = sol.v[li].norm();
                    out.energized[b] = true;
                    for &l in graph.loads_at_bus(b) {
                        out.served[l] = graph.loads[l].p_demand_kw;
                    }
                }
                for &(bi, f) in &sol.flows {
                    out.flows[bi] = f;
                }
                out.p_loss_kw += sol.p_loss_kw;
                out.iterations = out.iterations.max(sol.iterations);

                // Fixed setpoints inside this island become actual outputs.
                for &(d, p, q) in &plan.setpoints {
                    let b = graph.bus_idx(&graph.ders[d].bus_id).unwrap();
                    if island.binary_search(&b).is_ok() {
                        out.der_p_kw[d] = p;
                        out.der_q_kvar[d] = q;
                        out.der_p_req_kw[d] = p;
                        out.der_q_req_kvar[d] = q;
                    }
                }
                match slack {
                    IslandSlack::Der(d) => {
                        let der = &graph.ders[d];
                        out.der_p_req_kw[d] = sol.slack_p_kw;
                        out.der_q_req_kvar[d] = sol.slack_q_kvar;
                        out.der_p_kw[d] = sol.slack_p_kw.clamp(der.p_min_kw, der.p_max_kw);
                        out.der_q_kvar[d] = sol.slack_q_kvar.clamp(der.q_min_kvar, der.q_max_kvar);
                    }
                    IslandSlack::Source(b) => {
                        out.source_p_kw[b] = sol.slack_p_kw;
                        out.source_q_kvar[b] = sol.slack_q_kvar;
                    }
                    IslandSlack::None => unreachable!(),
                }
                out.islands.push(IslandOutcome {
                    buses: island.clone(),
                    status: IslandStatus::Energized,
                    iterations: sol.iterations,
                });
            }
            Err(issue) => {
                out.converged = false;
                out.islands.push(IslandOutcome {
                    buses: island.clone(),
                    status: match issue {
                        IslandIssue::NotRadial => IslandStatus::NotRadial,
                        IslandIssue::NoConvergence => IslandStatus::NoConvergence,
                    },
                    iterations: if issue == IslandIssue::NoConvergence {
                        MAX_SWEEPS
                    } else {
                        0
                    },
                });
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{load_feeder_str, Branch, Bus, Der, Load, MicrogridRegion, Switch, SwitchState};

    fn toy13() -> FeederGraph {
        load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap()
    }
    fn toy4() -> FeederGraph {
        load_feeder_str(include_str!("../fixtures/toy4.toml")).unwrap()
    }

    /// 2-bus graph: DER slack at b1, one load at b2 over an r+jx line.
    fn two_bus(p_kw: f64, q_kvar: f64, r: f64, x: f64) -> FeederGraph {
        FeederGraph::new(
            1000.0,
            2400.0,
            vec![
                Bus { id: "b1".into(), base_kv: 12.47, is_source: false },
                Bus { id: "b2".into(), base_kv: 12.47, is_source: false },
            ],
            vec![Branch {
                id: "l1".into(),
                from_bus: "b1".into(),
                to_bus: "b2".into(),
                r_pu: r,
                x_pu: x,
                s_max_pu: 5.0,
                switch_id: Some("s1".into()),
            }],
            vec![Switch {
                id: "s1".into(),
                branch_id: "l1".into(),
                state: SwitchState::Closed,
                owner_microgrid: 0,
            }],
            vec![Load {
                id: "d1".into(),
                bus_id: "b2".into(),
                p_demand_kw: p_kw,
                q_demand_kvar: q_kvar,
                priority: 5,
            }],
            vec![Der {
                id: "g1".into(),
                bus_id: "b1".into(),
                p_min_kw: 0.0,
                p_max_kw: 10_000.0,
                q_min_kvar: -10_000.0,
                q_max_kvar: 10_000.0,
                owner_microgrid: 0,
            }],
            vec![MicrogridRegion {
                index: 0,
                bus_ids: vec!["b1".into(), "b2".into()],
                switch_ids: vec!["s1".into()],
                load_ids: vec!["d1".into()],
                der_ids: vec!["g1".into()],
            }],
        )
        .unwrap()
    }

    #[test]
    fn no_load_island_is_flat() {
        let g = two_bus(0.0, 0.0, 0.01, 0.01);
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        assert!((r.v_pu[0] - 1.0).abs() < 1e-12);
        assert!((r.v_pu[1] - 1.0).abs() < 1e-12);
        assert_eq!(r.p_loss_kw, 0.0);
    }

    #[test]
    fn two_bus_matches_frozen_fixed_point() {
        // 100 kW + 50 kvar over z = 0.01 + j0.01 pu on a 1000 kVA base.
        // Reference values from a high-precision complex fixed-point solve.
        let g = two_bus(100.0, 50.0, 0.01, 0.01);
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        let v_expected = 0.998497617659213885;
        let loss_expected = 0.125376443716201383;
        assert!(
            (r.v_pu[1] - v_expected).abs() < 1e-9,
            "v = {:.15}, want {:.15}",
            r.v_pu[1],
            v_expected
        );
        assert!(
            (r.p_loss_kw - loss_expected).abs() < 1e-8,
            "loss = {:.15}",
            r.p_loss_kw
        );
        // Slack must cover load plus losses.
        assert!((r.der_p_req_kw[0] - (100.0 + r.p_loss_kw)).abs() < 1e-6);
    }

    #[test]
    fn loop_is_rejected_as_not_radial() {
        // Parallel branches between the same pair of buses form a cycle.
        let g = FeederGraph::new(
            1000.0,
            2400.0,
            vec![
                Bus { id: "b1".into(), base_kv: 12.47, is_source: false },
                Bus { id: "b2".into(), base_kv: 12.47, is_source: false },
            ],
            vec![
                Branch {
                    id: "l1".into(),
                    from_bus: "b1".into(),
                    to_bus: "b2".into(),
                    r_pu: 0.01,
                    x_pu: 0.01,
                    s_max_pu: 5.0,
                    switch_id: None,
                },
                Branch {
                    id: "l2".into(),
                    from_bus: "b1".into(),
                    to_bus: "b2".into(),
                    r_pu: 0.01,
                    x_pu: 0.01,
                    s_max_pu: 5.0,
                    switch_id: Some("s1".into()),
                },
            ],
            vec![Switch {
                id: "s1".into(),
                branch_id: "l2".into(),
                state: SwitchState::Closed,
                owner_microgrid: 0,
            }],
            vec![Load {
                id: "d1".into(),
                bus_id: "b2".into(),
                p_demand_kw: 50.0,
                q_demand_kvar: 10.0,
                priority: 5,
            }],
            vec![Der {
                id: "g1".into(),
                bus_id: "b1".into(),
                p_min_kw: 0.0,
                p_max_kw: 1000.0,
                q_min_kvar: -500.0,
                q_max_kvar: 500.0,
                owner_microgrid: 0,
            }],
            vec![MicrogridRegion {
                index: 0,
                bus_ids: vec!["b1".into(), "b2".into()],
                switch_ids: vec!["s1".into()],
                load_ids: vec!["d1".into()],
                der_ids: vec!["g1".into()],
            }],
        )
        .unwrap();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(!r.converged);
        assert_eq!(r.islands[0].status, IslandStatus::NotRadial);
        assert_eq!(r.total_served_kw(), 0.0);
        assert_eq!(r.v_pu[1], 0.0);
    }

    #[test]
    fn infeasible_loading_hits_iteration_cap() {
        // P*r far beyond the transfer limit of the line: no solution exists.
        let g = two_bus(40_000.0, 0.0, 0.01, 0.01);
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(!r.converged);
        assert_eq!(r.islands[0].status, IslandStatus::NoConvergence);
        assert_eq!(r.total_served_kw(), 0.0);
    }

    #[test]
    fn all_open_serves_nothing() {
        let g = toy13();
        let states = SwitchStates::all(&g, SwitchState::Open);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        assert_eq!(r.total_served_kw(), 0.0);
        assert_eq!(r.p_loss_kw, 0.0);
        // Islands holding only DERs are energized at 1.0 pu; load-only
        // islands stay dark.
        let b1 = g.bus_idx("b1").unwrap();
        assert!(r.energized[b1]);
        let b2 = g.bus_idx("b2").unwrap();
        assert!(!r.energized[b2]);
        assert_eq!(r.v_pu[b2], 0.0);
    }

    #[test]
    fn toy13_all_closed_serves_every_load() {
        let g = toy13();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        for (li, load) in g.loads.iter().enumerate() {
            assert_eq!(r.served[li], load.p_demand_kw, "load {}", load.id);
        }
        assert!(r.p_loss_kw > 0.0);
        conservation_ok(&g, &r);
    }

    #[test]
    fn toy13_isolated_region_stays_dark() {
        let g = toy13();
        // Close only the microgrid-0 internals: region 1 keeps its loads
        // dark, region 0 is fully served.
        let mut states = SwitchStates::all(&g, SwitchState::Open);
        for sid in ["s1", "s2", "s3"] {
            states.0[g.switch_idx(sid).unwrap()] = SwitchState::Closed;
        }
        let r = solve_system(&g, &states);
        assert!(r.converged);
        for lid in ["d1", "d2", "d3", "d4"] {
            let li = g.load_idx(lid).unwrap();
            assert_eq!(r.served[li], g.loads[li].p_demand_kw);
        }
        for lid in ["d5", "d6", "d7", "d8"] {
            let li = g.load_idx(lid).unwrap();
            assert_eq!(r.served[li], 0.0);
        }
        conservation_ok(&g, &r);
    }

    #[test]
    fn dispatch_source_beats_der() {
        // Source bus plus a DER in one island: the source takes slack.
        let mut g = two_bus(100.0, 0.0, 0.01, 0.01);
        g = {
            let mut buses = g.buses.clone();
            buses[1].is_source = true;
            FeederGraph::new(
                g.s_base_kva,
                g.p_gen_cap_kw,
                buses,
                g.branches.clone(),
                g.switches.clone(),
                g.loads.clone(),
                g.ders.clone(),
                g.microgrids.clone(),
            )
            .unwrap()
        };
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let islands = crate::feeder::connected_components(&g, &states);
        let plan = dispatch_ders(&g, &islands);
        assert_eq!(plan.island_slack.len(), 1);
        assert!(matches!(plan.island_slack[0], IslandSlack::Source(b) if b == 1));
    }

    #[test]
    fn dispatch_proportional_share() {
        // Two DERs (300/100 kW) and 200 kW demand: the 300 kW unit is
        // slack, the 100 kW unit injects 100 * 200/400 = 50 kW.
        let g = FeederGraph::new(
            1000.0,
            2400.0,
            vec![
                Bus { id: "b1".into(), base_kv: 12.47, is_source: false },
                Bus { id: "b2".into(), base_kv: 12.47, is_source: false },
            ],
            vec![Branch {
                id: "l1".into(),
                from_bus: "b1".into(),
                to_bus: "b2".into(),
                r_pu: 0.01,
                x_pu: 0.01,
                s_max_pu: 5.0,
                switch_id: Some("s1".into()),
            }],
            vec![Switch {
                id: "s1".into(),
                branch_id: "l1".into(),
                state: SwitchState::Closed,
                owner_microgrid: 0,
            }],
            vec![Load {
                id: "d1".into(),
                bus_id: "b2".into(),
                p_demand_kw: 200.0,
                q_demand_kvar: 0.0,
                priority: 5,
            }],
            vec![
                Der {
                    id: "g1".into(),
                    bus_id: "b1".into(),
                    p_min_kw: 0.0,
                    p_max_kw: 300.0,
                    q_min_kvar: -150.0,
                    q_max_kvar: 150.0,
                    owner_microgrid: 0,
                },
                Der {
                    id: "g2".into(),
                    bus_id: "b2".into(),
                    p_min_kw: 0.0,
                    p_max_kw: 100.0,
                    q_min_kvar: -50.0,
                    q_max_kvar: 50.0,
                    owner_microgrid: 0,
                },
            ],
            vec![MicrogridRegion {
                index: 0,
                bus_ids: vec!["b1".into(), "b2".into()],
                switch_ids: vec!["s1".into()],
                load_ids: vec!["d1".into()],
                der_ids: vec!["g1".into(), "g2".into()],
            }],
        )
        .unwrap();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let islands = crate::feeder::connected_components(&g, &states);
        let plan = dispatch_ders(&g, &islands);
        assert!(matches!(plan.island_slack[0], IslandSlack::Der(0)));
        assert_eq!(plan.setpoints.len(), 1);
        let (d, p, _q) = plan.setpoints[0];
        assert_eq!(d, 1);
        assert!((p - 50.0).abs() < 1e-12);
    }

    #[test]
    fn single_der_island_has_empty_setpoints() {
        let g = two_bus(100.0, 20.0, 0.01, 0.01);
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let islands = crate::feeder::connected_components(&g, &states);
        let plan = dispatch_ders(&g, &islands);
        assert!(plan.setpoints.is_empty());
        assert!(matches!(plan.island_slack[0], IslandSlack::Der(0)));
    }

    #[test]
    fn chain_voltage_monotone_from_slack() {
        // Uniform chain with uniform loads: voltage falls with distance.
        let n = 6;
        let mut buses = Vec::new();
        let mut branches = Vec::new();
        let mut loads = Vec::new();
        for i in 0..n {
            buses.push(Bus { id: format!("b{i}"), base_kv: 12.47, is_source: false });
            if i > 0 {
                branches.push(Branch {
                    id: format!("l{i}"),
                    from_bus: format!("b{}", i - 1),
                    to_bus: format!("b{i}"),
                    r_pu: 0.01,
                    x_pu: 0.01,
                    s_max_pu: 5.0,
                    switch_id: if i == 1 { Some("s1".into()) } else { None },
                });
                loads.push(Load {
                    id: format!("d{i}"),
                    bus_id: format!("b{i}"),
                    p_demand_kw: 50.0,
                    q_demand_kvar: 20.0,
                    priority: 5,
                });
            }
        }
        let g = FeederGraph::new(
            1000.0,
            2400.0,
            buses,
            branches,
            vec![Switch {
                id: "s1".into(),
                branch_id: "l1".into(),
                state: SwitchState::Closed,
                owner_microgrid: 0,
            }],
            loads,
            vec![Der {
                id: "g1".into(),
                bus_id: "b0".into(),
                p_min_kw: 0.0,
                p_max_kw: 2000.0,
                q_min_kvar: -1000.0,
                q_max_kvar: 1000.0,
                owner_microgrid: 0,
            }],
            vec![MicrogridRegion {
                index: 0,
                bus_ids: (0..n).map(|i| format!("b{i}")).collect(),
                switch_ids: vec!["s1".into()],
                load_ids: (1..n).map(|i| format!("d{i}")).collect(),
                der_ids: vec!["g1".into()],
            }],
        )
        .unwrap();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        for i in 1..n {
            assert!(
                r.v_pu[i] < r.v_pu[i - 1],
                "v[{i}] = {} !< v[{}] = {}",
                r.v_pu[i],
                i - 1,
                r.v_pu[i - 1]
            );
        }
        conservation_ok(&g, &r);
    }

    #[test]
    fn identical_inputs_identical_results() {
        let g = toy13();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let a = solve_system(&g, &states);
        let b = solve_system(&g, &states);
        assert_eq!(a.v_pu, b.v_pu);
        assert_eq!(a.p_loss_kw, b.p_loss_kw);
        assert_eq!(a.der_p_req_kw, b.der_p_req_kw);
    }

    #[test]
    fn toy4_all_closed_within_der_limits() {
        let g = toy4();
        let states = SwitchStates::all(&g, SwitchState::Closed);
        let r = solve_system(&g, &states);
        assert!(r.converged);
        assert_eq!(r.total_served_kw(), 520.0);
        // g2 (400 kW) is slack; g1 holds its proportional 200 kW.
        assert!((r.der_p_kw[0] - 200.0).abs() < 1e-9, "g1 = {}", r.der_p_kw[0]);
        assert!(r.der_p_req_kw[1] <= 400.0);
        conservation_ok(&g, &r);
    }

    /// |sum injections - sum served - loss| < 1e-6 * s_base, per solve.
    fn conservation_ok(g: &FeederGraph, r: &PowerFlowResult) {
        let inj: f64 = r.der_p_req_kw.iter().sum::<f64>() + r.source_p_kw.iter().sum::<f64>();
        let served: f64 = r.served.iter().sum();
        let gap = (inj - served - r.p_loss_kw).abs();
        assert!(
            gap < 1e-6 * g.s_base_kva,
            "conservation gap {gap} kW (inj {inj}, served {served}, loss {})",
            r.p_loss_kw
        );
    }
}
