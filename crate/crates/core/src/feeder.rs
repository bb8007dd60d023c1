//! Static feeder model: buses, branches, switches, loads, DERs, and the
//! microgrid partition, plus ingestion from the TOML feeder schema.
//!
//! A `FeederGraph` is immutable after construction and safe to share across
//! rollout workers. All per-element collections keep file order; derived
//! index maps are only used for id lookup, never for iteration, so every
//! traversal is deterministic.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchState {
    Open,
    Closed,
}

impl SwitchState {
    pub fn is_closed(self) -> bool {
        matches!(self, SwitchState::Closed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub base_kv: f64,
    #[serde(default)]
    pub is_source: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub r_pu: f64,
    pub x_pu: f64,
    pub s_max_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub id: String,
    pub branch_id: String,
    pub state: SwitchState,
    pub owner_microgrid: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub id: String,
    pub bus_id: String,
    pub p_demand_kw: f64,
    pub q_demand_kvar: f64,
    pub priority: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Der {
    pub id: String,
    pub bus_id: String,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    pub owner_microgrid: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridRegion {
    pub index: usize,
    pub bus_ids: Vec<String>,
    pub switch_ids: Vec<String>,
    pub load_ids: Vec<String>,
    pub der_ids: Vec<String>,
}

/// On-disk document. Kept separate from `FeederGraph` so the in-memory type
/// can carry derived adjacency without those fields leaking into the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederDocument {
    s_base_kva: f64,
    p_gen_cap_kw: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default)]
    switches: Vec<Switch>,
    #[serde(default)]
    loads: Vec<Load>,
    #[serde(default)]
    ders: Vec<Der>,
    /// May be empty: a bare feeder is valid for power-flow work, but the
    /// restoration environment requires a declared partition.
    #[serde(default)]
    microgrids: Vec<MicrogridRegion>,
}

/// The static network: element collections in file order plus lookup and
/// adjacency structures built once at load time.
#[derive(Debug, Clone)]
pub struct FeederGraph {
    pub s_base_kva: f64,
    pub p_gen_cap_kw: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub switches: Vec<Switch>,
    pub loads: Vec<Load>,
    pub ders: Vec<Der>,
    pub microgrids: Vec<MicrogridRegion>,

    bus_index: BTreeMap<String, usize>,
    branch_index: BTreeMap<String, usize>,
    switch_index: BTreeMap<String, usize>,
    load_index: BTreeMap<String, usize>,
    der_index: BTreeMap<String, usize>,
    /// branch index -> switch index, for switched branches
    switch_of_branch: Vec<Option<usize>>,
    /// bus index -> (branch index, neighbor bus index)
    adjacency: Vec<Vec<(usize, usize)>>,
    /// bus index -> load indices at that bus
    loads_at_bus: Vec<Vec<usize>>,
    /// bus index -> der indices at that bus
    ders_at_bus: Vec<Vec<usize>>,
}

/// Closed/open assignment covering every switch, indexed like
/// `FeederGraph::switches`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchStates(pub Vec<SwitchState>);

impl SwitchStates {
    pub fn all(graph: &FeederGraph, state: SwitchState) -> Self {
        SwitchStates(vec![state; graph.switches.len()])
    }

    pub fn from_map(
        graph: &FeederGraph,
        map: &BTreeMap<String, SwitchState>,
    ) -> Result<Self, FeederError> {
        let mut states = Vec::with_capacity(graph.switches.len());
        for sw in &graph.switches {
            match map.get(&sw.id) {
                Some(s) => states.push(*s),
                None => {
                    return Err(FeederError::Validation(format!(
                        "switch states missing entry for switch '{}'",
                        sw.id
                    )))
                }
            }
        }
        Ok(SwitchStates(states))
    }
}

/// One maximal connected component under a switch assignment: sorted bus
/// indices.
pub type IslandSet = Vec<usize>;

impl FeederGraph {
    /// Builds and validates a graph from already-parsed parts. `load_feeder`
    /// goes through here; tests use it to construct synthetic feeders.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s_base_kva: f64,
        p_gen_cap_kw: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        switches: Vec<Switch>,
        loads: Vec<Load>,
        ders: Vec<Der>,
        microgrids: Vec<MicrogridRegion>,
    ) -> Result<Self, FeederError> {
        let doc = FeederDocument {
            s_base_kva,
            p_gen_cap_kw,
            buses,
            branches,
            switches,
            loads,
            ders,
            microgrids,
        };
        Self::from_document(doc)
    }

    fn from_document(doc: FeederDocument) -> Result<Self, FeederError> {
        let err = |msg: String| Err(FeederError::Validation(msg));

        if doc.s_base_kva <= 0.0 {
            return err(format!("s_base_kva must be > 0, got {}", doc.s_base_kva));
        }
        if doc.p_gen_cap_kw <= 0.0 {
            return err(format!("p_gen_cap_kw must be > 0, got {}", doc.p_gen_cap_kw));
        }
        if doc.buses.is_empty() {
            return err("feeder has no buses".into());
        }

        let mut bus_index = BTreeMap::new();
        for (i, b) in doc.buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), i).is_some() {
                return err(format!("duplicate bus id '{}'", b.id));
            }
            if b.base_kv <= 0.0 {
                return err(format!("bus '{}' has base_kv {} (must be > 0)", b.id, b.base_kv));
            }
        }

        let mut branch_index = BTreeMap::new();
        for (i, br) in doc.branches.iter().enumerate() {
            if branch_index.insert(br.id.clone(), i).is_some() {
                return err(format!("duplicate branch id '{}'", br.id));
            }
            if br.from_bus == br.to_bus {
                return err(format!("branch '{}' connects bus '{}' to itself", br.id, br.from_bus));
            }
            for bus in [&br.from_bus, &br.to_bus] {
                if !bus_index.contains_key(bus) {
                    return err(format!("branch '{}' references unknown bus '{}'", br.id, bus));
                }
            }
            if br.r_pu < 0.0 || br.x_pu < 0.0 {
                return err(format!("branch '{}' has negative impedance", br.id));
            }
            if br.r_pu == 0.0 && br.x_pu == 0.0 {
                return err(format!("branch '{}' has zero impedance (r and x both 0)", br.id));
            }
            if br.s_max_pu <= 0.0 {
                return err(format!("branch '{}' has s_max_pu {} (must be > 0)", br.id, br.s_max_pu));
            }
        }

        let mut switch_index = BTreeMap::new();
        let mut switch_of_branch = vec![None; doc.branches.len()];
        for (i, sw) in doc.switches.iter().enumerate() {
            if switch_index.insert(sw.id.clone(), i).is_some() {
                return err(format!("duplicate switch id '{}'", sw.id));
            }
            let Some(&bi) = branch_index.get(&sw.branch_id) else {
                return err(format!("switch '{}' references unknown branch '{}'", sw.id, sw.branch_id));
            };
            if switch_of_branch[bi].is_some() {
                return err(format!("branch '{}' is claimed by more than one switch", sw.branch_id));
            }
            switch_of_branch[bi] = Some(i);
            if sw.owner_microgrid >= doc.microgrids.len() {
                return err(format!(
                    "switch '{}' owner_microgrid {} out of range ({} microgrids)",
                    sw.id,
                    sw.owner_microgrid,
                    doc.microgrids.len()
                ));
            }
        }
        // branch.switch_id must agree with the switch table, both directions.
        for (bi, br) in doc.branches.iter().enumerate() {
            match (&br.switch_id, switch_of_branch[bi]) {
                (Some(sid), Some(si)) => {
                    if doc.switches[si].id != *sid {
                        return err(format!(
                            "branch '{}' names switch '{}' but switch '{}' claims it",
                            br.id, sid, doc.switches[si].id
                        ));
                    }
                }
                (Some(sid), None) => {
                    return err(format!("branch '{}' names unknown switch '{}'", br.id, sid));
                }
                (None, Some(si)) => {
                    return err(format!(
                        "switch '{}' claims branch '{}' but the branch has no switch_id",
                        doc.switches[si].id, br.id
                    ));
                }
                (None, None) => {}
            }
        }

        let mut load_index = BTreeMap::new();
        for (i, ld) in doc.loads.iter().enumerate() {
            if load_index.insert(ld.id.clone(), i).is_some() {
                return err(format!("duplicate load id '{}'", ld.id));
            }
            if !bus_index.contains_key(&ld.bus_id) {
                return err(format!("load '{}' references unknown bus '{}'", ld.id, ld.bus_id));
            }
            if ld.p_demand_kw < 0.0 {
                return err(format!("load '{}' has negative demand", ld.id));
            }
            if !(1..=10).contains(&ld.priority) {
                return err(format!(
                    "load '{}' priority {} outside 1..=10",
                    ld.id, ld.priority
                ));
            }
        }

        let mut der_index = BTreeMap::new();
        for (i, g) in doc.ders.iter().enumerate() {
            if der_index.insert(g.id.clone(), i).is_some() {
                return err(format!("duplicate der id '{}'", g.id));
            }
            if !bus_index.contains_key(&g.bus_id) {
                return err(format!("der '{}' references unknown bus '{}'", g.id, g.bus_id));
            }
            if g.p_min_kw < 0.0 {
                return err(format!("der '{}' has p_min_kw < 0", g.id));
            }
            if g.p_min_kw > g.p_max_kw {
                return err(format!("der '{}' has p_min_kw > p_max_kw", g.id));
            }
            if g.q_min_kvar > g.q_max_kvar {
                return err(format!("der '{}' has q_min_kvar > q_max_kvar", g.id));
            }
            if g.owner_microgrid >= doc.microgrids.len() {
                return err(format!(
                    "der '{}' owner_microgrid {} out of range",
                    g.id, g.owner_microgrid
                ));
            }
        }

        Self::validate_partition_impl(&doc, &bus_index, &switch_index, &load_index, &der_index)?;

        let mut adjacency = vec![Vec::new(); doc.buses.len()];
        for (bi, br) in doc.branches.iter().enumerate() {
            let f = bus_index[&br.from_bus];
            let t = bus_index[&br.to_bus];
            adjacency[f].push((bi, t));
            adjacency[t].push((bi, f));
        }
        let mut loads_at_bus = vec![Vec::new(); doc.buses.len()];
        for (li, ld) in doc.loads.iter().enumerate() {
            loads_at_bus[bus_index[&ld.bus_id]].push(li);
        }
        let mut ders_at_bus = vec![Vec::new(); doc.buses.len()];
        for (gi, g) in doc.ders.iter().enumerate() {
            ders_at_bus[bus_index[&g.bus_id]].push(gi);
        }

        let graph = FeederGraph {
            s_base_kva: doc.s_base_kva,
            p_gen_cap_kw: doc.p_gen_cap_kw,
            buses: doc.buses,
            branches: doc.branches,
            switches: doc.switches,
            loads: doc.loads,
            ders: doc.ders,
            microgrids: doc.microgrids,
            bus_index,
            branch_index,
            switch_index,
            load_index,
            der_index,
            switch_of_branch,
            adjacency,
            loads_at_bus,
            ders_at_bus,
        };

        // With every switch closed the feeder must be one component.
        let islands = connected_components(&graph, &SwitchStates::all(&graph, SwitchState::Closed));
        if islands.len() != 1 {
            return Err(FeederError::Validation(format!(
                "feeder is not connected with all switches closed ({} components)",
                islands.len()
            )));
        }

        Ok(graph)
    }

    fn validate_partition_impl(
        doc: &FeederDocument,
        bus_index: &BTreeMap<String, usize>,
        switch_index: &BTreeMap<String, usize>,
        load_index: &BTreeMap<String, usize>,
        der_index: &BTreeMap<String, usize>,
    ) -> Result<(), FeederError> {
        let err = |msg: String| Err(FeederError::Validation(msg));
        if doc.microgrids.is_empty() {
            return Ok(());
        }
        for (i, mg) in doc.microgrids.iter().enumerate() {
            if mg.index != i {
                return err(format!(
                    "microgrid at position {i} has index {} (must be listed in order)",
                    mg.index
                ));
            }
            if mg.switch_ids.is_empty() {
                return err(format!("microgrid {i} owns no switches"));
            }
            if mg.load_ids.is_empty() {
                return err(format!("microgrid {i} owns no loads"));
            }
        }

        // Buses: exact partition.
        let mut bus_owner: Vec<Option<usize>> = vec![None; doc.buses.len()];
        for mg in &doc.microgrids {
            for bid in &mg.bus_ids {
                let Some(&bi) = bus_index.get(bid) else {
                    return err(format!("microgrid {} lists unknown bus '{}'", mg.index, bid));
                };
                if let Some(prev) = bus_owner[bi] {
                    return err(format!(
                        "bus '{}' appears in microgrids {} and {}",
                        bid, prev, mg.index
                    ));
                }
                bus_owner[bi] = Some(mg.index);
            }
        }
        for (bi, owner) in bus_owner.iter().enumerate() {
            if owner.is_none() {
                return err(format!("bus '{}' belongs to no microgrid", doc.buses[bi].id));
            }
        }

        // Switches: disjoint ownership consistent with owner_microgrid.
        let mut sw_owner: Vec<Option<usize>> = vec![None; doc.switches.len()];
        for mg in &doc.microgrids {
            for sid in &mg.switch_ids {
                let Some(&si) = switch_index.get(sid) else {
                    return err(format!("microgrid {} lists unknown switch '{}'", mg.index, sid));
                };
                if let Some(prev) = sw_owner[si] {
                    return err(format!(
                        "switch '{}' appears in microgrids {} and {}",
                        sid, prev, mg.index
                    ));
                }
                if doc.switches[si].owner_microgrid != mg.index {
                    return err(format!(
                        "switch '{}' has owner_microgrid {} but is listed by microgrid {}",
                        sid, doc.switches[si].owner_microgrid, mg.index
                    ));
                }
                sw_owner[si] = Some(mg.index);
            }
        }
        for (si, owner) in sw_owner.iter().enumerate() {
            if owner.is_none() {
                return err(format!(
                    "switch '{}' is not listed by its owner microgrid {}",
                    doc.switches[si].id, doc.switches[si].owner_microgrid
                ));
            }
        }

        // Loads and DERs: exact partition, DER listing consistent with owner.
        let mut load_owner: Vec<Option<usize>> = vec![None; doc.loads.len()];
        for mg in &doc.microgrids {
            for lid in &mg.load_ids {
                let Some(&li) = load_index.get(lid) else {
                    return err(format!("microgrid {} lists unknown load '{}'", mg.index, lid));
                };
                if let Some(prev) = load_owner[li] {
                    return err(format!(
                        "load '{}' appears in microgrids {} and {}",
                        lid, prev, mg.index
                    ));
                }
                load_owner[li] = Some(mg.index);
            }
        }
        for (li, owner) in load_owner.iter().enumerate() {
            if owner.is_none() {
                return err(format!("load '{}' belongs to no microgrid", doc.loads[li].id));
            }
        }
        let mut der_owner: Vec<Option<usize>> = vec![None; doc.ders.len()];
        for mg in &doc.microgrids {
            for did in &mg.der_ids {
                let Some(&di) = der_index.get(did) else {
                    return err(format!("microgrid {} lists unknown der '{}'", mg.index, did));
                };
                if let Some(prev) = der_owner[di] {
                    return err(format!(
                        "der '{}' appears in microgrids {} and {}",
                        did, prev, mg.index
                    ));
                }
                if doc.ders[di].owner_microgrid != mg.index {
                    return err(format!(
                        "der '{}' has owner_microgrid {} but is listed by microgrid {}",
                        did, doc.ders[di].owner_microgrid, mg.index
                    ));
                }
                der_owner[di] = Some(mg.index);
            }
        }
        for (di, owner) in der_owner.iter().enumerate() {
            if owner.is_none() {
                return err(format!("der '{}' belongs to no microgrid", doc.ders[di].id));
            }
        }
        Ok(())
    }

    pub fn bus_idx(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }
    pub fn branch_idx(&self, id: &str) -> Option<usize> {
        self.branch_index.get(id).copied()
    }
    pub fn switch_idx(&self, id: &str) -> Option<usize> {
        self.switch_index.get(id).copied()
    }
    pub fn load_idx(&self, id: &str) -> Option<usize> {
        self.load_index.get(id).copied()
    }
    pub fn der_idx(&self, id: &str) -> Option<usize> {
        self.der_index.get(id).copied()
    }
    pub fn switch_of_branch(&self, branch: usize) -> Option<usize> {
        self.switch_of_branch[branch]
    }
    pub fn adjacency(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }
    pub fn loads_at_bus(&self, bus: usize) -> &[usize] {
        &self.loads_at_bus[bus]
    }
    pub fn ders_at_bus(&self, bus: usize) -> &[usize] {
        &self.ders_at_bus[bus]
    }

    /// Branch indices controllable through a switch, in switch order.
    pub fn switched_branches(&self) -> Vec<usize> {
        self.switches
            .iter()
            .map(|sw| self.branch_index[&sw.branch_id])
            .collect()
    }

    /// Total priority-weighted demand, the denominator of the restored
    /// fraction.
    pub fn weighted_demand_kw(&self) -> f64 {
        self.loads
            .iter()
            .map(|l| l.priority as f64 * l.p_demand_kw)
            .sum()
    }

    /// Serializes back to the feeder schema. `load_feeder . serialize` is
    /// the identity on the in-memory model.
    pub fn to_toml(&self) -> String {
        let doc = FeederDocument {
            s_base_kva: self.s_base_kva,
            p_gen_cap_kw: self.p_gen_cap_kw,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            switches: self.switches.clone(),
            loads: self.loads.clone(),
            ders: self.ders.clone(),
            microgrids: self.microgrids.clone(),
        };
        toml::to_string(&doc).expect("feeder document serializes")
    }
}

/// Parses and validates a feeder file. Unknown keys are rejected.
pub fn load_feeder(path: &Path) -> Result<FeederGraph, FeederError> {
    let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_feeder_str(&text)
}

/// Parses a feeder document from a string. See `load_feeder`.
pub fn load_feeder_str(text: &str) -> Result<FeederGraph, FeederError> {
    let doc: FeederDocument =
        toml::from_str(text).map_err(|e| FeederError::Parse(e.to_string()))?;
    FeederGraph::from_document(doc)
}

/// Re-runs the partition checks on an already-built graph.
pub fn validate_partition(graph: &FeederGraph) -> Result<(), FeederError> {
    FeederGraph::validate_partition_impl(
        &FeederDocument {
            s_base_kva: graph.s_base_kva,
            p_gen_cap_kw: graph.p_gen_cap_kw,
            buses: graph.buses.clone(),
            branches: graph.branches.clone(),
            switches: graph.switches.clone(),
            loads: graph.loads.clone(),
            ders: graph.ders.clone(),
            microgrids: graph.microgrids.clone(),
        },
        &graph.bus_index,
        &graph.switch_index,
        &graph.load_index,
        &graph.der_index,
    )
}

/// Whether a branch conducts under the given switch assignment. Non-switch
/// branches always conduct.
pub fn branch_active(graph: &FeederGraph, branch: usize, states: &SwitchStates) -> bool {
    match graph.switch_of_branch[branch] {
        Some(si) => states.0[si].is_closed(),
        None => true,
    }
}

/// Partitions the buses into maximal connected components under the given
/// switch assignment. BFS over active branches; islands are sorted by their
/// smallest bus index and each island's buses are sorted.
pub fn connected_components(graph: &FeederGraph, states: &SwitchStates) -> Vec<IslandSet> {
    assert_eq!(
        states.0.len(),
        graph.switches.len(),
        "switch states must cover all switches"
    );
    let n = graph.buses.len();
    let mut visited = vec![false; n];
    let mut islands = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut island = vec![start];
        while let Some(b) = queue.pop_front() {
            for &(branch, other) in &graph.adjacency[b] {
                if !visited[other] && branch_active(graph, branch, states) {
                    visited[other] = true;
                    island.push(other);
                    queue.push_back(other);
                }
            }
        }
        island.sort_unstable();
        islands.push(island);
    }
    islands
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal_two_bus() -> &'static str {
        r#"
            s_base_kva = 1000.0
            p_gen_cap_kw = 2400.0

            [[buses]]
            id = "b1"
            base_kv = 12.47
            is_source = true

            [[buses]]
            id = "b2"
            base_kv = 12.47

            [[branches]]
            id = "l1"
            from_bus = "b1"
            to_bus = "b2"
            r_pu = 0.01
            x_pu = 0.01
            s_max_pu = 1.0
            switch_id = "s1"

            [[switches]]
            id = "s1"
            branch_id = "l1"
            state = "closed"
            owner_microgrid = 0

            [[loads]]
            id = "d1"
            bus_id = "b2"
            p_demand_kw = 100.0
            q_demand_kvar = 50.0
            priority = 5

            [[microgrids]]
            index = 0
            bus_ids = ["b1", "b2"]
            switch_ids = ["s1"]
            load_ids = ["d1"]
            der_ids = []
        "#
    }

    #[test]
    fn minimal_feeder_loads() {
        let g = load_feeder_str(minimal_two_bus()).unwrap();
        assert_eq!(g.buses.len(), 2);
        assert_eq!(g.switches.len(), 1);
        assert!(g.ders.is_empty());
    }

    #[test]
    fn smallest_valid_feeder_has_no_switches() {
        // 1 source, 1 load, 1 branch, no switches, no declared partition.
        let text = r#"
            s_base_kva = 1000.0
            p_gen_cap_kw = 2400.0

            [[buses]]
            id = "b1"
            base_kv = 12.47
            is_source = true

            [[buses]]
            id = "b2"
            base_kv = 12.47

            [[branches]]
            id = "l1"
            from_bus = "b1"
            to_bus = "b2"
            r_pu = 0.01
            x_pu = 0.01
            s_max_pu = 1.0

            [[loads]]
            id = "d1"
            bus_id = "b2"
            p_demand_kw = 100.0
            q_demand_kvar = 50.0
            priority = 5
        "#;
        let g = load_feeder_str(text).unwrap();
        assert_eq!(g.buses.len(), 2);
        assert!(g.switches.is_empty());
        assert!(g.microgrids.is_empty());
        validate_partition(&g).unwrap();
    }

    #[test]
    fn duplicate_bus_id_names_offender() {
        let text = minimal_two_bus().replace("id = \"b2\"", "id = \"b1\"");
        let e = load_feeder_str(&text).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("duplicate bus id 'b1'"), "{msg}");
    }

    #[test]
    fn unknown_key_is_parse_error() {
        let text = format!("{}\nmystery_key = 3\n", minimal_two_bus());
        match load_feeder_str(&text) {
            Err(FeederError::Parse(_)) => {}
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_partition_rejected() {
        let text = minimal_two_bus().replace(
            "bus_ids = [\"b1\", \"b2\"]",
            "bus_ids = [\"b1\", \"b2\", \"b1\"]",
        );
        let e = load_feeder_str(&text).unwrap_err();
        assert!(e.to_string().contains("appears in microgrids"), "{e}");
    }

    #[test]
    fn region_without_switch_rejected() {
        let text = minimal_two_bus().replace("switch_ids = [\"s1\"]", "switch_ids = []");
        let e = load_feeder_str(&text).unwrap_err();
        assert!(e.to_string().contains("owns no switches"), "{e}");
    }

    #[test]
    fn toy13_fixture_loads_with_two_regions() {
        let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
        assert_eq!(g.buses.len(), 13);
        assert_eq!(g.switches.len(), 6);
        assert_eq!(g.ders.len(), 3);
        assert_eq!(g.microgrids.len(), 2);
        validate_partition(&g).unwrap();
    }

    #[test]
    fn toy4_and_toy34_fixtures_load() {
        let g4 = load_feeder_str(include_str!("../fixtures/toy4.toml")).unwrap();
        assert_eq!(g4.buses.len(), 4);
        assert_eq!(g4.switches.len(), 2);
        let g34 = load_feeder_str(include_str!("../fixtures/toy34.toml")).unwrap();
        assert_eq!(g34.buses.len(), 34);
        assert_eq!(g34.switches.len(), 12);
        assert_eq!(g34.microgrids.len(), 3);
    }

    #[test]
    fn feeder_round_trips_through_serialization() {
        let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
        let text = g.to_toml();
        let g2 = load_feeder_str(&text).unwrap();
        assert_eq!(g.to_toml(), g2.to_toml());
        assert_eq!(g.buses.len(), g2.buses.len());
        assert_eq!(g.microgrids.len(), g2.microgrids.len());
    }

    #[test]
    fn all_closed_is_single_island() {
        let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
        let islands = connected_components(&g, &SwitchStates::all(&g, SwitchState::Closed));
        assert_eq!(islands.len(), 1);
        assert_eq!(islands[0].len(), g.buses.len());
    }

    #[test]
    fn one_cut_switch_gives_two_islands_on_toy13() {
        let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
        // s4 is the tie between the two regions; opening it alone splits the
        // all-closed feeder exactly in two.
        let mut states = SwitchStates::all(&g, SwitchState::Closed);
        states.0[g.switch_idx("s4").unwrap()] = SwitchState::Open;
        let islands = connected_components(&g, &states);
        assert_eq!(islands.len(), 2);
        let total: usize = islands.iter().map(|i| i.len()).sum();
        assert_eq!(total, g.buses.len());
    }

    /// Naive union-find reachability, used only as an oracle here.
    struct UnionFind {
        parent: Vec<usize>,
    }
    impl UnionFind {
        fn new(n: usize) -> Self {
            UnionFind {
                parent: (0..n).collect(),
            }
        }
        fn find(&mut self, x: usize) -> usize {
            if self.parent[x] != x {
                let root = self.find(self.parent[x]);
                self.parent[x] = root;
            }
            self.parent[x]
        }
        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            if ra != rb {
                self.parent[rb] = ra;
            }
        }
    }

    fn island_count_oracle(g: &FeederGraph, states: &SwitchStates) -> usize {
        let mut uf = UnionFind::new(g.buses.len());
        for (bi, br) in g.branches.iter().enumerate() {
            if branch_active(g, bi, states) {
                uf.union(g.bus_idx(&br.from_bus).unwrap(), g.bus_idx(&br.to_bus).unwrap());
            }
        }
        let mut roots: Vec<usize> = (0..g.buses.len()).map(|b| uf.find(b)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    #[test]
    fn all_open_matches_union_find_oracle() {
        let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
        let states = SwitchStates::all(&g, SwitchState::Open);
        let islands = connected_components(&g, &states);
        assert_eq!(islands.len(), island_count_oracle(&g, &states));
    }

    proptest! {
        #[test]
        fn islands_partition_buses(bits in proptest::collection::vec(any::<bool>(), 6)) {
            let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
            let states = SwitchStates(
                bits.iter()
                    .map(|&b| if b { SwitchState::Closed } else { SwitchState::Open })
                    .collect(),
            );
            let islands = connected_components(&g, &states);
            let mut seen = vec![0usize; g.buses.len()];
            for island in &islands {
                for &b in island {
                    seen[b] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert_eq!(islands.len(), island_count_oracle(&g, &states));
        }

        #[test]
        fn closing_a_switch_never_adds_islands(
            bits in proptest::collection::vec(any::<bool>(), 6),
            which in 0usize..6,
        ) {
            let g = load_feeder_str(include_str!("../fixtures/toy13.toml")).unwrap();
            let mut states = SwitchStates(
                bits.iter()
                    .map(|&b| if b { SwitchState::Closed } else { SwitchState::Open })
                    .collect(),
            );
            let before = connected_components(&g, &states).len();
            states.0[which] = SwitchState::Closed;
            let after = connected_components(&g, &states).len();
            prop_assert!(after <= before);
        }
    }
}
