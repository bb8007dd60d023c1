//! `validate`: feeder lint.

use super::*;
use gridrestore_core::feeder::{load_feeder, validate_partition};
use std::path::PathBuf;

pub fn cmd_validate(feeder: PathBuf) -> CmdResult {
    let graph = load_feeder(&feeder).map_err(config_err)?;
    validate_partition(&graph).map_err(config_err)?;
    println!("{} is valid", feeder.display());
    println!(
        "  buses {}  branches {}  switches {}  loads {}  ders {}  microgrids {}",
        graph.buses.len(),
        graph.branches.len(),
        graph.switches.len(),
        graph.loads.len(),
        graph.ders.len(),
        graph.microgrids.len()
    );
    println!(
        "  total demand {:.1} kW, DER capacity {:.1} kW, generation cap {:.1} kW",
        graph.loads.iter().map(|l| l.p_demand_kw).sum::<f64>(),
        graph.ders.iter().map(|d| d.p_max_kw).sum::<f64>(),
        graph.p_gen_cap_kw
    );
    for mg in &graph.microgrids {
        println!(
            "  microgrid {}: {} buses, {} switches, {} loads ({:.1} kW), {} ders ({:.1} kW)",
            mg.index,
            mg.bus_ids.len(),
            mg.switch_ids.len(),
            mg.load_ids.len(),
            mg.load_ids
                .iter()
                .map(|id| graph.loads[graph.load_idx(id).unwrap()].p_demand_kw)
                .sum::<f64>(),
            mg.der_ids.len(),
            mg.der_ids
                .iter()
                .map(|id| graph.ders[graph.der_idx(id).unwrap()].p_max_kw)
                .sum::<f64>(),
        );
    }
    Ok(())
}
