//! CSV plot data: label bands and per-step output quantiles.

use std::path::Path;

use gamesynth::dfa::{Dfa, LabelMap};
use gamesynth::runtime::SimulationReport;

use crate::error::{CliError, CliResult};

fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn emit_plots(reports: &[SimulationReport], dfa: &Dfa, map: &LabelMap, out: &Path) -> CliResult<()> {
    let bands = out.join("bands.csv");
    let mut w = csv::Writer::from_path(&bands)?;
    w.write_record(["band", "symbol", "axis", "lo", "hi"])?;
    let absorbing = map.absorbing_symbol();
    let dim = map.dim();
    let mut env_lo = vec![f64::INFINITY; dim];
    let mut env_hi = vec![f64::NEG_INFINITY; dim];
    for (i, (b, s)) in map.regions().iter().enumerate() {
        for axis in 0..dim {
            w.write_record([
                format!("label{i}"),
                dfa.alphabet()[*s].clone(),
                axis.to_string(),
                fmt(b.lo[axis]),
                fmt(b.hi[axis]),
            ])?;
            if *s != absorbing {
                env_lo[axis] = env_lo[axis].min(b.lo[axis]);
                env_hi[axis] = env_hi[axis].max(b.hi[axis]);
            }
        }
    }
    for axis in 0..dim {
        if env_lo[axis] <= env_hi[axis] {
            w.write_record([
                "envelope".into(),
                String::new(),
                axis.to_string(),
                fmt(env_lo[axis]),
                fmt(env_hi[axis]),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&bands, e))?;

    let quant = out.join("quantiles.csv");
    let mut w = csv::Writer::from_path(&quant)?;
    w.write_record(["x0_index", "k", "q05", "q50", "q95"])?;
    for (i, rep) in reports.iter().enumerate() {
        for q in &rep.quantiles {
            w.write_record([i.to_string(), q.k.to_string(), fmt(q.q05), fmt(q.q50), fmt(q.q95)])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&quant, e))
}
