//! CSV output for experiments and trials. Floats use 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::harness::{ErrorTrace, Experiment, RankingTable};
use crate::instance::fmt_f64;

/// `algo,rank1,...,rankN`.
pub fn rankings_csv(table: &RankingTable) -> String {
    let n = table.names.len();
    let mut out = String::from("algo");
    for r in 1..=n {
        write!(out, ",rank{r}").unwrap();
    }
    out.push('\n');
    for (name, row) in table.names.iter().zip(&table.counts) {
        out.push_str(name);
        for c in row {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `instance,algo,index,diverged`, one row per (instance, algorithm).
pub fn indices_csv(exp: &Experiment) -> String {
    let mut out = String::from("instance,algo,index,diverged\n");
    for res in &exp.instances {
        for (a, name) in exp.table.names.iter().enumerate() {
            writeln!(out, "{},{},{},{}", res.index, name, fmt_f64(res.indices[a]), res.diverged[a]).unwrap();
        }
    }
    out
}

/// `k,error,mspbe`.
pub fn trace_csv(trace: &ErrorTrace) -> String {
    let mut out = String::from("k,error,mspbe\n");
    for p in &trace.recorded {
        writeln!(out, "{},{},{}", p.k, fmt_f64(p.error), fmt_f64(p.mspbe)).unwrap();
    }
    out
}

/// Writes `rankings.csv`, `indices.csv` and, when traces were kept,
/// `trace_<instance>_<algo>.csv` into `dir`.
pub fn write_experiment(dir: &Path, exp: &Experiment) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rankings.csv"), rankings_csv(&exp.table))?;
    std::fs::write(dir.join("indices.csv"), indices_csv(exp))?;
    for res in &exp.instances {
        if let Some(traces) = &res.traces {
            for (name, trace) in exp.table.names.iter().zip(traces) {
                std::fs::write(dir.join(format!("trace_{}_{}.csv", res.index, name)), trace_csv(trace))?;
            }
        }
    }
    Ok(())
}
