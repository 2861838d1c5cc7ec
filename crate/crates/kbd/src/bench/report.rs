//! Report emission: one machine-readable JSON document plus one delimited
//! table per metric family. Byte-stable for identical inputs.

use super::runner::{BenchReport, SweepReport};
use super::BenchError;
use std::path::{Path, PathBuf};

fn write(path: &Path, contents: &str) -> Result<(), BenchError> {
    std::fs::write(path, contents).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

/// Writes `report.json`, `macro_metrics.csv`, `control_metrics.csv`, and
/// `paired.csv` under `dir`; returns the written paths in order.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();

    let json = serde_json::to_string_pretty(report)
        .map_err(|e| BenchError::Io(format!("report serialization: {e}")))?;
    let path = dir.join("report.json");
    write(&path, &format!("{json}\n"))?;
    written.push(path);

    let mut macro_csv = String::from("variant,seed,wmape,mape,perf10\n");
    for row in &report.macro_table {
        for (seed, m) in row.per_seed.iter().enumerate() {
            macro_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.variant, seed, m.wmape, m.mape, m.perf10
            ));
        }
        macro_csv.push_str(&format!(
            "{},mean,{},{},{}\n",
            row.variant, row.mean_wmape, row.mean_mape, row.mean_perf10
        ));
    }
    let path = dir.join("macro_metrics.csv");
    write(&path, &macro_csv)?;
    written.push(path);

    let mut control_csv = String::from(
        "variant,seed,r_over_rstar,oracle_approx,constraint_satisfaction,cost_exhaust,mean_day_gmv\n",
    );
    for row in &report.control_table {
        for (seed, m) in row.per_seed.iter().enumerate() {
            control_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.variant,
                seed,
                m.r_over_rstar,
                m.oracle_approx,
                m.constraint_satisfaction,
                m.cost_exhaust,
                m.mean_day_gmv
            ));
        }
        let m = &row.mean;
        control_csv.push_str(&format!(
            "{},mean,{},{},{},{},{}\n",
            row.variant, m.r_over_rstar, m.oracle_approx, m.constraint_satisfaction, m.cost_exhaust, m.mean_day_gmv
        ));
    }
    let path = dir.join("control_metrics.csv");
    write(&path, &control_csv)?;
    written.push(path);

    let mut paired_csv = String::from("comparison,wins,total\n");
    for p in &report.paired {
        paired_csv.push_str(&format!("{},{},{}\n", p.label, p.wins, p.total));
    }
    let path = dir.join("paired.csv");
    write(&path, &paired_csv)?;
    written.push(path);

    Ok(written)
}

/// Writes the plot-ready segment-sweep table (`sweep.csv`) plus its JSON twin.
pub fn emit_sweep(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();

    let json = serde_json::to_string_pretty(report)
        .map_err(|e| BenchError::Io(format!("sweep serialization: {e}")))?;
    let path = dir.join("sweep.json");
    write(&path, &format!("{json}\n"))?;
    written.push(path);

    let mut csv = String::from("segments,wmape\n");
    for (n, wmape) in &report.points {
        csv.push_str(&format!("{n},{wmape}\n"));
    }
    csv.push_str(&format!("spread,{}\n", report.spread));
    let path = dir.join("sweep.csv");
    write(&path, &csv)?;
    written.push(path);

    Ok(written)
}
