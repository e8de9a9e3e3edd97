//! Loading a results tree back into memory for reporting and plotting.

use std::fs;
use std::path::{Path, PathBuf};

use planeshift_core::strategies::RunResult;

use crate::CliError;

#[derive(Debug)]
pub struct CellResult {
    pub dir: PathBuf,
    pub run: RunResult,
}

/// Every complete cell under `root` (hash directories holding a spec.json,
/// seed directories under those). Incomplete cells, from interrupted or
/// failed runs, are skipped the same way the sweep's resume logic skips
/// them.
pub fn collect_results(root: &Path) -> Result<Vec<CellResult>, CliError> {
    let entries = fs::read_dir(root).map_err(|e| {
        CliError::Runtime(format!("cannot read results dir {}: {e}", root.display()))
    })?;
    let mut cells = Vec::new();
    for entry in entries.flatten() {
        let hash_dir = entry.path();
        if !hash_dir.is_dir() || !hash_dir.join("spec.json").is_file() {
            continue;
        }
        let seeds = fs::read_dir(&hash_dir).map_err(|e| {
            CliError::Runtime(format!("cannot read {}: {e}", hash_dir.display()))
        })?;
        for seed_entry in seeds.flatten() {
            let cell_dir = seed_entry.path();
            if !cell_dir.is_dir() {
                continue;
            }
            let complete = ["metrics.json", "report.json", "confusion.csv"]
                .iter()
                .all(|f| cell_dir.join(f).is_file());
            if !complete {
                continue;
            }
            let report_path = cell_dir.join("report.json");
            let text = fs::read_to_string(&report_path).map_err(|e| {
                CliError::Runtime(format!("cannot read {}: {e}", report_path.display()))
            })?;
            let run: RunResult = serde_json::from_str(&text).map_err(|e| {
                CliError::Runtime(format!("corrupt report {}: {e}", report_path.display()))
            })?;
            cells.push(CellResult { dir: cell_dir, run });
        }
    }
    cells.sort_by(|a, b| (&a.run.spec.id, a.run.seed).cmp(&(&b.run.spec.id, b.run.seed)));
    Ok(cells)
}

/// Mean and sample standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}
