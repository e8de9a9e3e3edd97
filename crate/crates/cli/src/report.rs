//! Human-readable summary of a results tree plus a machine-readable
//! `summary.csv` of per-cell means across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use planeshift_core::strategies::kind_str;

use crate::results::{collect_results, mean_std, CellResult};
use crate::CliError;

pub fn cmd_report(root: &Path) -> Result<(), CliError> {
    let cells = collect_results(root)?;
    if cells.is_empty() {
        return Err(CliError::NoResults(root.to_path_buf()));
    }

    // Grid values are baked into the expanded spec id, so grouping by id
    // groups exactly the seeds of one cell.
    let mut groups: BTreeMap<&str, Vec<&CellResult>> = BTreeMap::new();
    for cell in &cells {
        groups.entry(&cell.run.spec.id).or_default().push(cell);
    }

    let mut csv = String::from(
        "spec_id,kind,source,target,n_source,p_patients,eval_centre,seeds,\
         mean_macro_auc,std_macro_auc,mean_accuracy,std_accuracy,mean_wall_seconds_per_epoch\n",
    );
    println!(
        "{:<18} {:<18} {:<10} {:>5}  {:<19} {:<19}",
        "spec", "kind", "centre", "seeds", "macro AUC", "accuracy"
    );
    for (spec_id, group) in &groups {
        let first = &group[0].run;
        let spec = &first.spec;
        let aucs: Vec<f64> = group.iter().map(|c| c.run.metrics.macro_auc).collect();
        let accs: Vec<f64> = group.iter().map(|c| c.run.metrics.accuracy).collect();
        let walls: Vec<f64> =
            group.iter().map(|c| c.run.train_report.wall_seconds_per_epoch).collect();
        let (auc_m, auc_s) = mean_std(&aucs);
        let (acc_m, acc_s) = mean_std(&accs);
        let (wall_m, _) = mean_std(&walls);
        println!(
            "{spec_id:<18} {:<18} {:<10} {:>5}  {auc_m:.4} \u{00b1} {auc_s:.4}     {acc_m:.4} \u{00b1} {acc_s:.4}",
            kind_str(spec.kind),
            first.primary_centre,
            group.len()
        );
        // Single-centre cells carry every centre's test metrics; show the
        // cross-centre spread inline.
        if first.cross_centre.len() > 1 {
            for centre in first.cross_centre.keys() {
                let vals: Vec<f64> = group
                    .iter()
                    .filter_map(|c| c.run.cross_centre.get(centre).map(|m| m.macro_auc))
                    .collect();
                let (m, s) = mean_std(&vals);
                println!("  on {centre:<24} macro AUC {m:.4} \u{00b1} {s:.4}");
            }
        }
        let _ = writeln!(
            csv,
            "{spec_id},{},{},{},{},{},{},{},{auc_m},{auc_s},{acc_m},{acc_s},{wall_m}",
            kind_str(spec.kind),
            spec.source_centre.as_deref().unwrap_or(""),
            spec.target_centre.as_deref().unwrap_or(""),
            spec.n_source,
            spec.p_target_patients.map_or(String::new(), |p| p.to_string()),
            first.primary_centre,
            group.len(),
        );
    }

    let path = root.join("summary.csv");
    fs::write(&path, csv)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("\nwrote {}", path.display());
    Ok(())
}
