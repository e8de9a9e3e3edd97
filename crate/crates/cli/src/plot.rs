//! Plot emission. The CSV files are the data contract: every value is
//! copied from a cell's report.json / metrics.json, never recomputed.
//! The SVG files rendered next to them are best-effort visual summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use planeshift_core::config::StrategyKind;
use planeshift_core::strategies::{kind_str, StrategySpec};

use crate::results::{collect_results, mean_std, CellResult};
use crate::svg;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FigureKind {
    /// Macro AUC against source training-set size, per evaluation centre.
    AucVsN,
    /// Macro AUC against fine-tuning patient count, with and without
    /// pretraining.
    AucVsP,
    /// Confusion heatmaps, one per cell and seed.
    Confusion,
    /// Per-class recall and precision bars per strategy.
    Summary,
    All,
}

pub fn cmd_plot(root: &Path, kind: FigureKind) -> Result<(), CliError> {
    let cells = collect_results(root)?;
    if cells.is_empty() {
        return Err(CliError::NoResults(root.to_path_buf()));
    }
    let plots = root.join("plots");
    fs::create_dir_all(&plots)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", plots.display())))?;

    let mut written = Vec::new();
    if matches!(kind, FigureKind::AucVsN | FigureKind::All) {
        written.extend(auc_vs_n(&plots, &cells)?);
    }
    if matches!(kind, FigureKind::AucVsP | FigureKind::All) {
        written.extend(auc_vs_p(&plots, &cells)?);
    }
    if matches!(kind, FigureKind::Confusion | FigureKind::All) {
        written.extend(confusion_maps(&plots, &cells)?);
    }
    if matches!(kind, FigureKind::Summary | FigureKind::All) {
        written.extend(summary_bars(&plots, &cells)?);
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    if written.is_empty() {
        println!("no cells match this figure kind; nothing written");
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Chart series name for an n-sweep cell: strategy plus its centres.
fn series_label(spec: &StrategySpec) -> String {
    match (spec.source_centre.as_deref(), spec.target_centre.as_deref()) {
        (Some(s), Some(t)) => format!("{} {s}+{t}", kind_str(spec.kind)),
        (Some(s), None) => format!("{} {s}", kind_str(spec.kind)),
        (None, Some(t)) => format!("{} {t}", kind_str(spec.kind)),
        (None, None) => kind_str(spec.kind).to_string(),
    }
}

fn auc_vs_n(plots: &Path, cells: &[CellResult]) -> Result<Vec<PathBuf>, CliError> {
    let picked: Vec<&CellResult> = cells
        .iter()
        .filter(|c| {
            matches!(c.run.spec.kind, StrategyKind::SingleCentre | StrategyKind::Combination)
        })
        .collect();
    if picked.is_empty() {
        return Ok(Vec::new());
    }

    let mut csv = String::from("spec_id,kind,source,target,n_source,seed,eval_centre,macro_auc\n");
    // centre -> series label -> n -> per-seed AUCs
    let mut curves: BTreeMap<String, BTreeMap<String, BTreeMap<usize, Vec<f64>>>> =
        BTreeMap::new();
    for c in &picked {
        let spec = &c.run.spec;
        let label = series_label(spec);
        for (centre, m) in &c.run.cross_centre {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                spec.id,
                kind_str(spec.kind),
                spec.source_centre.as_deref().unwrap_or(""),
                spec.target_centre.as_deref().unwrap_or(""),
                spec.n_source,
                c.run.seed,
                centre,
                m.macro_auc
            );
            curves
                .entry(centre.clone())
                .or_default()
                .entry(label.clone())
                .or_default()
                .entry(spec.n_source)
                .or_default()
                .push(m.macro_auc);
        }
    }

    let csv_path = plots.join("auc_vs_n.csv");
    write_file(&csv_path, &csv)?;
    let mut written = vec![csv_path];
    for (centre, labels) in &curves {
        let series: Vec<svg::Series> = labels
            .iter()
            .map(|(label, by_n)| svg::Series {
                label: label.clone(),
                points: by_n.iter().map(|(n, v)| (*n as f64, mean_std(v).0)).collect(),
            })
            .collect();
        let path = plots.join(format!("auc_vs_n_{centre}.svg"));
        write_file(
            &path,
            &svg::line_chart(
                &format!("macro AUC vs n, evaluated on {centre}"),
                "source training images n",
                "macro AUC",
                &series,
            ),
        )?;
        written.push(path);
    }
    Ok(written)
}

fn auc_vs_p(plots: &Path, cells: &[CellResult]) -> Result<Vec<PathBuf>, CliError> {
    let picked: Vec<&CellResult> = cells
        .iter()
        .filter(|c| {
            matches!(c.run.spec.kind, StrategyKind::TransferLearning | StrategyKind::FromScratch)
        })
        .collect();
    if picked.is_empty() {
        return Ok(Vec::new());
    }

    let mut csv = String::from("spec_id,kind,pretrain_n,p_patients,seed,eval_centre,macro_auc\n");
    let mut curves: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for c in &picked {
        let spec = &c.run.spec;
        let p = spec.p_target_patients.unwrap_or(0);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            spec.id,
            kind_str(spec.kind),
            spec.n_source,
            p,
            c.run.seed,
            c.run.primary_centre,
            c.run.metrics.macro_auc
        );
        let label = match spec.kind {
            StrategyKind::TransferLearning if spec.n_source == 0 => "generic pretraining".into(),
            StrategyKind::TransferLearning => format!("pretrained n={}", spec.n_source),
            _ => "from scratch".to_string(),
        };
        curves.entry(label).or_default().entry(p).or_default().push(c.run.metrics.macro_auc);
    }

    let csv_path = plots.join("auc_vs_p.csv");
    write_file(&csv_path, &csv)?;
    let series: Vec<svg::Series> = curves
        .iter()
        .map(|(label, by_p)| svg::Series {
            label: label.clone(),
            points: by_p.iter().map(|(p, v)| (*p as f64, mean_std(v).0)).collect(),
        })
        .collect();
    let svg_path = plots.join("auc_vs_p.svg");
    write_file(
        &svg_path,
        &svg::line_chart(
            "macro AUC vs fine-tuning patients",
            "target patients p",
            "macro AUC",
            &series,
        ),
    )?;
    Ok(vec![csv_path, svg_path])
}

fn confusion_maps(plots: &Path, cells: &[CellResult]) -> Result<Vec<PathBuf>, CliError> {
    let dir = plots.join("confusion");
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for c in cells {
        let stem = format!("{}-s{}", c.run.spec.id, c.run.seed);
        // The per-cell confusion.csv already is the tabular form; carry it
        // over verbatim.
        let csv_path = dir.join(format!("{stem}.csv"));
        fs::copy(c.dir.join("confusion.csv"), &csv_path).map_err(|e| {
            CliError::Runtime(format!("cannot copy confusion for {stem}: {e}"))
        })?;
        let svg_path = dir.join(format!("{stem}.svg"));
        write_file(
            &svg_path,
            &svg::heatmap(
                &format!("{} seed {} on {}", c.run.spec.id, c.run.seed, c.run.primary_centre),
                &c.run.metrics.confusion,
            ),
        )?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

fn summary_bars(plots: &Path, cells: &[CellResult]) -> Result<Vec<PathBuf>, CliError> {
    let mut csv = String::from("spec_id,kind,seed,eval_centre,class,precision,recall\n");
    // kind -> class -> per-seed values
    let mut recall: BTreeMap<&'static str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut precision: BTreeMap<&'static str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for c in cells {
        let m = &c.run.metrics;
        let kind = kind_str(c.run.spec.kind);
        for (label, r) in &m.per_class_recall {
            let p = m.per_class_precision[label];
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                c.run.spec.id,
                kind,
                c.run.seed,
                c.run.primary_centre,
                label.as_str(),
                p,
                r
            );
            recall.entry(kind).or_default().entry(label.as_str().into()).or_default().push(*r);
            precision.entry(kind).or_default().entry(label.as_str().into()).or_default().push(p);
        }
    }

    let csv_path = plots.join("recall_precision.csv");
    write_file(&csv_path, &csv)?;
    let mut written = vec![csv_path];
    for (metric, data) in [("recall", &recall), ("precision", &precision)] {
        let mut classes: Vec<String> = Vec::new();
        for per_class in data.values() {
            for class in per_class.keys() {
                if !classes.contains(class) {
                    classes.push(class.clone());
                }
            }
        }
        let series: Vec<(String, Vec<f64>)> = data
            .iter()
            .map(|(kind, per_class)| {
                let bars = classes
                    .iter()
                    .map(|c| per_class.get(c).map_or(f64::NAN, |v| mean_std(v).0))
                    .collect();
                (kind.to_string(), bars)
            })
            .collect();
        let path = plots.join(format!("{metric}_bars.svg"));
        write_file(
            &path,
            &svg::bar_chart(
                &format!("per-class {metric} on the primary test centre"),
                metric,
                &classes,
                &series,
            ),
        )?;
        written.push(path);
    }
    Ok(written)
}
