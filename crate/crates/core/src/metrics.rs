//! Evaluation metrics: one-vs-rest AUC, confusion matrices, precision and
//! recall, and the serialisable per-run report.
//!
//! AUC uses the rank form of the Mann-Whitney statistic with ties between
//! a positive and a negative scored as half a concordant pair. Macro
//! averages run over the classes that are non-degenerate in the evaluation
//! split (at least one positive and one negative); degenerate classes are
//! skipped and reported, never silently dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PlaneLabel;

/// Row-major `(n_samples, n_classes)` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_classes: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n_classes: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if n_classes == 0 || data.len() % n_classes != 0 {
            return Err(MetricsError::LengthMismatch {
                what: format!("{} scores do not form rows of width {n_classes}", data.len()),
            });
        }
        Ok(Self { n_classes, data })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    /// Index of the highest score in row `i`; first maximum wins ties.
    pub fn argmax_row(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {what}")]
    LengthMismatch { what: String },
    #[error("class {0} is degenerate in this split (needs at least one positive and one negative)")]
    DegenerateClass(PlaneLabel),
    #[error("every candidate class is degenerate in this split")]
    AllClassesDegenerate,
    #[error("invalid class index {index} for {n_classes} classes")]
    BadClassIndex { index: usize, n_classes: usize },
}

fn check_lengths(scores: &ScoreMatrix, labels: &[usize]) -> Result<(), MetricsError> {
    if scores.n_samples() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            what: format!("{} score rows vs {} labels", scores.n_samples(), labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.n_classes()) {
        return Err(MetricsError::BadClassIndex { index: bad, n_classes: scores.n_classes() });
    }
    Ok(())
}

/// One-vs-rest AUC for `positive` via the rank form of the Mann-Whitney
/// statistic. Tied scores receive their average rank, which credits a
/// positive/negative tie as half a pair.
pub fn ovr_auc(
    scores: &ScoreMatrix,
    labels: &[usize],
    positive: usize,
) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    if positive >= scores.n_classes() {
        return Err(MetricsError::BadClassIndex { index: positive, n_classes: scores.n_classes() });
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.row(a)[positive].partial_cmp(&scores.row(b)[positive]).unwrap()
    });

    let mut pos_rank_sum = 0.0f64;
    let mut n_pos = 0u64;
    let mut i = 0;
    while i < n {
        // Tie group [i, j): identical positive-class scores share the
        // average of the ranks they span (ranks are 1-based).
        let mut j = i + 1;
        let s = scores.row(order[i])[positive];
        while j < n && scores.row(order[j])[positive] == s {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == positive {
                pos_rank_sum += avg_rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    let n_neg = n as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateClass(
            PlaneLabel::ALL.get(positive).copied().unwrap_or(PlaneLabel::Other),
        ));
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC plus the per-class values and the skipped
/// (degenerate) classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub macro_auc: f64,
    pub per_class: BTreeMap<PlaneLabel, f64>,
    pub skipped: BTreeSet<PlaneLabel>,
}

/// Unweighted mean of per-class one-vs-rest AUC over the non-degenerate
/// members of `candidates`. Class index = position in
/// [`PlaneLabel::ALL`].
pub fn macro_ovr_auc(
    scores: &ScoreMatrix,
    labels: &[usize],
    candidates: &[PlaneLabel],
) -> Result<MacroAuc, MetricsError> {
    check_lengths(scores, labels)?;
    let mut per_class = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    for &label in candidates {
        match ovr_auc(scores, labels, label.index()) {
            Ok(auc) => {
                per_class.insert(label, auc);
            }
            Err(MetricsError::DegenerateClass(_)) => {
                skipped.insert(label);
            }
            Err(e) => return Err(e),
        }
    }
    if per_class.is_empty() {
        return Err(MetricsError::AllClassesDegenerate);
    }
    let macro_auc = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MacroAuc { macro_auc, per_class, skipped })
}

/// Confusion matrix over a fixed class list. `counts[i][j]` is the number
/// of samples with true class `classes[i]` predicted as `classes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<PlaneLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row sum: number of samples whose true class is `classes[i]`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Column sum: number of samples predicted as `classes[j]`.
    pub fn predicted(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        hits as f64 / total as f64
    }

    /// CSV rendering: header `class,<name>...`, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            out.push_str(c.as_str());
            for j in 0..self.classes.len() {
                out.push(',');
                out.push_str(&self.counts[i][j].to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Tally predictions against labels (both as class indices into `classes`).
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    classes: &[PlaneLabel],
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            what: format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        });
    }
    let k = classes.len();
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v >= k) {
        return Err(MetricsError::BadClassIndex { index: bad, n_classes: k });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { classes: classes.to_vec(), counts })
}

/// Per-class and macro precision/recall derived from a confusion matrix.
///
/// A class predicted zero times gets precision 0 and is listed in
/// `zero_prediction_classes`. Macro averages run over classes with
/// non-zero support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub per_class_precision: BTreeMap<PlaneLabel, f64>,
    pub per_class_recall: BTreeMap<PlaneLabel, f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub zero_prediction_classes: BTreeSet<PlaneLabel>,
}

pub fn precision_recall(cm: &ConfusionMatrix) -> PrecisionRecall {
    let k = cm.classes.len();
    let mut per_class_precision = BTreeMap::new();
    let mut per_class_recall = BTreeMap::new();
    let mut zero_prediction_classes = BTreeSet::new();
    let mut prec_sum = 0.0;
    let mut rec_sum = 0.0;
    let mut supported = 0usize;
    for i in 0..k {
        let label = cm.classes[i];
        let support = cm.support(i);
        if support == 0 {
            continue;
        }
        let tp = cm.counts[i][i];
        let predicted = cm.predicted(i);
        let precision = if predicted == 0 {
            zero_prediction_classes.insert(label);
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = tp as f64 / support as f64;
        per_class_precision.insert(label, precision);
        per_class_recall.insert(label, recall);
        prec_sum += precision;
        rec_sum += recall;
        supported += 1;
    }
    let (macro_precision, macro_recall) = if supported == 0 {
        (0.0, 0.0)
    } else {
        (prec_sum / supported as f64, rec_sum / supported as f64)
    };
    PrecisionRecall {
        per_class_precision,
        per_class_recall,
        macro_precision,
        macro_recall,
        zero_prediction_classes,
    }
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Full evaluation report for one (model, evaluation split) pair. Field
/// order and map key order are fixed, so serialising the same report twice
/// yields identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_auc: f64,
    pub per_class_auc: BTreeMap<PlaneLabel, f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_precision: BTreeMap<PlaneLabel, f64>,
    pub per_class_recall: BTreeMap<PlaneLabel, f64>,
    /// Candidate classes that were non-degenerate and entered the macro AUC.
    pub evaluated_classes: Vec<PlaneLabel>,
    /// Candidate classes without both a positive and a negative sample.
    pub skipped_classes: Vec<PlaneLabel>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Compute every metric from raw scores. `candidates` are the classes
    /// the report covers (normally all five); the confusion matrix always
    /// spans all of them so stray predictions of absent classes stay
    /// visible.
    pub fn compute(
        scores: &ScoreMatrix,
        labels: &[usize],
        candidates: &[PlaneLabel],
    ) -> Result<MetricsReport, MetricsError> {
        let auc = macro_ovr_auc(scores, labels, candidates)?;
        let predictions: Vec<usize> =
            (0..scores.n_samples()).map(|i| scores.argmax_row(i)).collect();
        let cm = confusion(&predictions, labels, candidates)?;
        let pr = precision_recall(&cm);
        Ok(MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION,
            n_samples: labels.len(),
            accuracy: cm.accuracy(),
            macro_auc: auc.macro_auc,
            per_class_auc: auc.per_class.clone(),
            macro_precision: pr.macro_precision,
            macro_recall: pr.macro_recall,
            per_class_precision: pr.per_class_precision,
            per_class_recall: pr.per_class_recall,
            evaluated_classes: auc.per_class.keys().copied().collect(),
            skipped_classes: auc.skipped.iter().copied().collect(),
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport, serde_json::Error> {
        serde_json::from_str(text)
    }
}
