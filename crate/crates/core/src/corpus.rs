//! Dataset manifests, patient-level splits and class-quota sampling.
//!
//! A manifest binds image files to experiment semantics: which centre and
//! patient each image came from, its plane label, an optional
//! field-of-view crop and an artifact flag. All operations here are pure
//! given `(inputs, seed)` so experiment cells replay byte-identically.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

/// The five standard-plane categories. `Other` collects non-standard views
/// and may be absent from a centre's manifest entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneLabel {
    Abdomen,
    Brain,
    Femur,
    Thorax,
    Other,
}

impl PlaneLabel {
    /// Canonical enum order; also the class-index order used by models
    /// and metrics, and the tie-break order for quota rounding.
    pub const ALL: [PlaneLabel; 5] = [
        PlaneLabel::Abdomen,
        PlaneLabel::Brain,
        PlaneLabel::Femur,
        PlaneLabel::Thorax,
        PlaneLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlaneLabel::Abdomen => "abdomen",
            PlaneLabel::Brain => "brain",
            PlaneLabel::Femur => "femur",
            PlaneLabel::Thorax => "thorax",
            PlaneLabel::Other => "other",
        }
    }

    pub fn from_str_lower(s: &str) -> Option<PlaneLabel> {
        PlaneLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// Class index in the canonical order.
    pub fn index(self) -> usize {
        PlaneLabel::ALL.iter().position(|&l| l == self).unwrap()
    }
}

impl std::fmt::Display for PlaneLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acquisition profile of a clinical (or synthetic) centre, stored as a
/// JSON sidecar next to the manifest CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentreProfile {
    pub centre_id: String,
    pub country: String,
    pub vendor: String,
    /// Closed interval of transducer frequencies in MHz.
    pub transducer_freq_mhz: (f64, f64),
    /// Trimesters covered by the screening protocol (subset of {2, 3}).
    pub trimesters: BTreeSet<u8>,
}

impl CentreProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (lo, hi) = self.transducer_freq_mhz;
        if self.centre_id.is_empty() {
            return Err(CorpusError::schema(0, "centre_id", "empty centre_id"));
        }
        if !(lo > 0.0 && hi <= 20.0 && lo <= hi) {
            return Err(CorpusError::schema(
                0,
                "transducer_freq_mhz",
                format!("frequency interval ({lo}, {hi}) must satisfy 0 < lo <= hi <= 20"),
            ));
        }
        if self.trimesters.iter().any(|t| *t != 2 && *t != 3) {
            return Err(CorpusError::schema(0, "trimesters", "trimesters must be within {2, 3}"));
        }
        Ok(())
    }
}

/// Field-of-view crop rectangle in pixel coordinates of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// One image row of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub centre_id: String,
    pub patient_id: String,
    pub label: PlaneLabel,
    /// Image path; relative paths resolve against the manifest directory.
    pub path: PathBuf,
    pub crop_rect: Option<CropRect>,
    /// Flagged images are excluded from every training and evaluation set.
    pub artifact_flag: bool,
    /// Set on records borrowed from another centre by backfill; names the
    /// donor centre. Never set on records loaded from a manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub borrowed_from: Option<String>,
}

/// A centre profile plus its ordered image records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub centre: CentreProfile,
    pub records: Vec<ImageRecord>,
    /// Directory that relative record paths resolve against.
    pub base_dir: PathBuf,
}

/// Patient-level split. The three sets are pairwise disjoint and their
/// union is the manifest's full patient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_patients: BTreeSet<String>,
    pub val_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
    pub seed: u64,
}

impl SplitPlan {
    /// Train and validation patients together: the non-test half.
    pub fn trainval_patients(&self) -> BTreeSet<String> {
        self.train_patients.union(&self.val_patients).cloned().collect()
    }
}

/// Result of [`sample_training_subset`]: the drawn records plus the quota
/// table and which classes needed with-replacement draws.
#[derive(Debug, Clone)]
pub struct TrainingSubset {
    pub records: Vec<ImageRecord>,
    pub quotas: BTreeMap<PlaneLabel, usize>,
    pub replacement_classes: BTreeSet<PlaneLabel>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest file not found: {0}")]
    MissingFile(PathBuf),
    #[error("manifest schema violation at line {line}, field `{field}`: {message}")]
    SchemaViolation { line: u64, field: String, message: String },
    #[error("duplicate record at line {line}: ({centre_id}, {patient_id}, {path})")]
    DuplicateRecord { line: u64, centre_id: String, patient_id: String, path: String },
    #[error("too few patients to split: have {have}, need at least {need}")]
    TooFewPatients { have: usize, need: usize },
    #[error("class {0} has a non-zero quota but zero supply and no backfill source")]
    EmptyClassUnavailable(PlaneLabel),
    #[error("backfill source lacks required class {0}")]
    SourceLacksClass(PlaneLabel),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn schema(line: u64, field: &str, message: impl Into<String>) -> Self {
        CorpusError::SchemaViolation { line, field: field.to_string(), message: message.into() }
    }
}

pub const MANIFEST_HEADER: [&str; 9] = [
    "centre_id",
    "patient_id",
    "label",
    "path",
    "crop_x",
    "crop_y",
    "crop_w",
    "crop_h",
    "artifact_flag",
];

impl DatasetManifest {
    pub fn new(centre: CentreProfile, records: Vec<ImageRecord>) -> Self {
        Self { centre, records, base_dir: PathBuf::from(".") }
    }

    /// Absolute path of a record's image file.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Per-class record counts over all five labels (zero when absent).
    pub fn class_counts(&self) -> BTreeMap<PlaneLabel, usize> {
        let mut counts: BTreeMap<PlaneLabel, usize> =
            PlaneLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &self.records {
            *counts.get_mut(&r.label).unwrap() += 1;
        }
        counts
    }

    /// Unique patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.patient_id.clone()) {
                out.push(r.patient_id.clone());
            }
        }
        out
    }

    /// Manifest restricted to records satisfying `keep`; centre profile and
    /// base directory are preserved.
    pub fn filter<F: Fn(&ImageRecord) -> bool>(&self, keep: F) -> DatasetManifest {
        DatasetManifest {
            centre: self.centre.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Usable (non-artifact) records of the given patients.
    pub fn usable_records_of(&self, patients: &BTreeSet<String>) -> Vec<&ImageRecord> {
        self.records
            .iter()
            .filter(|r| !r.artifact_flag && patients.contains(&r.patient_id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        self.centre.validate()?;
        let mut seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i as u64 + 2; // header is line 1
            if r.centre_id != self.centre.centre_id && r.borrowed_from.is_none() {
                return Err(CorpusError::schema(
                    line,
                    "centre_id",
                    format!("record centre `{}` != manifest centre `{}`", r.centre_id, self.centre.centre_id),
                ));
            }
            let key = (r.centre_id.clone(), r.patient_id.clone(), r.path.clone());
            if !seen.insert(key) {
                return Err(CorpusError::DuplicateRecord {
                    line,
                    centre_id: r.centre_id.clone(),
                    patient_id: r.patient_id.clone(),
                    path: r.path.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Path of the centre-profile sidecar for a manifest CSV
/// (`manifest.csv` -> `manifest.centre.json`).
pub fn sidecar_path(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path.file_stem().unwrap_or_default().to_string_lossy();
    manifest_path.with_file_name(format!("{stem}.centre.json"))
}

/// Load and validate a manifest CSV plus its centre-profile sidecar.
/// Record order is preserved from the file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let sidecar = sidecar_path(path);
    if !sidecar.is_file() {
        return Err(CorpusError::MissingFile(sidecar));
    }
    let profile_text = fs::read_to_string(&sidecar)
        .map_err(|e| CorpusError::Io { path: sidecar.clone(), source: e })?;
    let centre: CentreProfile = serde_json::from_str(&profile_text)
        .map_err(|e| CorpusError::schema(0, "centre profile", e.to_string()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CorpusError::schema(1, "header", e.to_string()))?;
    {
        let headers = reader.headers().map_err(|e| CorpusError::schema(1, "header", e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(CorpusError::schema(
                1,
                "header",
                format!("expected `{}`, got `{}`", MANIFEST_HEADER.join(","), got.join(",")),
            ));
        }
    }

    let mut records = Vec::new();
    for result in reader.records() {
        let row = result.map_err(|e| CorpusError::schema(0, "row", e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize, name: &str| -> Result<&str, CorpusError> {
            row.get(idx).ok_or_else(|| CorpusError::schema(line, name, "missing field"))
        };
        let label_text = field(2, "label")?;
        let label = PlaneLabel::from_str_lower(label_text)
            .ok_or_else(|| CorpusError::schema(line, "label", format!("unknown label `{label_text}`")))?;
        let crop_fields: Vec<&str> =
            (4..8).map(|i| row.get(i).unwrap_or("")).collect();
        let crop_rect = if crop_fields.iter().all(|f| f.is_empty()) {
            None
        } else if crop_fields.iter().all(|f| !f.is_empty()) {
            let mut vals = [0u32; 4];
            for (i, (f, name)) in crop_fields
                .iter()
                .zip(["crop_x", "crop_y", "crop_w", "crop_h"])
                .enumerate()
            {
                vals[i] = f
                    .parse()
                    .map_err(|_| CorpusError::schema(line, name, format!("not an integer: `{f}`")))?;
            }
            Some(CropRect { x: vals[0], y: vals[1], width: vals[2], height: vals[3] })
        } else {
            return Err(CorpusError::schema(line, "crop_x", "crop fields must be all present or all empty"));
        };
        let artifact_text = field(8, "artifact_flag")?;
        let artifact_flag = match artifact_text {
            "0" => false,
            "1" => true,
            other => {
                return Err(CorpusError::schema(
                    line,
                    "artifact_flag",
                    format!("expected 0 or 1, got `{other}`"),
                ))
            }
        };
        records.push(ImageRecord {
            centre_id: field(0, "centre_id")?.to_string(),
            patient_id: field(1, "patient_id")?.to_string(),
            label,
            path: PathBuf::from(field(3, "path")?),
            crop_rect,
            artifact_flag,
            borrowed_from: None,
        });
    }

    let mut manifest = DatasetManifest::new(centre, records);
    manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest CSV plus its centre-profile sidecar.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), CorpusError> {
    let io_err = |e: std::io::Error| CorpusError::Io { path: path.to_path_buf(), source: e };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => io_err(e),
        other => CorpusError::InvalidArgument(format!("csv: {other:?}")),
    })?;
    writer.write_record(MANIFEST_HEADER).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    for r in &manifest.records {
        let (cx, cy, cw, ch) = match r.crop_rect {
            Some(c) => (c.x.to_string(), c.y.to_string(), c.width.to_string(), c.height.to_string()),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        writer
            .write_record([
                r.centre_id.as_str(),
                r.patient_id.as_str(),
                r.label.as_str(),
                &r.path.display().to_string(),
                &cx,
                &cy,
                &cw,
                &ch,
                if r.artifact_flag { "1" } else { "0" },
            ])
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    }
    writer.flush().map_err(io_err)?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest.centre)
        .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    fs::write(&sidecar, json).map_err(|e| CorpusError::Io { path: sidecar, source: e })?;
    Ok(())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Partition patients into train / validation / test.
///
/// `train_frac` of the patients (round half up) form the train+val pool;
/// `val_frac_of_train` of that pool (round half up) becomes validation.
/// Deterministic given `seed`.
pub fn split_patients(
    manifest: &DatasetManifest,
    train_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(CorpusError::InvalidArgument(format!("train_frac {train_frac} not in (0, 1)")));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(CorpusError::InvalidArgument(format!(
            "val_frac_of_train {val_frac_of_train} not in [0, 1)"
        )));
    }
    let mut patients: Vec<String> = manifest.patients();
    patients.sort();
    let total = patients.len();
    if total < 2 {
        return Err(CorpusError::TooFewPatients { have: total, need: 2 });
    }
    let trainval_count = round_half_up(total as f64 * train_frac);
    if trainval_count == 0 || trainval_count == total {
        return Err(CorpusError::TooFewPatients { have: total, need: 2 });
    }
    let val_count = round_half_up(trainval_count as f64 * val_frac_of_train);

    let mut rng = rng_for(seed);
    patients.shuffle(&mut rng);
    let trainval = &patients[..trainval_count];
    let (train_slice, val_slice) = trainval.split_at(trainval_count - val_count);
    Ok(SplitPlan {
        train_patients: train_slice.iter().cloned().collect(),
        val_patients: val_slice.iter().cloned().collect(),
        test_patients: patients[trainval_count..].iter().cloned().collect(),
        seed,
    })
}

/// Integer class quotas for `n` samples under `fractions` using the
/// largest-remainder method: start from `floor(n * f)` per class and hand
/// the remaining slots to the largest fractional parts, ties broken by
/// enum order.
pub fn largest_remainder_quotas(
    n: usize,
    fractions: &BTreeMap<PlaneLabel, f64>,
) -> Result<BTreeMap<PlaneLabel, usize>, CorpusError> {
    let sum: f64 = fractions.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidArgument(format!(
            "class distribution sums to {sum}, expected 1"
        )));
    }
    if fractions.values().any(|&f| f < 0.0) {
        return Err(CorpusError::InvalidArgument("negative class fraction".into()));
    }
    let mut quotas: BTreeMap<PlaneLabel, usize> = BTreeMap::new();
    let mut remainders: Vec<(PlaneLabel, f64)> = Vec::new();
    let mut assigned = 0usize;
    for &label in &PlaneLabel::ALL {
        let f = fractions.get(&label).copied().unwrap_or(0.0);
        let exact = n as f64 * f;
        let base = exact.floor() as usize;
        quotas.insert(label, base);
        assigned += base;
        remainders.push((label, exact - base as f64));
    }
    // Descending fractional part; enum order (already the iteration order)
    // breaks ties because the sort is stable.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut left = n - assigned;
    for (label, _) in remainders {
        if left == 0 {
            break;
        }
        *quotas.get_mut(&label).unwrap() += 1;
        left -= 1;
    }
    Ok(quotas)
}

/// Draw exactly `n` training records from the plan's train patients with
/// per-class counts given by the largest-remainder quotas.
///
/// Within a class, records are drawn without replacement while supply
/// lasts; an undersupplied class is topped up with replacement draws and
/// flagged in the returned metadata.
pub fn sample_training_subset(
    manifest: &DatasetManifest,
    plan: &SplitPlan,
    n: usize,
    target_distribution: &BTreeMap<PlaneLabel, f64>,
    seed: u64,
) -> Result<TrainingSubset, CorpusError> {
    if n < 5 {
        return Err(CorpusError::InvalidArgument(format!("subset size {n} < 5")));
    }
    let quotas = largest_remainder_quotas(n, target_distribution)?;
    let mut rng = rng_for(seed);
    let mut records = Vec::with_capacity(n);
    let mut replacement_classes = BTreeSet::new();
    for &label in &PlaneLabel::ALL {
        let quota = quotas[&label];
        if quota == 0 {
            continue;
        }
        let pool: Vec<&ImageRecord> = manifest
            .records
            .iter()
            .filter(|r| {
                r.label == label && !r.artifact_flag && plan.train_patients.contains(&r.patient_id)
            })
            .collect();
        if pool.is_empty() {
            return Err(CorpusError::EmptyClassUnavailable(label));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        if quota <= pool.len() {
            records.extend(order[..quota].iter().map(|&i| pool[i].clone()));
        } else {
            // Take the whole supply once, then draw the remainder with
            // replacement.
            records.extend(order.iter().map(|&i| pool[i].clone()));
            for _ in 0..quota - pool.len() {
                let i = rng.gen_range(0..pool.len());
                records.push(pool[i].clone());
            }
            replacement_classes.insert(label);
        }
    }
    debug_assert_eq!(records.len(), n);
    Ok(TrainingSubset { records, quotas, replacement_classes })
}

/// Fill classes missing from `target` with records borrowed from `source`.
///
/// Borrowed records are re-homed to the target centre with a
/// `{source}:{patient}` patient id (so they can never collide with a
/// target patient), an absolute image path, and `borrowed_from` naming the
/// donor. Per missing class the borrow count matches the mean per-class
/// count of the target's populated classes, capped by donor supply.
pub fn backfill_missing_classes(
    target: &DatasetManifest,
    source: &DatasetManifest,
    required: &BTreeSet<PlaneLabel>,
    seed: u64,
) -> Result<DatasetManifest, CorpusError> {
    let counts = target.class_counts();
    let missing: Vec<PlaneLabel> = PlaneLabel::ALL
        .into_iter()
        .filter(|l| required.contains(l) && counts[l] == 0)
        .collect();
    if missing.is_empty() {
        return Ok(target.clone());
    }
    let populated: Vec<usize> = counts.values().copied().filter(|&c| c > 0).collect();
    let per_class_target = if populated.is_empty() {
        1
    } else {
        let mean = populated.iter().sum::<usize>() as f64 / populated.len() as f64;
        round_half_up(mean).max(1)
    };

    let mut rng = rng_for(seed);
    let mut out = target.clone();
    for label in missing {
        let donors: Vec<&ImageRecord> = source
            .records
            .iter()
            .filter(|r| r.label == label && !r.artifact_flag)
            .collect();
        if donors.is_empty() {
            return Err(CorpusError::SourceLacksClass(label));
        }
        let mut order: Vec<usize> = (0..donors.len()).collect();
        order.shuffle(&mut rng);
        let take = per_class_target.min(donors.len());
        for &i in &order[..take] {
            let donor = donors[i];
            out.records.push(ImageRecord {
                centre_id: target.centre.centre_id.clone(),
                patient_id: format!("{}:{}", source.centre.centre_id, donor.patient_id),
                label,
                path: source.resolve_path(donor),
                crop_rect: donor.crop_rect,
                artifact_flag: false,
                borrowed_from: Some(source.centre.centre_id.clone()),
            });
        }
    }
    Ok(out)
}
