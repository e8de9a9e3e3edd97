//! Experiment configuration: one TOML file describes the corpus sources,
//! preprocessing, model and optimiser settings, and the sweep grid.
//! Unknown keys are rejected at parse time and every cross-reference is
//! checked before any work starts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::preprocess::PrepConfig;
use crate::synth::SynthCentreSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Dense169,
    DeskSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { arch: ArchKind::DeskSmall, num_classes: 5, init_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Epochs for models trained from scratch on full sets
    /// (single-centre and combination arms).
    pub max_epochs: usize,
    /// Epochs for building a pretraining checkpoint.
    pub pretrain_epochs: usize,
    /// Epochs for fine-tuning on a handful of target patients.
    pub finetune_epochs: usize,
    /// The no-pretraining baseline trains this many times longer than a
    /// fine-tuning run, since it starts from random weights.
    pub scratch_epoch_factor: usize,
    /// Deterministic cap on validation-set size (images); unset means
    /// use the whole validation split.
    pub max_val_images: Option<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 24,
            max_epochs: 50,
            pretrain_epochs: 50,
            finetune_epochs: 20,
            scratch_epoch_factor: 2,
            max_val_images: None,
            augment: AugmentConfig::training_default(0),
        }
    }
}

/// One corpus source: either an existing manifest CSV or a synthetic
/// centre to generate. Exactly one of `manifest` / `synth` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentreSource {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthCentreSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingleCentre,
    Combination,
    TransferLearning,
    /// Same few-patient training set as transfer learning but from
    /// random initialisation; the comparison baseline.
    FromScratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpecConfig {
    pub id: String,
    pub kind: StrategyKind,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    /// Source sample counts; for transfer learning these are pretraining
    /// sizes (0 selects the generic-shapes checkpoint).
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Target patient counts for the fine-tuning arms.
    #[serde(default)]
    pub p_grid: Vec<usize>,
    #[serde(default = "default_freeze_k")]
    pub freeze_k: usize,
    /// When false, "last k" counts groups below the classifier head and
    /// the head stays trainable on top of them.
    #[serde(default = "default_true")]
    pub include_head_in_tail: bool,
}

fn default_freeze_k() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassDistribution {
    /// 40% other, 15% for each standard plane.
    Clinical,
    /// Equal share per class.
    Uniform,
}

impl ClassDistribution {
    pub fn fractions(&self) -> Vec<(crate::corpus::PlaneLabel, f64)> {
        use crate::corpus::PlaneLabel::*;
        match self {
            ClassDistribution::Clinical => vec![
                (Abdomen, 0.15),
                (Brain, 0.15),
                (Femur, 0.15),
                (Thorax, 0.15),
                (Other, 0.40),
            ],
            ClassDistribution::Uniform => {
                crate::corpus::PlaneLabel::ALL.iter().map(|&l| (l, 0.2)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_pretrain_seed")]
    pub pretrain_seed: u64,
    /// Seeds the patient-level splits. One split per centre, shared by
    /// every run seed, so train/test membership never drifts across the
    /// sweep.
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_distribution")]
    pub distribution: ClassDistribution,
    /// Borrow source images for classes the target manifest lacks.
    #[serde(default = "default_true")]
    pub backfill: bool,
    pub specs: Vec<SweepSpecConfig>,
}

fn default_pretrain_seed() -> u64 {
    1000
}

fn default_split_seed() -> u64 {
    7
}

fn default_distribution() -> ClassDistribution {
    ClassDistribution::Clinical
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run identifier; becomes the directory name under `out_dir`.
    pub name: String,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub centres: Vec<CentreSource>,
    pub sweep: SweepSection,
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.normalise();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths in the file are relative to the file itself.
        if let Some(dir) = path.parent() {
            if cfg.out_dir.is_relative() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
            for centre in &mut cfg.centres {
                if let Some(m) = &centre.manifest {
                    if m.is_relative() {
                        centre.manifest = Some(dir.join(m));
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// Fill derived fields: synth centre ids default to the source id.
    fn normalise(&mut self) {
        for centre in &mut self.centres {
            if let Some(spec) = &mut centre.synth {
                if spec.centre_id.is_empty() {
                    spec.centre_id = centre.id.clone();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty path-safe identifier"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.prep.height < 8 || self.prep.width < 8 {
            return Err(invalid("prep.height/width", "images smaller than 8x8 are not supported"));
        }
        let t = &self.training;
        if t.learning_rate <= 0.0 {
            return Err(invalid("training.learning_rate", "must be positive"));
        }
        if !(t.beta1 > 0.0 && t.beta1 < t.beta2 && t.beta2 < 1.0) {
            return Err(invalid("training.beta1/beta2", "need 0 < beta1 < beta2 < 1"));
        }
        if t.batch_size < 2 {
            return Err(invalid("training.batch_size", "must be at least 2"));
        }
        for (field, v) in [
            ("training.max_epochs", t.max_epochs),
            ("training.pretrain_epochs", t.pretrain_epochs),
            ("training.finetune_epochs", t.finetune_epochs),
            ("training.scratch_epoch_factor", t.scratch_epoch_factor),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        t.augment
            .validate()
            .map_err(|m| invalid("training.augment", m))?;
        if self.model.num_classes < 2 {
            return Err(invalid("model.num_classes", "need at least two classes"));
        }

        if self.centres.is_empty() {
            return Err(invalid("centres", "at least one centre is required"));
        }
        let mut ids = BTreeSet::new();
        for centre in &self.centres {
            if centre.id.is_empty() || centre.id.contains(['/', '\\']) {
                return Err(invalid("centres.id", "must be a non-empty path-safe identifier"));
            }
            if !ids.insert(centre.id.clone()) {
                return Err(invalid("centres.id", format!("duplicate centre id `{}`", centre.id)));
            }
            match (&centre.manifest, &centre.synth) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(invalid(
                        "centres",
                        format!("centre `{}` needs exactly one of `manifest` or `synth`", centre.id),
                    ));
                }
                (None, Some(spec)) => {
                    if spec.centre_id != centre.id {
                        return Err(invalid(
                            "centres.synth.centre_id",
                            format!("`{}` does not match centre id `{}`", spec.centre_id, centre.id),
                        ));
                    }
                    spec.validate().map_err(|e| {
                        invalid(&format!("centres.{}.synth", centre.id), e.to_string())
                    })?;
                }
                (Some(_), None) => {}
            }
        }

        if self.sweep.seeds.is_empty() {
            return Err(invalid("sweep.seeds", "at least one seed is required"));
        }
        if self.sweep.specs.is_empty() {
            return Err(invalid("sweep.specs", "at least one strategy spec is required"));
        }
        let mut spec_ids = BTreeSet::new();
        for spec in &self.sweep.specs {
            let field = format!("sweep.specs.{}", spec.id);
            if spec.id.is_empty() || spec.id.contains(['/', '\\']) {
                return Err(invalid("sweep.specs.id", "must be a non-empty path-safe identifier"));
            }
            if !spec_ids.insert(spec.id.clone()) {
                return Err(invalid("sweep.specs.id", format!("duplicate spec id `{}`", spec.id)));
            }
            let centre_known = |name: &Option<String>| {
                name.as_deref().map(|n| ids.contains(n)).unwrap_or(true)
            };
            if !centre_known(&spec.source) {
                return Err(invalid(
                    &field,
                    format!("unknown source centre `{}`", spec.source.as_deref().unwrap()),
                ));
            }
            if !centre_known(&spec.target) {
                return Err(invalid(
                    &field,
                    format!("unknown target centre `{}`", spec.target.as_deref().unwrap()),
                ));
            }
            match spec.kind {
                StrategyKind::SingleCentre => {
                    if spec.source.is_none() {
                        return Err(invalid(&field, "single_centre needs a source"));
                    }
                    if spec.n_grid.is_empty() {
                        return Err(invalid(&field, "single_centre needs a non-empty n_grid"));
                    }
                }
                StrategyKind::Combination => {
                    if spec.source.is_none() || spec.target.is_none() {
                        return Err(invalid(&field, "combination needs source and target"));
                    }
                    if spec.n_grid.is_empty() {
                        return Err(invalid(&field, "combination needs a non-empty n_grid"));
                    }
                }
                StrategyKind::TransferLearning => {
                    if spec.source.is_none() || spec.target.is_none() {
                        return Err(invalid(&field, "transfer_learning needs source and target"));
                    }
                    if spec.n_grid.is_empty() || spec.p_grid.is_empty() {
                        return Err(invalid(
                            &field,
                            "transfer_learning needs non-empty n_grid (pretrain sizes) and p_grid",
                        ));
                    }
                }
                StrategyKind::FromScratch => {
                    if spec.target.is_none() {
                        return Err(invalid(&field, "from_scratch needs a target"));
                    }
                    if spec.p_grid.is_empty() {
                        return Err(invalid(&field, "from_scratch needs a non-empty p_grid"));
                    }
                }
            }
            if spec.p_grid.iter().any(|&p| p == 0) {
                return Err(invalid(&field, "p values must be positive"));
            }
            if let Some(&n) = spec.n_grid.iter().find(|&&n| n != 0 && n < 5) {
                return Err(invalid(
                    &field,
                    format!("n={n} too small: class-balanced sampling needs at least 5 images"),
                ));
            }
            if spec.kind == StrategyKind::SingleCentre && spec.n_grid.contains(&0) {
                return Err(invalid(&field, "single_centre has no n=0 arm"));
            }
        }
        Ok(())
    }

    /// Root directory for this run's results.
    pub fn results_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }
}
