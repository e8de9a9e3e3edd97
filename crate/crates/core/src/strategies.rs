//! Experiment arms and the sweep runner.
//!
//! Four arms share one vocabulary: train somewhere, evaluate on held-out
//! test patients, and account for every patient that touched the weights.
//!
//! * `single_centre`: train on `n` source images, evaluate on every
//!   registered centre's test split.
//! * `combination`: train from scratch on `n` source images plus the
//!   target's whole training split, evaluate on the target.
//! * `transfer_learning`: start from a cached pretraining checkpoint for
//!   `(source, n)`, unfreeze only the tail of the network, fine-tune on
//!   `p` target patients.
//! * `from_scratch`: the matched baseline for transfer learning; the same
//!   `p` patients per seed, random initial weights, a longer epoch budget.
//!
//! `run_sweep` executes the `(cell, seed)` grid into a results tree keyed
//! by content hash. A cell whose three output files already exist is
//! skipped, so an interrupted sweep resumes where it stopped, and a failed
//! cell records its error without aborting the rest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ArchKind, ExperimentConfig, StrategyKind};
use crate::corpus::{
    backfill_missing_classes, load_manifest, sample_training_subset, split_patients, CorpusError,
    DatasetManifest, ImageRecord, PlaneLabel, SplitPlan,
};
use crate::metrics::{MetricsError, MetricsReport};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointError, DenseNet, DenseNetConfig, ModelError,
};
use crate::preprocess::{find_prepared, prepare_manifest, PrepError, PreparedDataset};
use crate::seed::{derive_seed, derive_seed_str, hex_string, rng_for, sha256};
use crate::synth::{generate_centre, generic_shapes_dataset, SynthError, GENERIC_CLASSES};
use crate::training::{evaluate, train, AdamConfig, Sample, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown centre `{0}`")]
    UnknownCentre(String),
    #[error("source training split has {have} usable images, {need} requested")]
    InsufficientSourceSamples { have: usize, need: usize },
    #[error("p={p} fine-tuning patients requested but only {available} are available (at least one must stay for validation)")]
    PTooLarge { p: usize, available: usize },
    #[error("pretraining checkpoint missing at {0}")]
    MissingPretrainCheckpoint(PathBuf),
    #[error("invalid strategy cell: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StrategyError + '_ {
    move |source| StrategyError::Io { path: path.to_path_buf(), source }
}

/// One fully resolved grid point: an arm plus concrete `n`/`p` values.
/// `seeds` lists the run seeds the cell is executed under; everything
/// else identifies the cell itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub id: String,
    pub kind: StrategyKind,
    pub source_centre: Option<String>,
    pub target_centre: Option<String>,
    /// Source images drawn for training or pretraining; 0 means "no
    /// source subset" (target-only combination, generic-shapes pretrain).
    pub n_source: usize,
    pub p_target_patients: Option<usize>,
    pub freeze_k: usize,
    pub include_head_in_tail: bool,
    pub seeds: Vec<u64>,
}

/// Expand configured specs into concrete cells, one per grid point.
pub fn expand_cells(cfg: &ExperimentConfig) -> Vec<StrategySpec> {
    let mut cells = Vec::new();
    let seeds = cfg.sweep.seeds.clone();
    for s in &cfg.sweep.specs {
        let base = StrategySpec {
            id: s.id.clone(),
            kind: s.kind,
            source_centre: s.source.clone(),
            target_centre: s.target.clone(),
            n_source: 0,
            p_target_patients: None,
            freeze_k: s.freeze_k,
            include_head_in_tail: s.include_head_in_tail,
            seeds: seeds.clone(),
        };
        match s.kind {
            StrategyKind::SingleCentre | StrategyKind::Combination => {
                for &n in &s.n_grid {
                    let mut cell = base.clone();
                    cell.id = format!("{}-n{n}", s.id);
                    cell.n_source = n;
                    cells.push(cell);
                }
            }
            StrategyKind::TransferLearning => {
                for &n in &s.n_grid {
                    for &p in &s.p_grid {
                        let mut cell = base.clone();
                        cell.id = format!("{}-n{n}-p{p}", s.id);
                        cell.n_source = n;
                        cell.p_target_patients = Some(p);
                        cells.push(cell);
                    }
                }
            }
            StrategyKind::FromScratch => {
                for &p in &s.p_grid {
                    let mut cell = base.clone();
                    cell.id = format!("{}-p{p}", s.id);
                    cell.p_target_patients = Some(p);
                    cells.push(cell);
                }
            }
        }
    }
    cells
}

pub fn kind_str(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::SingleCentre => "single_centre",
        StrategyKind::Combination => "combination",
        StrategyKind::TransferLearning => "transfer_learning",
        StrategyKind::FromScratch => "from_scratch",
    }
}

/// A centre's manifest, its patient split, and its prepared image cache.
#[derive(Debug, Clone)]
pub struct CentreData {
    pub manifest: DatasetManifest,
    pub split: SplitPlan,
    pub prepared: PreparedDataset,
}

/// Every registered centre, loaded and prepared once per process. The
/// split is seeded from the sweep's `split_seed` only, so all run seeds
/// see the same train/val/test membership.
#[derive(Debug)]
pub struct CorpusRegistry {
    centres: BTreeMap<String, CentreData>,
}

impl CorpusRegistry {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, StrategyError> {
        let data_dir = cfg.out_dir.join("data");
        let cache_dir = cfg.out_dir.join("prep-cache");
        let mut centres = BTreeMap::new();
        for c in &cfg.centres {
            let manifest = match (&c.manifest, &c.synth) {
                (Some(path), None) => load_manifest(path)?,
                (None, Some(spec)) => {
                    let existing = data_dir.join(&c.id).join("manifest.csv");
                    if existing.is_file() {
                        load_manifest(&existing)?
                    } else {
                        generate_centre(spec, &data_dir)?
                    }
                }
                _ => {
                    return Err(StrategyError::Invalid(format!(
                        "centre `{}` needs exactly one of manifest/synth",
                        c.id
                    )))
                }
            };
            let n_patients = manifest.patients().len();
            // Small cohorts keep half the training patients for
            // validation so checkpoint selection is not decided by a
            // couple of images.
            let val_frac = if n_patients <= 50 { 0.5 } else { 0.2 };
            let split = split_patients(
                &manifest,
                0.5,
                val_frac,
                derive_seed_str(cfg.sweep.split_seed, "split", &c.id),
            )?;
            let prepared = prepare_manifest(&manifest, &cfg.prep, &cache_dir)?;
            centres.insert(c.id.clone(), CentreData { manifest, split, prepared });
        }
        Ok(Self { centres })
    }

    pub fn get(&self, id: &str) -> Result<&CentreData, StrategyError> {
        self.centres.get(id).ok_or_else(|| StrategyError::UnknownCentre(id.to_string()))
    }

    pub fn centre_ids(&self) -> Vec<String> {
        self.centres.keys().cloned().collect()
    }

    fn donors_for(&self, home: &str) -> Vec<&PreparedDataset> {
        self.centres.iter().filter(|(id, _)| id.as_str() != home).map(|(_, c)| &c.prepared).collect()
    }
}

/// Shared context for one sweep: the parsed config, the loaded corpus,
/// and the results root `out_dir/<name>`.
pub struct SweepEnv<'a> {
    pub cfg: &'a ExperimentConfig,
    pub registry: CorpusRegistry,
    pub results_root: PathBuf,
    /// When the grid was narrowed to a subset (single-cell `run`), keep the
    /// other cells' aggregate rows instead of truncating the file to the
    /// subset. A full sweep rewrites the aggregate from scratch.
    pub merge_aggregate: bool,
}

impl<'a> SweepEnv<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self, StrategyError> {
        let registry = CorpusRegistry::build(cfg)?;
        let results_root = cfg.results_dir();
        fs::create_dir_all(&results_root).map_err(io_err(&results_root))?;
        Ok(Self { cfg, registry, results_root, merge_aggregate: false })
    }

    fn train_cfg(&self, epochs: usize, train_seed: u64, aug_seed: u64) -> TrainConfig {
        let t = &self.cfg.training;
        let mut augment = t.augment.clone();
        augment.seed = aug_seed;
        TrainConfig {
            epochs,
            batch_size: t.batch_size,
            optimizer: AdamConfig { lr: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: 1e-8 },
            augment,
            seed: train_seed,
        }
    }

    fn new_model(&self, num_classes: usize, seed: u64) -> DenseNet {
        let arch = match self.cfg.model.arch {
            ArchKind::Dense169 => DenseNetConfig::dense169(num_classes),
            ArchKind::DeskSmall => DenseNetConfig::desk_small(num_classes),
        };
        DenseNet::new(arch, seed)
    }

    /// Load training samples for records belonging to `home_id`'s
    /// manifest; borrowed records resolve through the other centres'
    /// prepared caches.
    fn samples(&self, home_id: &str, records: &[ImageRecord]) -> Result<Vec<Sample>, StrategyError> {
        let home = self.registry.get(home_id)?;
        let donors = self.registry.donors_for(home_id);
        records
            .iter()
            .map(|r| {
                let item =
                    find_prepared(r, &home.prepared, &donors, &home.manifest).ok_or_else(|| {
                        StrategyError::Invalid(format!(
                            "no prepared image for {} (centre {home_id})",
                            r.path.display()
                        ))
                    })?;
                Ok(Sample { raster: item.load()?, label: r.label.index() })
            })
            .collect()
    }

    fn class_fractions(&self) -> BTreeMap<PlaneLabel, f64> {
        self.cfg.sweep.distribution.fractions().into_iter().collect()
    }
}

/// `centre/patient`, with borrowed records attributed to the centre the
/// image physically came from.
fn origin_tag(record: &ImageRecord) -> String {
    match &record.borrowed_from {
        Some(src) => {
            let pid = record
                .patient_id
                .split_once(':')
                .map_or(record.patient_id.as_str(), |(_, p)| p);
            format!("{src}/{pid}")
        }
        None => format!("{}/{}", record.centre_id, record.patient_id),
    }
}

fn origin_tags(records: &[ImageRecord]) -> BTreeSet<String> {
    records.iter().map(origin_tag).collect()
}

/// Deterministically cap a record list: shuffle under `seed`, keep the
/// first `cap`, restore a stable order.
fn cap_records(mut recs: Vec<ImageRecord>, cap: Option<usize>, seed: u64) -> Vec<ImageRecord> {
    if let Some(c) = cap {
        if recs.len() > c {
            recs.shuffle(&mut rng_for(seed));
            recs.truncate(c);
            recs.sort_by(|a, b| (&a.patient_id, &a.path).cmp(&(&b.patient_id, &b.path)));
        }
    }
    recs
}

fn cloned(records: Vec<&ImageRecord>) -> Vec<ImageRecord> {
    records.into_iter().cloned().collect()
}

/// Draw `p` fine-tuning patients from the target's train+val pool; the
/// rest of the pool becomes the validation patients. Test patients are
/// never eligible.
fn pick_finetune_patients(
    split: &SplitPlan,
    p: usize,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), StrategyError> {
    let pool: Vec<String> = split.trainval_patients().into_iter().collect();
    if p == 0 {
        return Err(StrategyError::Invalid("p must be at least 1".into()));
    }
    if p + 1 > pool.len() {
        return Err(StrategyError::PTooLarge { p, available: pool.len().saturating_sub(1) });
    }
    let mut order = pool;
    order.shuffle(&mut rng_for(seed));
    let chosen: BTreeSet<String> = order[..p].iter().cloned().collect();
    let rest: BTreeSet<String> = order[p..].iter().cloned().collect();
    Ok((chosen, rest))
}

const GENERIC_PER_CLASS: usize = 48;
const GENERIC_TRAIN_PER_CLASS: usize = 40;

/// Pretraining checkpoint metadata, written next to `model.ckpt` once the
/// checkpoint is complete. The fingerprint ties it to every setting that
/// shaped the weights; a stale directory is rebuilt, not trusted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainInfo {
    pub fingerprint: String,
    /// None for the generic-shapes checkpoint (n = 0).
    pub source: Option<String>,
    pub n: usize,
    pub num_classes: usize,
    pub arch_tag: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub train_patients: BTreeSet<String>,
    pub checkpoint: PathBuf,
}

fn pretrain_fingerprint(cfg: &ExperimentConfig, source: Option<&str>, n: usize) -> String {
    let key = serde_json::json!({
        "source": source,
        "n": n,
        "prep": cfg.prep,
        "model": cfg.model,
        "training": cfg.training,
        "distribution": cfg.sweep.distribution,
        "pretrain_seed": cfg.sweep.pretrain_seed,
        "split_seed": cfg.sweep.split_seed,
    });
    hex_string(&sha256(key.to_string().as_bytes()))
}

/// Build (or reuse) the pretraining checkpoint for `(source, n)`.
/// `n = 0` trains on the built-in generic-shapes corpus instead of source
/// images. Rebuilds happen only when the fingerprint changed; otherwise
/// every fine-tuning run starts from the identical bytes.
pub fn ensure_pretrain(env: &SweepEnv, source: &str, n: usize) -> Result<PretrainInfo, StrategyError> {
    let name = if n == 0 { "generic".to_string() } else { format!("{source}-n{n}") };
    let dir = env.results_root.join("pretrain").join(&name);
    let info_path = dir.join("pretrain.json");
    let ckpt_path = dir.join("model.ckpt");
    let fingerprint =
        pretrain_fingerprint(env.cfg, if n == 0 { None } else { Some(source) }, n);

    if info_path.is_file() {
        if let Ok(text) = fs::read_to_string(&info_path) {
            if let Ok(info) = serde_json::from_str::<PretrainInfo>(&text) {
                if info.fingerprint == fingerprint && info.checkpoint.is_file() {
                    return Ok(info);
                }
            }
        }
    }

    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let root = env.cfg.sweep.pretrain_seed;
    let (model, report, train_patients, num_classes) = if n == 0 {
        let prep = &env.cfg.prep;
        if prep.height != prep.width {
            return Err(StrategyError::Invalid(
                "generic pretraining (n = 0) needs square prepared images".into(),
            ));
        }
        let data = generic_shapes_dataset(
            GENERIC_PER_CLASS,
            prep.height as usize,
            derive_seed(root, "generic/data", 0),
        );
        let mut train_set = Vec::new();
        let mut val_set = Vec::new();
        for (idx, (raster, label)) in data.into_iter().enumerate() {
            let sample = Sample { raster, label };
            if idx % GENERIC_PER_CLASS < GENERIC_TRAIN_PER_CLASS {
                train_set.push(sample);
            } else {
                val_set.push(sample);
            }
        }
        let mut model = env
            .new_model(GENERIC_CLASSES, derive_seed(root, "generic/init", env.cfg.model.init_seed));
        let tcfg = env.train_cfg(
            env.cfg.training.pretrain_epochs,
            derive_seed(root, "generic/train", 0),
            derive_seed(root, "generic/aug", 0),
        );
        let report = train(&mut model, &train_set, &val_set, &tcfg)?;
        (model, report, BTreeSet::new(), GENERIC_CLASSES)
    } else {
        let sd = env.registry.get(source)?;
        let have = sd.manifest.usable_records_of(&sd.split.train_patients).len();
        if n > have {
            return Err(StrategyError::InsufficientSourceSamples { have, need: n });
        }
        let key = format!("{source}/{n}");
        let subset = sample_training_subset(
            &sd.manifest,
            &sd.split,
            n,
            &env.class_fractions(),
            derive_seed_str(root, "pretrain/sample", &key),
        )?;
        let train_set = env.samples(source, &subset.records)?;
        let val_recs = cap_records(
            cloned(sd.manifest.usable_records_of(&sd.split.val_patients)),
            env.cfg.training.max_val_images,
            derive_seed_str(root, "pretrain/valcap", &key),
        );
        let val_set = env.samples(source, &val_recs)?;
        let num_classes = env.cfg.model.num_classes;
        let mut model =
            env.new_model(num_classes, derive_seed_str(root, "pretrain/init", &key));
        let tcfg = env.train_cfg(
            env.cfg.training.pretrain_epochs,
            derive_seed_str(root, "pretrain/train", &key),
            derive_seed_str(root, "pretrain/aug", &key),
        );
        let report = train(&mut model, &train_set, &val_set, &tcfg)?;
        (model, report, origin_tags(&subset.records), num_classes)
    };

    save_checkpoint(&ckpt_path, &model.cfg.arch_tag(), &model.state_entries())?;
    let info = PretrainInfo {
        fingerprint,
        source: if n == 0 { None } else { Some(source.to_string()) },
        n,
        num_classes,
        arch_tag: model.cfg.arch_tag(),
        epochs: report.history.len(),
        best_epoch: report.best_epoch,
        best_val_acc: report.history[report.best_epoch].val_acc,
        train_patients,
        checkpoint: ckpt_path,
    };
    let json = serde_json::to_string_pretty(&info).expect("pretrain info serialises");
    write_atomic(&info_path, json.as_bytes())?;
    Ok(info)
}

/// Where a run's weights came from, for the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub source: Option<String>,
    pub n: usize,
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
}

/// Patient-level account of one run: everything that influenced the
/// weights versus everything that was judged. The two must never overlap
/// within a centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    /// `centre/patient` tags of training, fine-tuning and pretraining
    /// patients, borrowed images attributed to their original centre.
    pub trained_patients: BTreeSet<String>,
    /// Test-split patients per evaluated centre.
    pub test_patients: BTreeMap<String, BTreeSet<String>>,
}

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Everything a single `(cell, seed)` execution produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub spec: StrategySpec,
    pub seed: u64,
    /// The centre whose test metrics are the cell's headline number.
    pub primary_centre: String,
    pub metrics: MetricsReport,
    /// Test metrics per evaluated centre; single-centre runs cover every
    /// registered centre, the other arms only the target.
    pub cross_centre: BTreeMap<String, MetricsReport>,
    pub train_report: TrainReport,
    pub audit: SplitAudit,
    pub pretrain: Option<PretrainSummary>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StrategyError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

struct ArmSetup {
    model: DenseNet,
    train_set: Vec<Sample>,
    val_set: Vec<Sample>,
    epochs: usize,
    trained: BTreeSet<String>,
    pretrain: Option<PretrainSummary>,
    eval_centres: Vec<String>,
    primary: String,
}

fn require<'v>(field: Option<&'v String>, what: &str, kind: StrategyKind) -> Result<&'v String, StrategyError> {
    field.ok_or_else(|| {
        StrategyError::Invalid(format!("{} cell is missing its {what} centre", kind_str(kind)))
    })
}

fn setup_single(env: &SweepEnv, spec: &StrategySpec, seed: u64) -> Result<ArmSetup, StrategyError> {
    let source = require(spec.source_centre.as_ref(), "source", spec.kind)?;
    let sd = env.registry.get(source)?;
    let have = sd.manifest.usable_records_of(&sd.split.train_patients).len();
    if spec.n_source > have {
        return Err(StrategyError::InsufficientSourceSamples { have, need: spec.n_source });
    }
    let subset = sample_training_subset(
        &sd.manifest,
        &sd.split,
        spec.n_source,
        &env.class_fractions(),
        derive_seed(seed, "sample", spec.n_source as u64),
    )?;
    let val_recs = cap_records(
        cloned(sd.manifest.usable_records_of(&sd.split.val_patients)),
        env.cfg.training.max_val_images,
        derive_seed(seed, "valcap", 0),
    );
    Ok(ArmSetup {
        model: env.new_model(
            env.cfg.model.num_classes,
            derive_seed(seed, "model-init", env.cfg.model.init_seed),
        ),
        train_set: env.samples(source, &subset.records)?,
        val_set: env.samples(source, &val_recs)?,
        epochs: env.cfg.training.max_epochs,
        trained: origin_tags(&subset.records),
        pretrain: None,
        eval_centres: env.registry.centre_ids(),
        primary: spec.target_centre.clone().unwrap_or_else(|| source.clone()),
    })
}

fn setup_combination(
    env: &SweepEnv,
    spec: &StrategySpec,
    seed: u64,
) -> Result<ArmSetup, StrategyError> {
    let source = require(spec.source_centre.as_ref(), "source", spec.kind)?;
    let target = require(spec.target_centre.as_ref(), "target", spec.kind)?;
    let sd = env.registry.get(source)?;
    let td = env.registry.get(target)?;

    let tman = if env.cfg.sweep.backfill {
        // Donor pool is restricted to source *training* patients so
        // borrowed images can never leak evaluation data.
        let donor = sd
            .manifest
            .filter(|r| !r.artifact_flag && sd.split.train_patients.contains(&r.patient_id));
        let required: BTreeSet<PlaneLabel> = PlaneLabel::ALL.into_iter().collect();
        backfill_missing_classes(&td.manifest, &donor, &required, derive_seed(seed, "backfill", 0))?
    } else {
        td.manifest.clone()
    };

    let mut train_records: Vec<ImageRecord> = Vec::new();
    if spec.n_source > 0 {
        let have = sd.manifest.usable_records_of(&sd.split.train_patients).len();
        if spec.n_source > have {
            return Err(StrategyError::InsufficientSourceSamples { have, need: spec.n_source });
        }
        let subset = sample_training_subset(
            &sd.manifest,
            &sd.split,
            spec.n_source,
            &env.class_fractions(),
            derive_seed(seed, "sample", spec.n_source as u64),
        )?;
        train_records.extend(subset.records);
    }
    let source_count = train_records.len();
    let target_train: Vec<ImageRecord> = tman
        .records
        .iter()
        .filter(|r| {
            !r.artifact_flag
                && (r.borrowed_from.is_some() || td.split.train_patients.contains(&r.patient_id))
        })
        .cloned()
        .collect();
    train_records.extend(target_train);

    let mut train_set = env.samples(source, &train_records[..source_count])?;
    train_set.extend(env.samples(target, &train_records[source_count..])?);

    let val_recs = cap_records(
        cloned(td.manifest.usable_records_of(&td.split.val_patients)),
        env.cfg.training.max_val_images,
        derive_seed(seed, "valcap", 0),
    );
    Ok(ArmSetup {
        model: env.new_model(
            env.cfg.model.num_classes,
            derive_seed(seed, "model-init", env.cfg.model.init_seed),
        ),
        train_set,
        val_set: env.samples(target, &val_recs)?,
        epochs: env.cfg.training.max_epochs,
        trained: origin_tags(&train_records),
        pretrain: None,
        eval_centres: vec![target.clone()],
        primary: target.clone(),
    })
}

fn setup_finetune(env: &SweepEnv, spec: &StrategySpec, seed: u64) -> Result<ArmSetup, StrategyError> {
    let target = require(spec.target_centre.as_ref(), "target", spec.kind)?;
    let td = env.registry.get(target)?;
    let p = spec
        .p_target_patients
        .ok_or_else(|| StrategyError::Invalid("fine-tuning cell is missing p".into()))?;
    // The patient draw is keyed by (seed, p) only, so the from-scratch
    // baseline sees exactly the same patients as the matching
    // transfer-learning cell.
    let (chosen, val_patients) =
        pick_finetune_patients(&td.split, p, derive_seed(seed, "patients", p as u64))?;
    let ft_recs = cloned(td.manifest.usable_records_of(&chosen));
    let val_recs = cap_records(
        cloned(td.manifest.usable_records_of(&val_patients)),
        env.cfg.training.max_val_images,
        derive_seed(seed, "valcap", 0),
    );
    if ft_recs.is_empty() || val_recs.is_empty() {
        return Err(StrategyError::Invalid(format!(
            "target `{target}` has no usable images for p={p} fine-tuning"
        )));
    }

    let mut model = env.new_model(
        env.cfg.model.num_classes,
        derive_seed(seed, "model-init", env.cfg.model.init_seed),
    );
    let mut trained = origin_tags(&ft_recs);
    let mut pretrain = None;
    let epochs;
    if spec.kind == StrategyKind::TransferLearning {
        let source = require(spec.source_centre.as_ref(), "source", spec.kind)?;
        let info = ensure_pretrain(env, source, spec.n_source)?;
        if !info.checkpoint.is_file() {
            return Err(StrategyError::MissingPretrainCheckpoint(info.checkpoint.clone()));
        }
        let (_, entries) = load_checkpoint(&info.checkpoint)?;
        // Non-strict: the generic checkpoint's 8-way head stays out, the
        // body loads either way.
        let loaded = model.load_state(&entries, false)?;
        if loaded.loaded.is_empty() {
            return Err(StrategyError::Invalid(format!(
                "checkpoint {} shares no parameters with the model",
                info.checkpoint.display()
            )));
        }
        let tail = if spec.include_head_in_tail { spec.freeze_k } else { spec.freeze_k + 1 };
        model.set_trainable_last(tail)?;
        trained.extend(info.train_patients.iter().cloned());
        pretrain = Some(PretrainSummary {
            source: info.source.clone(),
            n: info.n,
            checkpoint: info.checkpoint.clone(),
            best_epoch: info.best_epoch,
        });
        epochs = env.cfg.training.finetune_epochs;
    } else {
        epochs = env.cfg.training.finetune_epochs * env.cfg.training.scratch_epoch_factor;
    }

    Ok(ArmSetup {
        model,
        train_set: env.samples(target, &ft_recs)?,
        val_set: env.samples(target, &val_recs)?,
        epochs,
        trained,
        pretrain,
        eval_centres: vec![target.clone()],
        primary: target.clone(),
    })
}

fn eval_centre(
    env: &SweepEnv,
    model: &mut DenseNet,
    centre_id: &str,
) -> Result<(MetricsReport, BTreeSet<String>), StrategyError> {
    let cd = env.registry.get(centre_id)?;
    let recs = cloned(cd.manifest.usable_records_of(&cd.split.test_patients));
    if recs.is_empty() {
        return Err(StrategyError::Invalid(format!("centre `{centre_id}` has an empty test split")));
    }
    let samples = env.samples(centre_id, &recs)?;
    let out = evaluate(model, &samples, env.cfg.training.batch_size);
    let report = MetricsReport::compute(&out.scores, &out.labels, &PlaneLabel::ALL)?;
    let patients = cd.split.test_patients.iter().map(|p| format!("{centre_id}/{p}")).collect();
    Ok((report, patients))
}

/// Execute one `(cell, seed)` run and write its artifacts into
/// `cell_dir`. `metrics.json` is written last and marks completion.
pub fn run_cell(
    env: &SweepEnv,
    spec: &StrategySpec,
    seed: u64,
    cell_dir: &Path,
) -> Result<RunResult, StrategyError> {
    fs::create_dir_all(cell_dir).map_err(io_err(cell_dir))?;
    let setup = match spec.kind {
        StrategyKind::SingleCentre => setup_single(env, spec, seed)?,
        StrategyKind::Combination => setup_combination(env, spec, seed)?,
        StrategyKind::TransferLearning | StrategyKind::FromScratch => {
            setup_finetune(env, spec, seed)?
        }
    };
    let ArmSetup { mut model, train_set, val_set, epochs, trained, pretrain, eval_centres, primary } =
        setup;

    let tcfg =
        env.train_cfg(epochs, derive_seed(seed, "train", 0), derive_seed(seed, "augment", 0));
    let mut train_report = train(&mut model, &train_set, &val_set, &tcfg)?;
    drop(train_set);
    drop(val_set);

    let ckpt_path = cell_dir.join("model.ckpt");
    save_checkpoint(&ckpt_path, &model.cfg.arch_tag(), &model.state_entries())?;
    train_report.checkpoint = Some(ckpt_path);

    let mut cross_centre = BTreeMap::new();
    let mut test_patients = BTreeMap::new();
    for centre in &eval_centres {
        let (report, patients) = eval_centre(env, &mut model, centre)?;
        cross_centre.insert(centre.clone(), report);
        test_patients.insert(centre.clone(), patients);
    }
    let metrics = cross_centre
        .get(&primary)
        .cloned()
        .ok_or_else(|| StrategyError::Invalid(format!("primary centre `{primary}` not evaluated")))?;

    let result = RunResult {
        schema_version: RUN_SCHEMA_VERSION,
        spec: spec.clone(),
        seed,
        primary_centre: primary,
        metrics,
        cross_centre,
        train_report,
        audit: SplitAudit { trained_patients: trained, test_patients },
        pretrain,
    };

    write_atomic(
        &cell_dir.join("confusion.csv"),
        result.metrics.confusion.to_csv().as_bytes(),
    )?;
    let report_json = serde_json::to_string_pretty(&result).expect("run result serialises");
    write_atomic(&cell_dir.join("report.json"), report_json.as_bytes())?;
    write_atomic(&cell_dir.join("metrics.json"), result.metrics.to_json().as_bytes())?;
    Ok(result)
}

/// Content hash naming a cell's directory. Seeds stay out (each seed is a
/// subdirectory); everything that changes the numbers goes in.
pub fn cell_hash(cfg: &ExperimentConfig, spec: &StrategySpec) -> String {
    let mut unseeded = spec.clone();
    unseeded.seeds.clear();
    let key = serde_json::json!({
        "spec": unseeded,
        "prep": cfg.prep,
        "model": cfg.model,
        "training": cfg.training,
        "distribution": cfg.sweep.distribution,
        "backfill": cfg.sweep.backfill,
        "pretrain_seed": cfg.sweep.pretrain_seed,
        "split_seed": cfg.sweep.split_seed,
    });
    hex_string(&sha256(key.to_string().as_bytes()))[..16].to_string()
}

fn cell_complete(dir: &Path) -> bool {
    ["metrics.json", "report.json", "confusion.csv"].iter().all(|f| dir.join(f).is_file())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CellStatus {
    Computed,
    Reused,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub spec_id: String,
    pub hash: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub status: CellStatus,
}

#[derive(Debug)]
pub struct SweepReport {
    pub results_root: PathBuf,
    pub outcomes: Vec<CellOutcome>,
    pub aggregate_csv: PathBuf,
    pub computed: usize,
    pub reused: usize,
    pub failed: usize,
}

struct Job<'c> {
    cell: &'c StrategySpec,
    hash: String,
    seed: u64,
    dir: PathBuf,
}

fn execute_job(env: &SweepEnv, job: &Job) -> CellStatus {
    if cell_complete(&job.dir) {
        return CellStatus::Reused;
    }
    // Clear leftovers from a partial or failed earlier attempt so the
    // directory never mixes two runs.
    for f in ["metrics.json", "report.json", "confusion.csv", "model.ckpt", "error.json"] {
        let _ = fs::remove_file(job.dir.join(f));
    }
    match run_cell(env, job.cell, job.seed, &job.dir) {
        Ok(_) => CellStatus::Computed,
        Err(e) => {
            let msg = e.to_string();
            let err = serde_json::json!({
                "spec_id": job.cell.id,
                "seed": job.seed,
                "error": msg,
            });
            let _ = fs::create_dir_all(&job.dir);
            let _ = fs::write(job.dir.join("error.json"), err.to_string());
            CellStatus::Failed(msg)
        }
    }
}

/// Run every `(cell, seed)` in the config. Pretraining checkpoints are
/// built first (serially, they are shared), then cells execute on a small
/// worker pool. Complete cells are reused; failed cells are recorded and
/// the sweep carries on.
pub fn run_sweep(env: &SweepEnv) -> Result<SweepReport, StrategyError> {
    let cells = expand_cells(env.cfg);
    if cells.is_empty() {
        return Err(StrategyError::Invalid("sweep expands to no cells".into()));
    }

    let mut pretrains: BTreeSet<(String, usize)> = BTreeSet::new();
    for cell in &cells {
        if cell.kind == StrategyKind::TransferLearning {
            let source = require(cell.source_centre.as_ref(), "source", cell.kind)?;
            pretrains.insert((source.clone(), cell.n_source));
        }
    }
    for (source, n) in &pretrains {
        ensure_pretrain(env, source, *n)?;
    }

    let mut jobs: Vec<Job> = Vec::new();
    for cell in &cells {
        let hash = cell_hash(env.cfg, cell);
        let spec_dir = env.results_root.join(&hash);
        fs::create_dir_all(&spec_dir).map_err(io_err(&spec_dir))?;
        let spec_json = serde_json::to_string_pretty(cell).expect("cell serialises");
        write_atomic(&spec_dir.join("spec.json"), spec_json.as_bytes())?;
        for &seed in &cell.seeds {
            jobs.push(Job {
                cell,
                hash: hash.clone(),
                seed,
                dir: spec_dir.join(seed.to_string()),
            });
        }
    }

    let statuses: Mutex<Vec<Option<CellStatus>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = env.cfg.workers.max(1).min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let status = execute_job(env, &jobs[i]);
                statuses.lock().unwrap()[i] = Some(status);
            });
        }
    });

    let statuses = statuses.into_inner().unwrap();
    let mut outcomes: Vec<CellOutcome> = jobs
        .iter()
        .zip(statuses)
        .map(|(job, status)| CellOutcome {
            spec_id: job.cell.id.clone(),
            hash: job.hash.clone(),
            seed: job.seed,
            dir: job.dir.clone(),
            status: status.expect("every job ran"),
        })
        .collect();
    outcomes.sort_by(|a, b| (&a.spec_id, a.seed).cmp(&(&b.spec_id, b.seed)));

    let aggregate_csv = write_aggregate(env, &outcomes)?;
    let computed = outcomes.iter().filter(|o| o.status == CellStatus::Computed).count();
    let reused = outcomes.iter().filter(|o| o.status == CellStatus::Reused).count();
    let failed = outcomes.len() - computed - reused;
    Ok(SweepReport {
        results_root: env.results_root.clone(),
        outcomes,
        aggregate_csv,
        computed,
        reused,
        failed,
    })
}

const AGGREGATE_HEADER: &str = "spec_id,kind,source,target,n_source,p_patients,seed,eval_centre,n_samples,accuracy,macro_auc,best_epoch,wall_seconds_per_epoch,trainable_params,status\n";

/// One CSV row per cell x seed, carrying the primary centre's numbers,
/// regenerated from the result files so downstream plots never recompute
/// metrics. With `merge_aggregate` set, rows for cells outside this
/// invocation survive from the previous file.
fn write_aggregate(env: &SweepEnv, outcomes: &[CellOutcome]) -> Result<PathBuf, StrategyError> {
    let path = env.results_root.join("aggregate.csv");
    let mut rows: Vec<(String, u64, String)> = Vec::new();
    for o in outcomes {
        if let CellStatus::Failed(_) = o.status {
            let line = format!("{},,,,,,{},,,,,,,failed\n", o.spec_id, o.seed);
            rows.push((o.spec_id.clone(), o.seed, line));
            continue;
        }
        let report_path = o.dir.join("report.json");
        let text = fs::read_to_string(&report_path).map_err(io_err(&report_path))?;
        let result: RunResult = serde_json::from_str(&text).map_err(|e| {
            StrategyError::Invalid(format!("corrupt report {}: {e}", report_path.display()))
        })?;
        let spec = &result.spec;
        // Per-centre detail for single-centre runs lives in report.json and
        // in the plot CSVs.
        let report = &result.metrics;
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{:.3},{},ok\n",
            spec.id,
            kind_str(spec.kind),
            spec.source_centre.as_deref().unwrap_or(""),
            spec.target_centre.as_deref().unwrap_or(""),
            spec.n_source,
            spec.p_target_patients.map_or(String::new(), |p| p.to_string()),
            result.seed,
            result.primary_centre,
            report.n_samples,
            report.accuracy,
            report.macro_auc,
            result.train_report.best_epoch,
            result.train_report.wall_seconds_per_epoch,
            result.train_report.trainable_params,
        );
        rows.push((spec.id.clone(), result.seed, line));
    }
    if env.merge_aggregate {
        if let Ok(existing) = fs::read_to_string(&path) {
            let mut lines = existing.lines();
            // A header mismatch means the file predates the current schema;
            // rebuilding from this invocation alone is the safe fallback.
            if lines.next() == Some(AGGREGATE_HEADER.trim_end()) {
                for line in lines {
                    let spec_id = line.split(',').next().unwrap_or("").to_string();
                    let seed: u64 = line
                        .split(',')
                        .nth(6)
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(u64::MAX);
                    let fresh = rows.iter().any(|(id, s, _)| *id == spec_id && *s == seed);
                    if !fresh {
                        rows.push((spec_id, seed, format!("{line}\n")));
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut out = String::from(AGGREGATE_HEADER);
    for (_, _, line) in &rows {
        out.push_str(line);
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use tempfile::TempDir;

    fn tiny_config(out: &Path, specs: &str) -> ExperimentConfig {
        let text = format!(
            r#"
name = "unit"
out_dir = "{}"
workers = 1

[prep]
height = 16
width = 16

[training]
batch_size = 4
max_epochs = 2
pretrain_epochs = 2
finetune_epochs = 2
scratch_epoch_factor = 2
max_val_images = 10

[[centres]]
id = "src"
[centres.synth]
seed = 11
num_patients = 6
images_per_patient_per_class = 1
image_size = 64

[[centres]]
id = "tgt"
[centres.synth]
seed = 22
num_patients = 5
images_per_patient_per_class = 1
image_size = 64
[centres.synth.shift]
gamma = 1.3
noise_sigma = 0.1

[sweep]
seeds = [1]
pretrain_seed = 900
distribution = "uniform"

{specs}
"#,
            out.display()
        );
        ExperimentConfig::from_toml_str(&text).expect("tiny config parses")
    }

    const ALL_ARMS: &str = r#"
[[sweep.specs]]
id = "solo"
kind = "single_centre"
source = "src"
n_grid = [5]

[[sweep.specs]]
id = "mix"
kind = "combination"
source = "src"
target = "tgt"
n_grid = [0]

[[sweep.specs]]
id = "tl"
kind = "transfer_learning"
source = "src"
target = "tgt"
n_grid = [5]
p_grid = [2]
freeze_k = 2

[[sweep.specs]]
id = "cold"
kind = "from_scratch"
target = "tgt"
p_grid = [2]
"#;

    #[test]
    fn expansion_covers_every_grid_point() {
        let tmp = TempDir::new().unwrap();
        let specs = r#"
[[sweep.specs]]
id = "solo"
kind = "single_centre"
source = "src"
n_grid = [5, 10]

[[sweep.specs]]
id = "tl"
kind = "transfer_learning"
source = "src"
target = "tgt"
n_grid = [0, 5]
p_grid = [1, 2]

[[sweep.specs]]
id = "cold"
kind = "from_scratch"
target = "tgt"
p_grid = [1, 2]
"#;
        let cfg = tiny_config(tmp.path(), specs);
        let cells = expand_cells(&cfg);
        assert_eq!(cells.len(), 2 + 4 + 2);
        let ids: Vec<&str> = cells.iter().map(|c| c.id.as_str()).collect();
        assert!(ids.contains(&"solo-n10"));
        assert!(ids.contains(&"tl-n0-p2"));
        assert!(ids.contains(&"cold-p1"));
        assert!(cells.iter().all(|c| c.seeds == vec![1]));
        let tl0 = cells.iter().find(|c| c.id == "tl-n0-p1").unwrap();
        assert_eq!(tl0.n_source, 0);
        assert_eq!(tl0.p_target_patients, Some(1));
    }

    fn read_result(dir: &Path) -> RunResult {
        let text = fs::read_to_string(dir.join("report.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    #[test]
    fn sweep_runs_resumes_and_stays_deterministic() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(&tmp.path().join("a"), ALL_ARMS);
        let env = SweepEnv::new(&cfg).unwrap();
        let report = run_sweep(&env).unwrap();
        assert_eq!(report.outcomes.len(), 4);
        assert_eq!(report.computed, 4);
        assert_eq!(report.failed, 0);
        assert!(report.aggregate_csv.is_file());
        let agg = fs::read_to_string(&report.aggregate_csv).unwrap();
        assert_eq!(
            agg.lines().count(),
            1 + report.outcomes.len(),
            "one aggregate row per cell plus the header"
        );

        let mut metrics_bytes = BTreeMap::new();
        for o in &report.outcomes {
            assert!(cell_complete(&o.dir), "{} incomplete", o.spec_id);
            assert!(o.dir.join("model.ckpt").is_file());
            assert!(o.dir.parent().unwrap().join("spec.json").is_file());
            metrics_bytes.insert(o.spec_id.clone(), fs::read(o.dir.join("metrics.json")).unwrap());

            // No patient may sit on both sides of any evaluation.
            let result = read_result(&o.dir);
            for (centre, test) in &result.audit.test_patients {
                let overlap: Vec<_> =
                    result.audit.trained_patients.intersection(test).collect();
                assert!(overlap.is_empty(), "{}: {centre} leaked {overlap:?}", o.spec_id);
            }
        }

        let solo = report.outcomes.iter().find(|o| o.spec_id == "solo-n5").unwrap();
        let solo_result = read_result(&solo.dir);
        assert_eq!(solo_result.cross_centre.len(), 2, "single-centre evaluates every centre");
        assert_eq!(solo_result.primary_centre, "src");

        let tl = read_result(&report.outcomes.iter().find(|o| o.spec_id == "tl-n5-p2").unwrap().dir);
        let cold = read_result(&report.outcomes.iter().find(|o| o.spec_id == "cold-p2").unwrap().dir);
        let pre = tl.pretrain.as_ref().expect("transfer run records its checkpoint");
        assert_eq!(pre.source.as_deref(), Some("src"));
        assert_eq!(pre.n, 5);
        assert!(pre.checkpoint.is_file());
        assert!(cold.pretrain.is_none());
        // Matched baseline: identical target patients under the same seed.
        let tgt_only = |r: &RunResult| -> BTreeSet<String> {
            r.audit.trained_patients.iter().filter(|t| t.starts_with("tgt/")).cloned().collect()
        };
        assert_eq!(tgt_only(&tl), tgt_only(&cold));
        assert_eq!(tgt_only(&tl).len(), 2);
        // Transfer trains a strict subset of the parameters.
        assert!(tl.train_report.trainable_params < cold.train_report.trainable_params);
        // The scratch baseline gets the longer epoch budget.
        assert_eq!(cold.train_report.history.len(), 4);
        assert_eq!(tl.train_report.history.len(), 2);

        let mix = read_result(&report.outcomes.iter().find(|o| o.spec_id == "mix-n0").unwrap().dir);
        assert_eq!(mix.cross_centre.len(), 1);
        assert!(mix.audit.trained_patients.iter().all(|t| t.starts_with("tgt/")));

        // Second pass reuses everything byte-for-byte.
        let again = run_sweep(&env).unwrap();
        assert_eq!(again.reused, 4);
        assert_eq!(again.computed, 0);
        for o in &again.outcomes {
            assert_eq!(
                fs::read(o.dir.join("metrics.json")).unwrap(),
                metrics_bytes[&o.spec_id],
                "{} changed on resume",
                o.spec_id
            );
        }

        // Deleting one cell's completion marker recomputes only that cell.
        let victim = again.outcomes.iter().find(|o| o.spec_id == "cold-p2").unwrap();
        fs::remove_file(victim.dir.join("metrics.json")).unwrap();
        let third = run_sweep(&env).unwrap();
        for o in &third.outcomes {
            let expect =
                if o.spec_id == "cold-p2" { CellStatus::Computed } else { CellStatus::Reused };
            assert_eq!(o.status, expect, "{}", o.spec_id);
            assert_eq!(
                fs::read(o.dir.join("metrics.json")).unwrap(),
                metrics_bytes[&o.spec_id],
                "{} not reproduced",
                o.spec_id
            );
        }

        // A fresh tree (regenerated images, new caches) reproduces the
        // same metrics bytes.
        let cfg_b = tiny_config(&tmp.path().join("b"), ALL_ARMS);
        let env_b = SweepEnv::new(&cfg_b).unwrap();
        let fresh = run_sweep(&env_b).unwrap();
        assert_eq!(fresh.computed, 4);
        for o in &fresh.outcomes {
            assert_eq!(
                fs::read(o.dir.join("metrics.json")).unwrap(),
                metrics_bytes[&o.spec_id],
                "{} differs across trees",
                o.spec_id
            );
        }
    }

    #[test]
    fn narrowed_rerun_merges_into_existing_aggregate() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path(), ALL_ARMS);
        let env = SweepEnv::new(&cfg).unwrap();
        let full = run_sweep(&env).unwrap();
        assert_eq!(full.computed, 4);

        let mut narrowed = tiny_config(tmp.path(), ALL_ARMS);
        narrowed.sweep.specs.retain(|s| s.id == "tl");
        let mut env_run = SweepEnv::new(&narrowed).unwrap();
        env_run.merge_aggregate = true;
        let rerun = run_sweep(&env_run).unwrap();
        assert_eq!(rerun.reused, 1);

        let agg = fs::read_to_string(&rerun.aggregate_csv).unwrap();
        let lines: Vec<&str> = agg.lines().collect();
        assert_eq!(lines.len(), 1 + 4, "merge keeps the other cells' rows");
        for id in ["cold-p2", "mix-n0", "solo-n5", "tl-n5-p2"] {
            assert!(lines.iter().any(|l| l.starts_with(&format!("{id},"))), "missing {id}");
        }
        let mut body = lines[1..].to_vec();
        body.sort();
        assert_eq!(body, lines[1..].to_vec(), "rows stay sorted after a merge");

        // Without the flag the file is rebuilt from this invocation alone.
        let env_sweep = SweepEnv::new(&narrowed).unwrap();
        let swept = run_sweep(&env_sweep).unwrap();
        let agg = fs::read_to_string(&swept.aggregate_csv).unwrap();
        assert_eq!(agg.lines().count(), 1 + 1, "a sweep owns the whole file");
    }

    #[test]
    fn bad_requests_are_rejected() {
        let tmp = TempDir::new().unwrap();
        let cfg = tiny_config(tmp.path(), ALL_ARMS);
        let env = SweepEnv::new(&cfg).unwrap();

        // tgt has 5 patients -> 3 in the train+val pool -> p <= 2.
        let mut tl = expand_cells(&cfg).into_iter().find(|c| c.id == "tl-n5-p2").unwrap();
        tl.p_target_patients = Some(3);
        let err = run_cell(&env, &tl, 1, &tmp.path().join("cell-p")).unwrap_err();
        match err {
            StrategyError::PTooLarge { p: 3, available: 2 } => {}
            other => panic!("expected PTooLarge, got {other}"),
        }

        // src has one training patient with five usable images.
        let mut solo = expand_cells(&cfg).into_iter().find(|c| c.id == "solo-n5").unwrap();
        solo.n_source = 999;
        let err = run_cell(&env, &solo, 1, &tmp.path().join("cell-n")).unwrap_err();
        match err {
            StrategyError::InsufficientSourceSamples { need: 999, .. } => {}
            other => panic!("expected InsufficientSourceSamples, got {other}"),
        }
    }

    #[test]
    fn generic_pretrain_feeds_transfer_at_n_zero() {
        let tmp = TempDir::new().unwrap();
        let specs = r#"
[[sweep.specs]]
id = "tl"
kind = "transfer_learning"
source = "src"
target = "tgt"
n_grid = [0]
p_grid = [2]
freeze_k = 2
"#;
        let cfg = tiny_config(tmp.path(), specs);
        let env = SweepEnv::new(&cfg).unwrap();
        let info = ensure_pretrain(&env, "src", 0).unwrap();
        assert_eq!(info.source, None);
        assert_eq!(info.num_classes, GENERIC_CLASSES);
        assert!(info.train_patients.is_empty());
        assert!(info.checkpoint.is_file());

        // Cached on second ask: same fingerprint, no rebuild.
        let before = fs::read(&info.checkpoint).unwrap();
        let again = ensure_pretrain(&env, "src", 0).unwrap();
        assert_eq!(fs::read(&again.checkpoint).unwrap(), before);

        let cell = expand_cells(&cfg).into_iter().next().unwrap();
        let dir = tmp.path().join("cell");
        let result = run_cell(&env, &cell, 1, &dir).unwrap();
        let pre = result.pretrain.unwrap();
        assert_eq!(pre.source, None);
        assert_eq!(pre.n, 0);
        assert_eq!(result.metrics.n_samples, 10, "two test patients x five classes");
    }
}
