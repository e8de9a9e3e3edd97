//! Training loop: Adam, per-epoch validation, best-checkpoint selection
//! and deterministic batching, plus the evaluation pass that produces
//! score matrices for the metrics layer.
//!
//! Replays are exact: batch order comes from the config seed, every
//! augmentation has its own substream, and all accumulators are f64.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_image, AugmentConfig};
use crate::metrics::ScoreMatrix;
use crate::model::layers::softmax_cross_entropy;
use crate::model::{DenseNet, Gradients, Mode, StateEntry, Tensor4};
use crate::raster::Raster;
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update on a single scalar; `t` is the 1-based step count.
/// Factored out so the optimiser can be checked against the closed form.
pub fn adam_scalar_update(
    p: f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    t: u64,
    cfg: &AdamConfig,
) -> f64 {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - cfg.beta2.powi(t as i32));
    p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with f64 moment state keyed by parameter name. Parameters store
/// as f32; the update runs in f64 and quantises on write-back.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, slots: BTreeMap::new() }
    }

    pub fn step(&mut self, model: &mut DenseNet, grads: &Gradients) {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let slots = &mut self.slots;
        model.visit_trainable_params_mut(|key, params| {
            let Some(g) = grads.get(&key) else {
                return;
            };
            let slot = slots
                .entry(key)
                .or_insert_with(|| AdamSlot { m: vec![0.0; params.len()], v: vec![0.0; params.len()] });
            for i in 0..params.len() {
                let updated =
                    adam_scalar_update(params[i] as f64, g[i], &mut slot.m[i], &mut slot.v[i], t, &cfg);
                params[i] = updated as f32;
            }
        });
    }
}

/// One labelled training or evaluation image.
#[derive(Debug, Clone)]
pub struct Sample {
    pub raster: Raster,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 24,
            optimizer: AdamConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Index into `history` of the checkpoint the model was restored to.
    pub best_epoch: usize,
    pub batches_per_epoch: usize,
    pub trainable_groups: Vec<String>,
    pub trainable_params: usize,
    pub wall_seconds: f64,
    pub wall_seconds_per_epoch: f64,
    pub peak_memory_bytes: u64,
    /// Where the winning weights were saved, when the caller persisted
    /// them.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize, partial: Vec<EpochStats> },
}

/// Pick the best epoch: highest validation accuracy, ties broken by lower
/// validation loss, then by the earlier epoch.
pub fn select_checkpoint(val_acc: &[f64], val_loss: &[f64]) -> usize {
    assert_eq!(val_acc.len(), val_loss.len());
    assert!(!val_acc.is_empty());
    let mut best = 0;
    for i in 1..val_acc.len() {
        let better_acc = val_acc[i] > val_acc[best];
        let tie_acc = val_acc[i] == val_acc[best];
        if better_acc || (tie_acc && val_loss[i] < val_loss[best]) {
            best = i;
        }
    }
    best
}

/// The same rule applied to a recorded history, so a report's
/// `best_epoch` can be re-derived after the fact.
pub fn select_from_history(history: &[EpochStats]) -> usize {
    let accs: Vec<f64> = history.iter().map(|e| e.val_acc).collect();
    let losses: Vec<f64> = history.iter().map(|e| e.val_loss).collect();
    select_checkpoint(&accs, &losses)
}

/// Peak resident set size of this process, read from the kernel's
/// high-water mark; 0 where unavailable.
pub fn peak_rss_bytes() -> u64 {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return 0;
    };
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: u64 = rest
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse()
                .unwrap_or(0);
            return kb * 1024;
        }
    }
    0
}

fn batch_tensor(
    samples: &[&Sample],
    augment: Option<(&AugmentConfig, u64)>,
) -> (Tensor4, Vec<usize>) {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    match augment {
        Some((cfg, batch_index)) => {
            let augmented: Vec<Raster> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| augment_image(&s.raster, cfg, batch_index, i as u64))
                .collect();
            let refs: Vec<&Raster> = augmented.iter().collect();
            (Tensor4::from_rasters(&refs), labels)
        }
        None => {
            let refs: Vec<&Raster> = samples.iter().map(|s| &s.raster).collect();
            (Tensor4::from_rasters(&refs), labels)
        }
    }
}

fn count_hits(probs: &[f64], n: usize, k: usize, labels: &[usize]) -> usize {
    (0..n)
        .filter(|&i| {
            let row = &probs[i * k..(i + 1) * k];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            pred == labels[i]
        })
        .count()
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub loss: f64,
    pub accuracy: f64,
    pub scores: ScoreMatrix,
    pub labels: Vec<usize>,
}

/// Evaluate without augmentation; never mutates parameters or running
/// statistics.
pub fn evaluate(model: &mut DenseNet, samples: &[Sample], batch_size: usize) -> EvalOutcome {
    assert!(!samples.is_empty(), "cannot evaluate an empty set");
    let k = model.cfg.num_classes;
    let mut all_probs = Vec::with_capacity(samples.len() * k);
    let mut all_labels = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (x, labels) = batch_tensor(chunk, None);
        let (logits, _) = model.forward(&x, Mode::Eval);
        let (loss, _, probs) = softmax_cross_entropy(&logits, chunk.len(), k, &labels);
        loss_sum += loss * chunk.len() as f64;
        all_probs.extend(probs);
        all_labels.extend(labels);
    }
    let scores = ScoreMatrix::new(k, all_probs).expect("probs form rows");
    let hits = (0..scores.n_samples())
        .filter(|&i| scores.argmax_row(i) == all_labels[i])
        .count();
    EvalOutcome {
        loss: loss_sum / samples.len() as f64,
        accuracy: hits as f64 / samples.len() as f64,
        scores,
        labels: all_labels,
    }
}

pub fn accuracy(scores: &ScoreMatrix, labels: &[usize]) -> f64 {
    let hits = (0..scores.n_samples())
        .filter(|&i| scores.argmax_row(i) == labels[i])
        .count();
    hits as f64 / labels.len() as f64
}

/// Train `model` on `train`, validating on `val` each epoch, and restore
/// the best checkpoint before returning.
///
/// Batches of a single sample are dropped (batch statistics need at least
/// two); only the final chunk of an epoch can be that short.
pub fn train(
    model: &mut DenseNet,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Invalid("train and validation sets must be non-empty".into()));
    }
    if cfg.batch_size < 2 {
        return Err(TrainError::Invalid("batch_size must be at least 2".into()));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::Invalid("need at least one epoch".into()));
    }
    let k = model.cfg.num_classes;
    if let Some(bad) = train_set.iter().chain(val_set).find(|s| s.label >= k) {
        return Err(TrainError::Invalid(format!("label {} out of range for {k} classes", bad.label)));
    }
    cfg.augment.validate().map_err(TrainError::Invalid)?;

    let start = Instant::now();
    let mut adam = Adam::new(cfg.optimizer);
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best_state: Option<Vec<StateEntry>> = None;
    let mut best_idx = 0;
    let mut batches_per_epoch = 0;

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = rng_for(derive_seed(cfg.seed, "train/epoch", epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut hit_sum = 0usize;
        let mut seen = 0usize;
        let mut batch_in_epoch = 0u64;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let global_batch =
                epoch as u64 * order.len().div_ceil(cfg.batch_size) as u64 + batch_in_epoch;
            let (x, labels) = batch_tensor(&samples, Some((&cfg.augment, global_batch)));
            let (logits, tape) = model.forward(&x, Mode::Train { update_stats: true });
            let (loss, grad_logits, probs) = softmax_cross_entropy(&logits, chunk.len(), k, &labels);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, partial: history });
            }
            let grads = model.backward(&tape, &grad_logits);
            adam.step(model, &grads);
            loss_sum += loss * chunk.len() as f64;
            hit_sum += count_hits(&probs, chunk.len(), k, &labels);
            seen += chunk.len();
            batch_in_epoch += 1;
        }
        if seen == 0 {
            return Err(TrainError::Invalid(
                "no usable batches: training set too small for batch size".into(),
            ));
        }
        batches_per_epoch = batch_in_epoch as usize;

        let val = evaluate(model, val_set, cfg.batch_size);
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: hit_sum as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });

        let now_best = select_from_history(&history);
        if now_best == epoch || best_state.is_none() {
            best_idx = now_best;
            best_state = Some(model.state_entries());
        }
    }

    let entries = best_state.expect("at least one epoch ran");
    model.load_state(&entries, true).map_err(|e| TrainError::Invalid(e.to_string()))?;

    let wall = start.elapsed().as_secs_f64();
    Ok(TrainReport {
        best_epoch: best_idx,
        batches_per_epoch,
        trainable_groups: model.trainable_group_names(),
        trainable_params: model.trainable_param_count(),
        wall_seconds: wall,
        wall_seconds_per_epoch: wall / history.len() as f64,
        peak_memory_bytes: peak_rss_bytes(),
        checkpoint: None,
        history,
    })
}
