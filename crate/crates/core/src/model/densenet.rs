//! Densely connected CNN family with explicit parameter groups.
//!
//! A parameter group is one conv-or-linear unit together with its adjacent
//! norm parameters, in topological order: the stem (conv + following BN),
//! two groups per dense layer (pre-activation BN + 1x1 bottleneck conv,
//! then BN + 3x3 growth conv), one per transition (BN + 1x1 conv, with
//! the 2x2 average pool after it), and the head (final BN + linear).
//! Freezing always takes a suffix: "train the last k groups". The
//! backward pass stops below the earliest trainable group. BN running
//! statistics update for every layer in training mode regardless of
//! freezing; the freeze contract covers learnable parameters only.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checkpoint::{CheckpointError, LoadReport, StateEntry};
use super::layers::{
    avgpool2, avgpool2_backward, global_avg_pool, global_avg_pool_backward, maxpool,
    maxpool_backward, relu, relu_backward, BatchNorm, BnCache, Conv2d, Linear, Mode,
};
use super::tensor::Tensor4;
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot train last {k} groups: model has {groups}")]
    KOutOfRange { k: usize, groups: usize },
}

/// Stem flavour: `Deep` is the classic 7x7 stride-2 conv with a 3x3
/// stride-2 max pool; `Compact` (3x3 conv, 2x2 pool) suits small inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    Deep,
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub growth: usize,
    pub blocks: Vec<usize>,
    pub init_features: usize,
    pub bn_size: usize,
    pub compression: f64,
    pub num_classes: usize,
    pub stem: Stem,
}

impl DenseNetConfig {
    /// The 169-layer configuration (growth 32, blocks 6/12/32/32) on
    /// single-channel input.
    pub fn dense169(num_classes: usize) -> Self {
        Self {
            growth: 32,
            blocks: vec![6, 12, 32, 32],
            init_features: 64,
            bn_size: 4,
            compression: 0.5,
            num_classes,
            stem: Stem::Deep,
        }
    }

    /// Small sibling for desk-scale experiments: same family, two blocks
    /// of two layers, growth 8.
    pub fn desk_small(num_classes: usize) -> Self {
        Self {
            growth: 8,
            blocks: vec![2, 2],
            init_features: 16,
            bn_size: 2,
            compression: 0.5,
            num_classes,
            stem: Stem::Compact,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.growth == 0 || self.init_features == 0 || self.bn_size == 0 {
            return Err("growth, init_features and bn_size must be positive".into());
        }
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err("blocks must be a non-empty list of positive layer counts".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(format!("compression {} not in (0, 1]", self.compression));
        }
        if self.num_classes < 2 {
            return Err("need at least two classes".into());
        }
        Ok(())
    }

    pub fn arch_tag(&self) -> String {
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        format!(
            "dense-g{}-b{}-i{}-bn{}-x{}-c{}-{}",
            self.growth,
            blocks.join("."),
            self.init_features,
            self.bn_size,
            self.compression,
            self.num_classes,
            match self.stem {
                Stem::Deep => "deep",
                Stem::Compact => "compact",
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Stem,
    Bottleneck,
    GrowthConv,
    Transition,
    Head,
}

pub struct ParamGroup {
    pub name: String,
    pub kind: GroupKind,
    pub bn: BatchNorm,
    pub conv: Option<Conv2d>,
    pub linear: Option<Linear>,
}

impl ParamGroup {
    /// Visit learnable parameters then buffers, in a fixed order.
    fn visit<F: FnMut(&str, &[f32], Vec<usize>, bool)>(&self, f: &mut F) {
        if let Some(conv) = &self.conv {
            f("conv_weight", &conv.weight, vec![conv.out_c, conv.in_c, conv.kh, conv.kw], false);
        }
        f("bn_gamma", &self.bn.gamma, vec![self.bn.channels()], false);
        f("bn_beta", &self.bn.beta, vec![self.bn.channels()], false);
        if let Some(lin) = &self.linear {
            f("fc_weight", &lin.weight, vec![lin.out_f, lin.in_f], false);
            f("fc_bias", &lin.bias, vec![lin.out_f], false);
        }
        f("bn_running_mean", &self.bn.running_mean, vec![self.bn.channels()], true);
        f("bn_running_var", &self.bn.running_var, vec![self.bn.channels()], true);
    }

    fn param_slice_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        match name {
            "conv_weight" => self.conv.as_mut().map(|c| c.weight.as_mut_slice()),
            "bn_gamma" => Some(&mut self.bn.gamma),
            "bn_beta" => Some(&mut self.bn.beta),
            "fc_weight" => self.linear.as_mut().map(|l| l.weight.as_mut_slice()),
            "fc_bias" => self.linear.as_mut().map(|l| l.bias.as_mut_slice()),
            "bn_running_mean" => Some(&mut self.bn.running_mean),
            "bn_running_var" => Some(&mut self.bn.running_var),
            _ => None,
        }
    }
}

/// Per-parameter gradients keyed `group/param`.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    pub by_param: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    fn insert(&mut self, group: &str, param: &str, grad: Vec<f64>) {
        self.by_param.insert(format!("{group}/{param}"), grad);
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.by_param.get(key).map(|v| v.as_slice())
    }
}

enum TapeEntry {
    Stem {
        x: Tensor4,
        bn: BnCache,
        relu_out: Tensor4,
        pool_argmax: Vec<usize>,
        pool_in_shape: (usize, usize, usize, usize),
    },
    PreAct {
        bn: BnCache,
        relu_out: Tensor4,
        /// Feature channels before this growth conv's concat (growth
        /// groups only; zero for bottlenecks).
        prev_channels: usize,
    },
    Transition {
        bn: BnCache,
        relu_out: Tensor4,
        pool_in_hw: (usize, usize),
    },
    Head {
        bn: BnCache,
        relu_out: Tensor4,
        feat: Vec<f64>,
    },
}

/// Activation tape from one forward pass, aligned with the group list.
pub struct Tape {
    entries: Vec<TapeEntry>,
    n: usize,
}

pub struct DenseNet {
    pub cfg: DenseNetConfig,
    groups: Vec<ParamGroup>,
    /// Channels entering the head.
    pub final_features: usize,
    trainable_from: usize,
}

impl DenseNet {
    /// Build and initialise deterministically from `seed` (He init for
    /// convs, uniform head, unit/zero BN).
    pub fn new(cfg: DenseNetConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid model config");
        let mut rng = rng_for(seed);
        let mut groups = Vec::new();

        let (stem_conv_k, stem_conv_pad) = match cfg.stem {
            Stem::Deep => (7, 3),
            Stem::Compact => (3, 1),
        };
        let mut conv = Conv2d::new(cfg.init_features, 1, stem_conv_k, stem_conv_k, 2, stem_conv_pad);
        conv.init_kaiming(&mut rng);
        groups.push(ParamGroup {
            name: "stem".into(),
            kind: GroupKind::Stem,
            bn: BatchNorm::new(cfg.init_features),
            conv: Some(conv),
            linear: None,
        });

        let mut features = cfg.init_features;
        let bottleneck_width = cfg.bn_size * cfg.growth;
        for (b, &layers) in cfg.blocks.iter().enumerate() {
            for l in 0..layers {
                let mut conv1 = Conv2d::new(bottleneck_width, features, 1, 1, 1, 0);
                conv1.init_kaiming(&mut rng);
                groups.push(ParamGroup {
                    name: format!("block{}.layer{}.bottleneck", b + 1, l + 1),
                    kind: GroupKind::Bottleneck,
                    bn: BatchNorm::new(features),
                    conv: Some(conv1),
                    linear: None,
                });
                let mut conv2 = Conv2d::new(cfg.growth, bottleneck_width, 3, 3, 1, 1);
                conv2.init_kaiming(&mut rng);
                groups.push(ParamGroup {
                    name: format!("block{}.layer{}.growth", b + 1, l + 1),
                    kind: GroupKind::GrowthConv,
                    bn: BatchNorm::new(bottleneck_width),
                    conv: Some(conv2),
                    linear: None,
                });
                features += cfg.growth;
            }
            if b + 1 < cfg.blocks.len() {
                let out = (features as f64 * cfg.compression).floor() as usize;
                let mut tconv = Conv2d::new(out, features, 1, 1, 1, 0);
                tconv.init_kaiming(&mut rng);
                groups.push(ParamGroup {
                    name: format!("transition{}", b + 1),
                    kind: GroupKind::Transition,
                    bn: BatchNorm::new(features),
                    conv: Some(tconv),
                    linear: None,
                });
                features = out;
            }
        }

        let mut linear = Linear::new(cfg.num_classes, features);
        linear.init_uniform(&mut rng);
        groups.push(ParamGroup {
            name: "head".into(),
            kind: GroupKind::Head,
            bn: BatchNorm::new(features),
            conv: None,
            linear: Some(linear),
        });

        let trainable_from = 0;
        Self { cfg, groups, final_features: features, trainable_from }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    /// Learnable parameter count (buffers excluded).
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for g in &self.groups {
            g.visit(&mut |_, values, _, buffer| {
                if !buffer {
                    total += values.len();
                }
            });
        }
        total
    }

    /// Train only the last `k` parameter groups. `k == len` trains all,
    /// `k == 0` freezes everything (pure feature extractor).
    pub fn set_trainable_last(&mut self, k: usize) -> Result<(), ModelError> {
        if k > self.groups.len() {
            return Err(ModelError::KOutOfRange { k, groups: self.groups.len() });
        }
        self.trainable_from = self.groups.len() - k;
        Ok(())
    }

    pub fn trainable_from(&self) -> usize {
        self.trainable_from
    }

    pub fn trainable_group_names(&self) -> Vec<String> {
        self.groups[self.trainable_from..].iter().map(|g| g.name.clone()).collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        let mut total = 0;
        for g in &self.groups[self.trainable_from..] {
            g.visit(&mut |_, values, _, buffer| {
                if !buffer {
                    total += values.len();
                }
            });
        }
        total
    }

    /// Full state (parameters and buffers) in group order.
    pub fn state_entries(&self) -> Vec<StateEntry> {
        let mut entries = Vec::new();
        for g in &self.groups {
            g.visit(&mut |name, values, shape, buffer| {
                entries.push(StateEntry {
                    group: g.name.clone(),
                    name: name.to_string(),
                    shape,
                    buffer,
                    values: values.to_vec(),
                });
            });
        }
        entries
    }

    /// Load state entries by `(group, param)` name.
    ///
    /// Strict mode requires a perfect one-to-one match. Non-strict skips
    /// entries that are missing on either side or shape-incompatible
    /// (typically a head of a different width) and reports them.
    pub fn load_state(
        &mut self,
        entries: &[StateEntry],
        strict: bool,
    ) -> Result<LoadReport, CheckpointError> {
        let mut expected: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for g in &self.groups {
            g.visit(&mut |name, _, shape, _| {
                expected.insert((g.name.clone(), name.to_string()), shape);
            });
        }
        let mut report = LoadReport::default();
        let mut seen: Vec<(String, String)> = Vec::new();
        for e in entries {
            let key = (e.group.clone(), e.name.clone());
            match expected.get(&key) {
                None => report.file_only.push(format!("{}/{}", e.group, e.name)),
                Some(shape) if *shape != e.shape => {
                    if strict {
                        return Err(CheckpointError::ShapeConflict {
                            entry: format!("{}/{}", e.group, e.name),
                            expected: shape.clone(),
                            got: e.shape.clone(),
                        });
                    }
                    report.shape_conflicts.push(format!("{}/{}", e.group, e.name));
                    seen.push(key);
                }
                Some(_) => {
                    let group =
                        self.groups.iter_mut().find(|g| g.name == e.group).expect("group exists");
                    let slice = group.param_slice_mut(&e.name).expect("param exists");
                    slice.copy_from_slice(&e.values);
                    report.loaded.push(format!("{}/{}", e.group, e.name));
                    seen.push(key);
                }
            }
        }
        for key in expected.keys() {
            if !seen.contains(key) {
                report.model_only.push(format!("{}/{}", key.0, key.1));
            }
        }
        if strict && !(report.file_only.is_empty() && report.model_only.is_empty()) {
            return Err(CheckpointError::StateMismatch {
                file_only: report.file_only.len(),
                model_only: report.model_only.len(),
            });
        }
        Ok(report)
    }

    /// Mutable access to the learnable parameters of trainable groups, in
    /// group order, keyed `group/param`.
    pub fn visit_trainable_params_mut<F: FnMut(String, &mut [f32])>(&mut self, mut f: F) {
        for g in &mut self.groups[self.trainable_from..] {
            let names: Vec<String> = {
                let mut out = Vec::new();
                g.visit(&mut |name, _, _, buffer| {
                    if !buffer {
                        out.push(name.to_string());
                    }
                });
                out
            };
            let group_name = g.name.clone();
            for name in names {
                let slice = g.param_slice_mut(&name).expect("param exists");
                f(format!("{group_name}/{name}"), slice);
            }
        }
    }

    fn stem_pool(&self) -> (usize, usize, usize) {
        match self.cfg.stem {
            Stem::Deep => (3, 2, 1),
            Stem::Compact => (2, 2, 0),
        }
    }

    /// Forward pass; training mode optionally updates BN running stats.
    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> (Vec<f64>, Tape) {
        let n = x.n();
        let (pool_k, pool_s, pool_p) = self.stem_pool();
        let mut entries = Vec::with_capacity(self.groups.len());
        let mut features: Option<Tensor4> = None;
        let mut bottleneck_out: Option<Tensor4> = None;
        let mut logits = Vec::new();
        for group in &mut self.groups {
            match group.kind {
                GroupKind::Stem => {
                    let conv_out = group.conv.as_ref().unwrap().forward(x);
                    let (bn_out, bn) = group.bn.forward(&conv_out, mode);
                    let r = relu(&bn_out);
                    let (pooled, pool_argmax) = maxpool(&r, pool_k, pool_s, pool_p);
                    entries.push(TapeEntry::Stem {
                        x: x.clone(),
                        bn,
                        pool_argmax,
                        pool_in_shape: r.shape(),
                        relu_out: r,
                    });
                    features = Some(pooled);
                }
                GroupKind::Bottleneck => {
                    let fin = features.as_ref().unwrap();
                    let (bn_out, bn) = group.bn.forward(fin, mode);
                    let r = relu(&bn_out);
                    let out = group.conv.as_ref().unwrap().forward(&r);
                    entries.push(TapeEntry::PreAct { bn, relu_out: r, prev_channels: 0 });
                    bottleneck_out = Some(out);
                }
                GroupKind::GrowthConv => {
                    let t = bottleneck_out.take().unwrap();
                    let (bn_out, bn) = group.bn.forward(&t, mode);
                    let r = relu(&bn_out);
                    let g = group.conv.as_ref().unwrap().forward(&r);
                    let fin = features.take().unwrap();
                    entries.push(TapeEntry::PreAct { bn, relu_out: r, prev_channels: fin.c() });
                    features = Some(fin.concat_channels(&g));
                }
                GroupKind::Transition => {
                    let fin = features.take().unwrap();
                    let (bn_out, bn) = group.bn.forward(&fin, mode);
                    let r = relu(&bn_out);
                    let conv_out = group.conv.as_ref().unwrap().forward(&r);
                    let pooled = avgpool2(&conv_out);
                    entries.push(TapeEntry::Transition {
                        bn,
                        relu_out: r,
                        pool_in_hw: (conv_out.h(), conv_out.w()),
                    });
                    features = Some(pooled);
                }
                GroupKind::Head => {
                    let fin = features.take().unwrap();
                    let (bn_out, bn) = group.bn.forward(&fin, mode);
                    let r = relu(&bn_out);
                    let feat = global_avg_pool(&r);
                    logits = group.linear.as_ref().unwrap().forward(&feat, n);
                    entries.push(TapeEntry::Head { bn, relu_out: r, feat });
                }
            }
        }
        (logits, Tape { entries, n })
    }

    /// Backward pass from the logit gradient. Only trainable groups get
    /// parameter gradients; the walk stops below the earliest trainable
    /// group, so a frozen prefix costs nothing.
    pub fn backward(&self, tape: &Tape, grad_logits: &[f64]) -> Gradients {
        let mut grads = Gradients::default();
        let stop = self.trainable_from;
        let mut grad_features: Option<Tensor4> = None;
        let mut grad_bottleneck: Option<Tensor4> = None;
        for i in (stop..self.groups.len()).rev() {
            let group = &self.groups[i];
            let entry = &tape.entries[i];
            match (&group.kind, entry) {
                (GroupKind::Head, TapeEntry::Head { bn, relu_out, feat }) => {
                    let lin = group.linear.as_ref().unwrap();
                    let (grad_feat, gw, gb) = lin.backward(feat, tape.n, grad_logits);
                    grads.insert(&group.name, "fc_weight", gw);
                    grads.insert(&group.name, "fc_bias", gb);
                    let g = global_avg_pool_backward(relu_out.shape(), &grad_feat);
                    let g = relu_backward(relu_out, &g);
                    let (gx, ggamma, gbeta) = group.bn.backward(bn, &g);
                    grads.insert(&group.name, "bn_gamma", ggamma);
                    grads.insert(&group.name, "bn_beta", gbeta);
                    grad_features = Some(gx);
                }
                (GroupKind::Transition, TapeEntry::Transition { bn, relu_out, pool_in_hw }) => {
                    let gf = grad_features.take().unwrap();
                    let g = avgpool2_backward(pool_in_hw.0, pool_in_hw.1, &gf);
                    let conv = group.conv.as_ref().unwrap();
                    let (gconv_in, gw) = conv.backward(relu_out, &g);
                    grads.insert(&group.name, "conv_weight", gw);
                    let g = relu_backward(relu_out, &gconv_in);
                    let (gx, ggamma, gbeta) = group.bn.backward(bn, &g);
                    grads.insert(&group.name, "bn_gamma", ggamma);
                    grads.insert(&group.name, "bn_beta", gbeta);
                    grad_features = Some(gx);
                }
                (GroupKind::GrowthConv, TapeEntry::PreAct { bn, relu_out, prev_channels }) => {
                    let gf = grad_features.take().unwrap();
                    let (gprev, ggrowth) = gf.split_channels(*prev_channels);
                    let conv = group.conv.as_ref().unwrap();
                    let (gconv_in, gw) = conv.backward(relu_out, &ggrowth);
                    grads.insert(&group.name, "conv_weight", gw);
                    let g = relu_backward(relu_out, &gconv_in);
                    let (gx, ggamma, gbeta) = group.bn.backward(bn, &g);
                    grads.insert(&group.name, "bn_gamma", ggamma);
                    grads.insert(&group.name, "bn_beta", gbeta);
                    grad_features = Some(gprev);
                    grad_bottleneck = Some(gx);
                }
                (GroupKind::Bottleneck, TapeEntry::PreAct { bn, relu_out, .. }) => {
                    let gt = grad_bottleneck.take().unwrap();
                    let conv = group.conv.as_ref().unwrap();
                    let (gconv_in, gw) = conv.backward(relu_out, &gt);
                    grads.insert(&group.name, "conv_weight", gw);
                    let g = relu_backward(relu_out, &gconv_in);
                    let (gx, ggamma, gbeta) = group.bn.backward(bn, &g);
                    grads.insert(&group.name, "bn_gamma", ggamma);
                    grads.insert(&group.name, "bn_beta", gbeta);
                    // Skip connection: add into the running feature grad.
                    let gf = grad_features.as_mut().unwrap();
                    for (a, b) in gf.data_mut().iter_mut().zip(gx.data()) {
                        *a += b;
                    }
                }
                (GroupKind::Stem, TapeEntry::Stem { x, bn, relu_out, pool_argmax, pool_in_shape }) => {
                    let gf = grad_features.take().unwrap();
                    let g = maxpool_backward(*pool_in_shape, pool_argmax, &gf);
                    let g = relu_backward(relu_out, &g);
                    let (gconv_out, ggamma, gbeta) = group.bn.backward(bn, &g);
                    grads.insert(&group.name, "bn_gamma", ggamma);
                    grads.insert(&group.name, "bn_beta", gbeta);
                    let conv = group.conv.as_ref().unwrap();
                    let (_, gw) = conv.backward(x, &gconv_out);
                    grads.insert(&group.name, "conv_weight", gw);
                }
                _ => unreachable!("tape out of sync with groups"),
            }
        }
        grads
    }
}

/// Deterministic model construction helper used across the crate.
pub fn build_model(cfg: &DenseNetConfig, seed: u64) -> DenseNet {
    DenseNet::new(cfg.clone(), seed)
}

/// RNG used for model init; exposed so tests can reproduce draws.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed)
}
