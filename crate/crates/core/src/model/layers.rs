//! Layer primitives: convolution, batch norm, ReLU, pooling, linear head
//! and the softmax cross-entropy loss. Forward passes cache exactly what
//! the matching backward pass needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor4;

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (evaluation). `update_stats: false` keeps the training-mode
/// arithmetic without touching running averages, which is what gradient
/// checks need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { update_stats: bool },
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// 2-D convolution without bias, NCHW, square-free (any kh x kw).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Vec<f32>,
    pub out_c: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(out_c: usize, in_c: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        Self { weight: vec![0.0; out_c * in_c * kh * kw], out_c, in_c, kh, kw, stride, pad }
    }

    /// He initialisation: N(0, 2 / fan_in) with fan_in = in_c * kh * kw.
    pub fn init_kaiming(&mut self, rng: &mut ChaCha8Rng) {
        let std = (2.0 / (self.in_c * self.kh * self.kw) as f64).sqrt();
        for w in &mut self.weight {
            let z: f64 = rng.sample(StandardNormal);
            *w = (z * std) as f32;
        }
    }

    #[inline]
    fn w_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_c + i) * self.kh + ky) * self.kw + kx] as f64
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    /// Valid kernel index range for output position `o` so that the input
    /// index `o * stride + k - pad` stays inside `[0, extent)`.
    #[inline]
    fn k_range(&self, o: usize, k_len: usize, extent: usize) -> (usize, usize) {
        let base = o * self.stride;
        let lo = self.pad.saturating_sub(base);
        let hi = k_len.min(extent + self.pad - base);
        (lo, hi)
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c(), self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h(), x.w());
        let mut out = Tensor4::zeros(x.n(), self.out_c, oh, ow);
        for n in 0..x.n() {
            for o in 0..self.out_c {
                for oy in 0..oh {
                    let (ky0, ky1) = self.k_range(oy, self.kh, x.h());
                    for ox in 0..ow {
                        let (kx0, kx1) = self.k_range(ox, self.kw, x.w());
                        let mut acc = 0.0;
                        for i in 0..self.in_c {
                            for ky in ky0..ky1 {
                                let iy = oy * self.stride + ky - self.pad;
                                for kx in kx0..kx1 {
                                    let ix = ox * self.stride + kx - self.pad;
                                    acc += self.w_at(o, i, ky, kx) * x.get(n, i, iy, ix);
                                }
                            }
                        }
                        out.set(n, o, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    /// Returns (grad wrt input, grad wrt weight).
    pub fn backward(&self, x: &Tensor4, grad_out: &Tensor4) -> (Tensor4, Vec<f64>) {
        let (oh, ow) = self.out_hw(x.h(), x.w());
        assert_eq!(grad_out.shape(), (x.n(), self.out_c, oh, ow));
        let mut grad_x = Tensor4::zeros(x.n(), x.c(), x.h(), x.w());
        let mut grad_w = vec![0.0f64; self.weight.len()];
        for n in 0..x.n() {
            for o in 0..self.out_c {
                for oy in 0..oh {
                    let (ky0, ky1) = self.k_range(oy, self.kh, x.h());
                    for ox in 0..ow {
                        let (kx0, kx1) = self.k_range(ox, self.kw, x.w());
                        let g = grad_out.get(n, o, oy, ox);
                        if g == 0.0 {
                            continue;
                        }
                        for i in 0..self.in_c {
                            for ky in ky0..ky1 {
                                let iy = oy * self.stride + ky - self.pad;
                                for kx in kx0..kx1 {
                                    let ix = ox * self.stride + kx - self.pad;
                                    let widx = ((o * self.in_c + i) * self.kh + ky) * self.kw + kx;
                                    grad_w[widx] += g * x.get(n, i, iy, ix);
                                    grad_x.add(n, i, iy, ix, g * self.weight[widx] as f64);
                                }
                            }
                        }
                    }
                }
            }
        }
        (grad_x, grad_w)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalisation with torch-style running statistics: batch stats
/// normalise in training mode, running stats in eval; running averages
/// update with momentum 0.1 and the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

/// What BN backward needs: the normalised activations and the inverse
/// standard deviation actually used in forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub x_hat: Tensor4,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> (Tensor4, BnCache) {
        let c = self.channels();
        assert_eq!(x.c(), c, "bn channels");
        let m = (x.n() * x.h() * x.w()) as f64;
        let mut out = Tensor4::zeros(x.n(), x.c(), x.h(), x.w());
        let mut x_hat = Tensor4::zeros(x.n(), x.c(), x.h(), x.w());
        let mut inv_std_all = vec![0.0f64; c];
        let train = mode.is_train();
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for n in 0..x.n() {
                    sum += x.plane(n, ch).iter().sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0;
                for n in 0..x.n() {
                    for &v in x.plane(n, ch) {
                        sq += (v - mean) * (v - mean);
                    }
                }
                (mean, sq / m)
            } else {
                (self.running_mean[ch] as f64, self.running_var[ch] as f64)
            };
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            inv_std_all[ch] = inv_std;
            let g = self.gamma[ch] as f64;
            let b = self.beta[ch] as f64;
            for n in 0..x.n() {
                for y in 0..x.h() {
                    for xx in 0..x.w() {
                        let xh = (x.get(n, ch, y, xx) - mean) * inv_std;
                        x_hat.set(n, ch, y, xx, xh);
                        out.set(n, ch, y, xx, g * xh + b);
                    }
                }
            }
            if let Mode::Train { update_stats: true } = mode {
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                self.running_mean[ch] =
                    ((1.0 - BN_MOMENTUM) * self.running_mean[ch] as f64 + BN_MOMENTUM * mean) as f32;
                self.running_var[ch] =
                    ((1.0 - BN_MOMENTUM) * self.running_var[ch] as f64 + BN_MOMENTUM * unbiased) as f32;
            }
        }
        (out, BnCache { x_hat, inv_std: inv_std_all, train })
    }

    /// Returns (grad wrt input, grad wrt gamma, grad wrt beta).
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let x_hat = &cache.x_hat;
        assert_eq!(grad_out.shape(), x_hat.shape());
        let m = (x_hat.n() * x_hat.h() * x_hat.w()) as f64;
        let mut grad_x = Tensor4::zeros(x_hat.n(), c, x_hat.h(), x_hat.w());
        let mut grad_gamma = vec![0.0f64; c];
        let mut grad_beta = vec![0.0f64; c];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..x_hat.n() {
                for y in 0..x_hat.h() {
                    for x in 0..x_hat.w() {
                        let dy = grad_out.get(n, ch, y, x);
                        sum_dy += dy;
                        sum_dy_xhat += dy * x_hat.get(n, ch, y, x);
                    }
                }
            }
            grad_gamma[ch] = sum_dy_xhat;
            grad_beta[ch] = sum_dy;
            let g = self.gamma[ch] as f64;
            let inv_std = cache.inv_std[ch];
            for n in 0..x_hat.n() {
                for y in 0..x_hat.h() {
                    for x in 0..x_hat.w() {
                        let dy = grad_out.get(n, ch, y, x);
                        let dx = if cache.train {
                            g * inv_std
                                * (dy - sum_dy / m - x_hat.get(n, ch, y, x) * sum_dy_xhat / m)
                        } else {
                            dy * g * inv_std
                        };
                        grad_x.set(n, ch, y, x, dx);
                    }
                }
            }
        }
        (grad_x, grad_gamma, grad_beta)
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Backward through ReLU using its output as the mask (y > 0 iff x > 0).
pub fn relu_backward(relu_out: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    assert_eq!(relu_out.shape(), grad_out.shape());
    let mut grad = grad_out.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(relu_out.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Max pooling; out-of-bounds window cells are ignored (as if padded with
/// negative infinity). Returns the pooled tensor and per-output flat
/// argmax indices into the input.
pub fn maxpool(x: &Tensor4, k: usize, stride: usize, pad: usize) -> (Tensor4, Vec<usize>) {
    let oh = (x.h() + 2 * pad - k) / stride + 1;
    let ow = (x.w() + 2 * pad - k) / stride + 1;
    let mut out = Tensor4::zeros(x.n(), x.c(), oh, ow);
    let mut argmax = vec![0usize; x.n() * x.c() * oh * ow];
    let mut oi = 0;
    for n in 0..x.n() {
        for c in 0..x.c() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= x.h() as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= x.w() as isize {
                                continue;
                            }
                            let v = x.get(n, c, iy as usize, ix as usize);
                            if v > best {
                                best = v;
                                best_idx = x.idx(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(n, c, oy, ox, best);
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward(
    in_shape: (usize, usize, usize, usize),
    argmax: &[usize],
    grad_out: &Tensor4,
) -> Tensor4 {
    let mut grad_x = Tensor4::zeros(in_shape.0, in_shape.1, in_shape.2, in_shape.3);
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        grad_x.data_mut()[idx] += g;
    }
    grad_x
}

/// 2x2 average pooling with stride 2; input extents must be even.
pub fn avgpool2(x: &Tensor4) -> Tensor4 {
    assert!(x.h() % 2 == 0 && x.w() % 2 == 0, "avgpool2 needs even extents");
    let mut out = Tensor4::zeros(x.n(), x.c(), x.h() / 2, x.w() / 2);
    for n in 0..x.n() {
        for c in 0..x.c() {
            for oy in 0..x.h() / 2 {
                for ox in 0..x.w() / 2 {
                    let s = x.get(n, c, 2 * oy, 2 * ox)
                        + x.get(n, c, 2 * oy, 2 * ox + 1)
                        + x.get(n, c, 2 * oy + 1, 2 * ox)
                        + x.get(n, c, 2 * oy + 1, 2 * ox + 1);
                    out.set(n, c, oy, ox, s / 4.0);
                }
            }
        }
    }
    out
}

pub fn avgpool2_backward(in_h: usize, in_w: usize, grad_out: &Tensor4) -> Tensor4 {
    let mut grad_x = Tensor4::zeros(grad_out.n(), grad_out.c(), in_h, in_w);
    for n in 0..grad_out.n() {
        for c in 0..grad_out.c() {
            for oy in 0..grad_out.h() {
                for ox in 0..grad_out.w() {
                    let g = grad_out.get(n, c, oy, ox) / 4.0;
                    grad_x.add(n, c, 2 * oy, 2 * ox, g);
                    grad_x.add(n, c, 2 * oy, 2 * ox + 1, g);
                    grad_x.add(n, c, 2 * oy + 1, 2 * ox, g);
                    grad_x.add(n, c, 2 * oy + 1, 2 * ox + 1, g);
                }
            }
        }
    }
    grad_x
}

/// Global average pool to an (n, c) feature matrix (row-major flat).
pub fn global_avg_pool(x: &Tensor4) -> Vec<f64> {
    let area = (x.h() * x.w()) as f64;
    let mut out = vec![0.0; x.n() * x.c()];
    for n in 0..x.n() {
        for c in 0..x.c() {
            out[n * x.c() + c] = x.plane(n, c).iter().sum::<f64>() / area;
        }
    }
    out
}

pub fn global_avg_pool_backward(
    shape: (usize, usize, usize, usize),
    grad_feat: &[f64],
) -> Tensor4 {
    let (n_, c_, h, w) = shape;
    let area = (h * w) as f64;
    let mut grad_x = Tensor4::zeros(n_, c_, h, w);
    for n in 0..n_ {
        for c in 0..c_ {
            let g = grad_feat[n * c_ + c] / area;
            for y in 0..h {
                for x in 0..w {
                    grad_x.set(n, c, y, x, g);
                }
            }
        }
    }
    grad_x
}

/// Fully connected head: logits = W . feat + b.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub out_f: usize,
    pub in_f: usize,
}

impl Linear {
    pub fn new(out_f: usize, in_f: usize) -> Self {
        Self { weight: vec![0.0; out_f * in_f], bias: vec![0.0; out_f], out_f, in_f }
    }

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
    pub fn init_uniform(&mut self, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.in_f as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.gen_range(-bound..=bound) as f32;
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    /// `feat` is (n, in_f) row-major; returns (n, out_f) logits.
    pub fn forward(&self, feat: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(feat.len(), n * self.in_f);
        let mut out = vec![0.0; n * self.out_f];
        for s in 0..n {
            let row = &feat[s * self.in_f..(s + 1) * self.in_f];
            for o in 0..self.out_f {
                let wrow = &self.weight[o * self.in_f..(o + 1) * self.in_f];
                let mut acc = self.bias[o] as f64;
                for (w, v) in wrow.iter().zip(row) {
                    acc += *w as f64 * v;
                }
                out[s * self.out_f + o] = acc;
            }
        }
        out
    }

    /// Returns (grad wrt feat, grad wrt weight, grad wrt bias).
    pub fn backward(
        &self,
        feat: &[f64],
        n: usize,
        grad_logits: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut grad_feat = vec![0.0; n * self.in_f];
        let mut grad_w = vec![0.0; self.weight.len()];
        let mut grad_b = vec![0.0; self.out_f];
        for s in 0..n {
            let row = &feat[s * self.in_f..(s + 1) * self.in_f];
            for o in 0..self.out_f {
                let g = grad_logits[s * self.out_f + o];
                grad_b[o] += g;
                let wrow = &self.weight[o * self.in_f..(o + 1) * self.in_f];
                for i in 0..self.in_f {
                    grad_w[o * self.in_f + i] += g * row[i];
                    grad_feat[s * self.in_f + i] += g * wrow[i] as f64;
                }
            }
        }
        (grad_feat, grad_w, grad_b)
    }
}

/// Mean softmax cross-entropy over a batch. Returns (loss, grad wrt
/// logits, softmax probabilities), probabilities row-major (n, k).
pub fn softmax_cross_entropy(
    logits: &[f64],
    n: usize,
    k: usize,
    labels: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    assert_eq!(logits.len(), n * k);
    assert_eq!(labels.len(), n);
    let mut probs = vec![0.0; n * k];
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    for s in 0..n {
        let row = &logits[s * k..(s + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &l in row {
            denom += (l - max).exp();
        }
        let log_denom = denom.ln() + max;
        for (j, &l) in row.iter().enumerate() {
            let p = (l - log_denom).exp();
            probs[s * k + j] = p;
            grad[s * k + j] = p / n as f64;
        }
        let y = labels[s];
        assert!(y < k, "label out of range");
        loss -= row[y] - log_denom;
        grad[s * k + y] -= 1.0 / n as f64;
    }
    (loss / n as f64, grad, probs)
}
