//! Training-time augmentation: horizontal flip, random crop-and-resize,
//! integer translation and small rotation, in that fixed order, with a
//! final clamp to [0, 1].
//!
//! Every image gets its own RNG substream derived from
//! `(config seed, batch index, image index)`, so a batch can be replayed
//! image by image and reordering one image never perturbs another. An
//! all-zero config is a guaranteed bit-exact identity: no resampling runs
//! at all.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::resize_bilinear;
use crate::raster::Raster;
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability of mirroring left-right.
    pub hflip_prob: f64,
    /// Maximum fraction of each axis removed by the random crop.
    pub crop_frac: f64,
    /// Maximum shift per axis as a fraction of that axis.
    pub translate_frac: f64,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    /// Identity: applies nothing.
    fn default() -> Self {
        Self { hflip_prob: 0.0, crop_frac: 0.0, translate_frac: 0.0, rotate_deg: 0.0, seed: 0 }
    }
}

impl AugmentConfig {
    /// The default jitter used when training on ultrasound planes.
    pub fn training_default(seed: u64) -> Self {
        Self { hflip_prob: 0.5, crop_frac: 0.1, translate_frac: 0.1, rotate_deg: 10.0, seed }
    }

    pub fn is_identity(&self) -> bool {
        self.hflip_prob == 0.0
            && self.crop_frac == 0.0
            && self.translate_frac == 0.0
            && self.rotate_deg == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(format!("hflip_prob {} not in [0, 1]", self.hflip_prob));
        }
        if !(0.0..=0.9).contains(&self.crop_frac) {
            return Err(format!("crop_frac {} not in [0, 0.9]", self.crop_frac));
        }
        if !(0.0..=0.5).contains(&self.translate_frac) {
            return Err(format!("translate_frac {} not in [0, 0.5]", self.translate_frac));
        }
        if !(0.0..=180.0).contains(&self.rotate_deg) {
            return Err(format!("rotate_deg {} not in [0, 180]", self.rotate_deg));
        }
        Ok(())
    }
}

/// Concrete draws for one image. Applying the same params twice gives the
/// same output, which is what the replay tests lean on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// (y0, x0, height, width) window to keep before resizing back.
    pub crop: (usize, usize, usize, usize),
    /// (dy, dx) in pixels; positive moves content down/right.
    pub translate: (isize, isize),
    /// Degrees; positive rotates content clockwise.
    pub rotate_deg: f64,
}

/// RNG substream for one image of one batch.
pub fn image_rng(cfg_seed: u64, batch_index: u64, image_index: u64) -> ChaCha8Rng {
    let batch_seed = derive_seed(cfg_seed, "augment/batch", batch_index);
    rng_for(derive_seed(batch_seed, "augment/image", image_index))
}

/// Draw augmentation parameters. The draw sequence has a fixed shape
/// (flip, crop fractions, crop offsets, translation, angle) regardless of
/// which magnitudes are zero, so adding a knob never shifts another
/// knob's stream.
pub fn draw_params(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut ChaCha8Rng) -> AugmentParams {
    let flip = rng.gen::<f64>() < cfg.hflip_prob;
    let frac_y = rng.gen_range(0.0..=cfg.crop_frac);
    let frac_x = rng.gen_range(0.0..=cfg.crop_frac);
    let removed_y = ((h as f64 * frac_y) + 0.5).floor() as usize;
    let removed_x = ((w as f64 * frac_x) + 0.5).floor() as usize;
    let removed_y = removed_y.min(h.saturating_sub(1));
    let removed_x = removed_x.min(w.saturating_sub(1));
    let y0 = rng.gen_range(0..=removed_y);
    let x0 = rng.gen_range(0..=removed_x);
    let max_dy = (cfg.translate_frac * h as f64 + 0.5).floor() as isize;
    let max_dx = (cfg.translate_frac * w as f64 + 0.5).floor() as isize;
    let dy = rng.gen_range(-max_dy..=max_dy);
    let dx = rng.gen_range(-max_dx..=max_dx);
    let rotate_deg = rng.gen_range(-cfg.rotate_deg..=cfg.rotate_deg);
    AugmentParams {
        flip,
        crop: (y0, x0, h - removed_y, w - removed_x),
        translate: (dy, dx),
        rotate_deg,
    }
}

fn flip_horizontal(src: &Raster) -> Raster {
    let (h, w) = (src.height(), src.width());
    let mut out = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, src.get(y, w - 1 - x));
        }
    }
    out
}

fn crop_window(src: &Raster, y0: usize, x0: usize, ch: usize, cw: usize) -> Raster {
    let mut out = Raster::zeros(ch, cw);
    for y in 0..ch {
        for x in 0..cw {
            out.set(y, x, src.get(y0 + y, x0 + x));
        }
    }
    out
}

fn translate(src: &Raster, dy: isize, dx: isize) -> Raster {
    let (h, w) = (src.height() as isize, src.width() as isize);
    let mut out = Raster::zeros(src.height(), src.width());
    for y in 0..h {
        for x in 0..w {
            let sy = y - dy;
            let sx = x - dx;
            if sy >= 0 && sy < h && sx >= 0 && sx < w {
                out.set(y as usize, x as usize, src.get(sy as usize, sx as usize));
            }
        }
    }
    out
}

fn rotate(src: &Raster, degrees: f64) -> Raster {
    let theta = degrees.to_radians();
    let (cos, sin) = (theta.cos() as f32, theta.sin() as f32);
    let (h, w) = (src.height(), src.width());
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut out = Raster::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let vy = y as f32 - cy;
            let vx = x as f32 - cx;
            let sy = cy - sin * vx + cos * vy;
            let sx = cx + cos * vx + sin * vy;
            out.set(y, x, src.sample_bilinear_zero(sy, sx));
        }
    }
    out
}

/// Apply drawn parameters. Each stage short-circuits when it would be an
/// identity, and the final clamp only runs if something was resampled, so
/// no-op params return the input bit for bit.
pub fn apply_params(src: &Raster, params: &AugmentParams) -> Raster {
    let (h, w) = (src.height(), src.width());
    let mut out = src.clone();
    let mut touched = false;
    if params.flip {
        out = flip_horizontal(&out);
        touched = true;
    }
    let (y0, x0, ch, cw) = params.crop;
    if ch < h || cw < w {
        out = resize_bilinear(&crop_window(&out, y0, x0, ch, cw), h, w);
        touched = true;
    }
    if params.translate != (0, 0) {
        out = translate(&out, params.translate.0, params.translate.1);
        touched = true;
    }
    if params.rotate_deg != 0.0 {
        out = rotate(&out, params.rotate_deg);
        touched = true;
    }
    if touched {
        out.clamp01();
    }
    out
}

/// Augment one image of one batch.
pub fn augment_image(
    src: &Raster,
    cfg: &AugmentConfig,
    batch_index: u64,
    image_index: u64,
) -> Raster {
    if cfg.is_identity() {
        return src.clone();
    }
    let mut rng = image_rng(cfg.seed, batch_index, image_index);
    let params = draw_params(cfg, src.height(), src.width(), &mut rng);
    apply_params(src, &params)
}
