//! Synthetic centres: class-specific phantoms rendered through a
//! configurable acquisition profile (gamma, speckle, blur, brightness and
//! a sector fan mask), written as PNG files plus a manifest. Everything is
//! a pure function of the config seed, so two generations of the same
//! centre are byte-identical.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    write_manifest, CentreProfile, CorpusError, CropRect, DatasetManifest, ImageRecord, PlaneLabel,
};
use crate::raster::Raster;
use crate::seed::{derive_seed, derive_seed_str, rng_for};

/// Acquisition knobs standing in for vendor differences. The identity
/// profile leaves pixels untouched apart from the fan mask, which every
/// centre applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftProfile {
    /// Pointwise intensity exponent; 1.0 is neutral.
    pub gamma: f64,
    /// Std-dev of multiplicative speckle, as `v * (1 + sigma * z)`.
    pub noise_sigma: f64,
    /// Gaussian blur radius in pixels; 0 disables.
    pub blur_radius: f64,
    /// Additive intensity offset applied before masking.
    pub brightness_offset: f64,
    /// Full sector angle of the fan mask, in degrees, within [30, 90].
    pub fan_angle_deg: f64,
}

impl Default for ShiftProfile {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftProfile {
    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            noise_sigma: 0.0,
            blur_radius: 0.0,
            brightness_offset: 0.0,
            fan_angle_deg: 84.0,
        }
    }

    /// Mild vendor difference.
    pub fn mild() -> Self {
        Self {
            gamma: 1.15,
            noise_sigma: 0.08,
            blur_radius: 0.5,
            brightness_offset: -0.03,
            ..Self::identity()
        }
    }

    /// Pronounced cross-centre shift.
    pub fn strong() -> Self {
        Self {
            gamma: 1.7,
            noise_sigma: 0.25,
            blur_radius: 1.4,
            brightness_offset: -0.10,
            ..Self::identity()
        }
    }

    /// True when only the fan mask would change an image.
    pub fn is_identity(&self) -> bool {
        self.gamma == 1.0
            && self.noise_sigma == 0.0
            && self.blur_radius == 0.0
            && self.brightness_offset == 0.0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.gamma <= 0.0 {
            return Err(SynthError::InvalidConfig("shift.gamma must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("shift.noise_sigma must be >= 0".into()));
        }
        if self.blur_radius < 0.0 {
            return Err(SynthError::InvalidConfig("shift.blur_radius must be >= 0".into()));
        }
        if !(30.0..=90.0).contains(&self.fan_angle_deg) {
            return Err(SynthError::InvalidConfig(
                "shift.fan_angle_deg must lie in [30, 90]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCentreSpec {
    pub centre_id: String,
    pub country: String,
    pub vendor: String,
    pub num_patients: usize,
    pub images_per_patient_per_class: usize,
    pub classes: Vec<PlaneLabel>,
    pub image_size: usize,
    pub shift: ShiftProfile,
    /// Fraction of records rendered as unusable junk and flagged.
    pub artifact_rate: f64,
    /// Population drift passed to [`Habitus::sample`]: how far this
    /// centre's patient population sits from the reference one.
    pub population_drift: f64,
    /// Burn a vendor overlay block into the corner and record a crop
    /// rectangle that excludes it.
    pub vendor_logo: bool,
    pub seed: u64,
}

impl Default for SynthCentreSpec {
    fn default() -> Self {
        Self::new("", 0)
    }
}

impl SynthCentreSpec {
    pub fn new(centre_id: &str, seed: u64) -> Self {
        Self {
            centre_id: centre_id.to_string(),
            country: "Synthland".to_string(),
            vendor: "SynthScan S1".to_string(),
            num_patients: 25,
            images_per_patient_per_class: 1,
            classes: PlaneLabel::ALL.to_vec(),
            image_size: 256,
            shift: ShiftProfile::identity(),
            artifact_rate: 0.0,
            population_drift: 0.0,
            vendor_logo: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.centre_id.is_empty() {
            return Err(SynthError::InvalidConfig("centre_id must be non-empty".into()));
        }
        if self.num_patients == 0 || self.images_per_patient_per_class == 0 {
            return Err(SynthError::InvalidConfig("need at least one patient and image".into()));
        }
        if self.classes.is_empty() {
            return Err(SynthError::InvalidConfig("classes must be non-empty".into()));
        }
        if self.image_size < 64 {
            return Err(SynthError::InvalidConfig("image_size must be >= 64".into()));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return Err(SynthError::InvalidConfig("artifact_rate not in [0, 1]".into()));
        }
        if !(-2.0..=2.0).contains(&self.population_drift) {
            return Err(SynthError::InvalidConfig("population_drift not in [-2, 2]".into()));
        }
        self.shift.validate()
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png encode failed for {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

/// Rotate `(dy, dx)` by `-angle` so shapes can be tested in their own
/// frame.
#[inline]
fn to_shape_frame(dy: f64, dx: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dy + s * dx, -s * dy + c * dx)
}

fn speckle(raster: &mut Raster, amount: f64, rng: &mut ChaCha8Rng) {
    for v in raster.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = (*v as f64 * (1.0 + amount * z)).max(0.0) as f32;
    }
}

/// Patient-level appearance, drawn once per patient. Images of one
/// patient share it; different patients genuinely differ, so a model that
/// has only seen a handful of patients has only seen a handful of
/// appearances. Intensity factors are expressed as contrasts between
/// structures (per-image min-max normalisation downstream removes any
/// common gain), and geometry, shadowing and texture survive it too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Habitus {
    /// Overall anatomy size factor.
    pub scale: f64,
    /// Anisotropy: y radii multiply by this, x radii divide by it.
    pub stretch: f64,
    /// Orientation bias in radians, added to the per-image angle.
    pub skew: f64,
    /// Background soft-tissue level.
    pub floor: f64,
    /// Gain on bright bony interfaces (skull, rim, bone, spine).
    pub rim_gain: f64,
    /// Gain on interior soft tissue.
    pub tissue_gain: f64,
    /// Darkness of fluid pockets (stomach bubble), absolute level.
    pub fluid_level: f64,
    /// Acoustic shadow attenuation, 0 disables.
    pub shadow: f64,
    /// Horizontal position of the shadow wedge as a fraction of width.
    pub shadow_pos: f64,
    /// Speckle amount.
    pub texture: f64,
}

impl Habitus {
    /// The canonical appearance: unit gains, no shadow, the speckle the
    /// oracle tests were calibrated against.
    pub fn neutral() -> Self {
        Self {
            scale: 1.0,
            stretch: 1.0,
            skew: 0.0,
            floor: 0.06,
            rim_gain: 1.0,
            tissue_gain: 1.0,
            fluid_level: 0.12,
            shadow: 0.0,
            shadow_pos: 0.5,
            texture: 0.20,
        }
    }

    /// Draw a patient from a centre's population. `drift` moves the whole
    /// population (0 is the reference): smaller, more anisotropic anatomy
    /// with compressed rim/tissue contrast and heavier shadowing. Two
    /// centres with different drifts scan genuinely different patient
    /// populations, not just the same patients through different probes.
    pub fn sample(rng: &mut ChaCha8Rng, drift: f64) -> Self {
        let d = drift;
        Self {
            scale: rng.gen_range(0.78..=1.22) * (1.0 - 0.12 * d),
            stretch: rng.gen_range(0.82..=1.22) * (1.0 + 0.08 * d),
            skew: rng.gen_range(-0.7..=0.7) + 0.25 * d,
            floor: rng.gen_range(0.03..=0.12) + 0.02 * d,
            rim_gain: rng.gen_range(0.72..=1.10) * (1.0 - 0.10 * d),
            tissue_gain: rng.gen_range(0.65..=1.35) * (1.0 + 0.10 * d),
            fluid_level: rng.gen_range(0.10..=0.32) + 0.05 * d,
            shadow: (rng.gen_range(0.0..=0.65) + 0.25 * d).clamp(0.0, 0.85),
            shadow_pos: rng.gen_range(0.25..=0.75),
            texture: (rng.gen_range(0.10..=0.34) + 0.05 * d).max(0.02),
        }
    }
}

/// Render the anatomy phantom for one class with a patient's appearance;
/// per-image geometry and gain jitter comes from `rng`.
pub fn render_phantom(
    label: PlaneLabel,
    size: usize,
    habitus: &Habitus,
    rng: &mut ChaCha8Rng,
) -> Raster {
    let s = size as f64;
    let mut img = Raster::filled(size, size, habitus.floor as f32);
    let cy = s * rng.gen_range(0.42..=0.58);
    let cx = s * rng.gen_range(0.42..=0.58);
    let angle = habitus.skew + rng.gen_range(-0.5..=0.5);
    // Per-image wobble so one patient's frames share an appearance
    // without being copies of each other.
    let rim = habitus.rim_gain * rng.gen_range(0.95..=1.05);
    let tissue = habitus.tissue_gain * rng.gen_range(0.95..=1.05);
    let scale_y = habitus.scale * habitus.stretch;
    let scale_x = habitus.scale / habitus.stretch;
    match label {
        PlaneLabel::Brain => {
            // Skull: bright elliptical ring with dimmer tissue and a
            // midline echo inside.
            let ry = s * 0.21 * scale_y * rng.gen_range(0.88..=1.12);
            let rx = s * 0.30 * scale_x * rng.gen_range(0.88..=1.12);
            let midline = 0.62 * rim;
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = to_shape_frame(y as f64 - cy, x as f64 - cx, angle);
                    let d = ((u / ry).powi(2) + (v / rx).powi(2)).sqrt();
                    if (d - 1.0).abs() < 0.08 {
                        img.set(y, x, (0.88 * rim) as f32);
                    } else if d < 1.0 {
                        let mid = (u.abs() / ry) < 0.05;
                        img.set(y, x, if mid { midline as f32 } else { (0.30 * tissue) as f32 });
                    }
                }
            }
        }
        PlaneLabel::Abdomen => {
            // Elliptical cross-section with a rim and an off-centre dark
            // stomach bubble; rim and skull brightness ranges overlap
            // across patients, so the interior is what tells them apart.
            let ry = s * 0.26 * scale_y * rng.gen_range(0.88..=1.12);
            let rx = s * 0.26 * scale_x * rng.gen_range(0.88..=1.12);
            let r = ry.max(rx);
            let (bu, bv) = (-r * 0.3, r * 0.35);
            let br = r * 0.28;
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = to_shape_frame(y as f64 - cy, x as f64 - cx, angle);
                    let d = ((u / ry).powi(2) + (v / rx).powi(2)).sqrt();
                    if (d - 1.0).abs() < 0.06 {
                        img.set(y, x, (0.80 * rim) as f32);
                    } else if d < 1.0 {
                        let bd = ((u - bu).powi(2) + (v - bv).powi(2)).sqrt();
                        img.set(
                            y,
                            x,
                            if bd < br {
                                habitus.fluid_level as f32
                            } else {
                                (0.48 * tissue) as f32
                            },
                        );
                    }
                }
            }
        }
        PlaneLabel::Femur => {
            // A single bright elongated bone: capsule with aspect > 3.
            let half_len = s * 0.24 * habitus.scale * rng.gen_range(0.88..=1.12);
            let half_thick = half_len * rng.gen_range(0.10..=0.16);
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = to_shape_frame(y as f64 - cy, x as f64 - cx, angle);
                    let along = v.abs() - (half_len - half_thick);
                    let core = if along <= 0.0 {
                        u.abs()
                    } else {
                        (u.powi(2) + along.powi(2)).sqrt()
                    };
                    if core < half_thick {
                        img.set(y, x, (0.92 * rim) as f32);
                    }
                }
            }
        }
        PlaneLabel::Thorax => {
            // Two lung lobes with a bright spine echo between them.
            let r = s * 0.13 * habitus.scale * rng.gen_range(0.88..=1.12);
            let gap = r * 1.4 * habitus.stretch;
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = to_shape_frame(y as f64 - cy, x as f64 - cx, angle);
                    let dl = (u.powi(2) + (v + gap).powi(2)).sqrt();
                    let dr = (u.powi(2) + (v - gap).powi(2)).sqrt();
                    if dl < r || dr < r {
                        img.set(y, x, (0.52 * tissue) as f32);
                    }
                    let ds = ((u - r * 1.2).powi(2) + v.powi(2)).sqrt();
                    if ds < r * 0.3 {
                        img.set(y, x, (0.90 * rim) as f32);
                    }
                }
            }
        }
        PlaneLabel::Other => {
            // Non-standard view: dim blobs plus the occasional short
            // bright streak, suggestive of anatomy without being any of
            // the standard planes. Streaks stay rounder and dimmer than
            // bone.
            let blobs = rng.gen_range(3..=6);
            for _ in 0..blobs {
                let by = s * rng.gen_range(0.2..=0.8);
                let bx = s * rng.gen_range(0.2..=0.8);
                let br = s * rng.gen_range(0.04..=0.12);
                let val = rng.gen_range(0.18..=0.38) * tissue;
                let y0 = (by - br).max(0.0) as usize;
                let y1 = ((by + br) as usize).min(size - 1);
                for y in y0..=y1 {
                    for x in 0..size {
                        let d = ((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)).sqrt();
                        if d < br {
                            img.set(y, x, val as f32);
                        }
                    }
                }
            }
            if rng.gen_bool(0.5) {
                let half_len = s * 0.10 * habitus.scale * rng.gen_range(0.8..=1.2);
                let half_thick = half_len * 0.45;
                let (oy, ox) = (s * rng.gen_range(0.3..=0.7), s * rng.gen_range(0.3..=0.7));
                let oa = rng.gen_range(-1.5..=1.5);
                let val = 0.55 * rim;
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = to_shape_frame(y as f64 - oy, x as f64 - ox, oa);
                        if u.abs() < half_thick && v.abs() < half_len {
                            img.set(y, x, val as f32);
                        }
                    }
                }
            }
        }
    }
    if habitus.shadow > 0.0 {
        // Acoustic shadow: a wedge of attenuation widening with depth,
        // anchored per patient and wobbling slightly per image.
        let sx = s * (habitus.shadow_pos + rng.gen_range(-0.04..=0.04));
        let atten = habitus.shadow * rng.gen_range(0.8..=1.2);
        for y in 0..size {
            let half_w = s * (0.05 + 0.07 * y as f64 / s);
            for x in 0..size {
                let d = (x as f64 - sx).abs();
                if d < half_w {
                    let soft = 1.0 - d / half_w;
                    let f = 1.0 - (atten * soft).min(0.95);
                    img.set(y, x, (img.get(y, x) as f64 * f) as f32);
                }
            }
        }
    }
    speckle(&mut img, habitus.texture, rng);
    // A finished frame lives in [0, 1]; shifts must see in-range input so
    // the identity profile really is an identity inside the fan.
    img.clamp01();
    img
}

fn gaussian_blur(raster: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return raster.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let w = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }
    let (h, w) = (raster.height() as isize, raster.width() as isize);
    let clampv = |v: isize, max: isize| v.clamp(0, max - 1) as usize;
    // Horizontal then vertical pass, clamping at the edges.
    let mut tmp = Raster::zeros(raster.height(), raster.width());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = clampv(x + ki as isize - radius, w);
                acc += kw * raster.get(y as usize, sx) as f64;
            }
            tmp.set(y as usize, x as usize, acc as f32);
        }
    }
    let mut out = Raster::zeros(raster.height(), raster.width());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = clampv(y + ki as isize - radius, h);
                acc += kw * tmp.get(sy, x as usize) as f64;
            }
            out.set(y as usize, x as usize, acc as f32);
        }
    }
    out
}

/// Zero out everything outside the ultrasound sector: apex slightly above
/// the top centre, half-angle `fan_angle_deg / 2`, bounded range.
pub fn apply_fan_mask(raster: &mut Raster, fan_angle_deg: f64) {
    let s = raster.height().max(raster.width()) as f64;
    let apex_y = -0.05 * s;
    let apex_x = raster.width() as f64 / 2.0;
    let half_angle = (fan_angle_deg / 2.0).to_radians();
    let max_r = 1.08 * s;
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            let dy = y as f64 - apex_y;
            let dx = x as f64 - apex_x;
            let r = (dy * dy + dx * dx).sqrt();
            let theta = dx.atan2(dy).abs();
            if theta > half_angle || r > max_r || r < 0.08 * s {
                raster.set(y, x, 0.0);
            }
        }
    }
}

/// Apply an acquisition profile in the fixed order gamma, multiplicative
/// noise, blur, brightness, fan mask, clamp.
pub fn apply_shift(raster: &Raster, shift: &ShiftProfile, rng: &mut ChaCha8Rng) -> Raster {
    let mut out = raster.clone();
    if shift.gamma != 1.0 {
        for v in out.data_mut() {
            *v = (*v as f64).max(0.0).powf(shift.gamma) as f32;
        }
    }
    if shift.noise_sigma > 0.0 {
        speckle(&mut out, shift.noise_sigma, rng);
    }
    out = gaussian_blur(&out, shift.blur_radius);
    if shift.brightness_offset != 0.0 {
        for v in out.data_mut() {
            *v += shift.brightness_offset as f32;
        }
    }
    apply_fan_mask(&mut out, shift.fan_angle_deg);
    out.clamp01();
    out
}

/// Side length of the square corner region reserved for the vendor
/// overlay; the recorded crop rectangle removes this margin on all sides.
pub fn logo_extent(image_size: usize) -> u32 {
    (image_size as u32 / 8).max(8)
}

fn burn_logo(raster: &mut Raster, vendor: &str) {
    // Deterministic vendor-specific checker pattern in the corner the
    // crop rectangle excludes.
    let extent = logo_extent(raster.width()) as usize;
    let code: usize = vendor.bytes().map(|b| b as usize).sum();
    for y in 2..extent - 2 {
        for x in 2..extent - 2 {
            let on = (y / 3 + x / 3 + code) % 2 == 0;
            raster.set(y, x, if on { 1.0 } else { 0.7 });
        }
    }
}

fn render_artifact(size: usize, rng: &mut ChaCha8Rng) -> Raster {
    // Saturated junk frame: uniform noise plus blown-out bands.
    let mut img = Raster::zeros(size, size);
    for v in img.data_mut() {
        *v = rng.gen_range(0.0..=1.0);
    }
    let band = rng.gen_range(0..size / 2);
    for y in band..(band + size / 8).min(size) {
        for x in 0..size {
            img.set(y, x, 1.0);
        }
    }
    img
}

fn save_png(raster: &Raster, path: &Path) -> Result<(), SynthError> {
    let pixels: Vec<u8> = raster
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(raster.width() as u32, raster.height() as u32, pixels)
        .expect("pixel buffer matches dimensions");
    img.save(path)
        .map_err(|e| SynthError::Encode { path: path.to_path_buf(), message: e.to_string() })
}

/// Generate a centre under `out_dir/<centre_id>/`: PNG images, the
/// manifest CSV and its profile sidecar. Returns the loaded-back manifest.
pub fn generate_centre(
    cfg: &SynthCentreSpec,
    out_dir: &Path,
) -> Result<DatasetManifest, SynthError> {
    cfg.validate()?;
    let centre_dir = out_dir.join(&cfg.centre_id);
    let image_dir = centre_dir.join("images");
    fs::create_dir_all(&image_dir)
        .map_err(|e| SynthError::Io { path: image_dir.clone(), source: e })?;

    let extent = logo_extent(cfg.image_size);
    let crop_rect = if cfg.vendor_logo {
        Some(CropRect {
            x: extent,
            y: extent,
            width: cfg.image_size as u32 - 2 * extent,
            height: cfg.image_size as u32 - 2 * extent,
        })
    } else {
        None
    };

    let mut records = Vec::new();
    for p in 0..cfg.num_patients {
        let patient_id = format!("p{p:04}");
        let mut patient_rng = rng_for(derive_seed(cfg.seed, "synth/patient", p as u64));
        let habitus = Habitus::sample(&mut patient_rng, cfg.population_drift);
        for &label in &cfg.classes {
            for i in 0..cfg.images_per_patient_per_class {
                let key = format!("{patient_id}/{label}/{i}");
                let mut rng = rng_for(derive_seed_str(cfg.seed, "synth/image", &key));
                let is_artifact = rng.gen_range(0.0..1.0) < cfg.artifact_rate;
                let mut img = if is_artifact {
                    render_artifact(cfg.image_size, &mut rng)
                } else {
                    let phantom = render_phantom(label, cfg.image_size, &habitus, &mut rng);
                    apply_shift(&phantom, &cfg.shift, &mut rng)
                };
                if cfg.vendor_logo {
                    burn_logo(&mut img, &cfg.vendor);
                }
                let file = format!("{patient_id}_{}_{i}.png", label.as_str());
                save_png(&img, &image_dir.join(&file))?;
                records.push(ImageRecord {
                    centre_id: cfg.centre_id.clone(),
                    patient_id: patient_id.clone(),
                    label,
                    path: PathBuf::from("images").join(&file),
                    crop_rect,
                    artifact_flag: is_artifact,
                    borrowed_from: None,
                });
            }
        }
    }

    let centre = CentreProfile {
        centre_id: cfg.centre_id.clone(),
        country: cfg.country.clone(),
        vendor: cfg.vendor.clone(),
        transducer_freq_mhz: (3.0, 7.5),
        trimesters: BTreeSet::from([2, 3]),
    };
    let mut manifest = DatasetManifest::new(centre, records);
    manifest.base_dir = centre_dir.clone();
    manifest.validate()?;
    write_manifest(&manifest, &centre_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Labels used by the generic-shape pretraining corpus.
pub const GENERIC_CLASSES: usize = 8;

/// In-memory corpus of simple geometric shapes (8 classes), used to
/// pretrain a model when no real source subset is requested. Images are
/// already in [0, 1] at the given size, so they can feed training
/// directly.
pub fn generic_shapes_dataset(
    per_class: usize,
    size: usize,
    seed: u64,
) -> Vec<(Raster, usize)> {
    let mut out = Vec::with_capacity(per_class * GENERIC_CLASSES);
    for class in 0..GENERIC_CLASSES {
        for i in 0..per_class {
            let key = format!("{class}/{i}");
            let mut rng = rng_for(derive_seed_str(seed, "generic/image", &key));
            let s = size as f64;
            let cy = s * rng.gen_range(0.35..=0.65);
            let cx = s * rng.gen_range(0.35..=0.65);
            let r = s * rng.gen_range(0.15..=0.3);
            let mut img = Raster::filled(size, size, 0.1);
            for y in 0..size {
                for x in 0..size {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    let d = (dy * dy + dx * dx).sqrt();
                    let hit = match class {
                        0 => dy.abs() < r && dx.abs() < r,          // filled square
                        1 => (d - r).abs() < r * 0.18,              // ring
                        2 => d < r,                                 // disc
                        3 => dy.abs() < r * 0.3,                    // horizontal bar
                        4 => dx.abs() < r * 0.3,                    // vertical bar
                        5 => dy.abs() < r * 0.22 || dx.abs() < r * 0.22, // cross
                        6 => (dy - dx).abs() < r * 0.3,             // diagonal stroke
                        7 => {
                            // dot grid
                            let step = (r * 0.8).max(2.0);
                            let gy = (dy / step).round() * step;
                            let gx = (dx / step).round() * step;
                            d < r * 1.4
                                && ((dy - gy).powi(2) + (dx - gx).powi(2)).sqrt() < step * 0.25
                        }
                        _ => unreachable!(),
                    };
                    if hit {
                        img.set(y, x, 0.9);
                    }
                }
            }
            speckle(&mut img, 0.15, &mut rng);
            img.clamp01();
            out.push((img, class));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_manifest;

    fn quick_cfg(id: &str, seed: u64) -> SynthCentreSpec {
        SynthCentreSpec {
            num_patients: 3,
            image_size: 64,
            ..SynthCentreSpec::new(id, seed)
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_cfg("CA", 11);
        let m1 = generate_centre(&cfg, &dir.path().join("one")).unwrap();
        let m2 = generate_centre(&cfg, &dir.path().join("two")).unwrap();
        assert_eq!(m1.records.len(), m2.records.len());
        for (a, b) in m1.records.iter().zip(&m2.records) {
            assert_eq!(a.path, b.path);
            let bytes_a = fs::read(m1.resolve_path(a)).unwrap();
            let bytes_b = fs::read(m2.resolve_path(b)).unwrap();
            assert_eq!(bytes_a, bytes_b, "png bytes differ for {:?}", a.path);
        }
        let csv_a = fs::read(dir.path().join("one/CA/manifest.csv")).unwrap();
        let csv_b = fs::read(dir.path().join("two/CA/manifest.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn manifest_round_trips_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_cfg("CB", 5);
        generate_centre(&cfg, dir.path()).unwrap();
        let manifest = load_manifest(&dir.path().join("CB/manifest.csv")).unwrap();
        assert_eq!(manifest.records.len(), 3 * 5);
        assert_eq!(manifest.patients().len(), 3);
        for r in &manifest.records {
            assert!(manifest.resolve_path(r).is_file());
            let crop = r.crop_rect.expect("logo implies crop");
            assert_eq!((crop.x, crop.y), (8, 8));
            assert_eq!((crop.width, crop.height), (48, 48));
        }
    }

    #[test]
    fn phantom_classes_are_distinguishable() {
        // Compare per-class mean images; every pair should differ.
        let size = 64;
        let mut means: Vec<Vec<f64>> = Vec::new();
        for &label in &PlaneLabel::ALL {
            let mut acc = vec![0.0f64; size * size];
            let trials = 8;
            for t in 0..trials {
                let mut rng = rng_for(1000 + t);
                let img = render_phantom(label, size, &Habitus::neutral(), &mut rng);
                for (a, &v) in acc.iter_mut().zip(img.data()) {
                    *a += v as f64 / trials as f64;
                }
            }
            means.push(acc);
        }
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                let l2: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(l2 > 2.0, "classes {i} and {j} look identical (l2={l2})");
            }
        }
    }

    /// Connected components of pixels above `thr` (8-connectivity),
    /// keeping components of at least `min_px` pixels. Returns the
    /// principal-axis aspect ratio (sqrt of the moment eigenvalue ratio)
    /// of each kept component.
    fn bright_component_aspects(img: &Raster, thr: f32, min_px: usize) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let mut seen = vec![false; h * w];
        let mut aspects = Vec::new();
        for start in 0..h * w {
            if seen[start] || img.data()[start] <= thr {
                continue;
            }
            let mut stack = vec![start];
            let mut pixels = Vec::new();
            seen[start] = true;
            while let Some(p) = stack.pop() {
                pixels.push(p);
                let (py, px) = (p / w, p % w);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (py as i64 + dy, px as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if !seen[q] && img.data()[q] > thr {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            if pixels.len() < min_px {
                continue;
            }
            let n = pixels.len() as f64;
            let my = pixels.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
            let mx = pixels.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
            let (mut syy, mut sxx, mut syx) = (0.0, 0.0, 0.0);
            for &p in &pixels {
                let dy = (p / w) as f64 - my;
                let dx = (p % w) as f64 - mx;
                syy += dy * dy;
                sxx += dx * dx;
                syx += dy * dx;
            }
            syy /= n;
            sxx /= n;
            syx /= n;
            let tr = syy + sxx;
            let det = syy * sxx - syx * syx;
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let l1 = tr / 2.0 + disc;
            let l2 = (tr / 2.0 - disc).max(1e-9);
            aspects.push((l1 / l2).sqrt());
        }
        aspects
    }

    #[test]
    fn femur_oracle_finds_one_elongated_component() {
        for seed in 0..5 {
            let mut rng = rng_for(300 + seed);
            let img = render_phantom(PlaneLabel::Femur, 256, &Habitus::neutral(), &mut rng);
            let aspects = bright_component_aspects(&img, 0.7, 40);
            assert_eq!(aspects.len(), 1, "seed {seed}: expected one bone, got {aspects:?}");
            assert!(aspects[0] > 3.0, "seed {seed}: bone aspect {} too round", aspects[0]);
        }
    }

    #[test]
    fn other_phantom_fails_the_femur_oracle() {
        for seed in 0..5 {
            let mut rng = rng_for(400 + seed);
            let img = render_phantom(PlaneLabel::Other, 256, &Habitus::neutral(), &mut rng);
            let aspects = bright_component_aspects(&img, 0.7, 40);
            assert!(
                aspects.iter().all(|&a| a <= 3.0),
                "seed {seed}: clutter produced an elongated bright component {aspects:?}"
            );
        }
    }

    #[test]
    fn strong_shift_changes_the_image() {
        let mut rng = rng_for(9);
        let phantom = render_phantom(PlaneLabel::Brain, 64, &Habitus::neutral(), &mut rng);
        let mut rng_a = rng_for(10);
        let ident = apply_shift(&phantom, &ShiftProfile::identity(), &mut rng_a);
        let mut rng_b = rng_for(10);
        let shifted = apply_shift(&phantom, &ShiftProfile::strong(), &mut rng_b);
        let mad: f64 = ident
            .data()
            .iter()
            .zip(shifted.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / ident.data().len() as f64;
        assert!(mad > 0.02, "strong profile barely changed pixels (mad={mad})");
    }

    #[test]
    fn fan_mask_zeroes_corners() {
        for angle in [30.0, 60.0, 84.0, 90.0] {
            let mut img = Raster::filled(64, 64, 1.0);
            apply_fan_mask(&mut img, angle);
            assert_eq!(img.get(0, 0), 0.0, "angle {angle}");
            assert_eq!(img.get(0, 63), 0.0, "angle {angle}");
            assert_eq!(img.get(63, 0), 0.0, "angle {angle}");
            assert_eq!(img.get(63, 63), 0.0, "angle {angle}");
            // Mid-sector content survives.
            assert!(img.get(40, 32) > 0.0, "angle {angle}");
        }
    }

    #[test]
    fn identity_shift_only_masks() {
        let mut rng = rng_for(77);
        let phantom = render_phantom(PlaneLabel::Thorax, 64, &Habitus::neutral(), &mut rng);
        let mut draw = rng_for(78);
        let out = apply_shift(&phantom, &ShiftProfile::identity(), &mut draw);
        let mut mask = Raster::filled(64, 64, 1.0);
        apply_fan_mask(&mut mask, ShiftProfile::identity().fan_angle_deg);
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(y, x) > 0.0 {
                    assert_eq!(out.get(y, x), phantom.get(y, x), "pixel ({y},{x}) changed");
                } else {
                    assert_eq!(out.get(y, x), 0.0);
                }
            }
        }
    }

    #[test]
    fn gamma_two_squares_intensities() {
        let img = Raster::filled(64, 64, 0.5);
        let shift = ShiftProfile { gamma: 2.0, ..ShiftProfile::identity() };
        let mut draw = rng_for(1);
        let out = apply_shift(&img, &shift, &mut draw);
        let mut mask = Raster::filled(64, 64, 1.0);
        apply_fan_mask(&mut mask, shift.fan_angle_deg);
        for y in 0..64 {
            for x in 0..64 {
                if mask.get(y, x) > 0.0 {
                    assert_eq!(out.get(y, x), 0.25);
                }
            }
        }
    }

    #[test]
    fn noise_sigma_matches_empirical_spread() {
        let img = Raster::filled(100, 100, 0.5);
        let shift = ShiftProfile { noise_sigma: 0.2, fan_angle_deg: 90.0, ..ShiftProfile::identity() };
        let mut draw = rng_for(123);
        let out = apply_shift(&img, &shift, &mut draw);
        let mut mask = Raster::filled(100, 100, 1.0);
        apply_fan_mask(&mut mask, 90.0);
        let ratios: Vec<f64> = (0..100 * 100)
            .filter(|&i| mask.data()[i] > 0.0)
            .map(|i| out.data()[i] as f64 / 0.5)
            .collect();
        assert!(ratios.len() > 3000, "mask left too few pixels: {}", ratios.len());
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64;
        let rel_std = var.sqrt();
        assert!(
            (0.15..=0.25).contains(&rel_std),
            "relative std {rel_std} outside [0.15, 0.25]"
        );
    }

    #[test]
    fn artifact_rate_flags_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg("CC", 2);
        cfg.artifact_rate = 1.0;
        let manifest = generate_centre(&cfg, dir.path()).unwrap();
        assert!(manifest.records.iter().all(|r| r.artifact_flag));
        cfg.artifact_rate = 0.0;
        cfg.centre_id = "CD".into();
        let manifest = generate_centre(&cfg, dir.path()).unwrap();
        assert!(manifest.records.iter().all(|r| !r.artifact_flag));
    }

    #[test]
    fn restricted_class_list_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg("CE", 2);
        cfg.classes = vec![PlaneLabel::Abdomen, PlaneLabel::Brain, PlaneLabel::Femur];
        let manifest = generate_centre(&cfg, dir.path()).unwrap();
        let counts = manifest.class_counts();
        assert_eq!(counts[&PlaneLabel::Thorax], 0);
        assert_eq!(counts[&PlaneLabel::Other], 0);
        assert_eq!(counts[&PlaneLabel::Brain], cfg.num_patients);
    }

    #[test]
    fn generic_shapes_are_deterministic_and_bounded() {
        let a = generic_shapes_dataset(2, 32, 4);
        let b = generic_shapes_dataset(2, 32, 4);
        assert_eq!(a.len(), 16);
        for ((ra, la), (rb, lb)) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert_eq!(ra.data(), rb.data());
            assert!(ra.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let labels: BTreeSet<usize> = a.iter().map(|(_, l)| *l).collect();
        assert_eq!(labels.len(), GENERIC_CLASSES);
    }
}
