//! Image preparation: decode, field-of-view crop, grayscale, bilinear
//! resize and min-max normalisation, plus a flat binary cache of prepared
//! rasters.
//!
//! The chain is fixed: crop (when the record has one) runs on the decoded
//! image, grayscale conversion uses Rec. 601 luma weights, resizing is
//! bilinear with half-pixel centres and edge clamping, and normalisation
//! maps the raster's own min/max to [0, 1] (or the dataset-wide min/max
//! when configured). A constant raster normalises to all zeros.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CropRect, DatasetManifest, ImageRecord, PlaneLabel};
use crate::raster::Raster;
use crate::seed::{hex_string, sha256};

/// Whether min/max normalisation uses each image's own range or the range
/// of the whole prepared dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    #[default]
    Image,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub height: u32,
    pub width: u32,
    pub norm_scope: NormScope,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { height: 224, width: 224, norm_scope: NormScope::Image }
    }
}

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("image file missing: {0}")]
    MissingImage(PathBuf),
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("crop rectangle does not intersect {path}")]
    EmptyCrop { path: PathBuf },
    #[error("bad prepared cache file {path}: {message}")]
    BadCache { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PrepError + '_ {
    move |e| PrepError::Io { path: path.to_path_buf(), source: e }
}

/// Decode a PNG into a grayscale raster with values in [0, 1]. Colour
/// images collapse via Rec. 601 luma (0.299 R + 0.587 G + 0.114 B).
pub fn decode_gray(path: &Path) -> Result<Raster, PrepError> {
    if !path.is_file() {
        return Err(PrepError::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| PrepError::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for px in rgb.pixels() {
        let [r, g, b] = px.0;
        let luma = 0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32;
        data.push(luma / 255.0);
    }
    Ok(Raster::new(h as usize, w as usize, data))
}

/// Cut `rect` out of `src`, clamping the rectangle to the image bounds.
pub fn crop(src: &Raster, rect: CropRect, origin: &Path) -> Result<Raster, PrepError> {
    let x0 = rect.x.min(src.width() as u32) as usize;
    let y0 = rect.y.min(src.height() as u32) as usize;
    let x1 = (rect.x.saturating_add(rect.width)).min(src.width() as u32) as usize;
    let y1 = (rect.y.saturating_add(rect.height)).min(src.height() as u32) as usize;
    if x0 >= x1 || y0 >= y1 {
        return Err(PrepError::EmptyCrop { path: origin.to_path_buf() });
    }
    let mut out = Raster::zeros(y1 - y0, x1 - x0);
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(y - y0, x - x0, src.get(y, x));
        }
    }
    Ok(out)
}

/// Bilinear resize with half-pixel centres: destination index `d` samples
/// source coordinate `(d + 0.5) * (src / dst) - 0.5`, clamped to the
/// source extent.
pub fn resize_bilinear(src: &Raster, out_h: usize, out_w: usize) -> Raster {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    if out_h == src.height() && out_w == src.width() {
        return src.clone();
    }
    let scale_y = src.height() as f32 / out_h as f32;
    let scale_x = src.width() as f32 / out_w as f32;
    let coord = |d: usize, scale: f32, max: usize| -> (usize, usize, f32) {
        let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (max - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(max - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut out = Raster::zeros(out_h, out_w);
    for dy in 0..out_h {
        let (y0, y1, ty) = coord(dy, scale_y, src.height());
        for dx in 0..out_w {
            let (x0, x1, tx) = coord(dx, scale_x, src.width());
            let top = src.get(y0, x0) * (1.0 - tx) + src.get(y0, x1) * tx;
            let bot = src.get(y1, x0) * (1.0 - tx) + src.get(y1, x1) * tx;
            out.set(dy, dx, top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Map `[lo, hi]` to [0, 1] in place. A zero-width range yields all zeros.
pub fn normalize_range(raster: &mut Raster, lo: f32, hi: f32) {
    let span = hi - lo;
    for v in raster.data_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Per-image min-max normalisation; returns the range that was mapped.
pub fn normalize_min_max(raster: &mut Raster) -> (f32, f32) {
    let lo = raster.min();
    let hi = raster.max();
    normalize_range(raster, lo, hi);
    (lo, hi)
}

/// Decode + crop + resize for one record; normalisation is applied only
/// in [`NormScope::Image`] scope (dataset scope normalises later with the
/// global range).
fn prepare_unnormalized(
    path: &Path,
    crop_rect: Option<CropRect>,
    cfg: &PrepConfig,
) -> Result<Raster, PrepError> {
    let decoded = decode_gray(path)?;
    let cropped = match crop_rect {
        Some(rect) => crop(&decoded, rect, path)?,
        None => decoded,
    };
    Ok(resize_bilinear(&cropped, cfg.height as usize, cfg.width as usize))
}

/// Full preparation chain for a standalone image.
pub fn prepare_image(
    path: &Path,
    crop_rect: Option<CropRect>,
    cfg: &PrepConfig,
) -> Result<Raster, PrepError> {
    let mut raster = prepare_unnormalized(path, crop_rect, cfg)?;
    normalize_min_max(&mut raster);
    Ok(raster)
}

pub const PREP_MAGIC: [u8; 4] = *b"PREP";
pub const PREP_VERSION: u16 = 1;

/// Write a prepared raster to the flat cache format: magic, version,
/// height, width, then row-major little-endian f32 samples.
pub fn write_prepared(raster: &Raster, path: &Path) -> Result<(), PrepError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut buf =
        Vec::with_capacity(4 + 2 + 8 + raster.data().len() * 4);
    buf.extend_from_slice(&PREP_MAGIC);
    buf.extend_from_slice(&PREP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    for v in raster.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&buf).map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn read_prepared(path: &Path) -> Result<Raster, PrepError> {
    let bad = |message: &str| PrepError::BadCache {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 14];
    f.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if header[..4] != PREP_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != PREP_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let h = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(io_err(path))?;
    if payload.len() != h * w * 4 {
        return Err(bad(&format!("payload {} bytes, expected {}", payload.len(), h * w * 4)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Raster::new(h, w, data))
}

/// One prepared image with the record metadata the training layer needs.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub centre_id: String,
    pub patient_id: String,
    pub label: PlaneLabel,
    pub resolved_path: PathBuf,
    pub crop_rect: Option<CropRect>,
    pub cache_path: PathBuf,
}

impl PreparedItem {
    pub fn load(&self) -> Result<Raster, PrepError> {
        read_prepared(&self.cache_path)
    }
}

/// A manifest's records prepared into the cache, indexable by the
/// `(resolved path, crop)` identity that backfilled copies preserve.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub cfg: PrepConfig,
    pub items: Vec<PreparedItem>,
    by_source: BTreeMap<(PathBuf, String), usize>,
}

fn crop_key(crop: Option<CropRect>) -> String {
    match crop {
        Some(c) => format!("{},{},{},{}", c.x, c.y, c.width, c.height),
        None => "full".to_string(),
    }
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Find the prepared item for a record by its source image identity.
    /// Works for records borrowed across centres because backfill keeps
    /// the donor's absolute path and crop.
    pub fn find(&self, resolved_path: &Path, crop: Option<CropRect>) -> Option<&PreparedItem> {
        self.by_source
            .get(&(resolved_path.to_path_buf(), crop_key(crop)))
            .map(|&i| &self.items[i])
    }
}

fn cache_file_name(resolved: &Path, crop: Option<CropRect>, cfg: &PrepConfig, range_tag: &str) -> String {
    let key = format!(
        "v{}|{}|{}|{}x{}|{:?}|{}",
        PREP_VERSION,
        resolved.display(),
        crop_key(crop),
        cfg.height,
        cfg.width,
        cfg.norm_scope,
        range_tag,
    );
    let digest = sha256(key.as_bytes());
    format!("{}.prep", &hex_string(&digest)[..32])
}

/// Prepare every record of a manifest into `cache_dir`.
///
/// Image-scope normalisation is one pass. Dataset scope first scans the
/// unnormalised rasters for the global range, then prepares with that
/// range; the range becomes part of the cache key so stale entries from a
/// different dataset composition can never be reused.
pub fn prepare_manifest(
    manifest: &DatasetManifest,
    cfg: &PrepConfig,
    cache_dir: &Path,
) -> Result<PreparedDataset, PrepError> {
    fs::create_dir_all(cache_dir).map_err(io_err(cache_dir))?;
    let range_tag = match cfg.norm_scope {
        NormScope::Image => String::from("per-image"),
        NormScope::Dataset => {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for record in &manifest.records {
                let resolved = manifest.resolve_path(record);
                let raster = prepare_unnormalized(&resolved, record.crop_rect, cfg)?;
                lo = lo.min(raster.min());
                hi = hi.max(raster.max());
            }
            if !lo.is_finite() {
                (lo, hi) = (0.0, 0.0);
            }
            format!("range:{}:{}", lo.to_bits(), hi.to_bits())
        }
    };

    let mut items = Vec::with_capacity(manifest.records.len());
    let mut by_source = BTreeMap::new();
    for record in &manifest.records {
        let resolved = manifest.resolve_path(record);
        let cache_path =
            cache_dir.join(cache_file_name(&resolved, record.crop_rect, cfg, &range_tag));
        if !cache_path.is_file() {
            let mut raster = prepare_unnormalized(&resolved, record.crop_rect, cfg)?;
            match cfg.norm_scope {
                NormScope::Image => {
                    normalize_min_max(&mut raster);
                }
                NormScope::Dataset => {
                    let parts: Vec<&str> = range_tag.split(':').collect();
                    let lo = f32::from_bits(parts[1].parse().unwrap());
                    let hi = f32::from_bits(parts[2].parse().unwrap());
                    normalize_range(&mut raster, lo, hi);
                }
            }
            write_prepared(&raster, &cache_path)?;
        }
        let idx = items.len();
        by_source.insert((resolved.clone(), crop_key(record.crop_rect)), idx);
        items.push(PreparedItem {
            centre_id: record.centre_id.clone(),
            patient_id: record.patient_id.clone(),
            label: record.label,
            resolved_path: resolved,
            crop_rect: record.crop_rect,
            cache_path,
        });
    }
    Ok(PreparedDataset { cfg: cfg.clone(), items, by_source })
}

/// Look up a record's prepared raster across several prepared datasets
/// (target centre first, then donors).
pub fn find_prepared<'a>(
    record: &ImageRecord,
    home: &'a PreparedDataset,
    donors: &[&'a PreparedDataset],
    home_manifest: &DatasetManifest,
) -> Option<&'a PreparedItem> {
    let resolved = home_manifest.resolve_path(record);
    if let Some(item) = home.find(&resolved, record.crop_rect) {
        return Some(item);
    }
    donors.iter().find_map(|d| d.find(&resolved, record.crop_rect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CentreProfile, DatasetManifest, ImageRecord};

    fn save_gray_png(path: &Path, pixels: &[u8], w: u32, h: u32) {
        let img = image::GrayImage::from_raw(w, h, pixels.to_vec()).unwrap();
        img.save(path).unwrap();
    }

    #[test]
    fn decode_gray_uses_luma_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        let img = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        img.save(&path).unwrap();
        let raster = decode_gray(&path).unwrap();
        assert_eq!(raster.height(), 2);
        assert!((raster.get(0, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn decode_missing_file() {
        assert!(matches!(
            decode_gray(Path::new("/nonexistent/x.png")),
            Err(PrepError::MissingImage(_))
        ));
    }

    #[test]
    fn crop_extracts_submatrix_and_clamps() {
        let src = Raster::new(4, 4, (0..16).map(|v| v as f32).collect());
        let rect = CropRect { x: 1, y: 2, width: 2, height: 1 };
        let out = crop(&src, rect, Path::new("t")).unwrap();
        assert_eq!(out.height(), 1);
        assert_eq!(out.width(), 2);
        assert_eq!(out.data(), &[9.0, 10.0]);
        // Rectangle reaching past the edge clamps to the image.
        let rect = CropRect { x: 3, y: 3, width: 10, height: 10 };
        let out = crop(&src, rect, Path::new("t")).unwrap();
        assert_eq!(out.data(), &[15.0]);
        // Fully outside: error.
        let rect = CropRect { x: 4, y: 0, width: 2, height: 2 };
        assert!(matches!(crop(&src, rect, Path::new("t")), Err(PrepError::EmptyCrop { .. })));
    }

    #[test]
    fn resize_checkerboard_oracle() {
        // Hand-computed half-pixel bilinear values for a 2x2 checkerboard
        // upscaled to 4x4.
        let src = Raster::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let out = resize_bilinear(&src, 4, 4);
        let expected = [
            [0.0, 0.25, 0.75, 1.0],
            [0.25, 0.375, 0.625, 0.75],
            [0.75, 0.625, 0.375, 0.25],
            [1.0, 0.75, 0.25, 0.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert!(
                    (out.get(y, x) - expected[y][x]).abs() < 1e-6,
                    "({y},{x}): {} vs {}",
                    out.get(y, x),
                    expected[y][x]
                );
            }
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let src = Raster::new(3, 5, (0..15).map(|v| v as f32).collect());
        let same = resize_bilinear(&src, 3, 5);
        assert_eq!(same.data(), src.data());
        let flat = Raster::filled(4, 4, 0.7);
        let down = resize_bilinear(&flat, 2, 2);
        assert!(down.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn normalize_maps_range_and_handles_constant() {
        let mut r = Raster::new(1, 3, vec![2.0, 4.0, 6.0]);
        let (lo, hi) = normalize_min_max(&mut r);
        assert_eq!((lo, hi), (2.0, 6.0));
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
        let mut flat = Raster::filled(2, 2, 3.3);
        normalize_min_max(&mut flat);
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepared_cache_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.prep");
        let raster = Raster::new(2, 3, vec![0.0, 0.25, f32::MIN_POSITIVE, 1.0, 0.999, 0.5]);
        write_prepared(&raster, &path).unwrap();
        let back = read_prepared(&path).unwrap();
        assert_eq!(back.height(), 2);
        assert_eq!(back.width(), 3);
        for (a, b) in raster.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn prepared_cache_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.prep");
        write_prepared(&Raster::zeros(2, 2), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_prepared(&path), Err(PrepError::BadCache { .. })));
        // Truncated payload.
        write_prepared(&Raster::zeros(2, 2), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_prepared(&path), Err(PrepError::BadCache { .. })));
    }

    fn profile(id: &str) -> CentreProfile {
        CentreProfile {
            centre_id: id.into(),
            country: "T".into(),
            vendor: "V".into(),
            transducer_freq_mhz: (3.0, 7.0),
            trimesters: [2].into_iter().collect(),
        }
    }

    fn tiny_manifest(dir: &Path) -> DatasetManifest {
        // Two images with different intensity ranges.
        save_gray_png(&dir.join("a.png"), &[0, 60, 120, 180], 2, 2);
        save_gray_png(&dir.join("b.png"), &[100, 110, 120, 130], 2, 2);
        let mut m = DatasetManifest::new(profile("C"), vec![]);
        m.base_dir = dir.to_path_buf();
        for name in ["a.png", "b.png"] {
            m.records.push(ImageRecord {
                centre_id: "C".into(),
                patient_id: format!("p-{name}"),
                label: PlaneLabel::Brain,
                path: PathBuf::from(name),
                crop_rect: None,
                artifact_flag: false,
                borrowed_from: None,
            });
        }
        m
    }

    #[test]
    fn prepare_manifest_image_scope_spans_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let cfg = PrepConfig { height: 4, width: 4, norm_scope: NormScope::Image };
        let cache = dir.path().join("cache");
        let prepared = prepare_manifest(&manifest, &cfg, &cache).unwrap();
        assert_eq!(prepared.len(), 2);
        for item in &prepared.items {
            let raster = item.load().unwrap();
            assert_eq!(raster.height(), 4);
            assert!((raster.min() - 0.0).abs() < 1e-6);
            assert!((raster.max() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prepare_manifest_dataset_scope_uses_global_range() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let cfg = PrepConfig { height: 2, width: 2, norm_scope: NormScope::Dataset };
        let cache = dir.path().join("cache");
        let prepared = prepare_manifest(&manifest, &cfg, &cache).unwrap();
        // Image b spans [100, 130] within a global range of [0, 180], so
        // after normalisation it must not reach 0 or 1.
        let b = prepared.items[1].load().unwrap();
        assert!(b.min() > 0.5);
        assert!(b.max() < 0.8);
        let a = prepared.items[0].load().unwrap();
        assert!((a.min() - 0.0).abs() < 1e-6);
        assert!((a.max() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn prepare_manifest_is_deterministic_and_reuses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let cfg = PrepConfig { height: 4, width: 4, norm_scope: NormScope::Image };
        let cache = dir.path().join("cache");
        let first = prepare_manifest(&manifest, &cfg, &cache).unwrap();
        let bytes_before: Vec<Vec<u8>> =
            first.items.iter().map(|i| fs::read(&i.cache_path).unwrap()).collect();
        let second = prepare_manifest(&manifest, &cfg, &cache).unwrap();
        for (item, before) in second.items.iter().zip(&bytes_before) {
            assert_eq!(&fs::read(&item.cache_path).unwrap(), before);
        }
        assert_eq!(first.items[0].cache_path, second.items[0].cache_path);
    }

    #[test]
    fn prepare_applies_crop_before_resize() {
        let dir = tempfile::tempdir().unwrap();
        // 4x4 image: left half black, right half white; crop right half.
        let mut pixels = vec![0u8; 16];
        for y in 0..4 {
            for x in 2..4 {
                pixels[y * 4 + x] = 200;
            }
        }
        let path = dir.path().join("c.png");
        save_gray_png(&path, &pixels, 4, 4);
        let cfg = PrepConfig { height: 2, width: 2, norm_scope: NormScope::Image };
        let rect = CropRect { x: 2, y: 0, width: 2, height: 4 };
        let raster = prepare_image(&path, Some(rect), &cfg).unwrap();
        // Cropped region is constant, so normalisation zeroes it.
        assert!(raster.data().iter().all(|&v| v == 0.0));
        let full = prepare_image(&path, None, &cfg).unwrap();
        assert!(full.max() > 0.9);
    }

    #[test]
    fn find_locates_items_by_source_identity() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let cfg = PrepConfig { height: 2, width: 2, norm_scope: NormScope::Image };
        let prepared = prepare_manifest(&manifest, &cfg, &dir.path().join("cache")).unwrap();
        let record = &manifest.records[1];
        let item = find_prepared(record, &prepared, &[], &manifest).unwrap();
        assert_eq!(item.patient_id, record.patient_id);
        let missing = ImageRecord { path: PathBuf::from("zz.png"), ..record.clone() };
        assert!(find_prepared(&missing, &prepared, &[], &manifest).is_none());
    }

    #[test]
    fn norm_scope_parses_from_config_text() {
        let cfg: PrepConfig =
            toml::from_str("height = 64\nwidth = 64\nnorm_scope = \"dataset\"").unwrap();
        assert_eq!(cfg.norm_scope, NormScope::Dataset);
        let cfg: PrepConfig = toml::from_str("height = 64\nwidth = 64").unwrap();
        assert_eq!(cfg.norm_scope, NormScope::Image);
    }
}
