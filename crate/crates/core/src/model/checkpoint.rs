//! Checkpoint container: named f32 state entries with shapes and buffer
//! flags, an architecture tag, and a trailing SHA-256 over the whole
//! payload. Values round-trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::seed::sha256;

pub const CKPT_MAGIC: [u8; 4] = *b"PSCK";
pub const CKPT_VERSION: u16 = 1;

/// One named tensor of model state. `buffer` marks non-learnable state
/// (BN running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub buffer: bool,
    pub values: Vec<f32>,
}

/// Outcome of a non-strict state load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Entries in the file with no counterpart in the model.
    pub file_only: Vec<String>,
    /// Model parameters the file did not provide.
    pub model_only: Vec<String>,
    /// Entries present on both sides but with incompatible shapes.
    pub shape_conflicts: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint corrupt: checksum mismatch")]
    ChecksumMismatch,
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("shape conflict on {entry}: model expects {expected:?}, file has {got:?}")]
    ShapeConflict { entry: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("strict load failed: {file_only} file-only and {model_only} model-only entries")]
    StateMismatch { file_only: usize, model_only: usize },
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    assert!(bytes.len() <= u16::MAX as usize, "string too long for checkpoint");
    buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(bytes);
}

pub fn save_checkpoint(
    path: &Path,
    arch_tag: &str,
    entries: &[StateEntry],
) -> Result<(), CheckpointError> {
    let io = |e: std::io::Error| CheckpointError::Io { path: path.to_path_buf(), source: e };
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    push_str(&mut buf, arch_tag);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        push_str(&mut buf, &e.group);
        push_str(&mut buf, &e.name);
        buf.push(u8::from(e.buffer));
        assert!(e.shape.len() <= u8::MAX as usize);
        buf.push(e.shape.len() as u8);
        let mut count = 1usize;
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
            count *= d;
        }
        assert_eq!(count, e.values.len(), "entry {}/{} shape/values mismatch", e.group, e.name);
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = sha256(&buf);
    buf.extend_from_slice(&digest);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &buf).map_err(|e| CheckpointError::Io { path: tmp.clone(), source: e })?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Truncated(format!("{what}: invalid utf8")))
    }
}

/// Returns the architecture tag and all state entries. The checksum is
/// verified before anything is parsed.
pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<StateEntry>), CheckpointError> {
    let data = fs::read(path)
        .map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })?;
    if data.len() < CKPT_MAGIC.len() + 2 + 32 {
        return Err(CheckpointError::Truncated("file shorter than header".into()));
    }
    if data[..4] != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, stored_digest) = data.split_at(data.len() - 32);
    if sha256(body) != *stored_digest {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { data: body, pos: 4 };
    let version = r.u16("version")?;
    if version != CKPT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let arch = r.string("arch tag")?;
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("entry {i}");
        let group = r.string(&what)?;
        let name = r.string(&what)?;
        let flags = r.take(1, &what)?[0];
        let ndim = r.take(1, &what)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut n = 1usize;
        for _ in 0..ndim {
            let d = r.u32(&what)? as usize;
            shape.push(d);
            n *= d;
        }
        let raw = r.take(n * 4, &what)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(StateEntry { group, name, shape, buffer: flags & 1 != 0, values });
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Truncated("trailing bytes after entries".into()));
    }
    Ok((arch, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_entries() -> Vec<StateEntry> {
        vec![
            StateEntry {
                group: "stem".into(),
                name: "conv_weight".into(),
                shape: vec![2, 1, 2, 2],
                buffer: false,
                values: vec![-0.0, f32::MIN_POSITIVE, 1.0, -3.25, 0.1, 2e-7, -1e5, 0.5],
            },
            StateEntry {
                group: "head".into(),
                name: "bn_running_mean".into(),
                shape: vec![3],
                buffer: true,
                values: vec![0.25, -0.75, 12.0],
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let entries = sample_entries();
        save_checkpoint(&path, "arch-x", &entries).unwrap();
        let (arch, back) = load_checkpoint(&path).unwrap();
        assert_eq!(arch, "arch-x");
        assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            assert_eq!(a.group, b.group);
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.buffer, b.buffer);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&p1, "t", &sample_entries()).unwrap();
        save_checkpoint(&p2, "t", &sample_entries()).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, "t", &sample_entries()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Flip one payload byte in the middle.
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::ChecksumMismatch)));
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, "t", &sample_entries()).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn model_state_survives_save_load() {
        use crate::model::densenet::{DenseNet, DenseNetConfig};
        use crate::model::layers::Mode;
        use crate::model::tensor::Tensor4;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = DenseNetConfig::desk_small(5);
        let mut original = DenseNet::new(cfg.clone(), 77);
        save_checkpoint(&path, &cfg.arch_tag(), &original.state_entries()).unwrap();

        let (arch, entries) = load_checkpoint(&path).unwrap();
        assert_eq!(arch, cfg.arch_tag());
        let mut restored = DenseNet::new(cfg, 1234);
        restored.load_state(&entries, true).unwrap();

        let mut x = Tensor4::zeros(1, 1, 32, 32);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 13) % 31) as f64 / 30.0;
        }
        let (a, _) = original.forward(&x, Mode::Eval);
        let (b, _) = restored.forward(&x, Mode::Eval);
        assert_eq!(a, b, "identical state must give identical logits");
    }
}
