//! Flat binary parameter container.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u32` blob count, then
//! per blob: `u32` name length, UTF-8 name, `u32` rank, `u64` per dim, and the
//! `f32` payload. Architecture hyperparameters live in a JSON sidecar next to
//! the container (`<path>.json`).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"INSPXCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub sidecar: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AutogradError + '_ {
    move |source| AutogradError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the container and its sidecar, each through a temp file + rename.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)?;
    let side = serde_json::to_vec_pretty(&ckpt.sidecar).map_err(|e| AutogradError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    write_atomic(&sidecar_path(path), &side)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |msg: &str| AutogradError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8).ok_or_else(|| bad("truncated header"))? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = cur.u32().ok_or_else(|| bad("truncated header"))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = cur.u32().ok_or_else(|| bad("truncated blob"))? as usize;
        let name = std::str::from_utf8(cur.take(nlen).ok_or_else(|| bad("truncated name"))?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = cur.u32().ok_or_else(|| bad("truncated blob"))? as usize;
        if rank > 4 {
            return Err(bad("rank above 4"));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("truncated shape"))?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4).ok_or_else(|| bad("truncated payload"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let side = sidecar_path(path);
    let sidecar = match fs::read(&side) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| AutogradError::Checkpoint {
            path: side.display().to_string(),
            msg: e.to_string(),
        })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => serde_json::Value::Null,
        Err(e) => return Err(io_err(&side)(e)),
    };
    Ok(Checkpoint { tensors, sidecar })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        let ckpt = Checkpoint {
            tensors: vec![
                ("conv0.w".into(), Tensor::new(&[2, 1, 1, 3], vec![0.1, -0.2, 3.5, f32::MIN_POSITIVE, 7.0, -0.0]).unwrap()),
                ("conv0.b".into(), Tensor::new(&[2], vec![1.0, 2.0]).unwrap()),
            ],
            sidecar: serde_json::json!({"base_width": 16, "residual_blocks": 3}),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"NOTACKPT\x01\0\0\0\0\0\0\0").unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"));
    }
}
