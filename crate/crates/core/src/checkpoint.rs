//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "VOTENET\0"
//! version    u32      1
//! config     u32 length + UTF-8 TOML of the network config
//! params     u32 count, then per parameter:
//!              u32 name length + UTF-8 name
//!              u32 rank + rank × u64 dims
//!              numel × f64 values
//! ```

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{ParamSet, Tensor};
use crate::network::{param_layout, NetworkConfig, VoteNet};

pub const MAGIC: &[u8; 8] = b"VOTENET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated or corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the configuration:\n{}", .0.join("\n"))]
    Mismatch(Vec<String>),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &VoteNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.params.total_len() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &toml::to_string(&model.config).expect("network config serializes"));
    put_u32(&mut out, model.params.len() as u32);
    for (name, t) in model.params.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("needed {n} bytes at offset {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<VoteNet, CheckpointError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config: NetworkConfig =
        toml::from_str(&r.string()?).map_err(|e| CheckpointError::Corrupt(format!("config echo: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflow")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
        params.push(name, t);
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    let model = VoteNet { config, params };
    check_layout(&model)?;
    Ok(model)
}

/// Every disagreement between the stored parameters and the layout `config`
/// implies, one line per field.
pub fn layout_mismatches(params: &ParamSet, config: &NetworkConfig) -> Vec<String> {
    let layout = param_layout(config);
    let mut problems = Vec::new();
    for (name, shape) in &layout {
        match params.get(name) {
            None => problems.push(format!("{name}: missing (expected {shape:?})")),
            Some(t) if t.shape() != shape.as_slice() => {
                problems.push(format!("{name}: checkpoint {:?}, config {shape:?}", t.shape()))
            }
            Some(_) => {}
        }
    }
    for (name, _) in params.iter() {
        if !layout.iter().any(|(n, _)| n == name) {
            problems.push(format!("{name}: not part of the configured network"));
        }
    }
    problems
}

fn check_layout(model: &VoteNet) -> Result<(), CheckpointError> {
    let problems = layout_mismatches(&model.params, &model.config);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CheckpointError::Mismatch(problems))
    }
}

/// Fails when `model` cannot run under `config`, listing each differing field.
pub fn check_compatible(model: &VoteNet, config: &NetworkConfig) -> Result<(), CheckpointError> {
    let mut problems = layout_mismatches(&model.params, config);
    if model.config.height != config.height || model.config.width != config.width {
        problems.push(format!(
            "input size: checkpoint {}×{}, config {}×{}",
            model.config.height, model.config.width, config.height, config.width
        ));
    }
    if model.config.count_mode != config.count_mode {
        problems.push(format!("count_mode: checkpoint {:?}, config {:?}", model.config.count_mode, config.count_mode));
    }
    if model.config.count_temperature != config.count_temperature {
        problems.push(format!(
            "count_temperature: checkpoint {}, config {}",
            model.config.count_temperature, config.count_temperature
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CheckpointError::Mismatch(problems))
    }
}

pub fn save_checkpoint(path: &Path, model: &VoteNet) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VoteNet, CheckpointError> {
    decode(&std::fs::read(path)?)
}
