//! Weight files.
//!
//! Layout: the magic `EDWT0001`, then one record per tensor:
//! `u32` path length, UTF-8 path, `u32` rank, `rank` x `u32` dims, then the
//! values as `f64`. All integers and floats are little-endian. The model
//! configuration lives next to the weights as `<file>.cfg` in key=value form.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsio;
use crate::kv::KvMap;
use crate::tensor::Params;

use super::{ModelConfig, ModelWeights};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EDWT0001";

pub fn encode_weights(w: &ModelWeights) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    w.visit("", &mut |name, t| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Malformed {
                location: format!("checkpoint byte {}", self.pos),
                reason: "truncated".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Decodes weights whose tensor names and shapes must match `cfg` exactly.
pub fn decode_weights(bytes: &[u8], cfg: &ModelConfig) -> Result<ModelWeights> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Malformed {
            location: "checkpoint header".into(),
            reason: "bad magic".into(),
        });
    }
    let mut r = Reader { bytes, pos: 8 };
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Malformed {
                location: format!("checkpoint byte {}", r.pos),
                reason: "tensor path is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = r
            .take(
                numel
                    .checked_mul(8)
                    .ok_or_else(|| Error::Shape(format!("{name}: {shape:?}")))?,
            )?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, shape, data));
    }

    let mut w = ModelWeights::zeros(cfg);
    let mut expected = 0;
    let mut failure = None;
    w.visit_mut("", &mut |name, t| {
        let i = expected;
        expected += 1;
        if failure.is_some() {
            return;
        }
        match records.get(i) {
            Some((n, s, d)) if *n == name && *s == t.shape => t.data.copy_from_slice(d),
            Some((n, s, _)) => {
                failure = Some(Error::Shape(format!(
                    "checkpoint tensor {n} {s:?} where {name} {:?} was expected",
                    t.shape
                )))
            }
            None => failure = Some(Error::Shape(format!("checkpoint is missing {name}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if records.len() != expected {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, config implies {expected}",
            records.len()
        )));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    Ok(w)
}

pub fn config_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, w: &ModelWeights, cfg: &ModelConfig) -> Result<()> {
    fsio::write_atomic(&config_path(path), cfg.to_kv().to_text().as_bytes())?;
    fsio::write_atomic(path, &encode_weights(w))
}

/// Loads weights and the sidecar configuration.
pub fn load_checkpoint(path: &Path) -> Result<(ModelWeights, ModelConfig)> {
    let mut cfg = ModelConfig::full();
    cfg.apply_kv(&KvMap::load(&config_path(path))?)?;
    let bytes = fsio::read_all(path)?;
    let w = decode_weights(&bytes, &cfg).map_err(|e| match e {
        Error::Malformed { location, reason } => Error::Malformed {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        other => other,
    })?;
    Ok((w, cfg))
}
