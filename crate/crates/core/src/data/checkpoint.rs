//! Binary checkpoints: configuration plus every parameter tensor.
//!
//! ```text
//! "LINNCKPT"            8 bytes magic
//! version               u32 LE
//! payload_len           u64 LE
//! payload:
//!   config_len          u64 LE, then config_len bytes of TOML
//!   tensor_count        u32 LE
//!   per tensor:         ndim u32, dims u64 × ndim, f32 LE × product(dims)
//! crc32                 u32 LE over every preceding byte
//! ```
//!
//! Tensors appear in [`Linn::params`] order: warp network (kernels, bias per
//! layer), then the corrector (weight, bias per layer).

use std::path::Path;

use crate::config::LinnConfig;
use crate::error::{Error, Result};
use crate::model::Linn;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LINNCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;

/// A model together with the configuration it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: LinnConfig,
    pub model: Linn<f32>,
}

impl Checkpoint {
    pub fn new(config: LinnConfig, model: Linn<f32>) -> Self {
        Checkpoint { config, model }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let toml = self.config.to_toml();
        payload.extend((toml.len() as u64).to_le_bytes());
        payload.extend(toml.as_bytes());
        let params = self.model.params();
        payload.extend((params.len() as u32).to_le_bytes());
        for p in params {
            let shape = p.value.shape();
            payload.extend((shape.len() as u32).to_le_bytes());
            for &d in shape {
                payload.extend((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                payload.extend(v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER + payload.len() + 4);
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((payload.len() as u64).to_le_bytes());
        out.extend(payload);
        let crc = crc32fast::hash(&out);
        out.extend(crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            if bytes.len() < 8 && MAGIC.starts_with(bytes) {
                return Err(Error::Truncated {
                    expected: HEADER,
                    found: bytes.len(),
                });
            }
            return Err(Error::Format("missing LINNCKPT magic".into()));
        }
        if bytes.len() < HEADER {
            return Err(Error::Truncated {
                expected: HEADER,
                found: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        let payload_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let total = HEADER
            .checked_add(payload_len)
            .and_then(|v| v.checked_add(4))
            .ok_or_else(|| Error::Format("payload length overflows".into()))?;
        if bytes.len() < total {
            return Err(Error::Truncated {
                expected: total,
                found: bytes.len(),
            });
        }
        if bytes.len() > total {
            return Err(Error::Format(format!(
                "{} trailing bytes after checksum",
                bytes.len() - total
            )));
        }
        let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..total - 4]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader {
            buf: &bytes[HEADER..total - 4],
            pos: 0,
        };
        let cfg_len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::Format("configuration is not UTF-8".into()))?;
        let config = LinnConfig::from_toml(text)?;
        config.validate()?;
        let mut model = Linn::<f32>::zeros(config.model, config.ablation)?;
        let count = r.u32()? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, architecture needs {}",
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor {i} has shape {shape:?}, expected {:?}",
                    p.value.shape()
                )));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            p.value = Tensor::from_vec(&shape, data)?;
        }
        drop(params);
        if r.pos != r.buf.len() {
            return Err(Error::Format("unread bytes after the last tensor".into()));
        }
        Ok(Checkpoint { config, model })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("payload ends inside a field".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
