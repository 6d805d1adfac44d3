//! Checkpoints: a JSON sidecar describing every array, and a flat
//! little-endian `f64` payload next to it (`name.json` + `name.bin`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamSnapshot};

pub const FORMAT: &str = "novas-checkpoint";
pub const VERSION: u32 = 1;

/// Where training stopped: completed epochs or iterations, and the number
/// of optimizer updates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub experiment: String,
    pub completed: u64,
    pub optimizer_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub cursor: Cursor,
    pub params: Vec<ParamSnapshot>,
    pub optimizer: AdamState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset and length in `f64` elements within the payload.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub first: Vec<Span>,
    pub second: Vec<Span>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub cursor: Cursor,
    pub payload: String,
    pub payload_len: usize,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: OptimizerEntry,
}

/// `run/ckpt.json` → `run/ckpt.bin`.
pub fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

impl Checkpoint {
    /// Write the payload, then the sidecar. Returns the two paths.
    pub fn save(&self, sidecar: &Path) -> Result<(PathBuf, PathBuf)> {
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |data: &[f64]| {
            let span = Span {
                offset: payload.len(),
                len: data.len(),
            };
            payload.extend_from_slice(data);
            span
        };
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let s = push(&p.data);
                TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    offset: s.offset,
                    len: s.len,
                }
            })
            .collect();
        let first = self.optimizer.first.iter().map(|m| push(m)).collect();
        let second = self.optimizer.second.iter().map(|v| push(v)).collect();
        let bin = payload_path(sidecar);
        let meta = Sidecar {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: self.config_hash.clone(),
            cursor: self.cursor.clone(),
            payload: bin
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            payload_len: payload.len(),
            tensors,
            optimizer: OptimizerEntry {
                step: self.optimizer.step,
                first,
                second,
            },
        };
        if let Some(dir) = sidecar.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let bytes: Vec<u8> = payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes)?;
        fs::write(sidecar, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok((sidecar.to_path_buf(), bin))
    }

    pub fn read_sidecar(sidecar: &Path) -> Result<Sidecar> {
        let meta: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
        if meta.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", meta.format)));
        }
        if meta.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", meta.version)));
        }
        Ok(meta)
    }

    pub fn load(sidecar: &Path) -> Result<Self> {
        let meta = Self::read_sidecar(sidecar)?;
        let bin = sidecar.with_file_name(&meta.payload);
        let bytes = fs::read(&bin)?;
        if bytes.len() != meta.payload_len * 8 {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, sidecar expects {}",
                bin.display(),
                bytes.len(),
                meta.payload_len * 8
            )));
        }
        let payload: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let slice = |offset: usize, len: usize| -> Result<Vec<f64>> {
            payload
                .get(offset..offset + len)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Checkpoint(format!("span {offset}+{len} outside the payload")))
        };
        let params = meta
            .tensors
            .iter()
            .map(|t| {
                if t.shape.iter().product::<usize>() != t.len {
                    return Err(Error::Checkpoint(format!("`{}`: shape {:?} vs length {}", t.name, t.shape, t.len)));
                }
                Ok(ParamSnapshot {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: slice(t.offset, t.len)?,
                })
            })
            .collect::<Result<_>>()?;
        let spans = |s: &[Span]| s.iter().map(|s| slice(s.offset, s.len)).collect::<Result<Vec<_>>>();
        Ok(Checkpoint {
            config_hash: meta.config_hash,
            cursor: meta.cursor,
            params,
            optimizer: AdamState {
                step: meta.optimizer.step,
                first: spans(&meta.optimizer.first)?,
                second: spans(&meta.optimizer.second)?,
            },
        })
    }

    /// A warning when the checkpoint came from a different configuration.
    pub fn config_mismatch(&self, config_hash: &str) -> Option<String> {
        (self.config_hash != config_hash).then(|| {
            format!(
                "warning: checkpoint was written under config {}, current config is {}",
                short(&self.config_hash),
                short(config_hash)
            )
        })
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
