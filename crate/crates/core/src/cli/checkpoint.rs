//! Binary checkpoints: the 8-byte magic `I2SML001`, a little-endian `u64`
//! manifest length, a UTF-8 JSON manifest, then every parameter as
//! little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 8] = b"I2SML001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in scalars.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: RunConfig,
    tensors: Vec<TensorEntry>,
}

/// A trained model together with the run configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams<f64>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, params: ModelParams<f64>) -> Result<Self> {
        if params.config != config.model() {
            return Err(Error::Checkpoint("parameters do not match the configured architecture".into()));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name,
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                entry
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest {
            config: self.config.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.params.tensors() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing I2SML001 magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(bad(format!("manifest length {len} exceeds file size")));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("manifest: {e}")))?;
        let data = &body[len..];
        if data.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let template = ModelParams::<f64>::zeros(manifest.config.model())?;
        let names = template.names();
        if names.len() != manifest.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors for the configured architecture, found {}",
                names.len(),
                manifest.tensors.len()
            )));
        }
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(names.len());
        for ((name, want), entry) in names.iter().zip(template.tensors()).zip(&manifest.tensors) {
            if &entry.name != name || entry.shape != want.shape() {
                return Err(bad(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {:?}",
                    entry.name,
                    entry.shape,
                    want.shape()
                )));
            }
            if entry.offset != expected_offset {
                return Err(bad(format!("tensor `{name}` has offset {}, expected {expected_offset}", entry.offset)));
            }
            let end = expected_offset + want.len();
            let slice = values
                .get(expected_offset..end)
                .ok_or_else(|| bad(format!("data section ends inside tensor `{name}`")))?;
            tensors.push(Tensor::new(entry.shape.clone(), slice.to_vec()).map_err(|e| bad(format!("`{name}`: {e}")))?);
            expected_offset = end;
        }
        if expected_offset != values.len() {
            return Err(bad(format!("{} trailing values after the last tensor", values.len() - expected_offset)));
        }
        let params = template.with_tensors(&tensors)?;
        Ok(Checkpoint {
            config: manifest.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
