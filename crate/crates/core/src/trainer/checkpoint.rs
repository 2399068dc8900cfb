//! Checkpoint files.
//!
//! Layout: the 8-byte magic `MICTCKPT`, a little-endian `u32` format version,
//! a `u64` manifest length, the JSON manifest, then the payload: every
//! parameter tensor followed by every AdamW moment buffer, as little-endian
//! floats of the manifest's dtype. The manifest records the payload's SHA-256.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::peft::{FreezePlan, Optimizer, OptimizerConfig};
use crate::tensor::{Real, Tensor, DTYPE};
use crate::transformer::ModelConfig;

const MAGIC: &[u8; 8] = b"MICTCKPT";
const VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of a model configuration.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_string(cfg).unwrap_or_default();
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub plan: FreezePlan,
    pub step: usize,
    pub params: ParamStore,
    pub optimizer: Optimizer,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    frozen_rows: Vec<usize>,
    has_moments: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    dtype: String,
    config_hash: String,
    model_config: ModelConfig,
    plan: FreezePlan,
    step: usize,
    optimizer: OptimizerConfig,
    optimizer_t: u64,
    ignored_frozen_grads: usize,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
    payload_sha256: String,
}

fn put(out: &mut Vec<u8>, x: Real) {
    #[cfg(not(feature = "f32"))]
    out.write_f64::<LittleEndian>(x).unwrap();
    #[cfg(feature = "f32")]
    out.write_f32::<LittleEndian>(x).unwrap();
}

fn get(r: &mut Cursor<&[u8]>) -> std::io::Result<Real> {
    #[cfg(not(feature = "f32"))]
    return r.read_f64::<LittleEndian>();
    #[cfg(feature = "f32")]
    return r.read_f32::<LittleEndian>();
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Checkpoint(what.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups = self.params.groups();
        if self.optimizer.first_moment.len() != groups.len() || self.optimizer.second_moment.len() != groups.len() {
            return Err(corrupt("optimizer state does not match parameter layout"));
        }
        let mut payload = Vec::new();
        for p in groups {
            p.tensor.data().iter().for_each(|&x| put(&mut payload, x));
        }
        let mut tensors = Vec::with_capacity(groups.len());
        for (i, p) in groups.iter().enumerate() {
            let moments = (&self.optimizer.first_moment[i], &self.optimizer.second_moment[i]);
            let has_moments = match moments {
                (Some(m), Some(v)) => {
                    m.data().iter().chain(v.data()).for_each(|&x| put(&mut payload, x));
                    true
                }
                (None, None) => false,
                _ => return Err(corrupt(format!("inconsistent moments for {}", p.name))),
            };
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                trainable: p.trainable,
                frozen_rows: p.frozen_rows.clone(),
                has_moments,
            });
        }
        let manifest = Manifest {
            version: VERSION,
            dtype: DTYPE.to_string(),
            config_hash: config_hash(&self.model_config),
            model_config: self.model_config.clone(),
            plan: self.plan,
            step: self.step,
            optimizer: self.optimizer.config.clone(),
            optimizer_t: self.optimizer.t,
            ignored_frozen_grads: self.optimizer.ignored_frozen_grads,
            tensors,
            payload_len: payload.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::json("checkpoint manifest", e))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses a checkpoint. With `expected_hash` the embedded model config
    /// must hash to that value. Nothing is returned unless every check passes.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<&str>) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let len = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated header"))? as usize;
        let start = r.position() as usize;
        if len > bytes.len() - start {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest =
            serde_json::from_slice(&bytes[start..start + len]).map_err(|e| corrupt(format!("corrupt manifest: {e}")))?;
        let payload = &bytes[start + len..];
        if payload.len() != manifest.payload_len {
            return Err(corrupt(format!(
                "payload is {} bytes, manifest expects {}",
                payload.len(),
                manifest.payload_len
            )));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }
        if manifest.dtype != DTYPE {
            return Err(corrupt(format!(
                "checkpoint dtype {} differs from build dtype {DTYPE}",
                manifest.dtype
            )));
        }
        let actual = config_hash(&manifest.model_config);
        if actual != manifest.config_hash {
            return Err(corrupt("manifest config hash does not match its model config"));
        }
        if let Some(expected) = expected_hash {
            if expected != actual {
                return Err(corrupt(format!(
                    "config hash mismatch: checkpoint has {actual}, run expects {expected}"
                )));
            }
        }

        let mut pr = Cursor::new(payload);
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| get(&mut pr))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|_| corrupt("payload shorter than the tensor table"))?;
            Tensor::new(shape.to_vec(), data)
        };
        let mut params = ParamStore::new();
        for t in &manifest.tensors {
            let id = params.insert(t.name.clone(), read_tensor(&t.shape)?)?;
            let g = params.get_mut(id);
            g.trainable = t.trainable;
            g.frozen_rows = t.frozen_rows.clone();
        }
        let mut first = Vec::with_capacity(manifest.tensors.len());
        let mut second = Vec::with_capacity(manifest.tensors.len());
        for t in &manifest.tensors {
            if t.has_moments {
                first.push(Some(read_tensor(&t.shape)?));
                second.push(Some(read_tensor(&t.shape)?));
            } else {
                first.push(None);
                second.push(None);
            }
        }
        let optimizer = Optimizer {
            config: manifest.optimizer,
            t: manifest.optimizer_t,
            first_moment: first,
            second_moment: second,
            ignored_frozen_grads: manifest.ignored_frozen_grads,
        };
        Ok(Self {
            model_config: manifest.model_config,
            plan: manifest.plan,
            step: manifest.step,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_hash)
    }
}
