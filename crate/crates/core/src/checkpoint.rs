//! Binary model checkpoints: a magic tag, a format version, a JSON
//! metadata header (run config, per-customer normalization state, tensor
//! directory), then the parameter payload as little-endian f32.
//!
//! Weights are trained in f64 and stored in f32; loading yields the
//! f32-exact values, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::NormalizationStats;
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"LOADSYN\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint payload truncated")]
    Truncated,
    #[error("corrupt tensor directory: {0}")]
    CorruptDirectory(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomerState {
    pub stats: NormalizationStats,
    pub typical_load: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    customers: BTreeMap<String, CustomerState>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub customers: BTreeMap<String, CustomerState>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), CheckpointError> {
        let header = Header {
            config: self.config.clone(),
            customers: self.customers.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, tensor)| TensorEntry {
                    name: name.clone(),
                    shape: tensor.shape().to_vec(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        writer.write_all(MAGIC)?;
        writer.write_all(&VERSION.to_le_bytes())?;
        writer.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        writer.write_all(&header_bytes)?;
        for tensor in self.params.values() {
            for &v in tensor.data() {
                writer.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word).map_err(|_| CheckpointError::Truncated)?;
        let found = u32::from_le_bytes(word);
        if found != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found });
        }
        let mut len_bytes = [0u8; 8];
        reader
            .read_exact(&mut len_bytes)
            .map_err(|_| CheckpointError::Truncated)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        reader
            .read_exact(&mut header_bytes)
            .map_err(|_| CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut params = ParamSet::new();
        for entry in &header.tensors {
            let numel: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                reader.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            let tensor = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| CheckpointError::CorruptDirectory(e.to_string()))?;
            if params.insert(entry.name.clone(), tensor).is_some() {
                return Err(CheckpointError::CorruptDirectory(format!(
                    "duplicate tensor name {}",
                    entry.name
                )));
            }
        }
        Ok(Self {
            config: header.config,
            customers: header.customers,
            params,
        })
    }

    pub fn save_file(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut writer = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, CheckpointError> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
