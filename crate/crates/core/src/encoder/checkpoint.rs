//! Checkpoint layout: magic, format version, a JSON header (config, vocab
//! hash, PLE edges, age standardizer, parameter names and shapes) and a flat
//! little-endian `f32` parameter blob in store order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderModel, ModelConfig};
use super::EncoderError;
use crate::embed::{AgeStandardizer, PLEncoder};
use crate::Scalar;

const MAGIC: &[u8; 8] = b"MEDSCALE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_sizes: [usize; 3],
    vocab_hash: String,
    ple_edges: Vec<f64>,
    standardizer: AgeStandardizer,
    params: Vec<(String, Vec<usize>)>,
    meta: serde_json::Value,
}

/// A loaded checkpoint: the model plus what was stored alongside it.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: EncoderModel<T>,
    pub vocab_hash: String,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &EncoderModel<T>, vocab_hash: &str, meta: serde_json::Value) -> Result<(), EncoderError> {
    let header = Header {
        config: model.config.clone(),
        vocab_sizes: model.vocab_sizes,
        vocab_hash: vocab_hash.to_string(),
        ple_edges: model.ple.edges().to_vec(),
        standardizer: model.standardizer,
        params: model.store.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| EncoderError::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in model.store.flatten() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, EncoderError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EncoderError::Format(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(EncoderError::Format(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| EncoderError::Format(e.to_string()))?;

    let ple = PLEncoder::from_edges(header.ple_edges)?;
    let mut model = EncoderModel::<T>::with_sizes(header.config, header.vocab_sizes, ple, header.standardizer)?;
    let layout: Vec<(String, Vec<usize>)> = model.store.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect();
    if layout != header.params {
        return Err(EncoderError::Format("parameter layout does not match the stored config".into()));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() != model.num_params() * 4 {
        return Err(EncoderError::Format(format!("blob holds {} bytes, expected {}", blob.len(), model.num_params() * 4)));
    }
    let flat: Vec<T> = blob.chunks_exact(4).map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))).collect();
    model.store.load_flat(&flat)?;
    Ok(Checkpoint { model, vocab_hash: header.vocab_hash, meta: header.meta })
}
