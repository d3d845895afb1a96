//! `CSIM` model checkpoints.
//!
//! Layout: magic, version (u32), spec JSON blob, parameter count (u64),
//! parameters (f64 LE), CRC32 over everything before it.

use std::path::Path;

use super::model::{CsiModel, ModelRegistry, ModelSpec};
use super::tensor::ParamSet;
use super::LearnError;
use crate::binio::{read_file, write_atomic, ByteReader, ByteWriter, FormatError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(spec: &ModelSpec, params: &ParamSet) -> Vec<u8> {
    let mut w = ByteWriter::with_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    let json = serde_json::to_vec(spec).expect("model spec serializes");
    w.put_blob(&json);
    let flat = params.flatten();
    w.put_u64(flat.len() as u64);
    w.put_f64s(&flat);
    w.finish()
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelSpec, Vec<f64>), LearnError> {
    let mut r = ByteReader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let json = r.blob()?;
    let n = r.u64()?;
    r.expect_total_len((r.position() as u64).saturating_add(n.saturating_mul(8)).saturating_add(4))?;
    let n = n as usize;
    r.verify_checksum()?;
    let spec: ModelSpec = serde_json::from_slice(json).map_err(|e| FormatError::Meta(e.to_string()))?;
    let flat = r.f64s(n)?;
    Ok((spec, flat))
}

/// Rebuilds the model named in the checkpoint and loads its parameters.
pub fn checkpoint_from_bytes(
    bytes: &[u8],
    registry: &ModelRegistry,
) -> Result<(Box<dyn CsiModel>, ParamSet), LearnError> {
    let (spec, flat) = parse_checkpoint(bytes)?;
    let model = registry.build(spec)?;
    let mut params = model.layout().zeros();
    params.load_flat(&flat)?;
    Ok((model, params))
}

pub fn save_checkpoint(path: &Path, spec: &ModelSpec, params: &ParamSet) -> Result<(), LearnError> {
    Ok(write_atomic(path, &checkpoint_bytes(spec, params))?)
}

pub fn load_checkpoint(path: &Path, registry: &ModelRegistry) -> Result<(Box<dyn CsiModel>, ParamSet), LearnError> {
    checkpoint_from_bytes(&read_file(path)?, registry)
}
