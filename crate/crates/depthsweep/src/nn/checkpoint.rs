//! Self-describing binary checkpoints with bit-exact float64 payloads.
//!
//! Layout: 4 magic bytes `DSCK`, format version (u32 LE), manifest length
//! (u64 LE), manifest JSON (record names and lengths plus caller-supplied
//! metadata such as architecture hyperparameters), then each record's
//! values as little-endian f64 in manifest order. Floats never pass
//! through a decimal representation, so save/load round-trips are
//! bit-exact.

use crate::nn::NnError;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"DSCK";
pub const VERSION: u32 = 1;

/// One named float64 payload, e.g. a parameter tensor or running
/// batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    records: Vec<RecordDesc>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct RecordDesc {
    name: String,
    len: u64,
}

/// Writes records in the given order with caller metadata.
pub fn save(path: &Path, meta: &serde_json::Value, records: &[(&str, &[f64])]) -> Result<(), NnError> {
    let manifest = Manifest {
        records: records
            .iter()
            .map(|(name, values)| RecordDesc { name: (*name).to_string(), len: values.len() as u64 })
            .collect(),
        meta: meta.clone(),
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, values) in records {
        for v in *values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, validating the header, manifest, payload sizes,
/// and that no trailing bytes follow the last record.
pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<CheckpointRecord>), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Checkpoint("file too short for header".into()))?;
    if magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic bytes".into()));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)
        .map_err(|_| NnError::Checkpoint("file too short for version".into()))?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8)
        .map_err(|_| NnError::Checkpoint("file too short for manifest length".into()))?;
    let manifest_len = u64::from_le_bytes(l8);
    if manifest_len > 1 << 30 {
        return Err(NnError::Checkpoint(format!("implausible manifest length {manifest_len}")));
    }
    let mut manifest_bytes = vec![0u8; manifest_len as usize];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| NnError::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| NnError::Checkpoint(format!("manifest parse: {e}")))?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for desc in manifest.records {
        let mut buf = vec![0u8; desc.len as usize * 8];
        r.read_exact(&mut buf)
            .map_err(|_| NnError::Checkpoint(format!("truncated payload for {}", desc.name)))?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        records.push(CheckpointRecord { name: desc.name, values });
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after payloads".into()));
    }
    Ok((manifest.meta, records))
}
