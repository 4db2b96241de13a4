//! Versioned checkpoint container: one file holding the run configuration,
//! both vocabularies and every parameter array. Arrays are stored as raw
//! little-endian `f64` bytes (exact for `f32` and `f64` models), so a
//! save/load cycle reproduces forward outputs bit for bit.
//!
//! Layout: `b"TGCNCKPT"`, `u32` format version, `u64` header length, JSON
//! header (config, vocabularies, model structure, tensor manifest), then
//! each tensor's data in manifest order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::Vocab;
use crate::model::{Model, ModelConfig};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"TGCNCKPT";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint<A> {
    /// The flat key=value run configuration, echoed verbatim.
    pub run_config: BTreeMap<String, String>,
    pub entity_names: Vec<String>,
    /// Augmented relation names (inverses included).
    pub relation_names: Vec<String>,
    pub model: Model<A>,
}

impl<A: Real> Checkpoint<A> {
    pub fn entity_vocab(&self) -> Vocab {
        Vocab::from_names(&self.entity_names)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    run_config: BTreeMap<String, String>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    model: ModelConfig,
    tensors: Vec<TensorMeta>,
}

pub fn save_checkpoint<A: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<A>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let slices = ckpt.model.param_slices();
    let header = Header {
        format_version: FORMAT_VERSION,
        run_config: ckpt.run_config.clone(),
        entity_names: ckpt.entity_names.clone(),
        relation_names: ckpt.relation_names.clone(),
        model: ckpt.model.config.clone(),
        tensors: slices
            .iter()
            .map(|(name, data)| TensorMeta {
                name: name.clone(),
                len: data.len() as u64,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
    w.write_all(&header_bytes)?;
    for (_, data) in &slices {
        for &x in *data {
            w.write_f64::<LittleEndian>(x.to_f64_lossy())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<A: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<A>> {
    let mut r = BufReader::new(File::open(path.as_ref()).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", path.as_ref().display()))
    })?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("truncated magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::Checkpoint(format!("truncated version: {e}")))?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::Checkpoint(format!("truncated header length: {e}")))?;
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;

    if header.entity_names.len() != header.model.n_entities
        || header.relation_names.len() != header.model.n_relations
    {
        return Err(Error::Checkpoint(
            "vocabulary sizes disagree with the model structure".into(),
        ));
    }
    let mut model = Model::<A>::zeros(header.model.clone())
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
    {
        let mut slices = model.param_slices_mut();
        if slices.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "tensor manifest lists {} tensors, model has {}",
                header.tensors.len(),
                slices.len()
            )));
        }
        for (i, meta) in header.tensors.iter().enumerate() {
            let (name, data) = &mut slices[i];
            if *name != meta.name || data.len() as u64 != meta.len {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} mismatch: file has {} ({} entries), model expects {} ({})",
                    meta.name,
                    meta.len,
                    name,
                    data.len()
                )));
            }
            for x in data.iter_mut() {
                let v = r
                    .read_f64::<LittleEndian>()
                    .map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
                *x = A::from_f64_exact(v);
            }
        }
    }
    Ok(Checkpoint {
        run_config: header.run_config,
        entity_names: header.entity_names,
        relation_names: header.relation_names,
        model,
    })
}
