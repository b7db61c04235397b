//! Checkpoint files.
//!
//! Layout: `SMCK`, u32 version, u64 header length, a JSON header
//! (`model` config, `tensors` with name / group / shape / offset, free-form
//! `meta`), then every tensor as little-endian f32 in header order. Offsets
//! count f32 values from the start of the data section.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamGroup;

pub const MAGIC: &[u8; 4] = b"SMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write(model: &Model, meta: serde_json::Value, mut w: impl Write) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            group: p.group,
            shape: [p.value.nrows(), p.value.ncols()],
            offset,
        });
        offset += p.value.len();
    }
    let header = serde_json::to_vec(&Header {
        model: model.config().clone(),
        tensors,
        meta,
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut data = Vec::with_capacity(offset * 4);
    for (_, p) in model.store.iter() {
        for v in p.value.iter() {
            data.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&data)?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<(Model, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| bad("truncated preamble"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut hbuf = vec![0u8; len];
    r.read_exact(&mut hbuf).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&hbuf)?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut model = Model::new(header.model.clone())?;
    if header.tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors for a model with {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for t in &header.tensors {
        let id = model
            .store
            .find(&t.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", t.name)))?;
        let dst = model.store.value_mut(id);
        if dst.dim() != (t.shape[0], t.shape[1]) {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", t.name)));
        }
        let n = t.shape[0] * t.shape[1];
        let bytes = data
            .get(t.offset * 4..(t.offset + n) * 4)
            .ok_or_else(|| Error::Checkpoint(format!("data for {} out of range", t.name)))?;
        for (d, c) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    Ok((model, header.meta))
}

pub fn save(model: &Model, meta: serde_json::Value, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(model, meta, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<(Model, serde_json::Value)> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Rounds every parameter to f32 precision, matching a save/load cycle.
pub fn round_to_f32(model: &mut Model) {
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        model.store.value_mut(id).mapv_inplace(|v| v as f32 as f64);
    }
}
