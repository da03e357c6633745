//! Checkpoint container: a length-prefixed JSON header (config, tensor
//! names/shapes/trainability, format version) followed by the tensor
//! payloads as 64-bit little-endian floats concatenated in header order.
//!
//! Base checkpoints hold the full backbone. Delta checkpoints hold only the
//! tensors an adaptation run trained (the method's own tensors plus whatever
//! base tensors were trainable, i.e. the head), so base + delta reconstructs
//! the adapted model.

use super::params::{ModelConfig, ModelParams};
use super::store::TensorStore;
use crate::adaptation::{apply_flags, AdaptationMethod, AdaptationState};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CheckpointKind {
    Base,
    Delta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: CheckpointKind,
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method: Option<AdaptationMethod>,
    tensors: Vec<TensorMeta>,
}

/// A delta checkpoint in memory: the method descriptor plus its tensors.
#[derive(Debug)]
pub struct DeltaCheckpoint {
    pub config: ModelConfig,
    pub method: AdaptationMethod,
    pub tensors: TensorStore,
}

fn write_container(
    path: &Path,
    header: &Header,
    tensors: impl Iterator<Item = Matrix>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| Error::contract(format!("header serialization failed: {e}")))?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    for m in tensors {
        for v in m.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_container(path: &Path) -> Result<(Header, TensorStore)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let truncated = |what: &str| Error::parse(path, 0, format!("truncated file while reading {what}"));

    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf).map_err(|_| truncated("header length"))?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|_| truncated("header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse(path, 0, format!("invalid header JSON: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            path,
            0,
            format!(
                "unsupported checkpoint version {}, expected {FORMAT_VERSION}",
                header.format_version
            ),
        ));
    }
    header.config.validate()?;

    let mut store = TensorStore::new();
    let mut f64_buf = [0u8; 8];
    for meta in &header.tensors {
        let mut data = Vec::with_capacity(meta.rows * meta.cols);
        for _ in 0..meta.rows * meta.cols {
            r.read_exact(&mut f64_buf)
                .map_err(|_| truncated(&format!("payload of {}", meta.name)))?;
            let v = f64::from_le_bytes(f64_buf);
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    0,
                    format!("non-finite value in tensor {}", meta.name),
                ));
            }
            data.push(v);
        }
        store.insert(
            meta.name.clone(),
            Matrix::from_vec(meta.rows, meta.cols, data)?,
            meta.trainable,
        )?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::parse(path, 0, "trailing bytes after payload".to_string()));
    }
    Ok((header, store))
}

fn meta_for(store: &TensorStore) -> Vec<TensorMeta> {
    store
        .iter()
        .map(|t| TensorMeta {
            name: t.name.clone(),
            rows: t.value.rows(),
            cols: t.value.cols(),
            trainable: t.trainable,
        })
        .collect()
}

/// Writes a full backbone checkpoint.
pub fn write_base(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Base,
        config: cfg.clone(),
        method: None,
        tensors: meta_for(params.store()),
    };
    write_container(path, &header, params.store().iter().map(|t| t.value.clone()))
}

/// Reads a full backbone checkpoint.
pub fn read_base(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let (header, store) = read_container(path)?;
    if header.kind != CheckpointKind::Base {
        return Err(Error::parse(
            path,
            0,
            "expected a base checkpoint, found a delta".to_string(),
        ));
    }
    Ok((header.config, ModelParams::from_store(store)))
}

/// Writes the trained tensors of an adaptation run: every trainable base
/// tensor plus the whole adaptation store.
pub fn write_delta(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
    state: &AdaptationState,
) -> Result<()> {
    let mut metas = Vec::new();
    let mut tensors = Vec::new();
    for t in params.store().iter().filter(|t| t.trainable) {
        metas.push(TensorMeta {
            name: t.name.clone(),
            rows: t.value.rows(),
            cols: t.value.cols(),
            trainable: t.trainable,
        });
        tensors.push(t.value.clone());
    }
    for t in state.store().iter() {
        metas.push(TensorMeta {
            name: t.name.clone(),
            rows: t.value.rows(),
            cols: t.value.cols(),
            trainable: t.trainable,
        });
        tensors.push(t.value.clone());
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: CheckpointKind::Delta,
        config: cfg.clone(),
        method: Some(*state.method()),
        tensors: metas,
    };
    write_container(path, &header, tensors.into_iter())
}

/// Reads a delta checkpoint.
pub fn read_delta(path: &Path) -> Result<DeltaCheckpoint> {
    let (header, store) = read_container(path)?;
    if header.kind != CheckpointKind::Delta {
        return Err(Error::parse(
            path,
            0,
            "expected a delta checkpoint, found a base".to_string(),
        ));
    }
    let method = header.method.ok_or_else(|| {
        Error::parse(path, 0, "delta checkpoint missing the method descriptor".to_string())
    })?;
    Ok(DeltaCheckpoint {
        config: header.config,
        method,
        tensors: store,
    })
}

/// Reconstructs an adapted model from a base plus a delta: base tensors
/// named in the delta (the head) are overwritten, adaptation tensors become
/// the new [`AdaptationState`], and trainability flags are restored.
pub fn apply_delta(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    delta: DeltaCheckpoint,
) -> Result<AdaptationState> {
    if delta.config != *cfg {
        return Err(Error::config(format!(
            "delta was trained for a different geometry (d_model {} vs {})",
            delta.config.d_model, cfg.d_model
        )));
    }
    let mut adaptation_store = TensorStore::new();
    for t in delta.tensors.iter() {
        match params.store_mut().get_mut(&t.name) {
            Some(base) => {
                if base.value.shape() != t.value.shape() {
                    return Err(Error::shape(
                        "apply_delta",
                        base.value.shape_string(),
                        t.value.shape_string(),
                    ));
                }
                base.value = t.value.clone();
            }
            None => adaptation_store.insert(t.name.clone(), t.value.clone(), t.trainable)?,
        }
    }
    apply_flags(params, &delta.method);
    Ok(AdaptationState::from_parts(delta.method, adaptation_store))
}
