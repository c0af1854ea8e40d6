//! safetensors checkpoints: float64 tensors under hierarchical parameter
//! names, plus one metadata entry holding the format version and config.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::{DocIq, ModelConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "dociq";
pub const CACHE_ENV: &str = "DOCIQ_CACHE";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
}

fn to_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn checkpoint_bytes(model: &DocIq) -> Result<Vec<u8>> {
    let params = model.named_params();
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|(n, p)| (n.clone(), p.shape().to_vec(), to_bytes(p.iter().copied())))
        .collect();
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| Ok((n.as_str(), TensorView::new(Dtype::F64, shape.clone(), bytes).map_err(st_err)?)))
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
    };
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&header)?)]);
    safetensors::serialize(views, &Some(meta)).map_err(st_err)
}

pub fn save_checkpoint(model: &DocIq, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

/// Copy every tensor of `model` whose name is present in `tensors`;
/// with `require_all`, a missing or extra name is an error.
fn fill(model: &mut DocIq, tensors: &SafeTensors, prefix: &str, require_all: bool) -> Result<usize> {
    let available: std::collections::HashSet<String> = tensors.names().into_iter().cloned().collect();
    let mut used = 0;
    for (name, mut param) in model.named_params_mut() {
        if !name.starts_with(prefix) {
            continue;
        }
        if !available.contains(&name) {
            if require_all {
                return Err(Error::Checkpoint(format!("missing tensor `{name}`")));
            }
            continue;
        }
        let t = tensors.tensor(&name).map_err(st_err)?;
        if t.dtype() != Dtype::F64 || t.shape() != param.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` is {:?}{:?}, expected F64{:?}",
                t.dtype(),
                t.shape(),
                param.shape()
            )));
        }
        for (dst, chunk) in param.iter_mut().zip(t.data().chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        used += 1;
    }
    if require_all && used != available.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model uses {used}",
            available.len()
        )));
    }
    Ok(used)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<DocIq> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(st_err)?;
    let raw = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("no model header in metadata".into()))?;
    let header: Header = serde_json::from_str(raw)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let tensors = SafeTensors::deserialize(bytes).map_err(st_err)?;
    let mut model = DocIq::build(header.config, 0)?;
    fill(&mut model, &tensors, "", true)?;
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DocIq> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}

pub fn pretrained_path(model: &DocIq) -> Result<PathBuf> {
    let dir = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Checkpoint(format!("pretrained weights requested but {CACHE_ENV} is not set")))?;
    Ok(dir.join(format!("backbone-{}.safetensors", model.config().backbone.name())))
}

/// Overwrite backbone tensors from `$DOCIQ_CACHE/backbone-<kind>.safetensors`.
pub fn load_pretrained_backbone(model: &mut DocIq) -> Result<()> {
    let path = pretrained_path(model)?;
    let bytes = fs::read(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(st_err)?;
    let n = fill(model, &tensors, "backbone.", false)?;
    if n == 0 {
        return Err(Error::Checkpoint(format!("{} holds no backbone tensors", path.display())));
    }
    log::info!("loaded {n} pretrained backbone tensors from {}", path.display());
    Ok(())
}
