use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub norm: Option<NormStats>,
    pub epoch: usize,
    pub val_acc: Option<f64>,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model,
}

/// Writes `manifest.json` plus one little-endian f32 blob per parameter.
pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    cfg: &TrainConfig,
    norm: Option<&NormStats>,
    epoch: usize,
    val_acc: Option<f64>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    for (name, t) in model.named_params() {
        let file = format!("{name}.bin");
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        params.push(ParamEntry { name, shape: t.shape().to_vec(), file });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        spec: model.spec.clone(),
        norm: norm.cloned(),
        epoch,
        val_acc: val_acc.filter(|v| v.is_finite()),
        params,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&body)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {}", manifest.version)));
    }
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::invalid("checkpoint config hash mismatch"));
    }
    let mut model = Model::init(manifest.spec.clone(), 0)?;
    let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let names: Vec<&String> = manifest.params.iter().map(|p| &p.name).collect();
    if names.iter().map(|s| s.as_str()).ne(expected.iter().map(String::as_str)) {
        return Err(Error::invalid(format!("checkpoint parameters {names:?} do not match the model")));
    }
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for p in &manifest.params {
        let path = dir.join(&p.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::invalid(format!("{} is not a whole number of f32 values", path.display())));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(Tensor::new(p.shape.clone(), data)?);
    }
    model.set_params(&tensors)?;
    Ok(Checkpoint { manifest, model })
}
