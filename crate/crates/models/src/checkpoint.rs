//! Weight files (safetensors) with a JSON sidecar describing the model.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{nn, Device, Tensor};

use crate::backbone::{Backbone, BackboneSpec};
use crate::embed::read_json;
use crate::error::{Error, Result};
use crate::maml::{MamlConfig, MetaClassifier};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub kind: String,
    /// Digest of every stored tensor name and shape.
    pub architecture_hash: String,
    pub param_count: usize,
    pub config: serde_json::Value,
    pub seed: u64,
    pub epochs_completed: usize,
    pub weights_sha256: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn named(stores: &[(&str, &nn::VarStore)]) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = stores
        .iter()
        .flat_map(|(prefix, vs)| {
            vs.variables()
                .into_iter()
                .map(move |(name, t)| (format!("{prefix}/{name}"), t))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn architecture_hash(stores: &[(&str, &nn::VarStore)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in named(stores) {
        h.update(format!("{name}:{:?}\n", t.size()).as_bytes());
    }
    hex::encode(h.finalize())
}

#[allow(clippy::too_many_arguments)]
pub fn save(
    path: &Path,
    kind: &str,
    stores: &[(&str, &nn::VarStore)],
    param_count: usize,
    config: serde_json::Value,
    seed: u64,
    epochs_completed: usize,
    extra: serde_json::Value,
) -> Result<CheckpointMeta> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tensors: Vec<(String, Tensor)> = named(stores)
        .into_iter()
        .map(|(n, t)| (n, t.detach().to_device(Device::Cpu).contiguous()))
        .collect();
    Tensor::write_safetensors(&tensors, path)?;
    let meta = CheckpointMeta {
        format: FORMAT_VERSION,
        kind: kind.into(),
        architecture_hash: architecture_hash(stores),
        param_count,
        config,
        seed,
        epochs_completed,
        weights_sha256: file_sha256(path)?,
        extra,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(meta)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::checkpoint(path, format!("sidecar {} is missing", side.display())));
    }
    let meta: CheckpointMeta = read_json(&side)?;
    if meta.format != FORMAT_VERSION {
        return Err(Error::checkpoint(path, format!("unsupported checkpoint format {}", meta.format)));
    }
    Ok(meta)
}

/// Copies stored weights into freshly built stores after checking the
/// architecture and file digests.
pub fn load_into(path: &Path, meta: &CheckpointMeta, stores: &mut [(&str, &mut nn::VarStore)]) -> Result<()> {
    let view: Vec<(&str, &nn::VarStore)> = stores.iter().map(|(p, v)| (*p, &**v)).collect();
    if architecture_hash(&view) != meta.architecture_hash {
        return Err(Error::checkpoint(path, "architecture does not match the sidecar"));
    }
    let digest = file_sha256(path)?;
    if digest != meta.weights_sha256 {
        return Err(Error::checkpoint(path, "weights file digest does not match the sidecar"));
    }
    let stored: std::collections::HashMap<String, Tensor> = Tensor::read_safetensors(path)?.into_iter().collect();
    let _guard = tch::no_grad_guard();
    for (prefix, vs) in stores.iter_mut() {
        for (name, mut var) in vs.variables() {
            let key = format!("{prefix}/{name}");
            let src = stored
                .get(&key)
                .ok_or_else(|| Error::checkpoint(path, format!("tensor {key} is missing")))?;
            if src.size() != var.size() {
                return Err(Error::checkpoint(path, format!("tensor {key} has shape {:?}", src.size())));
            }
            var.copy_(&src.to_device(var.device()));
        }
    }
    Ok(())
}

pub fn save_backbone(
    backbone: &Backbone,
    path: &Path,
    kind: &str,
    training_config: serde_json::Value,
    seed: u64,
    epochs_completed: usize,
    extra: serde_json::Value,
) -> Result<CheckpointMeta> {
    let config = serde_json::json!({ "spec": backbone.spec(), "training": training_config });
    save(
        path,
        kind,
        &[("backbone", backbone.var_store())],
        backbone.param_count(),
        config,
        seed,
        epochs_completed,
        extra,
    )
}

pub fn load_backbone(path: &Path, device: Device) -> Result<(Backbone, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let spec: BackboneSpec = serde_json::from_value(meta.config["spec"].clone())
        .map_err(|e| Error::checkpoint(path, format!("unreadable backbone spec: {e}")))?;
    let mut b = Backbone::new(spec, device, meta.seed)?;
    load_into(path, &meta, &mut [("backbone", b.var_store_mut())])?;
    Ok((b, meta))
}

pub fn save_maml(model: &MetaClassifier, path: &Path, seed: u64, extra: serde_json::Value) -> Result<CheckpointMeta> {
    let config = serde_json::json!({ "spec": model.spec(), "maml": model.config() });
    save(
        path,
        "maml",
        &[("maml", model.var_store())],
        model.param_count(),
        config,
        seed,
        model.outer_steps_done(),
        extra,
    )
}

pub fn load_maml(path: &Path, device: Device) -> Result<(MetaClassifier, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let bad = |e: serde_json::Error| Error::checkpoint(path, format!("unreadable maml config: {e}"));
    let spec: BackboneSpec = serde_json::from_value(meta.config["spec"].clone()).map_err(bad)?;
    let cfg: MamlConfig = serde_json::from_value(meta.config["maml"].clone()).map_err(bad)?;
    let mut m = MetaClassifier::new(spec, cfg, device, meta.seed)?;
    load_into(path, &meta, &mut [("maml", m.var_store_mut())])?;
    m.set_outer_steps_done(meta.epochs_completed);
    Ok((m, meta))
}
