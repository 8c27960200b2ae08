//! Self-describing checkpoints: a safetensors file whose metadata carries the
//! format tag and the model configuration.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};

use super::{ModelConfig, UnicModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "unic-v1";

const FORMAT_KEY: &str = "format";
const CONFIG_KEY: &str = "config";

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, vars: &VarMap) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = {
        let data = vars.data().lock().expect("var map poisoned");
        let mut v: Vec<_> = data.iter().map(|(k, var)| (k.clone(), var.as_tensor().clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    let metadata = HashMap::from([
        (FORMAT_KEY.to_string(), CHECKPOINT_FORMAT.to_string()),
        (CONFIG_KEY.to_string(), serde_json::to_string(cfg)?),
    ]);
    safetensors::serialize_to_file(tensors, Some(metadata), path.as_ref())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(())
}

fn read_metadata(bytes: &[u8]) -> Result<ModelConfig> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    match meta.get(FORMAT_KEY).map(String::as_str) {
        Some(CHECKPOINT_FORMAT) => {}
        other => return Err(Error::Checkpoint(format!("unsupported format {other:?}"))),
    }
    let cfg = meta.get(CONFIG_KEY).ok_or_else(|| Error::Checkpoint("missing config".into()))?;
    Ok(serde_json::from_str(cfg)?)
}

pub fn read_checkpoint_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    read_metadata(&std::fs::read(path)?)
}

/// Loads a checkpoint into a fresh model of the stored configuration.
pub fn load_checkpoint(path: impl AsRef<Path>, dtype: DType, device: &Device) -> Result<(UnicModel, VarMap)> {
    let bytes = std::fs::read(path)?;
    let cfg = read_metadata(&bytes)?;
    let mut vars = VarMap::new();
    let model = UnicModel::new(&cfg, VarBuilder::from_varmap(&vars, dtype, device))?;
    let stored = candle_core::safetensors::load_buffer(&bytes, device)?;
    {
        let data = vars.data().lock().expect("var map poisoned");
        if data.len() != stored.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                stored.len(),
                data.len()
            )));
        }
    }
    for (name, tensor) in &stored {
        vars.set_one(name, tensor.to_dtype(dtype)?)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    }
    Ok((model, vars))
}
