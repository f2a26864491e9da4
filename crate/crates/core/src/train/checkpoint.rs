//! Self-describing checkpoint files: safetensors with the model spec, a
//! config snapshot and the step counter stored in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::model::ModelSpec;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_spec: ModelSpec,
    pub tensors: BTreeMap<String, Tensor>,
    pub step: u64,
    /// Snapshot of the configuration that produced the weights.
    pub config: serde_json::Value,
}

impl Checkpoint {
    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let metadata = HashMap::from([
            ("model_spec".to_string(), serde_json::to_string(&self.model_spec)?),
            ("config".to_string(), serde_json::to_string(&self.config)?),
            ("step".to_string(), self.step.to_string()),
        ]);
        let bytes = safetensors::serialize(self.tensors.iter(), Some(metadata))
            .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: String| Error::Checkpoint(format!("{}: {what}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata field '{k}'")));
        let model_spec: ModelSpec = serde_json::from_str(field("model_spec")?)?;
        let config = serde_json::from_str(field("config")?)?;
        let step = field("step")?.parse().map_err(|_| bad("invalid step".into()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
            .map_err(|e| bad(e.to_string()))?
            .into_iter()
            .collect();
        Ok(Self {
            model_spec,
            tensors,
            step,
            config,
        })
    }
}
