//! Checkpoint file: a JSON document holding the configuration, the seed,
//! and every named parameter as shape plus flat row-major data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{Params, Scalar, Tensor};

pub const CHECKPOINT_FORMAT: &str = "spillover-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: TrainConfig,
    /// SHA-256 of the parameters, as [`Params::checksum`] computes it.
    pub checksum: String,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: model.config.seed,
            config: model.config.clone(),
            checksum: model.params.checksum(),
            params: model
                .params
                .iter()
                .map(|(n, t)| CheckpointParam { name: n.clone(), shape: t.shape().to_vec(), data: t.to_f64() })
                .collect(),
        }
    }

    /// Rebuilds the model, checking the version, registry and checksum.
    pub fn into_model<T: Scalar>(self) -> Result<Model<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {}/{}; expected {CHECKPOINT_FORMAT}/{CHECKPOINT_VERSION}",
                self.format, self.version
            )));
        }
        let mut params = Params::new();
        for p in &self.params {
            params.insert(p.name.clone(), Tensor::from_f64(&p.shape, &p.data)?);
        }
        let model = Model::from_params(self.config, params)?;
        let sum = model.params.checksum();
        if sum != self.checksum {
            return Err(Error::Data(format!("checkpoint checksum mismatch: stored {}, computed {sum}", self.checksum)));
        }
        Ok(model)
    }
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&Checkpoint::from_model(model))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_model()
}
