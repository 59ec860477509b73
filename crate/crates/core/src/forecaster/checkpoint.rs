//! JSON checkpoint: config plus every tensor with its shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ForecasterParams;
use super::ForecasterConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "motf-forecaster";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ForecasterConfig,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &ForecasterParams) -> Self {
        let tensors = params
            .layout()
            .into_iter()
            .zip(params.tensors())
            .map(|((name, shape), data)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: params.config.clone(),
            tensors,
        }
    }

    /// Rebuilds params, checking every name and shape against the config.
    pub fn into_params(self) -> Result<ForecasterParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let config = self
            .config
            .validated()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = ForecasterParams::zeros(config);
        let layout = params.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), rec) in layout.iter().zip(&self.tensors) {
            if *name != rec.name || *shape != rec.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, name, shape
                )));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds {} values for shape {:?}",
                    rec.name,
                    rec.data.len(),
                    rec.shape
                )));
            }
        }
        for (dst, rec) in params.tensors_mut().into_iter().zip(self.tensors) {
            dst.copy_from_slice(&rec.data);
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        Ok(params)
    }
}

pub fn save_params(path: &Path, params: &ForecasterParams) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_params(params))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ForecasterParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.into_params()
}
