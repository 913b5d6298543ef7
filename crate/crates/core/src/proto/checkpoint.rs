use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::{GlobalModelState, ProtectedUnit};
use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::zoo::ModelSpec;

/// Hex SHA-256 of a serialized configuration.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub layer: usize,
    pub params: LayerParams,
}

/// Finalized weights with their shapes, tied to the configuration that
/// produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub model: ModelSpec,
    pub layers: Vec<CheckpointLayer>,
    pub protected: Option<ProtectedUnit>,
}

impl Checkpoint {
    pub fn new(config_hash: String, model: &ModelSpec, state: &GlobalModelState) -> Self {
        Checkpoint {
            config_hash,
            model: model.clone(),
            layers: state
                .finalized
                .iter()
                .map(|(&layer, p)| CheckpointLayer {
                    layer,
                    params: p.clone(),
                })
                .collect(),
            protected: state.protected.clone(),
        }
    }

    pub fn state(&self) -> GlobalModelState {
        GlobalModelState {
            finalized: self
                .layers
                .iter()
                .map(|l| (l.layer, l.params.clone()))
                .collect(),
            protected: self.protected.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
