//! Versioned checkpoint files: every parameter vector, optimizer state, and
//! RNG position needed to resume or evaluate a run. JSON with shortest
//! round-trip float encoding, so save/load is bit-exact.

use crate::nn::{AdamState, MlpSpec, ParamVector};
use crate::rngstream::RngState;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("encode/decode error: {0}")]
    Codec(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: String,
    pub feeder_fingerprint: String,
    pub seed: u64,
    pub iteration: usize,
    pub actor_specs: Vec<MlpSpec>,
    pub actors: Vec<ParamVector>,
    pub actor_adam: Vec<AdamState>,
    pub critic_specs: Vec<MlpSpec>,
    pub critics: Vec<ParamVector>,
    pub critic_adam: Vec<AdamState>,
    pub rollout_rng: RngState,
    pub shuffle_rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let text = serde_json::to_string(self).map_err(|e| CheckpointError::Codec(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| CheckpointError::Codec(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }
}
