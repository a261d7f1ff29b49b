use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Phase, TrainConfig, TrainError, TrainState};
use crate::predictor::{Ablation, ModelConfig, Predictor};

pub const CHECKPOINT_FORMAT: &str = "trajrisk-checkpoint/1";

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON of the configuration.
pub fn config_fingerprint(model: &ModelConfig, ablation: &Ablation, train: Option<&TrainConfig>) -> String {
    let value = serde_json::json!({ "model": model, "ablation": ablation, "train": train });
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_completed: usize,
    pub phase: Option<Phase>,
    pub best_val_loss: Option<f64>,
    pub train_samples: usize,
}

/// Weights, the configuration that produced them and optional resume state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub fingerprint: String,
    pub model: Predictor,
    pub train_config: Option<TrainConfig>,
    pub metadata: CheckpointMeta,
    pub resume: Option<TrainState>,
}

impl Checkpoint {
    pub fn new(model: Predictor, train_config: Option<TrainConfig>, metadata: CheckpointMeta, resume: Option<TrainState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            fingerprint: config_fingerprint(&model.config, &model.ablation, train_config.as_ref()),
            model,
            train_config,
            metadata,
            resume,
        }
    }

    /// A weights-only checkpoint of an untrained or externally built model.
    pub fn from_predictor(model: Predictor) -> Self {
        let meta = CheckpointMeta {
            epochs_completed: 0,
            phase: None,
            best_val_loss: None,
            train_samples: 0,
        };
        Self::new(model, None, meta, None)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| TrainError::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Format(format!("unsupported format `{}`", ck.format)));
        }
        ck.model.config.validate()?;
        let expected = crate::predictor::Predictor::new(ck.model.config, ck.model.ablation, 0)?;
        for (name, t) in expected.params.iter() {
            match ck.model.params.get(name) {
                Some(p) if p.shape() == t.shape() && p.is_finite() => {}
                Some(p) => return Err(TrainError::Format(format!("parameter `{name}` has shape {:?}, expected {:?}", p.shape(), t.shape()))),
                None => return Err(TrainError::Format(format!("missing parameter `{name}`"))),
            }
        }
        if ck.model.params.len() != expected.params.len() {
            return Err(TrainError::Format("unexpected extra parameters".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json()).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
