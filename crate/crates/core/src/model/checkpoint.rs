//! JSON checkpoint container: format tag, version, seed, configuration echo
//! and named parameter tensors.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::{ModelConfig, NsfParams, ToyNsfModel};
use crate::error::{NsfError, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "nsf-toy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &ToyNsfModel,
        seed: u64,
        train_config: Option<TrainConfig>,
        best_epoch: Option<usize>,
    ) -> Self {
        let mut tensors = Vec::new();
        model.params.visit(&mut |name, shape, data| {
            tensors.push(Tensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            model_config: model.config.clone(),
            train_config,
            best_epoch,
            tensors,
        }
    }

    /// Rebuilds the model, checking every tensor name and shape against the
    /// layout implied by the stored configuration.
    pub fn to_model(&self) -> Result<ToyNsfModel> {
        self.model_config
            .validate()
            .map_err(|e| NsfError::Checkpoint(format!("stored model config is invalid: {e}")))?;
        let mut params = NsfParams::init(&self.model_config, &mut ChaCha8Rng::seed_from_u64(0));
        let layout = params.layout();
        if layout.len() != self.tensors.len() {
            return Err(NsfError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(NsfError::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(NsfError::Checkpoint(format!(
                    "tensor {name:?} holds {} values for shape {shape:?}",
                    t.data.len()
                )));
            }
        }
        let flat: Vec<f64> = self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
        params.set_flat(&flat)?;
        Ok(ToyNsfModel {
            config: self.model_config.clone(),
            params,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| NsfError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(NsfError::Checkpoint(format!(
                "unknown format tag {:?}",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(NsfError::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        serde_json::from_str(text)
            .map_err(|e| NsfError::Checkpoint(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NsfError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyNsfModel {
        let cfg = ModelConfig {
            channels: 2,
            cond_hidden: 2,
            cond_dims: 1,
            feature_dims: 3,
            ..ModelConfig::default()
        };
        ToyNsfModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let ck = Checkpoint::from_model(&m, 4, Some(TrainConfig::default()), Some(3));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn rejects_version_truncation_and_shape_errors() {
        let m = model();
        let ck = Checkpoint::from_model(&m, 4, None, None);
        let json = ck.to_json();
        let bumped = json.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(NsfError::Checkpoint(_))));
        assert!(Checkpoint::from_json(&json[..json.len() / 2]).is_err());
        assert!(Checkpoint::from_json("").is_err());

        let mut bad = ck.clone();
        bad.tensors[0].data.pop();
        assert!(bad.to_model().is_err());
        let mut bad = ck;
        bad.tensors.swap(0, 1);
        assert!(bad.to_model().is_err());
    }
}
