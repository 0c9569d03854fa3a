//! JSON checkpoints. Floats are written in shortest round-trip form and read
//! back exactly, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::params::{LstmLayerParams, ModelSizes, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gradual-lstm-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// 1-based phase index this checkpoint closes.
    pub phase: usize,
    pub sizes: ModelSizes,
    /// Seeds of every phase that contributed to these parameters.
    pub seeds: Vec<u64>,
    pub vocab_fingerprint: Option<String>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(
        params: &NetworkParams,
        phase: usize,
        seeds: Vec<u64>,
        vocab_fingerprint: Option<String>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            phase,
            sizes: params.sizes(),
            seeds,
            vocab_fingerprint,
            tensors: params
                .tensors()
                .into_iter()
                .map(|t| TensorRecord {
                    name: t.name,
                    shape: t.shape,
                    data: t.data.to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<NetworkParams> {
        let s = &self.sizes;
        let mut params = NetworkParams {
            embedding: Array2::zeros((s.vocab, s.embedding)),
            layers: (0..s.num_layers())
                .map(|k| LstmLayerParams::zeros(s.layer_input(k), s.hidden[k]))
                .collect(),
            softmax_weight: (!s.tied).then(|| Array2::zeros((s.vocab, s.top()))),
            softmax_bias: Array1::zeros(s.vocab),
        };
        params.validate()?;
        {
            let slots = params.tensors_mut();
            if slots.len() != self.tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} tensors, found {}",
                    slots.len(),
                    self.tensors.len()
                )));
            }
            for ((name, data), rec) in slots.into_iter().zip(&self.tensors) {
                if name != rec.name || data.len() != rec.data.len() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} does not fit slot {name}",
                        rec.name
                    )));
                }
                data.copy_from_slice(&rec.data);
            }
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}
