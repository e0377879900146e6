//! Versioned JSON checkpoint. Parameter arrays are stored as base64 of
//! little-endian `f64` bytes so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::featurize::Featurizer;
use super::model::{ClassifierModel, Head};
use super::TrainConfig;
use crate::loss::TrainRecipe;
use crate::task::TaskId;

pub const CHECKPOINT_FORMAT: &str = "mhc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    WrongFormat(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt array `{0}`")]
    CorruptArray(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodedArray {
    shape: Vec<usize>,
    data: String,
}

fn encode(shape: &[usize], values: impl Iterator<Item = f64>) -> EncodedArray {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    EncodedArray {
        shape: shape.to_vec(),
        data: STANDARD.encode(bytes),
    }
}

fn decode(a: &EncodedArray, name: &str) -> Result<Vec<f64>, CheckpointError> {
    let bad = || CheckpointError::CorruptArray(name.to_string());
    let bytes = STANDARD.decode(&a.data).map_err(|_| bad())?;
    if bytes.len() != 8 * a.shape.iter().product::<usize>() {
        return Err(bad());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn decode2(a: &EncodedArray, name: &str) -> Result<Array2<f64>, CheckpointError> {
    let [r, c] = a.shape[..] else {
        return Err(CheckpointError::CorruptArray(name.to_string()));
    };
    Array2::from_shape_vec((r, c), decode(a, name)?)
        .map_err(|_| CheckpointError::CorruptArray(name.to_string()))
}

fn decode1(a: &EncodedArray, name: &str) -> Result<Array1<f64>, CheckpointError> {
    Ok(Array1::from(decode(a, name)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodedHead {
    task: TaskId,
    weight: EncodedArray,
    bias: EncodedArray,
}

#[derive(Debug, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    featurizer: Featurizer,
    hidden: usize,
    recipe: TrainRecipe,
    train_config: Option<TrainConfig>,
    best_step: usize,
    trunk: EncodedArray,
    trunk_bias: EncodedArray,
    heads: Vec<EncodedHead>,
}

/// A trained model with everything needed to featurize and score new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub featurizer: Featurizer,
    pub model: ClassifierModel,
    pub recipe: TrainRecipe,
    pub train_config: Option<TrainConfig>,
    pub best_step: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let m = &self.model;
        let c = Container {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            featurizer: self.featurizer,
            hidden: m.hidden(),
            recipe: self.recipe.clone(),
            train_config: self.train_config.clone(),
            best_step: self.best_step,
            trunk: encode(m.trunk.shape(), m.trunk.iter().copied()),
            trunk_bias: encode(m.trunk_bias.shape(), m.trunk_bias.iter().copied()),
            heads: m
                .heads
                .iter()
                .map(|(&task, h)| EncodedHead {
                    task,
                    weight: encode(h.weight.shape(), h.weight.iter().copied()),
                    bias: encode(h.bias.shape(), h.bias.iter().copied()),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&c)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let c: Container = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::WrongFormat(c.format));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(c.version));
        }
        let mut heads = BTreeMap::new();
        for h in &c.heads {
            heads.insert(
                h.task,
                Head {
                    weight: decode2(&h.weight, "head.weight")?,
                    bias: decode1(&h.bias, "head.bias")?,
                },
            );
        }
        Ok(Self {
            featurizer: c.featurizer,
            model: ClassifierModel {
                trunk: decode2(&c.trunk, "trunk")?,
                trunk_bias: decode1(&c.trunk_bias, "trunk_bias")?,
                heads,
            },
            recipe: c.recipe,
            train_config: c.train_config,
            best_step: c.best_step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
