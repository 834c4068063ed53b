use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{sigmoid, Net};
use super::{Arch, Target, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// Logits are clamped so scores stay strictly inside (0, 1).
pub const LOGIT_CLAMP: f64 = 36.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// One hidden layer of `hidden_width` tanh units followed by a linear
/// output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Row-major `hidden_width x input_dim`.
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Score in (0, 1).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), x)?;
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        Ok(sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
    }

    pub(crate) fn from_flat(p: &[f64]) -> Self {
        let (w, b) = p.split_at(p.len() - 1);
        LinearModel {
            weights: w.to_vec(),
            bias: b[0],
        }
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }
}

impl MlpModel {
    pub(crate) fn from_flat(dim: usize, width: usize, p: &[f64]) -> Self {
        let (w1, rest) = p.split_at(width * dim);
        let (b1, rest) = rest.split_at(width);
        let (w2, b2) = rest.split_at(width);
        MlpModel {
            input_dim: dim,
            hidden_width: width,
            activation: Activation::Tanh,
            hidden_weights: w1.to_vec(),
            hidden_bias: b1.to_vec(),
            output_weights: w2.to_vec(),
            output_bias: b2[0],
        }
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        let mut p = self.hidden_weights.clone();
        p.extend_from_slice(&self.hidden_bias);
        p.extend_from_slice(&self.output_weights);
        p.push(self.output_bias);
        p
    }

    /// Hidden-layer activations for `x`.
    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x)?;
        let d = self.input_dim;
        Ok((0..self.hidden_width)
            .map(|j| {
                let row = &self.hidden_weights[j * d..(j + 1) * d];
                let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.hidden_bias[j];
                pre.tanh()
            })
            .collect())
    }

    /// SHA-256 over the serialized backbone parameters.
    pub fn fingerprint(&self) -> String {
        hash_json(self)
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("model parameters serialize");
    hex::encode(Sha256::digest(bytes))
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::domain(format!(
            "dimension mismatch: model expects {expected} features, got {}",
            x.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ModelParams {
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// Per-epoch losses recorded during training. Index 0 of `val_loss` is the
/// initialization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl TrainingHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    #[serde(flatten)]
    pub params: ModelParams,
    pub target: Target,
    pub train_config: TrainConfig,
    pub history: TrainingHistory,
}

impl Model {
    pub fn arch(&self) -> Arch {
        match self.params {
            ModelParams::Linear(_) => Arch::Linear,
            ModelParams::Mlp(_) => Arch::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net().dim()
    }

    pub(crate) fn net(&self) -> Net {
        match &self.params {
            ModelParams::Linear(m) => Net::Linear { dim: m.weights.len() },
            ModelParams::Mlp(m) => Net::Mlp {
                dim: m.input_dim,
                width: m.hidden_width,
            },
        }
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        match &self.params {
            ModelParams::Linear(m) => m.flat(),
            ModelParams::Mlp(m) => m.flat(),
        }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x)?;
        let net = self.net();
        let mut hidden = vec![0.0; net.scratch_len()];
        Ok(net.logit(&self.flat(), x, &mut hidden))
    }

    /// Score in (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
    }

    /// 1 when the score is strictly above `threshold`.
    pub fn predict(&self, x: &[f64], threshold: f64) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? > threshold))
    }

    /// Scores for every sample of `data`.
    pub fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        let net = self.net();
        let p = self.flat();
        let mut hidden = vec![0.0; net.scratch_len()];
        data.samples
            .iter()
            .map(|s| {
                check_dim(net.dim(), &s.features)?;
                let z = net.logit(&p, &s.features, &mut hidden);
                Ok(sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
            })
            .collect()
    }

    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Mlp(m) => m.representation(x),
            ModelParams::Linear(_) => Err(Error::UnsupportedArchitecture(
                "a linear model has no internal representation; use the mlp architecture".into(),
            )),
        }
    }

    /// SHA-256 over the serialized parameters only.
    pub fn fingerprint(&self) -> String {
        hash_json(&self.params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Model = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let ok = match &self.params {
            ModelParams::Linear(m) => !m.weights.is_empty(),
            ModelParams::Mlp(m) => {
                let (d, h) = (m.input_dim, m.hidden_width);
                d > 0
                    && h > 0
                    && m.hidden_weights.len() == d * h
                    && m.hidden_bias.len() == h
                    && m.output_weights.len() == h
            }
        };
        if !ok {
            return Err(Error::domain("model parameter arrays have inconsistent shapes"));
        }
        if !self.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::domain("model parameters must be finite"));
        }
        Ok(())
    }
}
