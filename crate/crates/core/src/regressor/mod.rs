//! The contextual translation quality (CTQ) scorer: a small feed-forward
//! regression network over z-scored feature vectors.

mod gradcheck;
mod grid;
mod network;
mod split;
mod train;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, grad_check_decays, GradCheckReport};
pub use grid::{config_key, grid_search, rank_runs, write_leaderboard, GridOutcome, GridRun, GridSpec};
pub use network::{Network, Workspace};
pub use split::{split_811, split_811_ungrouped};
pub use train::{train, EpochStats, TrainOutcome};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, NUM_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Sigmoid, Activation::Tanh, Activation::Relu];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
    Rmsprop,
}

impl Optimizer {
    pub const ALL: [Optimizer; 3] = [Optimizer::Sgd, Optimizer::Adam, Optimizer::Rmsprop];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
            Optimizer::Rmsprop => "rmsprop",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            "rmsprop" => Ok(Self::Rmsprop),
            other => Err(Error::InvalidParameter(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

fn default_input_dim() -> usize {
    NUM_FEATURES
}

impl MlpConfig {
    pub fn new(hidden_layers: usize, hidden_width: usize, activation: Activation) -> Self {
        Self {
            hidden_layers,
            hidden_width,
            activation,
            input_dim: NUM_FEATURES,
        }
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        w.push(self.output_dim());
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.input_dim == 0 {
            return Err(Error::InvalidParameter(
                "network needs at least one hidden layer of nonzero width".into(),
            ));
        }
        Ok(())
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::new(3, 128, Activation::Relu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Start the output layer at zero instead of the random init.
    #[serde(default)]
    pub zero_init_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 30,
            weight_decay: 0.0,
            seed: 0,
            shuffle: true,
            zero_init_output: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub features: FeatureVector,
    pub ctq: f64,
}

/// Per-feature z-score statistics. Zero-variance features get std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
    pub zero_variance: [bool; NUM_FEATURES],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
            zero_variance: [false; NUM_FEATURES],
        }
    }

    pub fn apply(&self, v: &FeatureVector) -> [f64; NUM_FEATURES] {
        let raw = v.to_array();
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.std[i])
    }

    pub fn mean_vector(&self) -> FeatureVector {
        FeatureVector::from_array(self.mean)
    }
}

/// Fits population mean/std per feature.
pub fn normalize_fit(rows: &[FeatureVector]) -> Result<NormStats> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("cannot fit normalization on an empty set".into()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; NUM_FEATURES];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.to_array()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; NUM_FEATURES];
    for r in rows {
        for (i, x) in r.to_array().into_iter().enumerate() {
            var[i] += (x - mean[i]).powi(2);
        }
    }
    let mut std = [1.0; NUM_FEATURES];
    let mut zero_variance = [false; NUM_FEATURES];
    for i in 0..NUM_FEATURES {
        let s = (var[i] / n).sqrt();
        if s > 0.0 && s.is_finite() {
            std[i] = s;
        } else {
            zero_variance[i] = true;
        }
    }
    Ok(NormStats {
        mean,
        std,
        zero_variance,
    })
}

pub fn normalize_apply(stats: &NormStats, v: &FeatureVector) -> [f64; NUM_FEATURES] {
    stats.apply(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub best_epoch: usize,
    pub final_val_mse: f64,
}

/// A trained scorer: network, input normalization and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CtqModel {
    pub config: MlpConfig,
    pub norm: NormStats,
    pub network: Network,
    pub meta: ModelMeta,
}

const MODEL_MAGIC: &[u8; 4] = b"CTQM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: MlpConfig,
    zero_variance: [bool; NUM_FEATURES],
    meta: ModelMeta,
}

impl CtqModel {
    pub fn forward(&self, features: &FeatureVector) -> Result<f64> {
        self.network.forward(&self.norm.apply(features))
    }

    pub fn predict_all(&self, rows: &[FeatureVector]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.forward(r)).collect()
    }

    /// Binary layout: `CTQM`, u32 version, u32 header length, JSON header
    /// (config, zero-variance flags, metadata), then little-endian f64
    /// blocks: 12 means, 12 stds, and per layer the row-major weights
    /// (out x in) followed by the biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&ModelHeader {
            config: self.config.clone(),
            zero_variance: self.norm.zero_variance,
            meta: self.meta.clone(),
        })
        .expect("model header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * (24 + self.network.params().len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for x in self.norm.mean.iter().chain(&self.norm.std).chain(self.network.params()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing CTQM magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header"));
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[12..body_start])
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        header.config.validate()?;
        let body = &bytes[body_start..];
        let expected = 2 * NUM_FEATURES + header.config.param_count();
        if body.len() != expected * 8 {
            return Err(Error::ModelFormat(format!(
                "expected {expected} parameters, found {} bytes",
                body.len()
            )));
        }
        let floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mean: [f64; NUM_FEATURES] = floats[..NUM_FEATURES].try_into().unwrap();
        let std: [f64; NUM_FEATURES] = floats[NUM_FEATURES..2 * NUM_FEATURES].try_into().unwrap();
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(bad("non-positive feature std"));
        }
        let network = Network::from_params(&header.config, floats[2 * NUM_FEATURES..].to_vec())?;
        Ok(Self {
            config: header.config,
            norm: NormStats {
                mean,
                std,
                zero_variance: header.zero_variance,
            },
            network,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
