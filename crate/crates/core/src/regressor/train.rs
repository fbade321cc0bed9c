use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_fit, CtqModel, MlpConfig, ModelMeta, Network, Optimizer, TrainConfig, TrainingInstance};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, NUM_FEATURES};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_RHO: f64 = 0.9;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub model: CtqModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

pub(crate) struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let moments = |used: bool| if used { vec![0.0; n] } else { Vec::new() };
        Self {
            kind,
            lr,
            first: moments(kind == Optimizer::Adam),
            second: moments(kind != Optimizer::Sgd),
            step: 0,
        }
    }

    pub(crate) fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
                }
            }
            Optimizer::Rmsprop => {
                for i in 0..params.len() {
                    let g = grad[i];
                    self.second[i] = RMSPROP_RHO * self.second[i] + (1.0 - RMSPROP_RHO) * g * g;
                    params[i] -= self.lr * g / (self.second[i].sqrt() + EPSILON);
                }
            }
        }
    }
}

fn mse(net: &Network, xs: &[[f64; NUM_FEATURES]], ys: &[f64]) -> Result<f64> {
    let batch: Vec<(&[f64], f64)> = xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied()).collect();
    net.loss(&batch, 0.0)
}

/// Mini-batch training on MSE with L2 weight decay. Normalization is fitted
/// on `train`. Deterministic for a given seed.
pub fn train(
    train: &[TrainingInstance],
    val: &[TrainingInstance],
    mlp: &MlpConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidParameter("train and validation sets must be non-empty".into()));
    }
    mlp.validate()?;
    tc.validate()?;
    if mlp.input_dim != NUM_FEATURES {
        return Err(Error::InvalidParameter(format!(
            "scorer input must have {NUM_FEATURES} features"
        )));
    }
    if let Some(bad) = train.iter().chain(val).find(|t| !t.features.is_finite() || !t.ctq.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite training instance: {bad:?}")));
    }

    let rows: Vec<FeatureVector> = train.iter().map(|t| t.features).collect();
    let norm = normalize_fit(&rows)?;
    let train_x: Vec<[f64; NUM_FEATURES]> = train.iter().map(|t| norm.apply(&t.features)).collect();
    let train_y: Vec<f64> = train.iter().map(|t| t.ctq).collect();
    let val_x: Vec<[f64; NUM_FEATURES]> = val.iter().map(|t| norm.apply(&t.features)).collect();
    let val_y: Vec<f64> = val.iter().map(|t| t.ctq).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut net = Network::init(mlp, &mut rng);
    if tc.zero_init_output {
        net.zero_output_layer();
    }
    let mut grad = vec![0.0; net.params().len()];
    let mut opt = OptimizerState::new(tc.optimizer, tc.learning_rate, grad.len());
    let mut ws = net.workspace();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let evaluate = |net: &Network, epoch: usize| -> Result<EpochStats> {
        let diverged = |e: Error| match e {
            Error::NumericOverflow { .. } => Error::Diverged { epoch },
            other => other,
        };
        let train_mse = mse(net, &train_x, &train_y).map_err(diverged)?;
        let val_mse = mse(net, &val_x, &val_y).map_err(diverged)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        Ok(EpochStats {
            epoch,
            train_mse,
            val_mse,
        })
    };

    let initial = evaluate(&net, 0)?;
    let mut history = vec![initial];
    let mut best = (initial.val_mse, 0usize, net.params().to_vec());

    let mut batch: Vec<(&[f64], f64)> = Vec::with_capacity(tc.batch_size);
    for epoch in 1..=tc.epochs {
        if tc.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(tc.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (train_x[i].as_slice(), train_y[i])));
            let loss = net
                .loss_and_grad(&batch, tc.weight_decay, &mut grad, &mut ws)
                .map_err(|_| Error::Diverged { epoch })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            opt.apply(net.params_mut(), &grad);
        }
        let stats = evaluate(&net, epoch)?;
        log::debug!("epoch {epoch}: train {:.6} val {:.6}", stats.train_mse, stats.val_mse);
        if stats.val_mse < best.0 {
            best = (stats.val_mse, epoch, net.params().to_vec());
        }
        history.push(stats);
    }

    let (best_val, best_epoch, params) = best;
    let network = Network::from_params(mlp, params)?;
    Ok(TrainOutcome {
        model: CtqModel {
            config: mlp.clone(),
            norm,
            network,
            meta: ModelMeta {
                train: Some(tc.clone()),
                seed: tc.seed,
                best_epoch,
                final_val_mse: best_val,
            },
        },
        history,
        best_epoch,
    })
}
