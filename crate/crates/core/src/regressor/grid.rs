use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Activation, MlpConfig, Optimizer, TrainConfig, TrainingInstance};
use crate::error::{Error, Result};

/// Hyper-parameter ranges. The default is the full published search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub hidden_layers: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub activation: Vec<Activation>,
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub epochs: Vec<usize>,
    pub optimizer: Vec<Optimizer>,
    pub weight_decay: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            hidden_layers: vec![3, 4, 5],
            hidden_width: vec![64, 128, 256, 512],
            activation: Activation::ALL.to_vec(),
            batch_size: vec![16, 32, 64],
            learning_rate: vec![0.005, 0.001, 0.01],
            epochs: vec![20, 30, 40],
            optimizer: Optimizer::ALL.to_vec(),
            weight_decay: vec![0.0, 0.005, 0.001, 0.01],
        }
    }
}

impl GridSpec {
    pub fn cardinality(&self) -> usize {
        self.hidden_layers.len()
            * self.hidden_width.len()
            * self.activation.len()
            * self.batch_size.len()
            * self.learning_rate.len()
            * self.epochs.len()
            * self.optimizer.len()
            * self.weight_decay.len()
    }

    /// Every combination, with `seed` and shuffling fixed.
    pub fn configs(&self, seed: u64) -> Vec<(MlpConfig, TrainConfig)> {
        let mut out = Vec::with_capacity(self.cardinality());
        for &hl in &self.hidden_layers {
            for &hw in &self.hidden_width {
                for &act in &self.activation {
                    for &bs in &self.batch_size {
                        for &lr in &self.learning_rate {
                            for &ep in &self.epochs {
                                for &opt in &self.optimizer {
                                    for &wd in &self.weight_decay {
                                        out.push((
                                            MlpConfig::new(hl, hw, act),
                                            TrainConfig {
                                                optimizer: opt,
                                                learning_rate: lr,
                                                batch_size: bs,
                                                epochs: ep,
                                                weight_decay: wd,
                                                seed,
                                                shuffle: true,
                                                zero_init_output: false,
                                            },
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn config_key(mlp: &MlpConfig, tc: &TrainConfig) -> String {
    format!(
        "act={},bs={},ep={},hl={},hw={},lr={},opt={},wd={}",
        mlp.activation,
        tc.batch_size,
        tc.epochs,
        mlp.hidden_layers,
        mlp.hidden_width,
        tc.learning_rate,
        tc.optimizer,
        tc.weight_decay
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub key: String,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub param_count: usize,
    /// Best validation MSE, or `None` if the run failed.
    pub val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: GridRun,
    /// All runs: successful ones by (val MSE, parameter count, key), then
    /// failed ones by key.
    pub leaderboard: Vec<GridRun>,
}

/// Trains every grid point (in parallel, each run single-threaded and
/// seeded) and picks the lowest validation MSE.
pub fn grid_search(
    train_set: &[TrainingInstance],
    val_set: &[TrainingInstance],
    grid: &GridSpec,
    seed: u64,
) -> Result<GridOutcome> {
    let configs = grid.configs(seed);
    if configs.is_empty() {
        return Err(Error::InvalidParameter("hyper-parameter grid is empty".into()));
    }
    let mut runs: Vec<GridRun> = configs
        .into_par_iter()
        .map(|(mlp, tc)| {
            let key = config_key(&mlp, &tc);
            let param_count = mlp.param_count();
            let result = train(train_set, val_set, &mlp, &tc);
            let (val_mse, best_epoch, error) = match result {
                Ok(out) => (Some(out.model.meta.final_val_mse), Some(out.best_epoch), None),
                Err(e) => {
                    log::warn!("grid run {key} failed: {e}");
                    (None, None, Some(e.to_string()))
                }
            };
            GridRun {
                key,
                mlp,
                train: tc,
                param_count,
                val_mse,
                best_epoch,
                error,
            }
        })
        .collect();
    rank_runs(&mut runs);
    let best = runs
        .first()
        .filter(|r| r.val_mse.is_some())
        .cloned()
        .ok_or_else(|| Error::Stage {
            stage: "tune".into(),
            message: "every grid configuration failed".into(),
        })?;
    Ok(GridOutcome {
        best,
        leaderboard: runs,
    })
}

/// Successful runs by (val MSE, parameter count, key), failed runs last.
pub fn rank_runs(runs: &mut [GridRun]) {
    runs.sort_by(|a, b| match (a.val_mse, b.val_mse) {
        (Some(x), Some(y)) => x
            .total_cmp(&y)
            .then(a.param_count.cmp(&b.param_count))
            .then_with(|| a.key.cmp(&b.key)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.key.cmp(&b.key),
    });
}

/// One JSON record per line, in leaderboard order.
pub fn write_leaderboard<W: Write>(runs: &[GridRun], mut out: W) -> std::io::Result<()> {
    for run in runs {
        serde_json::to_writer(&mut out, run)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
