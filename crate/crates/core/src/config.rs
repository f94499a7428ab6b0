//! JSON experiment configuration.
//!
//! Every key is optional; missing keys take the defaults below and unknown
//! keys are rejected.
//!
//! | key | default |
//! |---|---|
//! | `method` | `spider` |
//! | `seeds` | `[0, 1, ..., 9]` |
//! | `epochs` | 5 |
//! | `batch_size` | 16 |
//! | `learning_rate` | 0.2 |
//! | `trainable_layers` | 2 |
//! | `beta` | 0.9 |
//! | `normalization_scope` | `per_tensor` |
//! | `dare_drop_p` | 0.5 |
//! | `l2_lambda` | 1e-3 |
//! | `l1_lambda` | 1e-6 |
//! | `selection_ratio` | 0.5 |
//! | `accumulator_reset_per_epoch` | false |
//! | `suite` | four sources at 0, 25, 50, 75 degrees |
//! | `target` | 120 degrees, labels permuted `[1, 2, 0]` |
//! | `samples_per_task` | 500 |
//! | `hidden_sizes` | `[32, 32]` |
//! | `pretrain_epochs` | 30 |
//! | `pretrain_learning_rate` | 0.05 |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmark::{Benchmark, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::NormScope;
use crate::trainer::{Method, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub trainable_layers: usize,
    pub beta: f64,
    pub normalization_scope: NormScope,
    pub dare_drop_p: f64,
    pub l2_lambda: f64,
    pub l1_lambda: f64,
    pub selection_ratio: f64,
    pub accumulator_reset_per_epoch: bool,
    pub suite: Vec<TaskSpec>,
    pub target: TaskSpec,
    pub samples_per_task: usize,
    pub hidden_sizes: Vec<usize>,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bench = Benchmark::default();
        let t = bench.finetune;
        Self {
            method: t.method,
            seeds: (0..10).collect(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            trainable_layers: t.trainable_layers,
            beta: t.beta,
            normalization_scope: t.normalization_scope,
            dare_drop_p: t.dare_drop_p,
            l2_lambda: t.l2_lambda,
            l1_lambda: t.l1_lambda,
            selection_ratio: t.selection_ratio,
            accumulator_reset_per_epoch: t.accumulator_reset_per_epoch,
            suite: bench.suite,
            target: bench.target,
            samples_per_task: bench.samples_per_task,
            hidden_sizes: bench.hidden_sizes,
            pretrain_epochs: bench.pretrain_epochs,
            pretrain_learning_rate: bench.pretrain_learning_rate,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config(self.seeds.first().copied().unwrap_or(0)).validate()?;
        if self.suite.is_empty() {
            return Err(Error::Config("suite must contain at least one task".into()));
        }
        for t in self.suite.iter().chain([&self.target]) {
            t.validate()?;
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be positive".into()));
        }
        if self.trainable_layers > self.hidden_sizes.len() + 1 {
            return Err(Error::Config(format!(
                "trainable_layers {} exceeds the {} layers of the model",
                self.trainable_layers,
                self.hidden_sizes.len() + 1
            )));
        }
        if !(self.pretrain_learning_rate.is_finite() && self.pretrain_learning_rate > 0.0) {
            return Err(Error::Config("pretrain_learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            method: self.method,
            l2_lambda: self.l2_lambda,
            l1_lambda: self.l1_lambda,
            dare_drop_p: self.dare_drop_p,
            beta: self.beta,
            seed,
            trainable_layers: self.trainable_layers,
            normalization_scope: self.normalization_scope,
            accumulator_reset_per_epoch: self.accumulator_reset_per_epoch,
            selection_ratio: self.selection_ratio,
            ..TrainConfig::default()
        }
    }

    pub fn benchmark(&self) -> Benchmark {
        Benchmark {
            suite: self.suite.clone(),
            target: self.target.clone(),
            samples_per_task: self.samples_per_task,
            hidden_sizes: self.hidden_sizes.clone(),
            pretrain_epochs: self.pretrain_epochs,
            pretrain_learning_rate: self.pretrain_learning_rate,
            finetune: self.train_config(0),
        }
    }
}
