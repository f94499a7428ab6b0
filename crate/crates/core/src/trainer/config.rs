use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::DEFAULT_BETA;
use crate::tensor::NormScope;

/// Fine-tuning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// No fine-tuning; the pretrained model is evaluated as is.
    ZeroShot,
    FullFt,
    L2Reg,
    L1Graft,
    HalfFt,
    Dare,
    /// Weighted, rescaled importance mask.
    Spider,
    /// `G > I` selection with a 0/1 mask.
    SpiderBinary,
    /// Weighted mask without the mean rescale.
    SpiderWeightedNorescale,
    /// Random `gamma` fraction of entries per iteration.
    SelectRandom,
    /// Top `gamma` fraction by generalization importance.
    SelectMagnitude,
    /// Top `gamma` fraction by specialization importance.
    SelectGradient,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::ZeroShot,
        Method::FullFt,
        Method::L2Reg,
        Method::L1Graft,
        Method::HalfFt,
        Method::Dare,
        Method::Spider,
        Method::SpiderBinary,
        Method::SpiderWeightedNorescale,
        Method::SelectRandom,
        Method::SelectMagnitude,
        Method::SelectGradient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::FullFt => "full_ft",
            Method::L2Reg => "l2_reg",
            Method::L1Graft => "l1_graft",
            Method::HalfFt => "half_ft",
            Method::Dare => "dare",
            Method::Spider => "spider",
            Method::SpiderBinary => "spider_binary",
            Method::SpiderWeightedNorescale => "spider_weighted_norescale",
            Method::SelectRandom => "select_random",
            Method::SelectMagnitude => "select_magnitude",
            Method::SelectGradient => "select_gradient",
        }
    }

    /// Methods driven by the masked merge loop.
    pub fn is_spider_family(self) -> bool {
        matches!(
            self,
            Method::Spider
                | Method::SpiderBinary
                | Method::SpiderWeightedNorescale
                | Method::SelectRandom
                | Method::SelectMagnitude
                | Method::SelectGradient
        )
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Method::FullFt | Method::L2Reg | Method::L1Graft | Method::HalfFt | Method::Dare
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Hyperparameters of one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub method: Method,
    pub l2_lambda: f64,
    pub l1_lambda: f64,
    pub dare_drop_p: f64,
    pub beta: f64,
    pub seed: u64,
    pub trainable_layers: usize,
    pub normalization_scope: NormScope,
    pub accumulator_reset_per_epoch: bool,
    /// Selection ratio of the `select_*` ablation arms.
    pub selection_ratio: f64,
    /// Per-tensor learning rates; tensors not listed use `learning_rate`.
    pub tensor_learning_rates: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 5,
            batch_size: 16,
            method: Method::Spider,
            l2_lambda: 1e-3,
            l1_lambda: 1e-6,
            dare_drop_p: 0.5,
            beta: DEFAULT_BETA,
            seed: 0,
            trainable_layers: 2,
            normalization_scope: NormScope::PerTensor,
            accumulator_reset_per_epoch: false,
            selection_ratio: 0.5,
            tensor_learning_rates: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if let Some((name, lr)) = self.tensor_learning_rates.iter().find(|(_, &v)| !positive(v)) {
            return Err(Error::Config(format!("learning rate for `{name}` must be positive, got {lr}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.trainable_layers == 0 {
            return Err(Error::Config("trainable_layers must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l1_lambda >= 0.0) {
            return Err(Error::Config("regularization weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dare_drop_p) {
            return Err(Error::Config(format!("dare_drop_p must lie in [0, 1), got {}", self.dare_drop_p)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.selection_ratio) {
            return Err(Error::Config(format!("selection_ratio must lie in [0, 1], got {}", self.selection_ratio)));
        }
        Ok(())
    }

    pub fn lr_for(&self, tensor: &str) -> f64 {
        self.tensor_learning_rates
            .get(tensor)
            .copied()
            .unwrap_or(self.learning_rate)
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }
}
