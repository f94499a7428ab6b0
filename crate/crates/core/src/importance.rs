//! Importance discrepancy measurement.
//!
//! Generalization importance comes from the magnitude of the frozen
//! pretrained weights, specialization importance from an exponentially
//! accumulated gradient magnitude. Both go through the same
//! standardize-then-sigmoid pipeline so they land on a common `(0, 1)` scale
//! and can be compared entry by entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cosine_slices, sigmoid_scalar, Moments, NormScope, TensorMap};

/// Lower clamp on the cosine before inverting it in [`pid`].
pub const PID_COS_FLOOR: f64 = 1e-6;

/// Default momentum coefficient of [`GradAccumulator`].
pub const DEFAULT_BETA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    Generalization,
    Specialization,
}

/// Per-entry scores in `(0, 1)`, aligned with the trainable set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub scores: TensorMap,
    pub kind: ImportanceKind,
}

/// Standardization statistics for each tensor of `map` after applying
/// `transform` to every entry. Under [`NormScope::Global`] all tensors share
/// one set of moments taken over the concatenation.
pub fn scope_moments(map: &TensorMap, scope: NormScope, transform: fn(f64) -> f64) -> Vec<Moments> {
    match scope {
        NormScope::PerTensor => map
            .iter()
            .map(|t| Moments::of_iter(t.data().iter().map(|&v| transform(v)), t.len()))
            .collect(),
        NormScope::Global => {
            let all = map.iter().flat_map(|t| t.data().iter().map(|&v| transform(v)));
            let m = Moments::of_iter(all, map.numel());
            vec![m; map.len()]
        }
    }
}

fn rank_scores(map: &TensorMap, scope: NormScope, transform: fn(f64) -> f64) -> TensorMap {
    let moments = scope_moments(map, scope, transform);
    let tensors = map.iter().zip(&moments).map(|(t, m)| {
        t.map(|v| sigmoid_scalar(m.standardize(transform(v))))
    });
    TensorMap::from_tensors(tensors).expect("layout copied from a valid map")
}

fn identity(v: f64) -> f64 {
    v
}

/// `sigmoid(zscore(|w*|))` per tensor (or globally).
pub fn generalization_importance(pretrained: &TensorMap, scope: NormScope) -> ImportanceScores {
    ImportanceScores {
        scores: rank_scores(pretrained, scope, f64::abs),
        kind: ImportanceKind::Generalization,
    }
}

/// `sigmoid(zscore(acc))`; the accumulator already holds magnitudes.
pub fn specialization_importance(state: &GradAccumulator, scope: NormScope) -> Result<ImportanceScores> {
    if !state.initialized {
        return Err(Error::Uninitialized);
    }
    Ok(ImportanceScores {
        scores: rank_scores(&state.acc, scope, identity),
        kind: ImportanceKind::Specialization,
    })
}

/// Exponential moving average of absolute gradients.
///
/// The first observation initializes the state to `|grad|` directly; later
/// ones blend as `beta * acc + (1 - beta) * |grad|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    acc: TensorMap,
    beta: f64,
    initialized: bool,
}

impl GradAccumulator {
    /// Zero state laid out like `template`.
    pub fn new(template: &TensorMap, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self {
            acc: template.zeros_like(),
            beta,
            initialized: false,
        })
    }

    /// Restores a saved state, e.g. an accumulator dumped to a checkpoint.
    /// Entries must be non-negative magnitudes.
    pub fn from_state(acc: TensorMap, beta: f64) -> Result<Self> {
        let mut state = Self::new(&acc, beta)?;
        if let Some(t) = acc.iter().find(|t| t.data().iter().any(|&v| v < 0.0)) {
            return Err(Error::InvalidTensor(format!(
                "accumulator tensor `{}` has negative entries",
                t.name()
            )));
        }
        state.acc = acc;
        state.initialized = true;
        Ok(state)
    }

    pub fn acc(&self) -> &TensorMap {
        &self.acc
    }

    pub fn into_acc(self) -> TensorMap {
        self.acc
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn accumulate(&mut self, grad: &TensorMap) -> Result<()> {
        self.acc.ensure_aligned(grad)?;
        let beta = self.beta;
        for (a, g) in self.acc.iter_mut().zip(grad) {
            let dst = a.data_mut();
            if self.initialized {
                for (x, &y) in dst.iter_mut().zip(g.data()) {
                    *x = beta * *x + (1.0 - beta) * y.abs();
                }
            } else {
                for (x, &y) in dst.iter_mut().zip(g.data()) {
                    *x = y.abs();
                }
            }
        }
        self.initialized = true;
        Ok(())
    }

    /// Back to the uninitialized zero state, keeping the allocation.
    pub fn reset(&mut self) {
        for t in self.acc.iter_mut() {
            t.data_mut().fill(0.0);
        }
        self.initialized = false;
    }
}

fn pid_from_cos(cos: f64) -> f64 {
    let c = cos.max(PID_COS_FLOOR);
    1.0 / (c * c)
}

/// Parameter importance difference `cos(|w*|, |g|)^-2` over the
/// concatenation of all tensors. Always `>= 1`.
pub fn pid(pretrained: &TensorMap, grad: &TensorMap) -> Result<f64> {
    pretrained.ensure_aligned(grad)?;
    let a: Vec<f64> = pretrained.concat().into_iter().map(f64::abs).collect();
    let b: Vec<f64> = grad.concat().into_iter().map(f64::abs).collect();
    Ok(pid_from_cos(cosine_slices(&a, &b)?))
}

/// [`pid`] evaluated separately for every tensor.
pub fn pid_per_tensor(pretrained: &TensorMap, grad: &TensorMap) -> Result<Vec<(String, f64)>> {
    pretrained.ensure_aligned(grad)?;
    pretrained
        .iter()
        .zip(grad)
        .map(|(w, g)| {
            let a: Vec<f64> = w.data().iter().map(|v| v.abs()).collect();
            let b: Vec<f64> = g.data().iter().map(|v| v.abs()).collect();
            Ok((w.name().to_owned(), pid_from_cos(cosine_slices(&a, &b)?)))
        })
        .collect()
}
