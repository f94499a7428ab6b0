//! Importance selection masks and weight merging.
//!
//! A mask is a tensor map aligned with the trainable set whose entries lie in
//! `[0, 1]`. Merging blends the current weights with the pretrained snapshot:
//! `w <- w * m + w* * (1 - m)`, so a zero entry restores the pretrained value
//! and a one keeps the fine-tuned value.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{ImportanceKind, ImportanceScores};
use crate::rng::seeded;
use crate::tensor::{masked_mean_slice, NormScope, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    Binary,
    Weighted,
    Rescaled,
    RandomHalf,
    RandomDare,
    /// Top fraction of entries by some score.
    TopFraction,
    /// Uniformly random fraction of entries.
    RandomFraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMask {
    pub mask: TensorMap,
    pub variant: MaskVariant,
    /// Set when no entry was selected anywhere.
    pub empty_selection: bool,
}

impl UpdateMask {
    fn new(mask: TensorMap, variant: MaskVariant) -> Self {
        let empty_selection = mask.iter().all(|t| t.data().iter().all(|&v| v == 0.0));
        Self {
            mask,
            variant,
            empty_selection,
        }
    }

    /// Fraction of nonzero entries.
    pub fn density(&self) -> f64 {
        density(&self.mask)
    }
}

pub fn density(mask: &TensorMap) -> f64 {
    let n = mask.numel();
    if n == 0 {
        return 0.0;
    }
    let nonzero = mask
        .iter()
        .map(|t| t.data().iter().filter(|&&v| v != 0.0).count())
        .sum::<usize>();
    nonzero as f64 / n as f64
}

fn check_pair(g: &ImportanceScores, i: &ImportanceScores) -> Result<()> {
    if g.kind != ImportanceKind::Specialization || i.kind != ImportanceKind::Generalization {
        return Err(Error::Config(format!(
            "mask expects (specialization, generalization) scores, got ({:?}, {:?})",
            g.kind, i.kind
        )));
    }
    g.scores.ensure_aligned(&i.scores)
}

/// Entry is 1 where `G > I` (strictly), else 0.
#[inline]
pub fn binary_entry(g: f64, i: f64) -> f64 {
    if g > i {
        1.0
    } else {
        0.0
    }
}

/// `G / (G + I)` where `G > I`, else 0.
#[inline]
pub fn weighted_entry(g: f64, i: f64) -> f64 {
    if g > i {
        g / (g + i)
    } else {
        0.0
    }
}

fn elementwise_mask(
    g: &ImportanceScores,
    i: &ImportanceScores,
    variant: MaskVariant,
    f: fn(f64, f64) -> f64,
) -> Result<UpdateMask> {
    check_pair(g, i)?;
    let mask = g.scores.zip_with(&i.scores, f)?;
    Ok(UpdateMask::new(mask, variant))
}

pub fn binary_mask(g: &ImportanceScores, i: &ImportanceScores) -> Result<UpdateMask> {
    elementwise_mask(g, i, MaskVariant::Binary, binary_entry)
}

pub fn weighted_mask(g: &ImportanceScores, i: &ImportanceScores) -> Result<UpdateMask> {
    elementwise_mask(g, i, MaskVariant::Weighted, weighted_entry)
}

/// Divides nonzero entries by the mean of the nonzero entries and clamps at
/// one. The mean is taken per tensor or over the whole map depending on
/// `scope`. An all-zero mask comes back unchanged with `empty_selection` set.
pub fn rescale_mask(m: &UpdateMask, scope: NormScope) -> Result<UpdateMask> {
    if m.variant != MaskVariant::Weighted {
        return Err(Error::Config(format!(
            "rescale expects a weighted mask, got {:?}",
            m.variant
        )));
    }
    let mut out = m.mask.clone();
    rescale_in_place(&mut out, scope);
    let rescaled = UpdateMask::new(out, MaskVariant::Rescaled);
    if rescaled.empty_selection {
        log::warn!("rescale_mask: empty selection, every parameter is restored");
    }
    Ok(rescaled)
}

/// In-place form of [`rescale_mask`]; returns true when the selection was empty.
pub fn rescale_in_place(mask: &mut TensorMap, scope: NormScope) -> bool {
    match scope {
        NormScope::PerTensor => {
            let mut empty = true;
            for t in mask.iter_mut() {
                let mean = masked_mean_slice(t.data());
                if !mean.empty {
                    empty = false;
                    scale_nonzero(t.data_mut(), mean.value);
                }
            }
            empty
        }
        NormScope::Global => {
            let mean = masked_mean_slice(&mask.concat());
            if !mean.empty {
                for t in mask.iter_mut() {
                    scale_nonzero(t.data_mut(), mean.value);
                }
            }
            mean.empty
        }
    }
}

fn scale_nonzero(values: &mut [f64], mean: f64) {
    for v in values.iter_mut().filter(|v| **v != 0.0) {
        *v = (*v / mean).min(1.0);
    }
}

/// Convex blend of one entry; exact at the mask extremes.
#[inline]
pub fn merge_entry(current: f64, pretrained: f64, m: f64) -> f64 {
    if m == 0.0 {
        pretrained
    } else if m == 1.0 {
        current
    } else {
        current * m + pretrained * (1.0 - m)
    }
}

pub fn merge(current: &TensorMap, pretrained: &TensorMap, m: &UpdateMask) -> Result<TensorMap> {
    let mut out = current.clone();
    merge_in_place(&mut out, pretrained, &m.mask)?;
    Ok(out)
}

pub fn merge_in_place(current: &mut TensorMap, pretrained: &TensorMap, mask: &TensorMap) -> Result<()> {
    current.ensure_aligned(pretrained)?;
    current.ensure_aligned(mask)?;
    for ((w, p), m) in current.iter_mut().zip(pretrained).zip(mask) {
        for ((x, &y), &k) in w.data_mut().iter_mut().zip(p.data()).zip(m.data()) {
            *x = merge_entry(*x, y, k);
        }
    }
    Ok(())
}

/// How tensors are cut into parameter blocks for [`random_half_mask`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockLayout {
    /// Every tensor is split into this many contiguous row-groups (capped at
    /// the row count); half of each tensor's groups are selected.
    RowGroups(usize),
    /// Each inner list names the tensors forming one layer; every tensor is a
    /// block and half of each layer's tensors are selected. Tensors outside
    /// every group are never selected.
    TensorGroups(Vec<Vec<String>>),
}

/// 0/1 mask selecting `floor(B / 2)` of the `B` blocks in every group,
/// uniformly at random and deterministically in `seed`.
pub fn random_half_mask(shape_of: &TensorMap, layout: &BlockLayout, seed: u64) -> Result<UpdateMask> {
    let mut rng = seeded(seed);
    let mut mask = shape_of.zeros_like();
    match layout {
        BlockLayout::RowGroups(blocks) => {
            if *blocks == 0 {
                return Err(Error::Config("block count must be positive".into()));
            }
            for t in mask.iter_mut() {
                let rows = t.shape()[0];
                let cols = t.len() / rows;
                let b = (*blocks).min(rows);
                let chosen = index::sample(&mut rng, b, b / 2);
                let data = t.data_mut();
                for blk in chosen.iter() {
                    let (lo, hi) = (blk * rows / b, (blk + 1) * rows / b);
                    data[lo * cols..hi * cols].fill(1.0);
                }
            }
        }
        BlockLayout::TensorGroups(groups) => {
            for group in groups {
                for name in group {
                    if !mask.contains(name) {
                        return Err(Error::Alignment(format!("block `{name}` not in map")));
                    }
                }
                let chosen = index::sample(&mut rng, group.len(), group.len() / 2);
                for k in chosen.iter() {
                    let t = mask.get_mut(&group[k]).expect("checked above");
                    t.data_mut().fill(1.0);
                }
            }
        }
    }
    Ok(UpdateMask::new(mask, MaskVariant::RandomHalf))
}

/// Drops each delta entry with probability `drop_p` and rescales survivors
/// by `1 / (1 - drop_p)`.
pub fn dare_mask_and_rescale(delta: &TensorMap, drop_p: f64, seed: u64) -> Result<TensorMap> {
    if !(0.0..1.0).contains(&drop_p) {
        return Err(Error::Config(format!("drop probability must lie in [0, 1), got {drop_p}")));
    }
    let mut rng = seeded(seed);
    let keep_scale = 1.0 / (1.0 - drop_p);
    let mut out = delta.clone();
    for t in out.iter_mut() {
        for v in t.data_mut() {
            if rng.gen::<f64>() < drop_p {
                *v = 0.0;
            } else {
                *v *= keep_scale;
            }
        }
    }
    Ok(out)
}

/// Number of entries selected out of `n` at ratio `gamma`.
pub fn fraction_count(n: usize, gamma: f64) -> usize {
    ((n as f64) * gamma).floor() as usize
}

/// Selects the `floor(gamma * n)` highest-scoring entries of each tensor;
/// ties go to the lower index.
pub fn top_fraction_mask(scores: &TensorMap, gamma: f64) -> Result<UpdateMask> {
    check_gamma(gamma)?;
    let mut mask = scores.clone();
    for t in mask.iter_mut() {
        keep_top_fraction(t.data_mut(), gamma);
    }
    Ok(UpdateMask::new(mask, MaskVariant::TopFraction))
}

/// Overwrites `values` with a 0/1 selection of its top `gamma` fraction.
pub(crate) fn keep_top_fraction(values: &mut [f64], gamma: f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let keep = fraction_count(values.len(), gamma);
    for (rank, &k) in order.iter().enumerate() {
        values[k] = if rank < keep { 1.0 } else { 0.0 };
    }
}

/// Selects a uniformly random `floor(gamma * n)` entries of each tensor.
pub fn random_fraction_mask(shape_of: &TensorMap, gamma: f64, seed: u64) -> Result<UpdateMask> {
    check_gamma(gamma)?;
    let mut rng = seeded(seed);
    let mut mask = shape_of.zeros_like();
    for m in mask.iter_mut() {
        let n = m.len();
        let chosen = index::sample(&mut rng, n, fraction_count(n, gamma));
        let out = m.data_mut();
        for k in chosen.iter() {
            out[k] = 1.0;
        }
    }
    Ok(UpdateMask::new(mask, MaskVariant::RandomFraction))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("selection ratio must lie in [0, 1], got {gamma}")))
    }
}
