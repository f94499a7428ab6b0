//! Importance-masked fine-tuning loop.
//!
//! Per batch: forward, backward, fold `|grad|` into the accumulator, build the
//! update mask from specialization vs generalization importance, take an SGD
//! step, then merge the stepped weights back toward the pretrained snapshot
//! through the mask.
//!
//! Generalization and specialization scores are never materialized as maps.
//! Only their standardization moments are kept (per tensor or global) and
//! the scores are evaluated entry by entry while the mask is written, so the
//! loop holds three trainable-sized maps besides the model: the pretrained
//! snapshot, the accumulator and the mask.

use crate::error::{Error, Result};
use crate::importance::{pid, scope_moments, GradAccumulator};
use crate::masking::{
    binary_entry, density, fraction_count, keep_top_fraction, merge_entry, rescale_in_place,
    weighted_entry,
};
use crate::rng::seeded;
use crate::tensor::{sigmoid_scalar, Moments, TensorMap};

use super::model::{backward, forward, sgd_step_with, Dataset, ToyModel};
use super::{iteration_seed, stream, IterationRecord, Method, RunLog, TrainConfig};

/// Counts the persistent trainable-sized buffers a driver allocates.
#[derive(Debug, Default)]
struct AuxTracker {
    maps: usize,
}

impl AuxTracker {
    fn track<T>(&mut self, value: T) -> T {
        self.maps += 1;
        value
    }
}

pub fn finetune_spider(
    mut model: ToyModel,
    pretrained: &TensorMap,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ToyModel, RunLog)> {
    cfg.validate()?;
    if !cfg.method.is_spider_family() {
        return Err(Error::Config(format!(
            "finetune_spider cannot run method `{}`",
            cfg.method
        )));
    }
    model.trainables().ensure_aligned(pretrained)?;

    let scope = cfg.normalization_scope;
    let mut aux = AuxTracker::default();
    let w_star = aux.track(pretrained.clone());
    let mut acc = aux.track(GradAccumulator::new(&w_star, cfg.beta)?);
    let mut mask = aux.track(w_star.zeros_like());
    let i_moments = scope_moments(&w_star, scope, f64::abs);

    let mut log = RunLog::new(cfg.method);
    log.aux_maps = aux.maps;
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        if cfg.accumulator_reset_per_epoch && epoch > 0 {
            acc.reset();
        }
        let order = iteration_seed(cfg.seed, stream::ORDER, epoch as u64);
        for batch in data.batches(cfg.batch_size, order)? {
            let (loss, cache) = forward(&model, &batch)?;
            let grads = backward(&model, &cache)?;
            let pid_value = pid(&w_star, &grads).ok();

            acc.accumulate(&grads)?;
            let g_moments = scope_moments(acc.acc(), scope, |v| v);
            let ctx = MaskInputs {
                pretrained: &w_star,
                i_moments: &i_moments,
                acc: acc.acc(),
                g_moments: &g_moments,
            };
            build_mask(cfg, iteration, &ctx, &mut mask);
            let mask_density = density(&mask);
            let empty_selection = mask_density == 0.0;
            if empty_selection {
                log::warn!("iteration {iteration}: empty selection, weights restored to pretrained");
            }

            sgd_step_with(&mut model, &grads, |n| cfg.lr_for(n))?;
            for ((w, p), m) in model.trainables_mut().into_iter().zip(&w_star).zip(&mask) {
                for ((x, &y), &k) in w.data_mut().iter_mut().zip(p.data()).zip(m.data()) {
                    *x = merge_entry(*x, y, k);
                }
            }

            log.records.push(IterationRecord {
                iteration,
                epoch,
                loss,
                mask_density,
                pid: pid_value,
                empty_selection,
            });
            iteration += 1;
        }
    }
    if acc.is_initialized() {
        log.accumulator = Some(acc.into_acc());
    }
    Ok((model, log))
}

struct MaskInputs<'a> {
    pretrained: &'a TensorMap,
    i_moments: &'a [Moments],
    acc: &'a TensorMap,
    g_moments: &'a [Moments],
}

impl MaskInputs<'_> {
    /// Calls `f(tensor_index, entry_index, G, I)` for every entry.
    fn for_each_score(&self, mut f: impl FnMut(usize, usize, f64, f64)) {
        for (t, (p, a)) in self.pretrained.iter().zip(self.acc).enumerate() {
            let (mi, mg) = (self.i_moments[t], self.g_moments[t]);
            for (v, (&w, &g)) in p.data().iter().zip(a.data()).enumerate() {
                let i_score = sigmoid_scalar(mi.standardize(w.abs()));
                let g_score = sigmoid_scalar(mg.standardize(g));
                f(t, v, g_score, i_score);
            }
        }
    }
}

fn build_mask(cfg: &TrainConfig, iteration: usize, ctx: &MaskInputs<'_>, mask: &mut TensorMap) {
    let write = |mask: &mut TensorMap, f: fn(f64, f64) -> f64| {
        let mut tensors: Vec<&mut [f64]> = mask.iter_mut().map(|t| t.data_mut()).collect();
        ctx.for_each_score(|t, v, g, i| tensors[t][v] = f(g, i));
    };
    match cfg.method {
        Method::Spider => {
            write(mask, weighted_entry);
            rescale_in_place(mask, cfg.normalization_scope);
        }
        Method::SpiderWeightedNorescale => write(mask, weighted_entry),
        Method::SpiderBinary => write(mask, binary_entry),
        Method::SelectMagnitude => {
            write(mask, |_, i| i);
            mask.iter_mut().for_each(|t| keep_top_fraction(t.data_mut(), cfg.selection_ratio));
        }
        Method::SelectGradient => {
            write(mask, |g, _| g);
            mask.iter_mut().for_each(|t| keep_top_fraction(t.data_mut(), cfg.selection_ratio));
        }
        Method::SelectRandom => {
            let seed = iteration_seed(cfg.seed, stream::SELECT_RANDOM, iteration as u64);
            let mut rng = seeded(seed);
            for t in mask.iter_mut() {
                let n = t.len();
                let chosen = rand::seq::index::sample(&mut rng, n, fraction_count(n, cfg.selection_ratio));
                let data = t.data_mut();
                data.fill(0.0);
                for k in chosen.iter() {
                    data[k] = 1.0;
                }
            }
        }
        _ => unreachable!("checked by finetune_spider"),
    }
}
