//! Comparison fine-tuning methods: full fine-tuning, L2 and L1 pulls toward
//! the pretrained weights, random half-block updates and post-hoc DARE.

use crate::error::{Error, Result};
use crate::importance::{pid, GradAccumulator};
use crate::masking::{dare_mask_and_rescale, random_half_mask, BlockLayout};
use crate::tensor::TensorMap;

use super::model::{backward, forward, Dataset, ToyModel};
use super::{iteration_seed, stream, IterationRecord, Method, RunLog, TrainConfig};

/// Half FT blocks: each trainable layer is a group whose blocks are its
/// trainable weight and bias tensors.
pub fn half_ft_layout(model: &ToyModel) -> BlockLayout {
    let names = model.trainable_names();
    let mut groups: Vec<Vec<String>> = Vec::new();
    for name in names {
        let layer = name.split('.').next().unwrap_or_default().to_owned();
        match groups.last_mut() {
            Some(g) if g[0].starts_with(&format!("{layer}.")) => g.push(name),
            _ => groups.push(vec![name]),
        }
    }
    BlockLayout::TensorGroups(groups)
}

pub fn finetune_baseline(
    mut model: ToyModel,
    pretrained: &TensorMap,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ToyModel, RunLog)> {
    cfg.validate()?;
    if !cfg.method.is_baseline() {
        return Err(Error::Config(format!(
            "finetune_baseline cannot run method `{}`",
            cfg.method
        )));
    }
    let trainables = model.trainables();
    trainables.ensure_aligned(pretrained)?;
    let layout = half_ft_layout(&model);
    let mut acc = GradAccumulator::new(pretrained, cfg.beta)?;

    let mut log = RunLog::new(cfg.method);
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let order = iteration_seed(cfg.seed, stream::ORDER, epoch as u64);
        for batch in data.batches(cfg.batch_size, order)? {
            let (mut loss, cache) = forward(&model, &batch)?;
            let mut grads = backward(&model, &cache)?;
            let pid_value = pid(pretrained, &grads).ok();
            acc.accumulate(&grads)?;
            let mut gate: Option<TensorMap> = None;

            match cfg.method {
                Method::L2Reg if cfg.l2_lambda > 0.0 => {
                    let lambda = cfg.l2_lambda;
                    for ((g, w), p) in grads.iter_mut().zip(&model.trainables()).zip(pretrained) {
                        for ((gv, &wv), &pv) in g.data_mut().iter_mut().zip(w.data()).zip(p.data()) {
                            let d = wv - pv;
                            *gv += 2.0 * lambda * d;
                            loss += lambda * d * d;
                        }
                    }
                }
                Method::L1Graft if cfg.l1_lambda > 0.0 => {
                    let lambda = cfg.l1_lambda;
                    for ((g, w), p) in grads.iter_mut().zip(&model.trainables()).zip(pretrained) {
                        for ((gv, &wv), &pv) in g.data_mut().iter_mut().zip(w.data()).zip(p.data()) {
                            let d = wv - pv;
                            // subgradient 0 at d == 0
                            if d != 0.0 {
                                *gv += lambda * d.signum();
                            }
                            loss += lambda * d.abs();
                        }
                    }
                }
                Method::HalfFt => {
                    let seed = iteration_seed(cfg.seed, stream::HALF_FT, iteration as u64);
                    gate = Some(random_half_mask(&grads, &layout, seed)?.mask);
                }
                _ => {}
            }

            let mask_density = gate.as_ref().map_or(1.0, crate::masking::density);
            gated_step(&mut model, &grads, gate.as_ref(), cfg);
            log.records.push(IterationRecord {
                iteration,
                epoch,
                loss,
                mask_density,
                pid: pid_value,
                empty_selection: mask_density == 0.0,
            });
            iteration += 1;
        }
    }

    log.aux_maps = 1;
    if acc.is_initialized() {
        log.accumulator = Some(acc.into_acc());
    }
    if cfg.method == Method::Dare && cfg.dare_drop_p > 0.0 {
        let tuned = model.trainables();
        let delta = tuned.zip_with(pretrained, |w, p| w - p)?;
        let seed = iteration_seed(cfg.seed, stream::DARE, 0);
        let kept = dare_mask_and_rescale(&delta, cfg.dare_drop_p, seed)?;
        let merged = pretrained.zip_with(&kept, |p, d| p + d)?;
        model.set_trainables(&merged)?;
    }
    Ok((model, log))
}

/// SGD restricted to entries whose gate is nonzero; `None` updates everything.
fn gated_step(model: &mut ToyModel, grads: &TensorMap, gate: Option<&TensorMap>, cfg: &TrainConfig) {
    for (k, (w, g)) in model.trainables_mut().into_iter().zip(grads).enumerate() {
        let lr = cfg.lr_for(w.name());
        let gate_values = gate.map(|m| m.iter().nth(k).expect("gate aligned with grads").data());
        for (v, (x, &d)) in w.data_mut().iter_mut().zip(g.data()).enumerate() {
            match gate_values {
                Some(m) if m[v] == 0.0 => {}
                Some(m) => *x -= lr * m[v] * d,
                None => *x -= lr * d,
            }
        }
    }
}
