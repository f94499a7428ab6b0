//! Toy classifier, plain SGD and the fine-tuning drivers.

mod baseline;
mod config;
mod model;
mod spider;

use std::io::Write;

pub use baseline::{finetune_baseline, half_ft_layout};
pub use config::{Method, TrainConfig};
pub use model::{
    accuracy, argmax, backward, bias_name, forward, sgd_step, sgd_step_with, weight_name,
    Activation, Batch, Dataset, ForwardCache, Layer, ToyModel,
};
pub use spider::finetune_spider;

use crate::error::Result;
use crate::rng;
use crate::tensor::TensorMap;

/// Stream tags for [`iteration_seed`].
pub mod stream {
    pub const ORDER: u64 = 1;
    pub const HALF_FT: u64 = 2;
    pub const DARE: u64 = 3;
    pub const SELECT_RANDOM: u64 = 4;
    pub const INIT: u64 = 5;
}

/// Seed of the random draw made at `step` of stream `tag` in a run seeded by `seed`.
pub fn iteration_seed(seed: u64, tag: u64, step: u64) -> u64 {
    rng::derive(seed, &[tag, step])
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// Training objective, including any regularization term.
    pub loss: f64,
    /// Fraction of trainable entries allowed to move this iteration.
    pub mask_density: f64,
    /// `cos(|w*|, |g|)^-2` on the raw loss gradient; `None` if a norm vanished.
    pub pid: Option<f64>,
    pub empty_selection: bool,
}

/// Per-iteration trace of one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub method: Method,
    pub records: Vec<IterationRecord>,
    /// Trainable-sized maps the driver kept alive across iterations.
    pub aux_maps: usize,
    /// Final gradient-magnitude accumulator, if any step ran.
    pub accumulator: Option<TensorMap>,
}

impl RunLog {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            records: Vec::new(),
            aux_maps: 0,
            accumulator: None,
        }
    }

    pub fn mean_pid(&self) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.pid).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_mask_density(&self) -> Option<f64> {
        (!self.records.is_empty()).then(|| {
            self.records.iter().map(|r| r.mask_density).sum::<f64>() / self.records.len() as f64
        })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// `iteration,epoch,loss,mask_density,pid` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "epoch", "loss", "mask_density", "pid"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.epoch.to_string(),
                r.loss.to_string(),
                r.mask_density.to_string(),
                r.pid.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Runs `cfg.method` from `model`, whose trainables must align with `pretrained`.
pub fn finetune(
    model: ToyModel,
    pretrained: &TensorMap,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ToyModel, RunLog)> {
    match cfg.method {
        Method::ZeroShot => {
            cfg.validate()?;
            Ok((model, RunLog::new(Method::ZeroShot)))
        }
        m if m.is_spider_family() => finetune_spider(model, pretrained, data, cfg),
        _ => finetune_baseline(model, pretrained, data, cfg),
    }
}

/// Plain supervised SGD over every trainable tensor; used for pretraining.
pub fn train_supervised(model: &mut ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let seed = iteration_seed(cfg.seed, stream::ORDER, epoch as u64);
        let mut total = 0.0;
        let batches = data.batches(cfg.batch_size, seed)?;
        for batch in &batches {
            let (loss, cache) = forward(model, batch)?;
            let grads = backward(model, &cache)?;
            sgd_step_with(model, &grads, |n| cfg.lr_for(n))?;
            total += loss;
        }
        losses.push(total / batches.len().max(1) as f64);
    }
    Ok(losses)
}
