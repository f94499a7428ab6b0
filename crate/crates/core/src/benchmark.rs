//! Synthetic continual-learning benchmark.
//!
//! Source tasks are rotated copies of one Gaussian class mixture; the target
//! task is a further rotation with permuted labels. A model is pretrained on
//! the union of the source tasks, fine-tuned on the target with some method,
//! and scored on both sides: the source average `A^S`, the target accuracy
//! `A^T`, and their harmonic (`H`) and arithmetic (`O`) means.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::tensor::TensorMap;
use crate::importance::{pid, pid_per_tensor};
use crate::trainer::{
    accuracy, backward, finetune, forward, iteration_seed, sgd_step_with, stream,
    train_supervised, Dataset, Method, RunLog, ToyModel, TrainConfig,
};

/// One labelled Gaussian-mixture task.
///
/// Class `c` is drawn from `N(means[c], covariance_scale * I)` and then
/// rotated by `rotation_angle` radians in every coordinate plane
/// `(0,1), (2,3), ...`. The emitted label is `label_permutation[c]` when a
/// permutation is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub class_count: usize,
    pub input_dim: usize,
    pub means: Vec<Vec<f64>>,
    pub covariance_scale: f64,
    pub rotation_angle: f64,
    pub sample_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_permutation: Option<Vec<usize>>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("task `{}`: {msg}", self.task_id)));
        if self.class_count < 2 {
            return bad(format!("needs at least 2 classes, got {}", self.class_count));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.means.len() != self.class_count {
            return bad(format!("{} means for {} classes", self.means.len(), self.class_count));
        }
        if self.means.iter().any(|m| m.len() != self.input_dim || m.iter().any(|v| !v.is_finite())) {
            return bad(format!("every mean must have {} finite entries", self.input_dim));
        }
        for a in 0..self.class_count {
            for b in a + 1..self.class_count {
                if self.means[a] == self.means[b] {
                    return bad(format!("classes {a} and {b} share a mean"));
                }
            }
        }
        if !(self.covariance_scale.is_finite() && self.covariance_scale > 0.0) {
            return bad(format!("covariance_scale must be positive, got {}", self.covariance_scale));
        }
        if !self.rotation_angle.is_finite() {
            return bad("rotation_angle must be finite".into());
        }
        if let Some(p) = &self.label_permutation {
            let mut seen = vec![false; self.class_count];
            if p.len() != self.class_count || p.iter().any(|&l| l >= self.class_count || std::mem::replace(&mut seen[l], true)) {
                return bad(format!("label_permutation {p:?} is not a permutation"));
            }
        }
        Ok(())
    }

    pub fn label_of(&self, class: usize) -> usize {
        self.label_permutation.as_ref().map_or(class, |p| p[class])
    }
}

/// Train/test split of a generated task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub train: Dataset,
    pub test: Dataset,
}

fn rotate_planes(x: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

/// Draws `n` samples (sample `i` belongs to class `i % class_count`) and
/// splits them by index: every fifth sample goes to the test split.
pub fn generate_task(spec: &TaskSpec, n: usize) -> Result<TaskData> {
    spec.validate()?;
    if n < spec.class_count {
        return Err(Error::Config(format!(
            "task `{}`: {n} samples for {} classes",
            spec.task_id, spec.class_count
        )));
    }
    let mut rng = seeded(spec.sample_seed);
    let std = spec.covariance_scale.sqrt();
    let dim = spec.input_dim;
    let (mut train, mut test) = (
        Dataset { inputs: Vec::new(), dim, labels: Vec::new() },
        Dataset { inputs: Vec::new(), dim, labels: Vec::new() },
    );
    let mut x = vec![0.0; dim];
    for i in 0..n {
        let class = i % spec.class_count;
        for (v, &m) in x.iter_mut().zip(&spec.means[class]) {
            let z: f64 = rng.sample(StandardNormal);
            *v = m + std * z;
        }
        rotate_planes(&mut x, spec.rotation_angle);
        let split = if i % 5 == 4 { &mut test } else { &mut train };
        split.inputs.extend_from_slice(&x);
        split.labels.push(spec.label_of(class));
    }
    Ok(TaskData {
        task_id: spec.task_id.clone(),
        train,
        test,
    })
}

/// Default class means: three well separated points in 8 dimensions.
pub fn default_means() -> Vec<Vec<f64>> {
    let mut rng = seeded(0x5eed_0001);
    (0..3)
        .map(|_| {
            (0..8)
                .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Four source tasks at 0, 25, 50 and 75 degrees.
pub fn default_suite() -> Vec<TaskSpec> {
    let means = default_means();
    [0.0f64, 25.0, 50.0, 75.0]
        .iter()
        .enumerate()
        .map(|(k, deg)| TaskSpec {
            task_id: format!("source_{}", *deg as u32),
            class_count: 3,
            input_dim: 8,
            means: means.clone(),
            covariance_scale: 1.0,
            rotation_angle: deg.to_radians(),
            sample_seed: 100 + k as u64,
            label_permutation: None,
        })
        .collect()
}

/// Target task at 120 degrees with labels cycled by one.
pub fn default_target() -> TaskSpec {
    TaskSpec {
        task_id: "target_120".into(),
        class_count: 3,
        input_dim: 8,
        means: default_means(),
        covariance_scale: 1.0,
        rotation_angle: 120f64.to_radians(),
        sample_seed: 200,
        label_permutation: Some(vec![1, 2, 0]),
    }
}

/// Settings for pretraining the shared model on the source suite.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Trainable layers of the returned model (the rest are frozen).
    pub trainable_layers: usize,
    pub seed: u64,
}

/// A pretrained model and the snapshot of its trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub model: ToyModel,
    pub snapshot: TensorMap,
}

/// Trains one model on the union of the source tasks with every tensor
/// trainable, then freezes all but the last `trainable_layers` layers.
pub fn pretrain(suite: &[TaskData], cfg: &PretrainConfig) -> Result<Pretrained> {
    let first = suite
        .first()
        .ok_or_else(|| Error::Config("pretraining suite is empty".into()))?;
    let classes = suite
        .iter()
        .flat_map(|t| t.train.labels.iter().chain(&t.test.labels))
        .max()
        .map_or(0, |&m| m + 1);
    let mut dims = vec![first.train.dim];
    dims.extend(&cfg.hidden_sizes);
    dims.push(classes.max(2));
    let mut model = ToyModel::new(&dims, iteration_seed(cfg.seed, stream::INIT, 0))?;
    let union = Dataset::concat(suite.iter().map(|t| &t.train))?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        method: Method::FullFt,
        seed: derive(cfg.seed, &[stream::INIT, 1]),
        ..TrainConfig::default()
    };
    train_supervised(&mut model, &union, &train_cfg)?;
    model.set_trainable_last(cfg.trainable_layers)?;
    let snapshot = model.trainables();
    Ok(Pretrained { model, snapshot })
}

/// Held-out accuracy of `model` on a generated task.
pub fn evaluate(model: &ToyModel, task: &TaskData) -> Result<f64> {
    if task.test.is_empty() {
        return Err(Error::Config(format!("task `{}` has an empty test split", task.task_id)));
    }
    Ok(accuracy(model, &task.test))
}

/// Mean of the per-task source accuracies.
pub fn source_average(accuracies: &[f64]) -> f64 {
    if accuracies.is_empty() {
        return 0.0;
    }
    accuracies.iter().sum::<f64>() / accuracies.len() as f64
}

/// Harmonic mean `2 a b / (a + b)`; both inputs must be positive.
pub fn h_average(a_s: f64, a_t: f64) -> Result<f64> {
    if !(a_s > 0.0 && a_t > 0.0) {
        return Err(Error::Domain(format!(
            "harmonic mean needs positive inputs, got ({a_s}, {a_t})"
        )));
    }
    Ok(2.0 * a_s * a_t / (a_s + a_t))
}

pub fn o_average(a_s: f64, a_t: f64) -> f64 {
    (a_s + a_t) / 2.0
}

/// Scores of one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub seed: u64,
    pub per_source_accuracy: Vec<(String, f64)>,
    pub source_avg: f64,
    pub target_id: String,
    pub target_accuracy: f64,
    /// Zero when either accuracy is zero.
    pub h_average: f64,
    pub o_average: f64,
    pub pid_trace: Vec<(usize, f64)>,
    pub mask_density_trace: Vec<(usize, f64)>,
}

impl MetricsReport {
    pub fn from_accuracies(
        method: Method,
        seed: u64,
        per_source: Vec<(String, f64)>,
        target_id: String,
        target_accuracy: f64,
        log: Option<&RunLog>,
    ) -> Self {
        let values: Vec<f64> = per_source.iter().map(|(_, a)| *a).collect();
        let source_avg = source_average(&values);
        let (pid_trace, mask_density_trace) = log.map_or_else(Default::default, |l| {
            (
                l.records.iter().filter_map(|r| r.pid.map(|p| (r.iteration, p))).collect(),
                l.records.iter().map(|r| (r.iteration, r.mask_density)).collect(),
            )
        });
        Self {
            method,
            seed,
            per_source_accuracy: per_source,
            source_avg,
            target_id,
            target_accuracy,
            h_average: h_average(source_avg, target_accuracy).unwrap_or(0.0),
            o_average: o_average(source_avg, target_accuracy),
            pid_trace,
            mask_density_trace,
        }
    }

    pub fn mean_pid(&self) -> Option<f64> {
        mean(self.pid_trace.iter().map(|p| p.1))
    }

    pub fn mean_mask_density(&self) -> Option<f64> {
        mean(self.mask_density_trace.iter().map(|p| p.1))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Everything needed to run the benchmark: tasks, model shape and the
/// fine-tuning hyperparameters shared by all methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub suite: Vec<TaskSpec>,
    pub target: TaskSpec,
    pub samples_per_task: usize,
    pub hidden_sizes: Vec<usize>,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub finetune: TrainConfig,
}

impl Default for Benchmark {
    /// Four rotated sources and a relabelled target, 500 samples each, a
    /// 8-32-32-3 network pretrained for 30 epochs, and the default
    /// fine-tuning settings.
    fn default() -> Self {
        Self {
            suite: default_suite(),
            target: default_target(),
            samples_per_task: 500,
            hidden_sizes: vec![32, 32],
            pretrain_epochs: 30,
            pretrain_learning_rate: 0.05,
            finetune: TrainConfig::default(),
        }
    }
}

/// Generated data for a [`Benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub sources: Vec<TaskData>,
    pub target: TaskData,
}

impl Benchmark {
    pub fn generate(&self) -> Result<BenchmarkData> {
        if self.suite.iter().any(|t| t.task_id == self.target.task_id) {
            return Err(Error::Config(format!(
                "target `{}` is also a source task",
                self.target.task_id
            )));
        }
        let sources = self
            .suite
            .iter()
            .map(|t| generate_task(t, self.samples_per_task))
            .collect::<Result<Vec<_>>>()?;
        let target = generate_task(&self.target, self.samples_per_task)?;
        if sources.iter().chain([&target]).any(|t| t.train.dim != target.train.dim) {
            return Err(Error::Config("tasks disagree on input_dim".into()));
        }
        Ok(BenchmarkData { sources, target })
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            epochs: self.pretrain_epochs,
            learning_rate: self.pretrain_learning_rate,
            batch_size: self.finetune.batch_size,
            trainable_layers: self.finetune.trainable_layers,
            seed,
        }
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig {
            method,
            seed,
            ..self.finetune.clone()
        }
    }

    pub fn pretrain(&self, data: &BenchmarkData, seed: u64) -> Result<Pretrained> {
        pretrain(&data.sources, &self.pretrain_config(seed))
    }

    /// Fine-tunes a copy of `base` on the target and scores it.
    pub fn run_cell(&self, data: &BenchmarkData, base: &Pretrained, method: Method, seed: u64) -> Result<(MetricsReport, ToyModel)> {
        let cfg = self.train_config(method, seed);
        let (model, log) = finetune(base.model.clone(), &base.snapshot, &data.target.train, &cfg)?;
        let report = self.score(&model, data, method, seed, Some(&log))?;
        Ok((report, model))
    }

    pub fn score(&self, model: &ToyModel, data: &BenchmarkData, method: Method, seed: u64, log: Option<&RunLog>) -> Result<MetricsReport> {
        let per_source = data
            .sources
            .iter()
            .map(|t| Ok((t.task_id.clone(), evaluate(model, t)?)))
            .collect::<Result<Vec<_>>>()?;
        let target_acc = evaluate(model, &data.target)?;
        Ok(MetricsReport::from_accuracies(
            method,
            seed,
            per_source,
            data.target.task_id.clone(),
            target_acc,
            log,
        ))
    }
}

/// Pretrains once per seed, fine-tunes every method from that model and
/// returns reports ordered by (method, seed) as given.
///
/// Seeds and cells run in parallel; every cell is single-threaded and
/// seeded, so the output does not depend on scheduling.
pub fn run_experiment(bench: &Benchmark, methods: &[Method], seeds: &[u64]) -> Result<Vec<MetricsReport>> {
    let data = bench.generate()?;
    let bases = seeds
        .par_iter()
        .map(|&s| bench.pretrain(&data, s))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..seeds.len()).map(move |k| (m, k)))
        .collect();
    cells
        .par_iter()
        .map(|&(m, k)| bench.run_cell(&data, &bases[k], m, seeds[k]).map(|r| r.0))
        .collect()
}

/// How PID is aggregated over the trainable tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PidGranularity {
    /// One cosine over the concatenation of all trainables.
    #[default]
    Global,
    /// Mean of the per-tensor PIDs.
    PerTensor,
}

/// Mean PID over the iterations of a plain fine-tuning run on `data`,
/// measured against the pretrained snapshot of `base`.
pub fn measure_pid(base: &Pretrained, data: &Dataset, cfg: &TrainConfig, granularity: PidGranularity) -> Result<f64> {
    cfg.validate()?;
    let mut model = base.model.clone();
    let (mut total, mut count) = (0.0, 0usize);
    for epoch in 0..cfg.epochs {
        let order = iteration_seed(cfg.seed, stream::ORDER, epoch as u64);
        for batch in data.batches(cfg.batch_size, order)? {
            let (_, cache) = forward(&model, &batch)?;
            let grads = backward(&model, &cache)?;
            let value = match granularity {
                PidGranularity::Global => pid(&base.snapshot, &grads).ok(),
                PidGranularity::PerTensor => pid_per_tensor(&base.snapshot, &grads)
                    .ok()
                    .map(|v| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64),
            };
            if let Some(v) = value {
                total += v;
                count += 1;
            }
            sgd_step_with(&mut model, &grads, |n| cfg.lr_for(n))?;
        }
    }
    if count == 0 {
        return Err(Error::Domain("no iteration produced a finite PID".into()));
    }
    Ok(total / count as f64)
}
