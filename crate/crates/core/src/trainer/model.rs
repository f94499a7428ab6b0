//! Dense tanh classifier with hand-written backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{FlatTensor, TensorMap};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Weight `[out x in]` (row-major), bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: FlatTensor,
    pub bias: FlatTensor,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Feed-forward classifier whose final layer feeds a softmax.
///
/// Each layer contributes two tensors, `layer{k}.weight` and `layer{k}.bias`,
/// with an independent trainable flag. Frozen tensors are never written by
/// training code.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    layers: Vec<Layer>,
    trainable: Vec<bool>,
    version: u64,
}

impl ToyModel {
    /// Glorot-uniform weights, zero biases, tanh on every layer but the last.
    /// All tensors start trainable.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Dimension(format!("invalid layer sizes {dims:?}")));
        }
        let mut rng = seeded(seed);
        let n = dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                weight: FlatTensor::new(weight_name(k), vec![fan_out, fan_in], w)?,
                bias: FlatTensor::zeros(bias_name(k), vec![fan_out])?,
                activation: if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            });
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("model needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.outputs()] {
                return Err(Error::Dimension(format!(
                    "layer {k}: weight {:?} and bias {:?} do not fit",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            if k > 0 && layers[k - 1].outputs() != l.inputs() {
                return Err(Error::Dimension(format!(
                    "layer {k} expects {} inputs, previous layer gives {}",
                    l.inputs(),
                    layers[k - 1].outputs()
                )));
            }
        }
        let trainable = vec![true; layers.len() * 2];
        Ok(Self {
            layers,
            trainable,
            version: next_version(),
        })
    }

    /// Rebuilds a model from `layer{k}.weight/bias` tensors; hidden layers
    /// use tanh, the last layer is linear.
    pub fn from_tensor_map(map: &TensorMap) -> Result<Self> {
        let n = map.len() / 2;
        if n == 0 || map.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "expected weight/bias pairs, got {} tensors",
                map.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let get = |name: String| {
                map.get(&name)
                    .cloned()
                    .ok_or_else(|| Error::Dimension(format!("missing tensor `{name}`")))
            };
            layers.push(Layer {
                weight: get(weight_name(k))?,
                bias: get(bias_name(k))?,
                activation: if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            });
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer sizes from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    /// Makes exactly the last `count` layers trainable and freezes the rest.
    pub fn set_trainable_last(&mut self, count: usize) -> Result<()> {
        let n = self.layers.len();
        if count == 0 || count > n {
            return Err(Error::Config(format!(
                "trainable layer count must be in 1..={n}, got {count}"
            )));
        }
        for (k, flags) in self.trainable.chunks_mut(2).enumerate() {
            flags.fill(k >= n - count);
        }
        Ok(())
    }

    pub fn set_tensor_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let slot = self
            .tensor_slot(name)
            .ok_or_else(|| Error::Alignment(format!("unknown tensor `{name}`")))?;
        self.trainable[slot] = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.tensor_slot(name).is_some_and(|s| self.trainable[s])
    }

    fn tensor_slot(&self, name: &str) -> Option<usize> {
        self.tensors_ordered()
            .position(|t| t.name() == name)
    }

    fn tensors_ordered(&self) -> impl Iterator<Item = &FlatTensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    /// Every tensor, frozen or not, in layer order.
    pub fn tensors(&self) -> TensorMap {
        TensorMap::from_tensors(self.tensors_ordered().cloned()).expect("unique layer names")
    }

    /// Snapshot of the trainable tensors, in layer order.
    pub fn trainables(&self) -> TensorMap {
        TensorMap::from_tensors(
            self.tensors_ordered()
                .zip(&self.trainable)
                .filter(|(_, &t)| t)
                .map(|(t, _)| t.clone()),
        )
        .expect("unique layer names")
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors_ordered()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(t, _)| t.name().to_owned())
            .collect()
    }

    /// Mutable handles to the trainable tensors, in layer order.
    pub fn trainables_mut(&mut self) -> Vec<&mut FlatTensor> {
        self.version = next_version();
        let flags = &self.trainable;
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .zip(flags)
            .filter(|(_, &t)| t)
            .map(|(t, _)| t)
            .collect()
    }

    /// Overwrites the trainable tensors with `values` (must be aligned).
    pub fn set_trainables(&mut self, values: &TensorMap) -> Result<()> {
        self.trainables().ensure_aligned(values)?;
        for (dst, src) in self.trainables_mut().into_iter().zip(values) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Class scores for one input row, before the softmax.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in &self.layers {
            a = layer_forward(l, &a);
        }
        a
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

fn layer_forward(l: &Layer, a: &[f64]) -> Vec<f64> {
    let cols = l.inputs();
    l.weight
        .data()
        .chunks_exact(cols)
        .zip(l.bias.data())
        .map(|(row, &b)| {
            let z = row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b;
            l.activation.apply(z)
        })
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Row-major inputs `[rows x dim]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "batch of {} labels and {} values at dim {dim}",
                labels.len(),
                inputs.len()
            )));
        }
        Ok(Self { inputs, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// A labelled sample set that can be cut into shuffled mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut out: Option<Dataset> = None;
        for p in parts {
            match &mut out {
                None => out = Some(p.clone()),
                Some(acc) => {
                    if acc.dim != p.dim {
                        return Err(Error::Dimension(format!(
                            "cannot concatenate dims {} and {}",
                            acc.dim, p.dim
                        )));
                    }
                    acc.inputs.extend_from_slice(&p.inputs);
                    acc.labels.extend_from_slice(&p.labels);
                }
            }
        }
        out.ok_or_else(|| Error::Config("no datasets to concatenate".into()))
    }

    /// Whole set as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.dim, self.labels.clone())
    }

    /// Seeded permutation cut into batches of `batch_size` (the last may be short).
    pub fn batches(&self, batch_size: usize, order_seed: u64) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seeded(order_seed));
        order
            .chunks(batch_size)
            .map(|idx| {
                let mut inputs = Vec::with_capacity(idx.len() * self.dim);
                for &i in idx {
                    inputs.extend_from_slice(self.row(i));
                }
                Batch::new(inputs, self.dim, idx.iter().map(|&i| self.labels[i]).collect())
            })
            .collect()
    }
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// `activations[k]` is the input of layer `k`, `[rows x in_k]`;
    /// the last entry holds the network output.
    activations: Vec<Vec<f64>>,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Mean softmax cross-entropy over the batch.
pub fn forward(model: &ToyModel, batch: &Batch) -> Result<(f64, ForwardCache)> {
    if batch.dim != model.input_dim() {
        return Err(Error::Dimension(format!(
            "batch dim {} but model expects {}",
            batch.dim,
            model.input_dim()
        )));
    }
    let classes = model.class_count();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Dimension(format!("label {bad} with {classes} classes")));
    }
    let rows = batch.len();
    let mut activations = Vec::with_capacity(model.layers.len() + 1);
    activations.push(batch.inputs.clone());
    for l in &model.layers {
        let prev = activations.last().expect("seeded with inputs");
        let (cols, outs) = (l.inputs(), l.outputs());
        let mut next = Vec::with_capacity(rows * outs);
        for r in 0..rows {
            next.extend(layer_forward(l, &prev[r * cols..(r + 1) * cols]));
        }
        activations.push(next);
    }
    let logits = activations.last().expect("at least one layer");
    let mut probs = Vec::with_capacity(rows * classes);
    let mut loss = 0.0;
    for (r, &label) in batch.labels.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[label];
        probs.extend(z.iter().map(|&v| (v - lse).exp()));
    }
    Ok((
        loss / rows as f64,
        ForwardCache {
            version: model.version,
            activations,
            probs,
            labels: batch.labels.clone(),
        },
    ))
}

/// Gradients of the mean loss for every trainable tensor.
pub fn backward(model: &ToyModel, cache: &ForwardCache) -> Result<TensorMap> {
    if cache.version != model.version {
        return Err(Error::StaleCache);
    }
    let rows = cache.labels.len();
    let classes = model.class_count();
    let n = model.layers.len();
    let lowest = match model.trainable.iter().position(|&t| t) {
        Some(slot) => slot / 2,
        None => return Ok(TensorMap::new()),
    };

    // dL/dz for the output layer
    let mut delta: Vec<f64> = cache.probs.clone();
    for (r, &label) in cache.labels.iter().enumerate() {
        delta[r * classes + label] -= 1.0;
    }
    let scale = 1.0 / rows as f64;
    delta.iter_mut().for_each(|d| *d *= scale);

    let mut grads: Vec<(usize, FlatTensor, FlatTensor)> = Vec::new();
    for k in (lowest..n).rev() {
        let l = &model.layers[k];
        let (cols, outs) = (l.inputs(), l.outputs());
        let input = &cache.activations[k];
        let (tw, tb) = (model.trainable[2 * k], model.trainable[2 * k + 1]);
        if tw || tb {
            let mut gw = vec![0.0; outs * cols];
            let mut gb = vec![0.0; outs];
            for r in 0..rows {
                let d = &delta[r * outs..(r + 1) * outs];
                let x = &input[r * cols..(r + 1) * cols];
                for (o, &dv) in d.iter().enumerate() {
                    gb[o] += dv;
                    let row = &mut gw[o * cols..(o + 1) * cols];
                    for (g, &xv) in row.iter_mut().zip(x) {
                        *g += dv * xv;
                    }
                }
            }
            grads.push((
                k,
                l.weight.with_data(gw)?,
                l.bias.with_data(gb)?,
            ));
        }
        if k > lowest {
            let below = &model.layers[k - 1];
            let mut next = vec![0.0; rows * cols];
            let w = l.weight.data();
            for r in 0..rows {
                let d = &delta[r * outs..(r + 1) * outs];
                let out = &mut next[r * cols..(r + 1) * cols];
                for (o, &dv) in d.iter().enumerate() {
                    for (acc, &wv) in out.iter_mut().zip(&w[o * cols..(o + 1) * cols]) {
                        *acc += dv * wv;
                    }
                }
                for (acc, &a) in out.iter_mut().zip(&input[r * cols..(r + 1) * cols]) {
                    *acc *= below.activation.derivative_from_output(a);
                }
            }
            delta = next;
        }
    }
    grads.reverse();
    let mut map = TensorMap::new();
    for (k, gw, gb) in grads {
        if model.trainable[2 * k] {
            map.push(gw)?;
        }
        if model.trainable[2 * k + 1] {
            map.push(gb)?;
        }
    }
    Ok(map)
}

/// Checks that `grads` names exactly the trainable tensors, in order.
fn check_gradients(model: &ToyModel, grads: &TensorMap) -> Result<()> {
    for g in grads {
        if model.tensor_slot(g.name()).is_some() && !model.is_trainable(g.name()) {
            return Err(Error::FrozenGradient(g.name().to_owned()));
        }
    }
    model.trainables().ensure_aligned(grads)
}

/// `w <- w - lr * grad` on the trainable tensors.
pub fn sgd_step(model: &mut ToyModel, grads: &TensorMap, lr: f64) -> Result<()> {
    sgd_step_with(model, grads, |_| lr)
}

/// [`sgd_step`] with a learning rate chosen per tensor name.
pub fn sgd_step_with(model: &mut ToyModel, grads: &TensorMap, lr_for: impl Fn(&str) -> f64) -> Result<()> {
    check_gradients(model, grads)?;
    for (w, g) in model.trainables_mut().into_iter().zip(grads) {
        let lr = lr_for(w.name());
        if lr == 0.0 {
            continue;
        }
        for (x, &d) in w.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(model: &ToyModel, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = (0..data.len())
        .filter(|&i| model.predict(data.row(i)) == data.labels[i])
        .count();
    hits as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ToyModel {
        ToyModel::new(&[3, 4, 2], 1).unwrap()
    }

    fn batch() -> Batch {
        Batch::new(vec![0.1, -0.2, 0.3, 1.0, 0.5, -0.5], 3, vec![0, 1]).unwrap()
    }

    #[test]
    fn zero_weights_give_log_two() {
        let mut m = tiny();
        for t in m.trainables_mut() {
            t.data_mut().fill(0.0);
        }
        let (loss, _) = forward(&m, &batch()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let layer = Layer {
            weight: FlatTensor::new("layer0.weight", vec![2, 2], vec![0.0; 4]).unwrap(),
            bias: FlatTensor::vector("layer0.bias", vec![40.0, 0.0]).unwrap(),
            activation: Activation::Identity,
        };
        let m = ToyModel::from_layers(vec![layer]).unwrap();
        let b = Batch::new(vec![1.0, 1.0], 2, vec![0]).unwrap();
        let (loss, _) = forward(&m, &b).unwrap();
        assert!(loss.abs() < 1e-15, "{loss}");
    }

    #[test]
    fn forward_rejects_bad_batches() {
        let m = tiny();
        let wrong_dim = Batch::new(vec![0.0; 4], 2, vec![0, 1]).unwrap();
        assert!(matches!(forward(&m, &wrong_dim), Err(Error::Dimension(_))));
        let bad_label = Batch::new(vec![0.0; 3], 3, vec![5]).unwrap();
        assert!(matches!(forward(&m, &bad_label), Err(Error::Dimension(_))));
        assert!(Batch::new(vec![], 3, vec![]).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = tiny();
        let (_, cache) = forward(&m, &batch()).unwrap();
        let g = backward(&m, &cache).unwrap();
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert!(matches!(backward(&m, &cache), Err(Error::StaleCache)));
    }

    #[test]
    fn frozen_tensors_are_excluded_and_protected() {
        let mut m = tiny();
        m.set_trainable_last(1).unwrap();
        let (_, cache) = forward(&m, &batch()).unwrap();
        let g = backward(&m, &cache).unwrap();
        assert_eq!(g.names().collect::<Vec<_>>(), ["layer1.weight", "layer1.bias"]);

        let frozen_before = m.tensors().get("layer0.weight").unwrap().clone();
        let mut with_frozen = TensorMap::new();
        with_frozen.push(frozen_before.map(|_| 1.0)).unwrap();
        for t in &g {
            with_frozen.push(t.clone()).unwrap();
        }
        let err = sgd_step(&mut m, &with_frozen, 0.1).unwrap_err();
        assert!(matches!(err, Error::FrozenGradient(name) if name == "layer0.weight"));
        assert_eq!(m.tensors().get("layer0.weight").unwrap(), &frozen_before);
    }

    #[test]
    fn sgd_arithmetic() {
        let layer = Layer {
            weight: FlatTensor::new("layer0.weight", vec![1, 1], vec![1.0]).unwrap(),
            bias: FlatTensor::vector("layer0.bias", vec![0.0]).unwrap(),
            activation: Activation::Identity,
        };
        let mut m = ToyModel::from_layers(vec![layer]).unwrap();
        m.set_tensor_trainable("layer0.bias", false).unwrap();
        let g = TensorMap::from_tensors([FlatTensor::new("layer0.weight", vec![1, 1], vec![2.0]).unwrap()]).unwrap();
        let before = m.clone();
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m.tensors(), before.tensors());
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert!((m.tensors().get("layer0.weight").unwrap().data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicated_rows_keep_the_mean_gradient() {
        let m = tiny();
        let b = batch();
        let doubled = Batch::new([b.inputs.clone(), b.inputs.clone()].concat(), 3, [b.labels.clone(), b.labels.clone()].concat()).unwrap();
        let g1 = backward(&m, &forward(&m, &b).unwrap().1).unwrap();
        let g2 = backward(&m, &forward(&m, &doubled).unwrap().1).unwrap();
        for (a, c) in g1.iter().zip(&g2) {
            for (x, y) in a.data().iter().zip(c.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_zero_model_has_zero_hidden_bias_gradient() {
        let mut m = ToyModel::new(&[2, 3, 3, 2], 0).unwrap();
        for t in m.trainables_mut() {
            t.data_mut().fill(0.0);
        }
        // mirrored inputs with swapped labels
        let b = Batch::new(vec![1.0, -1.0, -1.0, 1.0], 2, vec![0, 1]).unwrap();
        let g = backward(&m, &forward(&m, &b).unwrap().1).unwrap();
        for name in ["layer0.bias", "layer1.bias"] {
            assert!(g.get(name).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn tensor_map_round_trip() {
        let m = ToyModel::new(&[4, 5, 3], 9).unwrap();
        let back = ToyModel::from_tensor_map(&m.tensors()).unwrap();
        assert_eq!(back.tensors(), m.tensors());
        assert_eq!(back.dims(), vec![4, 5, 3]);
    }

    #[test]
    fn batches_cover_every_row_once() {
        let d = Dataset {
            inputs: (0..10).map(f64::from).collect(),
            dim: 1,
            labels: vec![0; 10],
        };
        let bs = d.batches(4, 3).unwrap();
        assert_eq!(bs.iter().map(Batch::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut seen: Vec<f64> = bs.iter().flat_map(|b| b.inputs.clone()).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, d.inputs);
        assert_eq!(bs, d.batches(4, 3).unwrap());
    }
}
