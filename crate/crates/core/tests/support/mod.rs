//! Oracles shared by several test targets.
#![allow(dead_code)]

use rand::Rng;
use spider_core::rng::seeded;
use spider_core::tensor::FlatTensor;
use spider_core::trainer::{
    backward, finetune, forward, Activation, Batch, Dataset, Layer, Method, ToyModel, TrainConfig,
};

// finite differences

pub const H: f64 = 1e-5;
/// Relative error is measured against max(|analytic|, |numeric|, FLOOR) so
/// entries whose true gradient is ~0 are compared absolutely.
pub const FLOOR: f64 = 1e-8;

pub fn random_case(seed: u64) -> (ToyModel, Batch) {
    let mut rng = seeded(seed);
    let dims: Vec<usize> = (0..4).map(|k| rng.gen_range(if k == 3 { 2..5 } else { 1..6 })).collect();
    let mut model = ToyModel::new(&dims, seed).unwrap();
    for t in model.trainables_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
    }
    let rows = rng.gen_range(1..7);
    let inputs = (0..rows * dims[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels = (0..rows).map(|_| rng.gen_range(0..dims[3])).collect();
    (model, Batch::new(inputs, dims[0], labels).unwrap())
}

pub fn loss(model: &ToyModel, batch: &Batch) -> f64 {
    forward(model, batch).unwrap().0
}

/// Largest relative error over every trainable entry.
pub fn max_relative_error(mut model: ToyModel, batch: &Batch) -> f64 {
    let (_, cache) = forward(&model, batch).unwrap();
    let grads = backward(&model, &cache).unwrap();
    let mut worst = 0.0f64;
    for (t, g) in grads.iter().enumerate() {
        for v in 0..g.len() {
            let orig = model.trainables_mut()[t].data()[v];
            model.trainables_mut()[t].data_mut()[v] = orig + H;
            let up = loss(&model, batch);
            model.trainables_mut()[t].data_mut()[v] = orig - H;
            let down = loss(&model, batch);
            model.trainables_mut()[t].data_mut()[v] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = g.data()[v];
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

// single masked step on a fixed 2->2->2 network

pub const W0: [[f64; 2]; 2] = [[0.5, -0.3], [0.8, 0.2]];
pub const B0: [f64; 2] = [0.1, -0.1];
pub const W1: [[f64; 2]; 2] = [[0.7, -0.4], [-0.2, 0.9]];
pub const B1: [f64; 2] = [0.05, -0.3];
pub const X: [[f64; 2]; 2] = [[1.0, 0.5], [-0.5, 1.5]];
pub const Y: [usize; 2] = [0, 1];
pub const LR: f64 = 0.5;

pub fn model() -> ToyModel {
    let t = |name: &str, shape: Vec<usize>, data: Vec<f64>| FlatTensor::new(name, shape, data).unwrap();
    let mut m = ToyModel::from_layers(vec![
        Layer {
            weight: t("layer0.weight", vec![2, 2], W0.concat()),
            bias: t("layer0.bias", vec![2], B0.to_vec()),
            activation: Activation::Tanh,
        },
        Layer {
            weight: t("layer1.weight", vec![2, 2], W1.concat()),
            bias: t("layer1.bias", vec![2], B1.to_vec()),
            activation: Activation::Identity,
        },
    ])
    .unwrap();
    m.set_trainable_last(1).unwrap();
    m
}

fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if std < 1e-12 { 0.0 } else { (x - mean) / std }).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Returns (layer1.weight, layer1.bias, mask over the 6 entries) after one step.
pub fn hand_trace(variant: Method) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // forward and backward for the batch of two
    let mut gw = [0.0; 4];
    let mut gb = [0.0; 2];
    for (x, &y) in X.iter().zip(&Y) {
        let h: Vec<f64> = (0..2).map(|i| (W0[i][0] * x[0] + W0[i][1] * x[1] + B0[i]).tanh()).collect();
        let z: Vec<f64> = (0..2).map(|i| W1[i][0] * h[0] + W1[i][1] * h[1] + B1[i]).collect();
        let zmax = z[0].max(z[1]);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let s = e[0] + e[1];
        for i in 0..2 {
            let dz = (e[i] / s - if i == y { 1.0 } else { 0.0 }) / 2.0;
            gw[2 * i] += dz * h[0];
            gw[2 * i + 1] += dz * h[1];
            gb[i] += dz;
        }
    }
    let w_star: Vec<f64> = W1.concat();
    let b_star: Vec<f64> = B1.to_vec();

    // first accumulation is |g|; importances per tensor
    let scores = |w: &[f64], g: &[f64]| {
        let i: Vec<f64> = zscore(&w.iter().map(|v| v.abs()).collect::<Vec<_>>()).into_iter().map(sig).collect();
        let gg: Vec<f64> = zscore(&g.iter().map(|v| v.abs()).collect::<Vec<_>>()).into_iter().map(sig).collect();
        (gg, i)
    };
    let mask_of = |g: &[f64], i: &[f64]| -> Vec<f64> {
        let raw: Vec<f64> = g
            .iter()
            .zip(i)
            .map(|(&g, &i)| match variant {
                Method::SpiderBinary => (g > i) as u8 as f64,
                _ if g > i => g / (g + i),
                _ => 0.0,
            })
            .collect();
        if variant != Method::Spider {
            return raw;
        }
        let nz: Vec<f64> = raw.iter().copied().filter(|&v| v != 0.0).collect();
        if nz.is_empty() {
            return raw;
        }
        let mean = nz.iter().sum::<f64>() / nz.len() as f64;
        raw.iter().map(|&v| if v == 0.0 { 0.0 } else { (v / mean).min(1.0) }).collect()
    };
    let (gw_s, iw) = scores(&w_star, &gw);
    let (gb_s, ib) = scores(&b_star, &gb);
    let mw = mask_of(&gw_s, &iw);
    let mb = mask_of(&gb_s, &ib);

    let step = |w: &[f64], g: &[f64], m: &[f64]| -> Vec<f64> {
        w.iter()
            .zip(g)
            .zip(m)
            .map(|((&w, &g), &m)| {
                let stepped = w - LR * g;
                stepped * m + w * (1.0 - m)
            })
            .collect()
    };
    let new_w = step(&w_star, &gw, &mw);
    let new_b = step(&b_star, &gb, &mb);
    (new_w, new_b, [mw, mb].concat())
}

pub fn library_step(method: Method) -> ToyModel {
    let m = model();
    let snapshot = m.trainables();
    let data = Dataset {
        inputs: X.concat(),
        dim: 2,
        labels: Y.to_vec(),
    };
    let cfg = TrainConfig {
        learning_rate: LR,
        epochs: 1,
        batch_size: 2,
        trainable_layers: 1,
        method,
        ..TrainConfig::default()
    };
    let (tuned, log) = finetune(m, &snapshot, &data, &cfg).unwrap();
    assert_eq!(log.records.len(), 1);
    tuned
}

