use proptest::prelude::*;

use spider_core::benchmark::{h_average, o_average};
use spider_core::importance::{
    generalization_importance, pid, specialization_importance, GradAccumulator,
};
use spider_core::masking::{
    binary_mask, dare_mask_and_rescale, merge, merge_entry, random_half_mask, rescale_mask,
    weighted_mask, BlockLayout,
};
use spider_core::tensor::{cosine_similarity, sigmoid, zscore, FlatTensor, Moments};
use spider_core::{NormScope, TensorMap};

fn vec_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

/// Two tensors of independent random lengths.
fn map_strategy() -> impl Strategy<Value = TensorMap> {
    (vec_strategy(2..20), vec_strategy(1..8)).prop_map(|(a, b)| {
        TensorMap::from_tensors([
            FlatTensor::vector("a", a).unwrap(),
            FlatTensor::vector("b", b).unwrap(),
        ])
        .unwrap()
    })
}

fn same_layout(map: &TensorMap, values: &[f64]) -> TensorMap {
    let k = std::cell::Cell::new(0);
    map.map_tensors(|t| {
        let start = k.replace(k.get() + t.len());
        t.with_data(values[start..start + t.len()].to_vec()).unwrap()
    })
}

fn pair_strategy() -> impl Strategy<Value = (TensorMap, TensorMap)> {
    map_strategy().prop_flat_map(|m| {
        let n = m.numel();
        (Just(m), prop::collection::vec(-10.0f64..10.0, n))
            .prop_map(|(m, v)| {
                let other = same_layout(&m, &v);
                (m, other)
            })
    })
}

fn scopes() -> impl Strategy<Value = NormScope> {
    prop_oneof![Just(NormScope::PerTensor), Just(NormScope::Global)]
}

fn masks(w: &TensorMap, g: &TensorMap, scope: NormScope) -> [TensorMap; 3] {
    let mut acc = GradAccumulator::new(w, 0.9).unwrap();
    acc.accumulate(g).unwrap();
    let gi = specialization_importance(&acc, scope).unwrap();
    let ii = generalization_importance(w, scope);
    let weighted = weighted_mask(&gi, &ii).unwrap();
    [
        binary_mask(&gi, &ii).unwrap().mask,
        rescale_mask(&weighted, scope).unwrap().mask,
        weighted.mask,
    ]
}

proptest! {
    #[test]
    fn zscore_is_idempotent(v in vec_strategy(2..40)) {
        let t = FlatTensor::vector("t", v).unwrap();
        prop_assume!(!Moments::of(t.data()).is_degenerate());
        let once = zscore(&t);
        let twice = zscore(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let m = Moments::of(once.data());
        prop_assert!(m.mean.abs() < 1e-9 && (m.std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_monotone_and_bounded(mut v in vec_strategy(1..40)) {
        v.sort_by(f64::total_cmp);
        let s = sigmoid(&FlatTensor::vector("t", v).unwrap());
        for w in s.data().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(s.data().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_free(a in vec_strategy(1..30), c in 0.01f64..100.0, seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(k, v)| v * ((seed >> (k % 60)) & 3) as f64 - 1.0).collect();
        let (ta, tb) = (FlatTensor::vector("a", a.clone()).unwrap(), FlatTensor::vector("b", b).unwrap());
        let (Ok(ab), Ok(ba)) = (cosine_similarity(&ta, &tb), cosine_similarity(&tb, &ta)) else {
            return Ok(());
        };
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        let scaled = ta.map(|x| x * c);
        prop_assert!((cosine_similarity(&scaled, &tb).unwrap() - ab).abs() < 1e-9);
    }

    #[test]
    fn pid_is_at_least_one((w, g) in pair_strategy()) {
        if let Ok(p) = pid(&w, &g) {
            prop_assert!(p >= 1.0 - 1e-12);
        }
        if let Ok(p) = pid(&w, &w) {
            prop_assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn importance_is_scale_invariant(w in map_strategy(), c in 0.01f64..100.0, scope in scopes()) {
        let a = generalization_importance(&w, scope).scores;
        let b = generalization_importance(&w.map_tensors(|t| t.map(|x| x * c)), scope).scores;
        for (x, y) in a.concat().iter().zip(b.concat()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_never_exceeds_arithmetic(a in 1e-6f64..200.0, b in 1e-6f64..200.0) {
        let h = h_average(a, b).unwrap();
        prop_assert!(h <= o_average(a, b) * (1.0 + 1e-12));
        prop_assert!(h >= a.min(b) * (1.0 - 1e-12));
    }

    #[test]
    fn masks_share_support_and_stay_in_unit_interval((w, g) in pair_strategy(), scope in scopes()) {
        let [binary, rescaled, weighted] = masks(&w, &g, scope);
        let (b, r, x) = (binary.concat(), rescaled.concat(), weighted.concat());
        for k in 0..b.len() {
            prop_assert_eq!(b[k] != 0.0, r[k] != 0.0);
            prop_assert_eq!(b[k] != 0.0, x[k] != 0.0);
            prop_assert!(b[k] == 0.0 || b[k] == 1.0);
            prop_assert!((0.0..=1.0).contains(&r[k]) && (0.0..=1.0).contains(&x[k]));
            // selected weighted entries are at least one half
            prop_assert!(x[k] == 0.0 || x[k] >= 0.5);
        }
    }

    #[test]
    fn merge_stays_between_endpoints((cur, pre) in pair_strategy(), m in prop::collection::vec(0.0f64..=1.0, 30)) {
        for (k, (&c, &p)) in cur.concat().iter().zip(&pre.concat()).enumerate() {
            let v = merge_entry(c, p, m[k % m.len()]);
            prop_assert!(v >= c.min(p) - 1e-12 && v <= c.max(p) + 1e-12);
        }
    }

    #[test]
    fn merge_extremes_are_bitwise((cur, pre) in pair_strategy()) {
        for (&c, &p) in cur.concat().iter().zip(&pre.concat()) {
            prop_assert_eq!(merge_entry(c, p, 0.0).to_bits(), p.to_bits());
            prop_assert_eq!(merge_entry(c, p, 1.0).to_bits(), c.to_bits());
        }
    }

    #[test]
    fn half_blocks_select_floor_half(sizes in prop::collection::vec(1usize..7, 1..5), seed in any::<u64>()) {
        let mut tensors = Vec::new();
        let mut groups = Vec::new();
        for (gi, &n) in sizes.iter().enumerate() {
            let names: Vec<String> = (0..n).map(|k| format!("g{gi}.t{k}")).collect();
            for name in &names {
                tensors.push(FlatTensor::new(name.clone(), vec![2, 3], vec![0.0; 6]).unwrap());
            }
            groups.push(names);
        }
        let map = TensorMap::from_tensors(tensors).unwrap();
        let mask = random_half_mask(&map, &BlockLayout::TensorGroups(groups.clone()), seed).unwrap().mask;
        for g in &groups {
            let on = g.iter().filter(|n| mask.get(n).unwrap().data().iter().all(|&v| v == 1.0)).count();
            let off = g.iter().filter(|n| mask.get(n).unwrap().data().iter().all(|&v| v == 0.0)).count();
            prop_assert_eq!(on, g.len() / 2);
            prop_assert_eq!(on + off, g.len());
        }
    }

    #[test]
    fn row_groups_select_floor_half(rows in 1usize..12, blocks in 1usize..8, seed in any::<u64>()) {
        let map = TensorMap::from_tensors([FlatTensor::new("w", vec![rows, 2], vec![0.0; rows * 2]).unwrap()]).unwrap();
        let mask = random_half_mask(&map, &BlockLayout::RowGroups(blocks), seed).unwrap().mask;
        let b = blocks.min(rows);
        let data = mask.get("w").unwrap().data();
        let selected = (0..b).filter(|&k| data[k * rows / b * 2] == 1.0).count();
        prop_assert_eq!(selected, b / 2);
    }

    #[test]
    fn accumulator_is_an_ema(g1 in vec_strategy(1..10), beta in 0.0f64..0.99) {
        let n = g1.len();
        let g2: Vec<f64> = g1.iter().map(|v| v * 0.5 - 1.0).collect();
        let map = |v: Vec<f64>| TensorMap::from_tensors([FlatTensor::vector("w", v).unwrap()]).unwrap();
        let mut acc = GradAccumulator::new(&map(vec![0.0; n]), beta).unwrap();
        acc.accumulate(&map(g1.clone())).unwrap();
        acc.accumulate(&map(g2.clone())).unwrap();
        for k in 0..n {
            let expected = beta * g1[k].abs() + (1.0 - beta) * g2[k].abs();
            prop_assert!((acc.acc().concat()[k] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn dare_is_unbiased_over_seeds() {
    let delta = TensorMap::from_tensors([
        FlatTensor::vector("d", vec![1.0, -2.0, 0.5, 3.0]).unwrap(),
    ])
    .unwrap();
    let p = 0.5;
    let runs = 1000usize;
    let outs: Vec<Vec<f64>> = (0..runs as u64)
        .map(|s| dare_mask_and_rescale(&delta, p, s).unwrap().concat())
        .collect();
    for (k, &d) in delta.concat().iter().enumerate() {
        let mean = outs.iter().map(|o| o[k]).sum::<f64>() / runs as f64;
        // each draw is d / (1 - p) with probability 1 - p, else 0
        let std = d.abs() * (p / (1.0 - p)).sqrt();
        let se = std / (runs as f64).sqrt();
        assert!((mean - d).abs() <= 3.0 * se, "entry {k}: mean {mean}, target {d}, se {se}");
    }
}

#[test]
fn merge_with_all_zero_mask_reproduces_pretrained() {
    let cur = TensorMap::from_tensors([FlatTensor::vector("w", vec![1.0, 2.0]).unwrap()]).unwrap();
    let pre = TensorMap::from_tensors([FlatTensor::vector("w", vec![0.3, -0.7]).unwrap()]).unwrap();
    let w = pre.clone();
    // gradients proportional to the weights give G == I everywhere
    let g = w.map_tensors(|t| t.map(|x| x * 4.0));
    let [binary, ..] = masks(&w, &g, NormScope::PerTensor);
    assert!(binary.concat().iter().all(|&v| v == 0.0));
    let mut acc = GradAccumulator::new(&w, 0.9).unwrap();
    acc.accumulate(&g).unwrap();
    let m = binary_mask(
        &specialization_importance(&acc, NormScope::PerTensor).unwrap(),
        &generalization_importance(&w, NormScope::PerTensor),
    )
    .unwrap();
    assert_eq!(merge(&cur, &pre, &m).unwrap(), pre);
}
