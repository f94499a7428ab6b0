//! One masked fine-tuning iteration on a fixed 2->2->2 network, checked
//! against a scalar re-derivation that shares no code with the library.

mod support;

use spider_core::trainer::Method;
use support::{hand_trace, library_step, B0, W0};

fn check(method: Method) {
    let (w, b, mask) = hand_trace(method);
    // the trace must exercise both selected and restored entries
    assert!(mask.iter().any(|&v| v == 0.0) && mask.iter().any(|&v| v > 0.0), "{mask:?}");
    let tuned = library_step(method);
    let got = tuned.trainables();
    for (expected, name) in [(&w, "layer1.weight"), (&b, "layer1.bias")] {
        for (a, e) in got.get(name).unwrap().data().iter().zip(expected.iter()) {
            assert!((a - e).abs() <= 1e-12, "{method} {name}: {a} vs {e}");
        }
    }
    // the frozen encoder is untouched
    assert_eq!(tuned.layers()[0].weight.data(), W0.concat().as_slice());
    assert_eq!(tuned.layers()[0].bias.data(), B0.as_slice());
}

#[test]
fn rescaled_weighted_step_matches_hand_trace() {
    check(Method::Spider);
}

#[test]
fn weighted_step_matches_hand_trace() {
    check(Method::SpiderWeightedNorescale);
}

#[test]
fn binary_step_matches_hand_trace() {
    check(Method::SpiderBinary);
}
