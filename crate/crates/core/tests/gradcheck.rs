mod common;

use common::{model_gradchecks, op_gradchecks, FD_TOLERANCE};

#[test]
fn every_op_matches_finite_differences() {
    let results = op_gradchecks().unwrap();
    let failures: Vec<_> = results.iter().filter(|(_, e)| !(*e <= FD_TOLERANCE)).collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn attention_resnet_matches_finite_differences() {
    for (name, err) in model_gradchecks().unwrap() {
        assert!(err <= FD_TOLERANCE, "{name}: relative error {err:e}");
    }
}
