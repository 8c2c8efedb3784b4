use std::time::Instant;

use xdom::gradsuite::{gradient_suite, layer_checks, LAYER_TOL, NETWORK_TOL};
use xdom::model::Profile;

#[test]
fn every_primitive_is_covered_and_passes() {
    let checks = layer_checks(1).unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    for op in [
        "matmul", "linear", "conv1d", "conv2d", "tanh", "sigmoid", "softmax", "mul", "add", "add_row", "scale", "concat", "stack_rows", "row",
        "reshape", "global_avg_pool", "relu", "max_pool1d", "cross_entropy", "gru_layer", "gru_stack",
    ] {
        assert!(names.contains(&op), "{op} not checked");
    }
    for c in &checks {
        assert_eq!(c.tolerance, LAYER_TOL);
        assert!(c.passed(), "{} {}", c.name, c.max_rel_err);
    }
}

#[test]
fn reduced_suite_passes_for_both_networks() {
    let t = Instant::now();
    let checks = gradient_suite(Profile::Reduced, 2).unwrap();
    let nets: Vec<_> = checks.iter().filter(|c| c.tolerance == NETWORK_TOL).collect();
    assert!(nets.iter().any(|c| c.name.starts_with("xdom/")) && nets.iter().any(|c| c.name.starts_with("baseline/")));
    for c in &checks {
        assert!(c.passed(), "{} {}", c.name, c.max_rel_err);
    }
    assert!(t.elapsed().as_secs() < 120);
}

#[test]
fn layer_checks_hold_across_seeds() {
    for seed in 0..40 {
        for c in layer_checks(seed).unwrap() {
            assert!(c.passed(), "seed {seed}: {} {}", c.name, c.max_rel_err);
        }
    }
}
