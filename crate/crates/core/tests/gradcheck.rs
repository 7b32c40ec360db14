mod common;

use common::{check_case, op_cases, GRAD_TOL};

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for (i, case) in op_cases().iter().enumerate() {
        let worst = check_case(case, 1000 + i as u64);
        eprintln!("{:<24} {worst:.2e}", case.name);
        if !(worst < GRAD_TOL) {
            failures.push(format!("{}: {worst:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn check_catches_a_wrong_gradient() {
    // d/dx of x·x evaluated through two separate inputs bound to one value
    // differs from the derivative of a constant-folded square.
    let x = longrisk::Tensor::row(vec![0.7, -1.3]);
    let worst = common::grad_check(
        &[x],
        &|g, v| {
            let c = g.constant(g.value(v[0]).clone());
            g.mul(v[0], c)
        },
        3,
    );
    assert!(worst > 0.1);
}
