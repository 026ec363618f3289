mod common;

use common::CASES;

#[test]
fn semigroup() {
    common::semigroup(CASES).unwrap();
}

#[test]
fn cocycle() {
    common::cocycle(CASES).unwrap();
}

#[test]
fn ad_matches_finite_differences() {
    common::ad_vs_fd(CASES).unwrap();
}

#[test]
fn eigen_residual_and_trace() {
    common::eigen(CASES).unwrap();
}

#[test]
fn cholesky_round_trip() {
    common::cholesky_round_trip(CASES).unwrap();
}

#[test]
fn envelope_is_monotone() {
    common::envelope_monotone(CASES).unwrap();
}

#[test]
fn report_is_thread_independent() {
    common::report_determinism(CASES).unwrap();
}
