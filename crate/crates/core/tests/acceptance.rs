//! Acceptance suite: drives the built-in verification battery one check
//! per test and prints one pass/fail line each. Run with `--nocapture`
//! to see the lines; every check must pass.

use oscgeo::selfcheck::{self, CheckResult};

fn assert_check(result: CheckResult) {
    println!("{}", result.summary_line());
    assert!(result.passed, "{}: {}", result.name, result.details);
}

fn assert_check_within(result: CheckResult, budget_ms: u128) {
    assert!(
        result.millis <= budget_ms,
        "{} took {} ms, budget {} ms",
        result.name,
        result.millis,
        budget_ms
    );
    assert_check(result);
}

#[test]
fn criterion_01_phi_identities() {
    assert_check_within(selfcheck::check_phi_identities(), 5_000);
}

#[test]
fn criterion_02_noise_covariance_vs_quadrature() {
    assert_check_within(selfcheck::check_noise_covariance_quadrature(), 30_000);
}

#[test]
fn criterion_03_kalman_oracle_equivalence() {
    assert_check(selfcheck::check_kalman_oracle());
}

#[test]
fn criterion_04_frozen_drift_linear_filter() {
    assert_check(selfcheck::check_frozen_drift_equivalence());
}

#[test]
fn criterion_05_linear_oscillator_recovery() {
    assert_check_within(selfcheck::check_oscillator_gradient_hold(), 60_000);
}

#[test]
fn criterion_06_geometry_projection_properties() {
    assert_check(selfcheck::check_geometry_projection());
}

#[test]
fn criterion_07_geodesic_constant_speed() {
    assert_check(selfcheck::check_geodesic_constant_speed(None));
}

#[test]
fn criterion_08_qmle_sanity() {
    assert_check_within(selfcheck::check_qmle_sanity(800), 600_000);
}

#[test]
fn criterion_09_statistics_layer() {
    assert_check(selfcheck::check_statistics_layer());
}

#[test]
fn criterion_10_pipeline_determinism() {
    let dir = tempfile::tempdir().expect("scratch dir");
    assert_check(selfcheck::check_pipeline_determinism(dir.path(), 150));
}
