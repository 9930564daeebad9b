//! Closed forms checked against exact integer arithmetic.

mod common;

use common::{binomial_cdf_exact, choose, rel_err};
use saa_core::bounds::{
    bound_baseline, bound_covering, bound_finite, bound_robust_covering, bound_robust_finite, covering_factor,
};
use saa_core::harness::{sweep_bound_comparison, SweepParams};
use saa_core::kernels::{binomial_cdf, min_sample_size};
use saa_core::BinomialParams;

fn phi(z: f64, p: f64, n: usize) -> f64 {
    binomial_cdf(z, &BinomialParams::new(n, p).unwrap()).unwrap()
}

#[test]
fn binomial_matches_exact_sum() {
    for &(z, p, n) in &[
        (0u64, 0.1, 10u64),
        (1, 0.1, 20),
        (2, 0.2, 40),
        (5, 0.1, 100),
        (5, 0.075, 100),
        (25, 0.1, 500),
        (100, 0.1, 2000),
        (3, 0.5, 7),
        (9_000, 0.1, 100_000),
    ] {
        let exact = binomial_cdf_exact(z, p, n).to_f64();
        let got = phi(z as f64, p, n as usize);
        assert!(rel_err(got, exact) < 1e-10, "Φ({z}; {p}, {n}) = {got}, exact {exact}");
    }
}

#[test]
fn single_term_cases() {
    assert!(rel_err(phi(0.0, 0.1, 10), 0.9f64.powi(10)) < 1e-14);
    // Φ(1; 0.1, 20) = 0.9^20 + 20·0.1·0.9^19
    let direct = 0.9f64.powi(20) + choose(20, 1) * 0.1 * 0.9f64.powi(19);
    assert!(rel_err(phi(1.0, 0.1, 20), direct) < 1e-14);
}

#[test]
fn sample_size_values() {
    assert_eq!(min_sample_size(100, 0.05, 0.1, 0.05, 0.02).unwrap(), 4223);
    assert_eq!(min_sample_size(20, 0.1, 0.15, 0.05, 0.02).unwrap(), 414);
    let gap_case = min_sample_size(1, (-1f64).exp(), 0.2, 0.05, 0.05).unwrap();
    assert_eq!(gap_case, 50);
    // the reported N satisfies the inequality and N - 1 does not
    let bound = (200f64).ln() / (2.0 * 0.08 * 0.08);
    assert!(414.0 >= bound && 413.0 < bound);
}

#[test]
fn finite_and_robust_values() {
    let exact = 50.0 * binomial_cdf_exact(1, 0.1, 20).to_f64();
    assert!(rel_err(bound_finite(50, 0.05, 0.1, 20).unwrap().raw, exact) < 1e-10);

    let exact = 50.0 * binomial_cdf_exact(1, 0.08, 20).to_f64();
    let got = bound_robust_finite(50, 0.05, &[0.08; 20]).unwrap().raw;
    assert!(rel_err(got, exact) < 1e-10);
}

#[test]
fn covering_and_baseline_at_n100() {
    assert_eq!(covering_factor(1.0, 1.0, 1.0, 10).unwrap().value.round(), 1024.0);
    let exact = 1024.0 * binomial_cdf_exact(5, 0.1, 100).to_f64();
    let got = bound_covering(1.0, 1.0, 1.0, 10, 0.05, 0.1, 100).unwrap();
    assert!(rel_err(got.raw, exact) < 1e-10);

    let beta = (0.1 - 0.05) / 2.0;
    let exact = 40.0 * 1024.0 * binomial_cdf_exact(5, 0.1 - beta, 100).to_f64();
    let got = bound_baseline(1.0, 1.0, 1.0, 10, 0.05, 0.1, beta, 100).unwrap();
    assert!(rel_err(got.raw, exact) < 1e-10);

    let p = vec![0.1; 100];
    assert_eq!(
        bound_robust_covering(1.0, 1.0, 1.0, 10, 0.05, &p).unwrap(),
        bound_covering(1.0, 1.0, 1.0, 10, 0.05, 0.1, 100).unwrap()
    );
}

#[test]
fn sweep_ratio_and_crossing() {
    let table = sweep_bound_comparison(&SweepParams {
        dim: 10,
        epsilon: 0.1,
        alpha: 0.05,
        ratio: 1.0,
        beta: None,
        n_min: 1,
        n_max: 2000,
    })
    .unwrap();

    // ratio at N = 500 from the exact sums
    let row = &table.rows[499];
    assert_eq!(row.n_samples, 500);
    let exact_cov = binomial_cdf_exact(25, 0.1, 500);
    let exact_base = binomial_cdf_exact(25, 0.1 - table.beta, 500);
    let exact_ratio = 40.0 * 10f64.powf(exact_base.log10() - exact_cov.log10());
    assert!(rel_err(row.ratio, exact_ratio) < 1e-9, "{} vs {exact_ratio}", row.ratio);

    // first N with covering bound below 1: for fixed ⌊αN⌋ = N/20 the bound decreases
    // in N, so each block of 20 attains its minimum at its last element
    let exact_below = |n: u64| 1024.0 * binomial_cdf_exact(n / 20, 0.1, n).to_f64() < 1.0;
    let reported = table.first_below_one().unwrap() as u64;
    assert!(exact_below(reported));
    assert!((19..reported).step_by(20).all(|n| !exact_below(n)));
    assert!((reported / 20 * 20..reported).all(|n| !exact_below(n)));
}
