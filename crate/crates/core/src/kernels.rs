//! Tail-probability kernels.
//!
//! * [`binomial_cdf`]: `Φ(z; ε, N) = Σ_{i ≤ ⌊z⌋} C(N,i) ε^i (1-ε)^{N-i}`, built from
//!   saddle-point (Loader) log-pmf terms and summed with Neumaier compensation.
//! * [`poisson_binomial_cdf`]: `Ψ(z; q_1..q_N)`, the CDF of a sum of independent
//!   heterogeneous Bernoulli variables, by mass-vector convolution.
//! * [`hoeffding_tail`]: `exp(-2N(mean(p) - α)^2)`, an upper bound on `Ψ(αN; p)`.
//! * [`min_sample_size`]: smallest `N` with `N ≥ ln(|X|/δ) / (2(ε-α-θ)^2)`.
//!
//! Every evaluation point of the form `αN` goes through [`violation_allowance`], which
//! snaps values within `1e-9` of an integer before flooring.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Distance to an integer below which a real count is treated as that integer.
pub const INTEGER_SNAP: f64 = 1e-9;

/// `⌊z⌋` with `z` snapped to the nearest integer when within [`INTEGER_SNAP`].
pub fn snapped_floor(z: f64) -> f64 {
    let r = z.round();
    if (z - r).abs() <= INTEGER_SNAP {
        r
    } else {
        z.floor()
    }
}

/// `⌈z⌉` with the same snapping rule as [`snapped_floor`].
pub fn snapped_ceil(z: f64) -> f64 {
    let r = z.round();
    if (z - r).abs() <= INTEGER_SNAP {
        r
    } else {
        z.ceil()
    }
}

/// Largest number of violated sampled constraints tolerated at risk level `alpha`
/// with `n` samples, i.e. `⌊αN⌋` under the snapping rule.
pub fn violation_allowance(alpha: f64, n: usize) -> usize {
    let z = snapped_floor(alpha * n as f64);
    if z <= 0.0 {
        0
    } else {
        (z as usize).min(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialParams {
    trials: usize,
    success_prob: f64,
}

impl BinomialParams {
    pub fn new(trials: usize, success_prob: f64) -> Result<Self> {
        if trials == 0 {
            return Err(domain("binomial trials must be at least 1"));
        }
        check_prob("binomial success probability", success_prob)?;
        Ok(Self {
            trials,
            success_prob,
        })
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonBinomialParams {
    success_probs: Vec<f64>,
}

impl PoissonBinomialParams {
    pub fn new(success_probs: Vec<f64>) -> Result<Self> {
        if success_probs.is_empty() {
            return Err(domain("Poisson binomial needs at least one success probability"));
        }
        for (i, &q) in success_probs.iter().enumerate() {
            check_prob(&format!("success probability q_{}", i + 1), q)?;
        }
        Ok(Self { success_probs })
    }

    pub fn success_probs(&self) -> &[f64] {
        &self.success_probs
    }

    pub fn trials(&self) -> usize {
        self.success_probs.len()
    }
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("{what} = {p} is outside [0, 1]")));
    }
    Ok(())
}

/// Resolves an evaluation point `z ∈ [0, N]` to the integer upper summation index.
fn summation_limit(z: f64, trials: usize) -> Result<usize> {
    let n = trials as f64;
    if !z.is_finite() || z < -INTEGER_SNAP || z > n + INTEGER_SNAP {
        return Err(domain(format!("evaluation point z = {z} is outside [0, {trials}]")));
    }
    Ok((snapped_floor(z).max(0.0) as usize).min(trials))
}

/// Neumaier compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

// ln(n!) - ln(sqrt(2πn) (n/e)^n) for n = 0..=15.
const STIRLING_ERROR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_26,
    0.041_340_695_955_409_294_093_822_08,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_57,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_319,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_153,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_69,
];

fn stirling_error(n: usize) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < STIRLING_ERROR.len() {
        return STIRLING_ERROR[n];
    }
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x/m) + m - x`, evaluated by series when `x ≈ m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln P{Bin(n, p) = k}` for `0 < p < 1`.
fn binomial_ln_pmf(k: usize, n: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let nf = n as f64;
    if k == 0 {
        return if p < 0.1 {
            -deviance(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        };
    }
    if k == n {
        return if q < 0.1 {
            -deviance(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let lc = stirling_error(n)
        - stirling_error(k)
        - stirling_error(n - k)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Natural log of `Φ(z; ε, N)`; `-inf` when the CDF is zero.
pub fn binomial_ln_cdf(z: f64, params: &BinomialParams) -> Result<f64> {
    let n = params.trials;
    let p = params.success_prob;
    let k = summation_limit(z, n)?;
    if k == n || p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let logs: Vec<f64> = (0..=k).map(|i| binomial_ln_pmf(i, n, p)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = CompensatedSum::default();
    for l in &logs {
        acc.add((l - peak).exp());
    }
    Ok((peak + acc.value().ln()).min(0.0))
}

/// `Φ(z; ε, N) = P{Bin(N, ε) ≤ z}`.
pub fn binomial_cdf(z: f64, params: &BinomialParams) -> Result<f64> {
    binomial_ln_cdf(z, params).map(f64::exp)
}

/// `Ψ(z; q_1..q_N) = P{Σ z_i ≤ z}` for independent `z_i ~ Bernoulli(q_i)`.
///
/// When every `q_i` is bitwise equal the call is routed to [`binomial_cdf`], so the
/// identical-probability case reproduces `Φ` exactly.
pub fn poisson_binomial_cdf(z: f64, params: &PoissonBinomialParams) -> Result<f64> {
    let qs = &params.success_probs;
    let n = qs.len();
    let k = summation_limit(z, n)?;
    if qs.iter().all(|q| q.to_bits() == qs[0].to_bits()) {
        return binomial_cdf(k as f64, &BinomialParams::new(n, qs[0])?);
    }
    if k == n {
        return Ok(1.0);
    }
    // mass[j] = P{first i variables sum to j}, truncated at k.
    let mut mass = vec![0.0; k + 1];
    mass[0] = 1.0;
    for (i, &q) in qs.iter().enumerate() {
        let stay = 1.0 - q;
        for j in (1..=(i + 1).min(k)).rev() {
            mass[j] = mass[j] * stay + mass[j - 1] * q;
        }
        mass[0] *= stay;
    }
    let mut acc = CompensatedSum::default();
    for m in &mass {
        acc.add(*m);
    }
    Ok(acc.value().clamp(0.0, 1.0))
}

/// Hoeffding envelope `exp(-2N(mean(p) - α)^2)` of `Ψ(αN; p)`.
///
/// Only valid when `mean(p) > α`; otherwise [`Error::BoundInapplicable`].
pub fn hoeffding_tail(alpha: f64, probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(domain("Hoeffding tail needs at least one probability"));
    }
    for (i, &p) in probs.iter().enumerate() {
        check_prob(&format!("p_{}", i + 1), p)?;
    }
    let n = probs.len() as f64;
    let mut acc = CompensatedSum::default();
    for &p in probs {
        acc.add(p);
    }
    let mean = acc.value() / n;
    if mean <= alpha {
        return Err(Error::BoundInapplicable(format!(
            "Hoeffding tail requires mean(p) > alpha, got mean(p) = {mean} and alpha = {alpha}"
        )));
    }
    let gap = mean - alpha;
    Ok((-2.0 * n * gap * gap).exp())
}

/// Smallest `N ≥ ln(|X|/δ) / (2(ε - α - θ)^2)`.
pub fn min_sample_size(
    card_x: usize,
    delta: f64,
    epsilon: f64,
    alpha: f64,
    theta: f64,
) -> Result<usize> {
    if card_x == 0 {
        return Err(domain("decision set cardinality must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(alpha > 0.0 && alpha < epsilon && theta > 0.0 && alpha + theta < epsilon) {
        return Err(domain(format!(
            "parameters must satisfy 0 < alpha < alpha + theta < epsilon, got alpha = {alpha}, \
             theta = {theta}, epsilon = {epsilon}"
        )));
    }
    let gap = epsilon - alpha - theta;
    let bound = (card_x as f64 / delta).ln() / (2.0 * gap * gap);
    Ok((snapped_ceil(bound).max(1.0)) as usize)
}
