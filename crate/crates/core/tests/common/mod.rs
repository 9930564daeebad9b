//! Independent reference computations used by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// `value = mantissa · 2^exp2`, exact up to the final rounding of the mantissa.
#[derive(Debug, Clone, Copy)]
pub struct Scaled {
    pub mantissa: f64,
    pub exp2: i64,
}

impl Scaled {
    pub fn to_f64(self) -> f64 {
        let mut v = self.mantissa;
        let mut e = self.exp2;
        while e > 0 {
            let step = e.min(1000);
            v *= 2f64.powi(step as i32);
            e -= step;
        }
        while e < 0 {
            let step = (-e).min(1000);
            v *= 2f64.powi(-(step as i32));
            e += step;
        }
        v
    }

    pub fn log10(self) -> f64 {
        self.mantissa.log10() + self.exp2 as f64 * std::f64::consts::LOG10_2
    }
}

/// `num / 2^shift` for a nonnegative integer, keeping 64 significant bits.
pub fn scaled_ratio(num: &BigInt, shift: u64) -> Scaled {
    if num.is_zero() {
        return Scaled {
            mantissa: 0.0,
            exp2: 0,
        };
    }
    let bits = num.bits();
    let drop = bits.saturating_sub(64);
    let top = (num >> drop).to_f64().expect("64-bit value fits");
    Scaled {
        mantissa: top,
        exp2: drop as i64 - shift as i64,
    }
}

/// Exact dyadic form `m / 2^k` of a finite nonnegative double.
pub fn dyadic(x: f64) -> (BigInt, u64) {
    assert!(x >= 0.0 && x.is_finite());
    if x == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    if e >= 0 {
        (BigInt::from(mant) << e as u64, 0)
    } else {
        (BigInt::from(mant), (-e) as u64)
    }
}

fn binomial_coefficient(n: u64, k: u64) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// `Φ(z; p, N)` for the exact double `p`, with exact integer arithmetic.
///
/// `p = m/2^k` gives `Φ = Σ_{i ≤ z} C(N,i) m^i (2^k - m)^{N-i} / 2^{kN}`.
pub fn binomial_cdf_exact(z: u64, p: f64, n: u64) -> Scaled {
    let z = z.min(n);
    let (m, k) = dyadic(p);
    let denom = BigInt::one() << k;
    let q = &denom - &m;
    assert!(!q.is_negative());
    // Horner form of Σ C(N,i) m^i q^{z-i}, then times q^{N-z}
    let mut inner = BigInt::zero();
    let mut m_pow = BigInt::one();
    let mut coef = BigInt::one();
    for i in 0..=z {
        if i > 0 {
            m_pow *= &m;
            coef = coef * BigInt::from(n - i + 1) / BigInt::from(i);
        }
        inner = inner * &q + &coef * &m_pow;
    }
    let total = inner * num_traits::pow(q, (n - z) as usize);
    scaled_ratio(&total, k * n)
}

/// `P{Σ Bernoulli(q_i) ≤ z}` by summing over all `2^N` outcomes.
pub fn poisson_binomial_enumerated(z: usize, q: &[f64]) -> f64 {
    let n = q.len();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        if (mask.count_ones() as usize) > z {
            continue;
        }
        let mut p = 1.0;
        for (i, qi) in q.iter().enumerate() {
            p *= if mask >> i & 1 == 1 { *qi } else { 1.0 - qi };
        }
        total += p;
    }
    total
}

/// `C(n, k)` as a double.
pub fn choose(n: u64, k: u64) -> f64 {
    binomial_coefficient(n, k).to_f64().unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}
