//! Closed-form bounds on the probability that the (robust) SAA feasible set contains a
//! point violating the chance constraint.
//!
//! | name              | value                                       |
//! |-------------------|---------------------------------------------|
//! | `finite`          | `|X| Φ(αN; ε, N)`                           |
//! | `covering`        | `(LD/γ + 1)^n Φ(αN; ε, N)`                  |
//! | `baseline`        | `⌈1/β⌉ ⌈2LD/γ⌉^n Φ(αN; ε - β, N)`           |
//! | `robust_finite`   | `|X| Ψ(αN; p_1..p_N)`                       |
//! | `robust_covering` | `(LD/γ + 1)^n Ψ(αN; p_1..p_N)`              |
//!
//! with penalty probabilities `p_i = (ε - ρ(N+1-i)/r_i)_+`. Values are reported raw
//! (possibly above 1), as `log10` and clamped to 1.

use std::f64::consts::LN_10;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distributions::VariationBudget;
use crate::error::{domain, invalid, Result};
use crate::kernels::{
    binomial_cdf, binomial_ln_cdf, poisson_binomial_cdf, snapped_ceil, BinomialParams,
    PoissonBinomialParams,
};

/// `(LD/γ + 1)^n` and its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoveringFactor {
    pub value: f64,
    pub ln: f64,
}

/// A bound value in three forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub raw: f64,
    pub log10: f64,
    /// `min(raw, 1)`.
    pub clamped: f64,
}

impl BoundValue {
    /// `factor · prob`, where both pieces are also known in log space.
    fn product(factor: f64, factor_ln: f64, prob: f64, prob_ln: f64) -> Self {
        let raw = if prob == 0.0 { 0.0 } else { factor * prob };
        let log10 = if prob == 0.0 {
            f64::NEG_INFINITY
        } else {
            (factor_ln + prob_ln) / LN_10
        };
        Self {
            raw,
            log10,
            clamped: raw.min(1.0),
        }
    }
}

fn check_risk(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(domain(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// `(LD/γ + 1)^n`, computed in log space.
pub fn covering_factor(lipschitz: f64, diameter: f64, gamma: f64, dim: usize) -> Result<CoveringFactor> {
    if gamma == 0.0 {
        return Err(domain("covering bound requires positive margin (gamma > 0)"));
    }
    if !(gamma > 0.0) {
        return Err(domain(format!("gamma = {gamma} must be > 0")));
    }
    if !(lipschitz > 0.0) || !(diameter > 0.0) || !lipschitz.is_finite() || !diameter.is_finite() {
        return Err(domain(format!(
            "Lipschitz constant and diameter must be finite and > 0, got L = {lipschitz}, D = {diameter}"
        )));
    }
    if dim == 0 {
        return Err(domain("decision dimension n must be at least 1"));
    }
    let ln = dim as f64 * (lipschitz * diameter / gamma).ln_1p();
    Ok(CoveringFactor { value: ln.exp(), ln })
}

fn phi_parts(alpha: f64, epsilon: f64, n_samples: usize) -> Result<(f64, f64)> {
    check_risk("alpha", alpha)?;
    check_risk("epsilon", epsilon)?;
    let params = BinomialParams::new(n_samples, epsilon)?;
    let z = alpha * n_samples as f64;
    Ok((binomial_cdf(z, &params)?, binomial_ln_cdf(z, &params)?))
}

fn psi_parts(alpha: f64, penalties: &[f64]) -> Result<(f64, f64)> {
    check_risk("alpha", alpha)?;
    if let Some(first) = penalties.first() {
        if penalties.iter().all(|p| p.to_bits() == first.to_bits()) {
            return phi_parts(alpha, *first, penalties.len());
        }
    }
    let params = PoissonBinomialParams::new(penalties.to_vec())?;
    let psi = poisson_binomial_cdf(alpha * penalties.len() as f64, &params)?;
    Ok((psi, psi.ln()))
}

fn check_card(card_x: usize) -> Result<f64> {
    if card_x == 0 {
        return Err(domain("decision set cardinality must be at least 1"));
    }
    Ok(card_x as f64)
}

/// `|X| Φ(αN; ε, N)`.
pub fn bound_finite(card_x: usize, alpha: f64, epsilon: f64, n_samples: usize) -> Result<BoundValue> {
    let card = check_card(card_x)?;
    let (phi, phi_ln) = phi_parts(alpha, epsilon, n_samples)?;
    Ok(BoundValue::product(card, card.ln(), phi, phi_ln))
}

/// `(LD/γ + 1)^n Φ(αN; ε, N)`.
#[allow(clippy::too_many_arguments)]
pub fn bound_covering(
    lipschitz: f64,
    diameter: f64,
    gamma: f64,
    dim: usize,
    alpha: f64,
    epsilon: f64,
    n_samples: usize,
) -> Result<BoundValue> {
    let f = covering_factor(lipschitz, diameter, gamma, dim)?;
    let (phi, phi_ln) = phi_parts(alpha, epsilon, n_samples)?;
    Ok(BoundValue::product(f.value, f.ln, phi, phi_ln))
}

/// `⌈1/β⌉ ⌈2LD/γ⌉^n Φ(αN; ε - β, N)`, the earlier grid-covering bound with slack `β`.
#[allow(clippy::too_many_arguments)]
pub fn bound_baseline(
    lipschitz: f64,
    diameter: f64,
    gamma: f64,
    dim: usize,
    alpha: f64,
    epsilon: f64,
    beta: f64,
    n_samples: usize,
) -> Result<BoundValue> {
    // reuse the argument checks of the covering factor
    covering_factor(lipschitz, diameter, gamma, dim)?;
    if !(beta > 0.0 && beta < epsilon) {
        return Err(domain(format!("beta = {beta} must lie in (0, epsilon = {epsilon})")));
    }
    let slack = snapped_ceil(1.0 / beta);
    let grid = snapped_ceil(2.0 * lipschitz * diameter / gamma);
    let ln = slack.ln() + dim as f64 * grid.ln();
    let value = slack * grid.powi(dim as i32);
    let (phi, phi_ln) = phi_parts(alpha, epsilon - beta, n_samples)?;
    Ok(BoundValue::product(value, ln, phi, phi_ln))
}

/// Minimizes [`bound_baseline`] over `β = ε k / (grid + 1)`, `k = 1..grid`.
#[allow(clippy::too_many_arguments)]
pub fn best_baseline_beta(
    lipschitz: f64,
    diameter: f64,
    gamma: f64,
    dim: usize,
    alpha: f64,
    epsilon: f64,
    n_samples: usize,
    grid: usize,
) -> Result<(f64, BoundValue)> {
    if grid == 0 {
        return Err(invalid("beta grid needs at least one point"));
    }
    let mut best: Option<(f64, BoundValue)> = None;
    for k in 1..=grid {
        let beta = epsilon * k as f64 / (grid + 1) as f64;
        let v = bound_baseline(lipschitz, diameter, gamma, dim, alpha, epsilon, beta, n_samples)?;
        if best.is_none_or(|(_, b)| v.log10 < b.log10) {
            best = Some((beta, v));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// `p_i = (ε - ρ(N+1-i)/r_i)_+` for `i = 1..N`, with `N = radii.len()`.
///
/// A zero radius gives `p_i = ε` when `ρ(N+1-i) = 0` and `p_i = 0` otherwise.
pub fn penalties(budget: &VariationBudget, epsilon: f64, radii: &[f64]) -> Result<Vec<f64>> {
    check_risk("epsilon", epsilon)?;
    let n = radii.len();
    radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if !(r >= 0.0) {
                return Err(domain(format!("radius r_{} = {r} must be >= 0", i + 1)));
            }
            let rho = budget.eval(n - i)?;
            let p = if rho == 0.0 {
                epsilon
            } else if r == 0.0 {
                0.0
            } else {
                (epsilon - rho / r).max(0.0)
            };
            Ok(p)
        })
        .collect()
}

/// `|X| Ψ(αN; p_1..p_N)`.
pub fn bound_robust_finite(card_x: usize, alpha: f64, penalties: &[f64]) -> Result<BoundValue> {
    let card = check_card(card_x)?;
    let (psi, psi_ln) = psi_parts(alpha, penalties)?;
    Ok(BoundValue::product(card, card.ln(), psi, psi_ln))
}

/// `(LD/γ + 1)^n Ψ(αN; p_1..p_N)`.
pub fn bound_robust_covering(
    lipschitz: f64,
    diameter: f64,
    gamma: f64,
    dim: usize,
    alpha: f64,
    penalties: &[f64],
) -> Result<BoundValue> {
    let f = covering_factor(lipschitz, diameter, gamma, dim)?;
    let (psi, psi_ln) = psi_parts(alpha, penalties)?;
    Ok(BoundValue::product(f.value, f.ln, psi, psi_ln))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Finite,
    Covering,
    Baseline,
    RobustFinite,
    RobustCovering,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::Finite,
        BoundKind::Covering,
        BoundKind::Baseline,
        BoundKind::RobustFinite,
        BoundKind::RobustCovering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Finite => "finite",
            BoundKind::Covering => "covering",
            BoundKind::Baseline => "baseline",
            BoundKind::RobustFinite => "robust_finite",
            BoundKind::RobustCovering => "robust_covering",
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every quantity any bound may need. Which fields are required depends on the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Decision dimension `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `p_1..p_N`; defaults to `p_i = ε` (no drift) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalties: Option<Vec<f64>>,
}

impl BoundInputs {
    pub fn new(n_samples: usize, epsilon: f64, alpha: f64) -> Self {
        Self {
            n_samples,
            epsilon,
            alpha,
            gamma: 0.0,
            dim: None,
            lipschitz: None,
            diameter: None,
            card_x: None,
            beta: None,
            penalties: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_risk("epsilon", self.epsilon)?;
        check_risk("alpha", self.alpha)?;
        if !(self.gamma >= 0.0) {
            return Err(domain(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b < self.epsilon) {
                return Err(domain(format!("beta = {b} must lie in (0, epsilon = {})", self.epsilon)));
            }
        }
        if let Some(p) = &self.penalties {
            if p.len() != self.n_samples {
                return Err(invalid(format!(
                    "{} penalties given for N = {}",
                    p.len(),
                    self.n_samples
                )));
            }
            if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(domain(format!("p_{} = {} must lie in [0, 1]", i + 1, p[i])));
            }
        }
        Ok(())
    }

    fn need<T: Copy>(&self, v: Option<T>, kind: BoundKind, field: &str) -> Result<T> {
        v.ok_or_else(|| invalid(format!("bound '{kind}' requires field '{field}'")))
    }

    fn covering_data(&self, kind: BoundKind) -> Result<(f64, f64, usize)> {
        Ok((
            self.need(self.lipschitz, kind, "lipschitz")?,
            self.need(self.diameter, kind, "diameter")?,
            self.need(self.dim, kind, "dim")?,
        ))
    }

    fn penalty_vector(&self) -> Vec<f64> {
        self.penalties
            .clone()
            .unwrap_or_else(|| vec![self.epsilon; self.n_samples])
    }

    pub fn evaluate(&self, kind: BoundKind) -> Result<BoundValue> {
        self.validate()?;
        match kind {
            BoundKind::Finite => bound_finite(
                self.need(self.card_x, kind, "card_x")?,
                self.alpha,
                self.epsilon,
                self.n_samples,
            ),
            BoundKind::Covering => {
                let (l, d, n) = self.covering_data(kind)?;
                bound_covering(l, d, self.gamma, n, self.alpha, self.epsilon, self.n_samples)
            }
            BoundKind::Baseline => {
                let (l, d, n) = self.covering_data(kind)?;
                let beta = self.need(self.beta, kind, "beta")?;
                bound_baseline(l, d, self.gamma, n, self.alpha, self.epsilon, beta, self.n_samples)
            }
            BoundKind::RobustFinite => bound_robust_finite(
                self.need(self.card_x, kind, "card_x")?,
                self.alpha,
                &self.penalty_vector(),
            ),
            BoundKind::RobustCovering => {
                let (l, d, n) = self.covering_data(kind)?;
                bound_robust_covering(l, d, self.gamma, n, self.alpha, &self.penalty_vector())
            }
        }
    }

    /// Compact `key=value` list of the inputs relevant to `kind`.
    pub fn describe(&self, kind: BoundKind) -> String {
        let mut parts = vec![format!("epsilon={}", self.epsilon), format!("alpha={}", self.alpha)];
        let covering = matches!(kind, BoundKind::Covering | BoundKind::Baseline | BoundKind::RobustCovering);
        if covering {
            parts.push(format!("gamma={}", self.gamma));
            if let Some(v) = self.lipschitz {
                parts.push(format!("L={v}"));
            }
            if let Some(v) = self.diameter {
                parts.push(format!("D={v}"));
            }
            if let Some(v) = self.dim {
                parts.push(format!("n={v}"));
            }
        } else if let Some(v) = self.card_x {
            parts.push(format!("card_x={v}"));
        }
        if kind == BoundKind::Baseline {
            if let Some(v) = self.beta {
                parts.push(format!("beta={v}"));
            }
        }
        if matches!(kind, BoundKind::RobustFinite | BoundKind::RobustCovering) {
            let p = self.penalty_vector();
            let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            parts.push(format!("p_min={lo}"));
            parts.push(format!("p_max={hi}"));
        }
        parts.join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub bound: BoundKind,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub parameters: String,
    pub value: BoundValue,
}

/// A table of evaluated bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn push(&mut self, kind: BoundKind, inputs: &BoundInputs) -> Result<()> {
        let value = inputs.evaluate(kind)?;
        self.rows.push(BoundRow {
            bound: kind,
            n_samples: inputs.n_samples,
            parameters: inputs.describe(kind),
            value,
        });
        Ok(())
    }

    /// Columns `bound,N,parameters,raw,log10,clamped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bound", "N", "parameters", "raw", "log10", "clamped"])?;
        for r in &self.rows {
            w.write_record([
                r.bound.name().to_string(),
                r.n_samples.to_string(),
                r.parameters.clone(),
                r.value.raw.to_string(),
                r.value.log10.to_string(),
                r.value.clamped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
