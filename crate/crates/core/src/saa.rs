//! Classic and robust sample average approximations over finite decision sets.
//!
//! For a batch `ξ_1..ξ_N` with radii `r_i`:
//!
//! ```text
//! v̂_γ(x)   = (1/N) Σ 1{ g(x, ξ_i) + γ > 0 }
//! v̂^r_γ(x) = (1/N) Σ 1{ sup_{u ∈ U_i} g(x, u) + γ > 0 },   U_i = { u : ‖u - ξ_i‖ ≤ r_i } (∩ Ξ)
//! ```
//!
//! and `x` is feasible when the violation count is at most `⌊αN⌋`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distributions::{DistributionSpec, Family, Norm, SupportSet, VariationBudget};
use crate::error::{domain, invalid, Error, Result};
use crate::kernels::violation_allowance;
use crate::seed;

/// How each uncertainty set relates to the support `Ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Plain norm balls around each sample.
    #[default]
    BallOnly,
    /// Norm balls intersected with the support.
    BallIntersectSupport,
}

#[derive(Deserialize)]
struct RawBatch {
    points: Vec<Vec<f64>>,
    radii: Vec<f64>,
    #[serde(default)]
    norm: Norm,
    #[serde(default)]
    support_mode: SupportMode,
    support: SupportSet,
}

/// Drawn samples together with the radii of their uncertainty sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBatch")]
pub struct SampleBatch {
    points: Vec<Vec<f64>>,
    radii: Vec<f64>,
    norm: Norm,
    support_mode: SupportMode,
    support: SupportSet,
}

impl TryFrom<RawBatch> for SampleBatch {
    type Error = Error;

    fn try_from(raw: RawBatch) -> Result<Self> {
        Self::new(raw.points, raw.radii, raw.norm, raw.support_mode, raw.support)
    }
}

impl SampleBatch {
    pub fn new(
        points: Vec<Vec<f64>>,
        radii: Vec<f64>,
        norm: Norm,
        support_mode: SupportMode,
        support: SupportSet,
    ) -> Result<Self> {
        support.validate()?;
        if points.len() != radii.len() {
            return Err(invalid(format!(
                "{} sample points but {} radii",
                points.len(),
                radii.len()
            )));
        }
        if points.is_empty() {
            return Err(invalid("a sample batch needs at least one point"));
        }
        if points.iter().any(|p| p.len() != support.dim()) {
            return Err(invalid("sample points must match the support dimension"));
        }
        if let Some(i) = radii.iter().position(|r| !(*r >= 0.0) || r.is_nan()) {
            return Err(invalid(format!("radius r_{} = {} must be >= 0", i + 1, radii[i])));
        }
        Ok(Self {
            points,
            radii,
            norm,
            support_mode,
            support,
        })
    }

    /// Samples with zero radii in full space; the classic SAA setting.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        let d = points.first().map_or(0, Vec::len);
        Self::new(points, vec![0.0; n], Norm::L2, SupportMode::BallOnly, SupportSet::full(d))
    }

    pub fn with_radii(mut self, radii: Vec<f64>) -> Result<Self> {
        if radii.len() != self.points.len() {
            return Err(invalid(format!(
                "{} radii supplied for {} samples",
                radii.len(),
                self.points.len()
            )));
        }
        self.radii = radii;
        Self::new(self.points, self.radii, self.norm, self.support_mode, self.support)
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_support_mode(mut self, mode: SupportMode) -> Self {
        self.support_mode = mode;
        self
    }

    pub fn with_support(self, support: SupportSet) -> Result<Self> {
        Self::new(self.points, self.radii, self.norm, self.support_mode, support)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn support_mode(&self) -> SupportMode {
        self.support_mode
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn uncertainty_set(&self, index: usize) -> UncertaintySet<'_> {
        UncertaintySet {
            index,
            center: &self.points[index],
            radius: self.radii[index],
            norm: self.norm,
            mode: self.support_mode,
            support: &self.support,
        }
    }
}

/// Coupling matrix `M` in `g(x, u) = xᵀ M u + c·x + a·u + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `M = I`, requires `n = d`.
    Identity,
    /// `M = 0`.
    None,
    /// Row-major `n × d` matrix.
    Dense(Vec<Vec<f64>>),
}

/// Constraint function affine in `x` for fixed `u` and affine in `u` for fixed `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiAffine {
    pub coupling: Coupling,
    #[serde(default)]
    pub x_coef: Vec<f64>,
    #[serde(default)]
    pub u_coef: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

impl BiAffine {
    /// `g(x, u) = x·u - offset`.
    pub fn inner_product(offset: f64) -> Self {
        Self {
            coupling: Coupling::Identity,
            x_coef: Vec::new(),
            u_coef: Vec::new(),
            constant: -offset,
        }
    }

    /// `g(x, u) = c·x + a·u + constant` with no coupling term.
    pub fn separable(x_coef: Vec<f64>, u_coef: Vec<f64>, constant: f64) -> Self {
        Self {
            coupling: Coupling::None,
            x_coef,
            u_coef,
            constant,
        }
    }

    fn check_dims(&self, n: usize, d: usize) -> Result<()> {
        match &self.coupling {
            Coupling::Identity if n != d => {
                return Err(invalid(format!(
                    "identity coupling needs equal decision ({n}) and sample ({d}) dimensions"
                )))
            }
            Coupling::Dense(m) if m.len() != n || m.iter().any(|row| row.len() != d) => {
                return Err(invalid(format!("coupling matrix must be {n} x {d}")))
            }
            _ => {}
        }
        if !self.x_coef.is_empty() && self.x_coef.len() != n {
            return Err(invalid(format!("x_coef must have length {n}")));
        }
        if !self.u_coef.is_empty() && self.u_coef.len() != d {
            return Err(invalid(format!("u_coef must have length {d}")));
        }
        Ok(())
    }

    /// `w(x) = Mᵀ x + a`, the gradient of `g(x, ·)`.
    pub fn direction(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut w = if self.u_coef.is_empty() {
            vec![0.0; d]
        } else {
            self.u_coef.clone()
        };
        match &self.coupling {
            Coupling::Identity => {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += xj;
                }
            }
            Coupling::None => {}
            Coupling::Dense(m) => {
                for (row, xi) in m.iter().zip(x) {
                    for (wj, mij) in w.iter_mut().zip(row) {
                        *wj += xi * mij;
                    }
                }
            }
        }
        w
    }

    /// `c·x + constant`, the part of `g(x, ·)` that does not depend on `u`.
    pub fn offset(&self, x: &[f64]) -> f64 {
        dot(&self.x_coef, x) + self.constant
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        dot(&self.direction(x, u.len()), u) + self.offset(x)
    }

    /// `max_{u ∈ Ξ} ‖M u + c‖_1`, a Lipschitz constant in `x` under `‖·‖_∞`, for box supports.
    pub fn lipschitz_bound(&self, support: &SupportSet, n: usize) -> Option<f64> {
        let slope = |u: &[f64]| -> f64 {
            (0..n)
                .map(|i| {
                    let mu = match &self.coupling {
                        Coupling::Identity => u[i],
                        Coupling::None => 0.0,
                        Coupling::Dense(m) => dot(&m[i], u),
                    };
                    (mu + self.x_coef.get(i).copied().unwrap_or(0.0)).abs()
                })
                .sum()
        };
        match (&self.coupling, support) {
            (Coupling::None, _) => Some(slope(&vec![0.0; support.dim()])),
            (_, SupportSet::Box { lower, upper }) if lower.len() <= 20 => {
                let d = lower.len();
                let best = (0u32..1 << d)
                    .map(|mask| {
                        let v: Vec<f64> = (0..d)
                            .map(|j| if mask >> j & 1 == 1 { upper[j] } else { lower[j] })
                            .collect();
                        slope(&v)
                    })
                    .fold(0.0, f64::max);
                Some(best)
            }
            _ => None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Callback = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Deterministic callback `g(x, ξ)` evaluated without structural knowledge.
#[derive(Clone)]
pub struct BlackBox {
    f: Callback,
    lipschitz: Option<f64>,
    inner_points: usize,
}

impl BlackBox {
    pub const DEFAULT_INNER_POINTS: usize = 256;

    pub fn new(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz: None,
            inner_points: Self::DEFAULT_INNER_POINTS,
        }
    }

    /// Declares `|g(x, ξ) - g(y, ξ)| ≤ L ‖x - y‖_∞`.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    /// Number of quasi-random points used to approximate the supremum over a ball.
    pub fn with_inner_points(mut self, m: usize) -> Self {
        self.inner_points = m.max(1);
        self
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

impl fmt::Debug for BlackBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBox")
            .field("lipschitz", &self.lipschitz)
            .field("inner_points", &self.inner_points)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ConstraintFunction {
    BiAffine(BiAffine),
    BlackBox(BlackBox),
}

impl ConstraintFunction {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            ConstraintFunction::BiAffine(b) => b.eval(x, u),
            ConstraintFunction::BlackBox(b) => (b.f)(x, u),
        }
    }

    /// Checks a declared Lipschitz constant on every pair of `xs` against every `xi`.
    pub fn check_lipschitz(&self, xs: &[Vec<f64>], xis: &[Vec<f64>]) -> Result<()> {
        let ConstraintFunction::BlackBox(b) = self else {
            return Ok(());
        };
        let Some(l) = b.lipschitz else {
            return Err(invalid("black-box constraint declares no Lipschitz constant"));
        };
        for (i, x) in xs.iter().enumerate() {
            for y in &xs[i + 1..] {
                let gap = Norm::Linf.distance(x, y);
                for xi in xis {
                    let diff = (self.eval(x, xi) - self.eval(y, xi)).abs();
                    if diff > l * gap + 1e-9 {
                        return Err(domain(format!(
                            "declared Lipschitz constant {l} violated: |g(x,ξ) - g(y,ξ)| = {diff} \
                             with ‖x - y‖∞ = {gap}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl From<BiAffine> for ConstraintFunction {
    fn from(b: BiAffine) -> Self {
        ConstraintFunction::BiAffine(b)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ConstraintRepr {
    BiAffine(BiAffine),
}

impl Serialize for ConstraintFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ConstraintFunction::BiAffine(b) => ConstraintRepr::BiAffine(b.clone()).serialize(s),
            ConstraintFunction::BlackBox(_) => Err(serde::ser::Error::custom(
                "black-box constraints cannot be serialized",
            )),
        }
    }
}

impl<'de> Deserialize<'de> for ConstraintFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ConstraintRepr::BiAffine(b) = ConstraintRepr::deserialize(d)?;
        Ok(ConstraintFunction::BiAffine(b))
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawDecisionSet {
    Finite { points: Vec<Vec<f64>> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// The decision set `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawDecisionSet")]
pub enum DecisionSet {
    Finite { points: Vec<Vec<f64>> },
    /// A box; it only carries `D` and `n` into the covering bounds, or is gridded.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl TryFrom<RawDecisionSet> for DecisionSet {
    type Error = Error;

    fn try_from(raw: RawDecisionSet) -> Result<Self> {
        match raw {
            RawDecisionSet::Finite { points } => Self::finite(points),
            RawDecisionSet::Box { lower, upper } => Self::bounded(lower, upper),
        }
    }
}

impl DecisionSet {
    pub fn finite(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("finite decision set must be nonempty"));
        }
        let n = points[0].len();
        if n == 0 || points.iter().any(|p| p.len() != n || p.iter().any(|v| !v.is_finite())) {
            return Err(invalid("decision points must be finite and share a positive dimension"));
        }
        let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
        sorted.sort_by(|a, b| lex_cmp(a, b));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("finite decision set contains duplicate points"));
        }
        Ok(DecisionSet::Finite { points })
    }

    pub fn bounded(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid("decision box bounds must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(invalid("decision box requires finite lower <= upper"));
        }
        Ok(DecisionSet::Box { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            DecisionSet::Finite { points } => points[0].len(),
            DecisionSet::Box { lower, .. } => lower.len(),
        }
    }

    pub fn points(&self) -> Option<&[Vec<f64>]> {
        match self {
            DecisionSet::Finite { points } => Some(points),
            DecisionSet::Box { .. } => None,
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        self.points().map(<[_]>::len)
    }

    /// `sup ‖x - y‖_∞` over the set.
    pub fn diameter(&self) -> f64 {
        match self {
            DecisionSet::Finite { points } => {
                let mut best = 0.0f64;
                for (i, a) in points.iter().enumerate() {
                    for b in &points[i + 1..] {
                        best = best.max(Norm::Linf.distance(a, b));
                    }
                }
                best
            }
            DecisionSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .fold(0.0, |m, (l, u)| m.max(u - l)),
        }
    }

    /// Uniform grid with `per_axis` points along each coordinate of a box.
    pub fn grid(&self, per_axis: usize) -> Result<DecisionSet> {
        let DecisionSet::Box { lower, upper } = self else {
            return Ok(self.clone());
        };
        if per_axis == 0 {
            return Err(invalid("grid needs at least one point per axis"));
        }
        let axes: Vec<Vec<f64>> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| {
                if per_axis == 1 || l == u {
                    vec![0.5 * (l + u)]
                } else {
                    (0..per_axis)
                        .map(|k| l + (u - l) * k as f64 / (per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        DecisionSet::finite(points)
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Risk levels and regularity data of a problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Lipschitz constant of `g` in `x` under `‖·‖_∞`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Overrides the `‖·‖_∞` diameter computed from the decision set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
}

impl RiskConfig {
    pub fn new(epsilon: f64, alpha: f64, gamma: f64) -> Self {
        Self {
            epsilon,
            alpha,
            gamma,
            delta: None,
            theta: None,
            lipschitz: None,
            diameter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(domain(format!("epsilon = {} must lie in [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(domain(format!("alpha = {} must lie in [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(domain(format!("gamma = {} must be finite and >= 0", self.gamma)));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(domain(format!("delta = {d} must lie in (0, 1]")));
            }
        }
        if let Some(t) = self.theta {
            if !(t > 0.0) {
                return Err(domain(format!("theta = {t} must be > 0")));
            }
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0) || !l.is_finite() {
                return Err(domain(format!("lipschitz = {l} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawInstance {
    decision_set: DecisionSet,
    constraint: ConstraintFunction,
    #[serde(default)]
    objective: Option<Vec<f64>>,
    risk: RiskConfig,
    #[serde(default)]
    sample_dim: Option<usize>,
}

/// `minimize f(x) over X subject to P{g(x, ξ) ≤ 0} ≥ 1 - ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct ProblemInstance {
    pub decision_set: DecisionSet,
    pub constraint: ConstraintFunction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<Vec<f64>>,
    pub risk: RiskConfig,
    /// Dimension `d` of `ξ`, when it cannot be inferred from the constraint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_dim: Option<usize>,
}

impl TryFrom<RawInstance> for ProblemInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let mut inst = Self::new(raw.decision_set, raw.constraint, raw.objective, raw.risk)?;
        if let Some(d) = raw.sample_dim {
            inst = inst.with_sample_dim(d)?;
        }
        Ok(inst)
    }
}

impl ProblemInstance {
    pub fn new(
        decision_set: DecisionSet,
        constraint: ConstraintFunction,
        objective: Option<Vec<f64>>,
        risk: RiskConfig,
    ) -> Result<Self> {
        risk.validate()?;
        let n = decision_set.dim();
        if let Some(f) = &objective {
            if f.len() != n {
                return Err(invalid(format!("objective has length {} but decisions have dimension {n}", f.len())));
            }
        }
        let inst = Self {
            decision_set,
            constraint,
            objective,
            risk,
            sample_dim: None,
        };
        if let ConstraintFunction::BiAffine(b) = &inst.constraint {
            if let Some(d) = inst.inferred_sample_dim() {
                b.check_dims(n, d)?;
            }
        }
        Ok(inst)
    }

    pub fn with_sample_dim(mut self, d: usize) -> Result<Self> {
        if let ConstraintFunction::BiAffine(b) = &self.constraint {
            b.check_dims(self.decision_set.dim(), d)?;
        }
        self.sample_dim = Some(d);
        Ok(self)
    }

    fn inferred_sample_dim(&self) -> Option<usize> {
        if let Some(d) = self.sample_dim {
            return Some(d);
        }
        match &self.constraint {
            ConstraintFunction::BiAffine(b) => match &b.coupling {
                Coupling::Identity => Some(self.decision_set.dim()),
                Coupling::Dense(m) => m.first().map(Vec::len),
                Coupling::None => (!b.u_coef.is_empty()).then_some(b.u_coef.len()),
            },
            ConstraintFunction::BlackBox(_) => None,
        }
    }

    pub fn with_risk(mut self, risk: RiskConfig) -> Result<Self> {
        risk.validate()?;
        self.risk = risk;
        Ok(self)
    }

    pub fn objective_at(&self, x: &[f64]) -> Option<f64> {
        self.objective.as_ref().map(|f| dot(f, x))
    }

    /// `D`, the `‖·‖_∞` diameter of the decision set (or the configured override).
    pub fn diameter(&self) -> f64 {
        self.risk.diameter.unwrap_or_else(|| self.decision_set.diameter())
    }

    fn finite_points(&self) -> Result<&[Vec<f64>]> {
        self.decision_set
            .points()
            .ok_or_else(|| invalid("operation requires a finite decision set (grid the box first)"))
    }
}

/// Number of violated (robust) sampled constraints out of `samples`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ViolationCount {
    pub violations: usize,
    pub samples: usize,
}

impl ViolationCount {
    pub fn fraction(&self) -> f64 {
        self.violations as f64 / self.samples as f64
    }

    /// `violations / samples ≤ α`, decided on integers as `violations ≤ ⌊αN⌋`.
    pub fn within(&self, alpha: f64) -> bool {
        self.violations <= violation_allowance(alpha, self.samples)
    }
}

/// `v̂_γ(x)`; radii in the batch are ignored.
pub fn empirical_violation(
    x: &[f64],
    constraint: &ConstraintFunction,
    batch: &SampleBatch,
    gamma: f64,
) -> ViolationCount {
    let violations = batch
        .points
        .iter()
        .filter(|xi| constraint.eval(x, xi) + gamma > 0.0)
        .count();
    ViolationCount {
        violations,
        samples: batch.len(),
    }
}

/// `U_i`: a closed norm ball, optionally intersected with the support.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintySet<'a> {
    pub index: usize,
    pub center: &'a [f64],
    pub radius: f64,
    pub norm: Norm,
    pub mode: SupportMode,
    pub support: &'a SupportSet,
}

/// `sup_{u ∈ U} g(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupValue {
    pub value: f64,
    /// False when the supremum came from sampled inner maximization.
    pub exact: bool,
}

/// Supremum of the constraint over an uncertainty set.
///
/// Bi-affine constraints are handled exactly: in ball-only mode by the dual norm
/// identity `g(x, ξ) + r ‖w(x)‖_*`; against a box support by clipping (`L∞`), a greedy
/// fractional-knapsack step (`L1`) or an active-set solve of the projection path (`L2`).
/// Black-box constraints take the maximum over quasi-random ball points and report
/// `exact = false`.
pub fn robust_sup(x: &[f64], set: &UncertaintySet<'_>, constraint: &ConstraintFunction) -> Result<SupValue> {
    let box_bounds = match (set.mode, set.support) {
        (SupportMode::BallIntersectSupport, SupportSet::Box { lower, upper }) => {
            Some((lower.as_slice(), upper.as_slice()))
        }
        _ => None,
    };
    if let Some((lo, hi)) = box_bounds {
        let closest: Vec<f64> = clamp_vec(set.center, lo, hi);
        if set.norm.distance(&closest, set.center) > set.radius + 1e-12 * (1.0 + set.radius) {
            return Err(Error::EmptyUncertaintySet {
                index: set.index,
                radius: set.radius,
            });
        }
    }
    if set.radius == 0.0 {
        let exact = matches!(constraint, ConstraintFunction::BiAffine(_));
        return Ok(SupValue {
            value: constraint.eval(x, set.center),
            exact,
        });
    }
    match constraint {
        ConstraintFunction::BiAffine(b) => {
            let d = set.center.len();
            let w = b.direction(x, d);
            let value = match box_bounds {
                None => b.eval(x, set.center) + set.radius * set.norm.dual().of(&w),
                Some((lo, hi)) => {
                    let linear = match set.norm {
                        Norm::Linf => max_linear_linf_box(&w, set.center, set.radius, lo, hi),
                        Norm::L1 => max_linear_l1_box(&w, set.center, set.radius, lo, hi),
                        Norm::L2 => max_linear_l2_box(&w, set.center, set.radius, lo, hi),
                    };
                    linear + b.offset(x)
                }
            };
            Ok(SupValue { value, exact: true })
        }
        ConstraintFunction::BlackBox(bb) => {
            let mut best = bb.f.as_ref()(x, set.center);
            let bounds_ok = |u: &[f64]| match box_bounds {
                Some((lo, hi)) => u.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l <= v && v <= h),
                None => true,
            };
            if let Some((lo, hi)) = box_bounds {
                let closest = clamp_vec(set.center, lo, hi);
                best = best.max((bb.f)(x, &closest));
            }
            for s in ball_probe_points(set.center.len(), bb.inner_points, set.norm) {
                let u: Vec<f64> = set.center.iter().zip(&s).map(|(c, v)| c + set.radius * v).collect();
                if bounds_ok(&u) {
                    best = best.max((bb.f)(x, &u));
                }
            }
            Ok(SupValue {
                value: best,
                exact: false,
            })
        }
    }
}

fn clamp_vec(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter().zip(lo.iter().zip(hi)).map(|(x, (l, h))| x.clamp(*l, *h)).collect()
}

fn max_linear_linf_box(w: &[f64], c: &[f64], r: f64, lo: &[f64], hi: &[f64]) -> f64 {
    (0..w.len())
        .map(|j| {
            let a = lo[j].max(c[j] - r);
            let b = hi[j].min(c[j] + r);
            // a may exceed b by rounding when the ball touches the box
            let (a, b) = if a > b { (b, b) } else { (a, b) };
            if w[j] > 0.0 {
                w[j] * b
            } else {
                w[j] * a
            }
        })
        .sum()
}

fn max_linear_l1_box(w: &[f64], c: &[f64], r: f64, lo: &[f64], hi: &[f64]) -> f64 {
    let start = clamp_vec(c, lo, hi);
    let mut budget = (r - Norm::L1.distance(&start, c)).max(0.0);
    let mut value = dot(w, &start);
    let mut order: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
    for j in order {
        if budget <= 0.0 {
            break;
        }
        let room = if w[j] > 0.0 { hi[j] - start[j] } else { start[j] - lo[j] };
        let step = room.min(budget);
        value += w[j].abs() * step;
        budget -= step;
    }
    value
}

fn max_linear_l2_box(w: &[f64], c: &[f64], r: f64, lo: &[f64], hi: &[f64]) -> f64 {
    // u(t) = clamp(c + t w) traces the maximizers of w·u - ‖u - c‖²/(2t) over the box;
    // ‖u(t) - c‖ is nondecreasing, so the optimum is the t where it reaches r.
    let at = |t: f64| -> Vec<f64> {
        (0..w.len())
            .map(|j| (c[j] + t * w[j]).clamp(lo[j], hi[j]))
            .collect()
    };
    let reach = |u: &[f64]| Norm::L2.distance(u, c);
    let vertex: Vec<f64> = (0..w.len())
        .map(|j| {
            if w[j] > 0.0 {
                hi[j]
            } else if w[j] < 0.0 {
                lo[j]
            } else {
                c[j].clamp(lo[j], hi[j])
            }
        })
        .collect();
    if reach(&vertex) <= r {
        return dot(w, &vertex);
    }
    let mut cuts: Vec<f64> = Vec::new();
    for j in 0..w.len() {
        if w[j] != 0.0 {
            for bound in [lo[j], hi[j]] {
                let t = (bound - c[j]) / w[j];
                if t > 0.0 && t.is_finite() {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut prev = 0.0;
    for &t_hi in cuts.iter().chain(std::iter::once(&f64::INFINITY)) {
        let reached = t_hi.is_infinite() || reach(&at(t_hi)) >= r;
        if reached {
            let mid = if t_hi.is_infinite() { prev + 1.0 } else { 0.5 * (prev + t_hi) };
            let mut fixed = 0.0;
            let mut slope = 0.0;
            for j in 0..w.len() {
                let v = c[j] + mid * w[j];
                if w[j] != 0.0 && lo[j] < v && v < hi[j] {
                    slope += w[j] * w[j];
                } else {
                    let dj = v.clamp(lo[j], hi[j]) - c[j];
                    fixed += dj * dj;
                }
            }
            let t = if slope > 0.0 {
                ((r * r - fixed).max(0.0) / slope).sqrt().clamp(prev, t_hi)
            } else {
                t_hi
            };
            return dot(w, &at(t));
        }
        prev = t_hi;
    }
    dot(w, &vertex)
}

/// Deterministic quasi-random directions in the unit ball of `norm`.
///
/// Halton points of `[-1, 1]^d`; points outside the ball are pulled radially onto
/// its boundary. Axis extremes `±e_j` are always included.
fn ball_probe_points(d: usize, m: usize, norm: Norm) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];
    let radical_inverse = |mut i: u64, base: u64| -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        let b = base as f64;
        while i > 0 {
            f /= b;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    let mut out = Vec::with_capacity(m + 2 * d);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[j] = sign;
            out.push(e);
        }
    }
    for k in 1..=m as u64 {
        let s: Vec<f64> = (0..d)
            .map(|j| 2.0 * radical_inverse(k, PRIMES[j % PRIMES.len()]) - 1.0)
            .collect();
        let len = norm.of(&s);
        if len > 1.0 {
            out.push(s.iter().map(|v| v / len).collect());
        } else {
            out.push(s);
        }
    }
    out
}

/// `v̂^r_γ(x)`: fraction of samples whose robust constraint is violated with margin `γ`.
pub fn robust_empirical_violation(
    x: &[f64],
    constraint: &ConstraintFunction,
    batch: &SampleBatch,
    gamma: f64,
) -> Result<ViolationCount> {
    let mut violations = 0;
    for i in 0..batch.len() {
        let sup = robust_sup(x, &batch.uncertainty_set(i), constraint)?;
        if sup.value + gamma > 0.0 {
            violations += 1;
        }
    }
    Ok(ViolationCount {
        violations,
        samples: batch.len(),
    })
}

/// Whether `x` has at most `⌊αN⌋` robust violations. Stops counting once exceeded.
pub fn is_feasible(
    x: &[f64],
    constraint: &ConstraintFunction,
    batch: &SampleBatch,
    gamma: f64,
    alpha: f64,
) -> Result<bool> {
    let allowance = violation_allowance(alpha, batch.len());
    let mut violations = 0;
    for i in 0..batch.len() {
        let sup = robust_sup(x, &batch.uncertainty_set(i), constraint)?;
        if sup.value + gamma > 0.0 {
            violations += 1;
            if violations > allowance {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Indices of the decision points with `v̂^r_γ(x) ≤ α`, in decision-set order.
pub fn feasible_set(instance: &ProblemInstance, batch: &SampleBatch, gamma: f64) -> Result<Vec<usize>> {
    let points = instance.finite_points()?;
    let flags: Vec<bool> = points
        .par_iter()
        .map(|x| is_feasible(x, &instance.constraint, batch, gamma, instance.risk.alpha))
        .collect::<Result<_>>()?;
    Ok(flags
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.then_some(i))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Solution {
    Optimal {
        index: usize,
        point: Vec<f64>,
        objective: f64,
    },
    Infeasible,
}

/// Minimizes the linear objective over [`feasible_set`]; ties go to the
/// lexicographically smallest point.
pub fn solve_by_enumeration(instance: &ProblemInstance, batch: &SampleBatch, gamma: f64) -> Result<Solution> {
    let f = instance
        .objective
        .as_ref()
        .ok_or_else(|| invalid("solving requires an objective"))?;
    let points = instance.finite_points()?;
    let feasible = feasible_set(instance, batch, gamma)?;
    let best = feasible.into_iter().min_by(|&a, &b| {
        dot(f, &points[a])
            .total_cmp(&dot(f, &points[b]))
            .then_with(|| lex_cmp(&points[a], &points[b]))
    });
    Ok(match best {
        Some(index) => Solution::Optimal {
            index,
            point: points[index].clone(),
            objective: dot(f, &points[index]),
        },
        None => Solution::Infeasible,
    })
}

/// `r_i = ρ(N + 1 - i) / θ` for `i = 1..N`.
pub fn radii_from_theta(budget: &VariationBudget, n: usize, theta: f64) -> Result<Vec<f64>> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(domain(format!("theta = {theta} must be finite and > 0")));
    }
    (1..=n).map(|i| Ok(budget.eval(n + 1 - i)? / theta)).collect()
}

/// Target violation probability `P{g(x, ξ) > 0}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationProbability {
    pub value: f64,
    /// Zero for closed-form evaluations.
    pub std_error: f64,
    pub exact: bool,
}

/// Monte Carlo settings for violation probabilities without a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub draws: usize,
    pub seed: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            draws: 1_000_000,
            seed: 0x5EED,
        }
    }
}

/// `v(x) = P{g(x, ξ) > 0}` under `target`.
///
/// Closed forms: dirac and discrete laws for any constraint; bi-affine constraints
/// under isotropic gaussians (any dimension) and one-dimensional uniforms. Everything
/// else falls back to Monte Carlo.
pub fn true_violation_probability(
    x: &[f64],
    target: &DistributionSpec,
    constraint: &ConstraintFunction,
    mc: &MonteCarloOptions,
) -> ViolationProbability {
    let exact = |value: f64| ViolationProbability {
        value,
        std_error: 0.0,
        exact: true,
    };
    match target.family() {
        Family::Dirac { location } => return exact((constraint.eval(x, location) > 0.0) as u8 as f64),
        Family::Discrete { atoms, weights } => {
            let mut acc = crate::kernels::CompensatedSum::default();
            for (a, w) in atoms.iter().zip(weights) {
                if constraint.eval(x, a) > 0.0 {
                    acc.add(*w);
                }
            }
            return exact(acc.value().clamp(0.0, 1.0));
        }
        _ => {}
    }
    if let ConstraintFunction::BiAffine(b) = constraint {
        let w = b.direction(x, target.dim());
        let k = b.offset(x);
        let w_norm = Norm::L2.of(&w);
        match target.family() {
            Family::GaussianIsotropic { mean, std_dev } => {
                if w_norm == 0.0 {
                    return exact((k > 0.0) as u8 as f64);
                }
                let z = (dot(&w, mean) + k) / (std_dev * w_norm);
                return exact(Normal::standard().cdf(z));
            }
            Family::UniformBox { .. } if target.dim() == 1 => {
                let (w, spec) = (w[0], target);
                if w == 0.0 {
                    return exact((k > 0.0) as u8 as f64);
                }
                let cut = -k / w;
                let p = if w > 0.0 {
                    1.0 - spec.cdf_1d(cut).expect("one-dimensional")
                } else {
                    spec.cdf_left_1d(cut).expect("one-dimensional")
                };
                return exact(p);
            }
            _ => {}
        }
    }
    let mut rng = seed::rng(mc.seed);
    let draws = mc.draws.max(1);
    let mut hits = 0usize;
    for _ in 0..draws {
        let xi = target.sample(&mut rng);
        if constraint.eval(x, &xi) > 0.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    ViolationProbability {
        value: p,
        std_error: (p * (1.0 - p) / draws as f64).sqrt(),
        exact: false,
    }
}

/// One CSV row per decision point: coordinates, `v̂`, `v̂^r`, objective, feasibility.
pub fn write_decision_csv<W: Write>(
    out: W,
    instance: &ProblemInstance,
    batch: &SampleBatch,
    gamma: f64,
) -> Result<()> {
    let points = instance.finite_points()?;
    let n = instance.decision_set.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    header.extend(["v_hat", "v_hat_robust", "objective", "feasible"].map(String::from));
    w.write_record(&header)?;
    for (i, x) in points.iter().enumerate() {
        let classic = empirical_violation(x, &instance.constraint, batch, gamma);
        let robust = robust_empirical_violation(x, &instance.constraint, batch, gamma)?;
        let mut row: Vec<String> = vec![i.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(classic.fraction().to_string());
        row.push(robust.fraction().to_string());
        row.push(instance.objective_at(x).map_or(String::new(), |v| v.to_string()));
        row.push(robust.within(instance.risk.alpha).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
