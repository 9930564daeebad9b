//! Sampling distributions `P_1..P_N`, the target `P_{N+1}`, and the variation budget
//! `ρ(k)` bounding `W1(P_i, P_{i+k})`.
//!
//! Only families whose 1-Wasserstein distance can be evaluated exactly are supported,
//! so a [`DistributionSequence`] can verify its own budget when it is built:
//!
//! | pair                                   | method                                  |
//! |----------------------------------------|-----------------------------------------|
//! | dirac / dirac                          | `‖a - b‖`                               |
//! | translates of one shape                | `‖shift‖`                               |
//! | any two 1-d laws                       | `∫ |F_p(x) - F_q(x)| dx`                |
//! | finite atomic laws (≤ 32 atoms each)   | transport linear program                |

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::saa::{SampleBatch, SupportMode};
use crate::seed;

/// Slack allowed when checking `W1(P_i, P_{i+k}) ≤ ρ(k)`.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Largest atom count for which the multi-dimensional transport problem is solved.
pub const MAX_TRANSPORT_ATOMS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Norm::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::Linf => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    /// The norm whose value at `w` is `sup { w·u : ‖u‖ ≤ 1 }`.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::L2 => Norm::L2,
            Norm::Linf => Norm::L1,
        }
    }
}

/// The support `Ξ` shared by every distribution in a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    FullSpace { dim: usize },
}

impl SupportSet {
    pub fn full(dim: usize) -> Self {
        SupportSet::FullSpace { dim }
    }

    pub fn bounded(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = SupportSet::Box { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            SupportSet::Box { lower, .. } => lower.len(),
            SupportSet::FullSpace { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SupportSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(invalid("support box bounds must be nonempty and equal length"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                    return Err(invalid("support box requires finite lower <= upper componentwise"));
                }
            }
            SupportSet::FullSpace { dim } => {
                if *dim == 0 {
                    return Err(invalid("support dimension must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        match self {
            SupportSet::Box { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u),
            SupportSet::FullSpace { .. } => point.iter().all(|x| x.is_finite()),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, SupportSet::Box { .. })
    }
}

/// Distribution family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Dirac { location: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    GaussianIsotropic { mean: Vec<f64>, std_dev: f64 },
    Discrete { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Dirac { .. } => "dirac",
            Family::UniformBox { .. } => "uniform_box",
            Family::GaussianIsotropic { .. } => "gaussian_isotropic",
            Family::Discrete { .. } => "discrete",
        }
    }

    fn dim(&self) -> usize {
        match self {
            Family::Dirac { location } => location.len(),
            Family::UniformBox { lower, .. } => lower.len(),
            Family::GaussianIsotropic { mean, .. } => mean.len(),
            Family::Discrete { atoms, .. } => atoms.first().map_or(0, Vec::len),
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Family {
        let add = |v: &[f64]| v.iter().zip(shift).map(|(a, b)| a + b).collect::<Vec<_>>();
        match self {
            Family::Dirac { location } => Family::Dirac {
                location: add(location),
            },
            Family::UniformBox { lower, upper } => Family::UniformBox {
                lower: add(lower),
                upper: add(upper),
            },
            Family::GaussianIsotropic { mean, std_dev } => Family::GaussianIsotropic {
                mean: add(mean),
                std_dev: *std_dev,
            },
            Family::Discrete { atoms, weights } => Family::Discrete {
                atoms: atoms.iter().map(|a| add(a)).collect(),
                weights: weights.clone(),
            },
        }
    }
}

#[derive(Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    family: Family,
    #[serde(default)]
    support: Option<SupportSet>,
}

/// A validated sampling distribution: a family together with the support it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct DistributionSpec {
    #[serde(flatten)]
    family: Family,
    support: SupportSet,
}

impl TryFrom<RawSpec> for DistributionSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        match raw.support {
            Some(support) => DistributionSpec::new(raw.family, support),
            None => DistributionSpec::with_default_support(raw.family),
        }
    }
}

impl DistributionSpec {
    pub fn new(family: Family, support: SupportSet) -> Result<Self> {
        support.validate()?;
        let d = family.dim();
        if d == 0 {
            return Err(invalid("distribution dimension must be at least 1"));
        }
        if support.dim() != d {
            return Err(invalid(format!(
                "{} has dimension {d} but its support has dimension {}",
                family.name(),
                support.dim()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &family {
            Family::Dirac { location } => {
                if !finite(location) || !support.contains(location) {
                    return Err(invalid("dirac location must be finite and inside the support"));
                }
            }
            Family::UniformBox { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(invalid("uniform box bounds must have equal length"));
                }
                if !finite(lower) || !finite(upper) || lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(invalid("uniform box requires finite lower <= upper"));
                }
                if !support.contains(lower) || !support.contains(upper) {
                    return Err(invalid("uniform box must lie inside the support"));
                }
            }
            Family::GaussianIsotropic { mean, std_dev } => {
                if support.is_bounded() {
                    return Err(invalid(
                        "gaussian distributions require full-space support (no truncation)",
                    ));
                }
                if !finite(mean) || !(*std_dev > 0.0) || !std_dev.is_finite() {
                    return Err(invalid("gaussian requires a finite mean and std_dev > 0"));
                }
            }
            Family::Discrete { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    return Err(invalid("discrete law needs one weight per atom and at least one atom"));
                }
                if atoms.iter().any(|a| a.len() != d || !finite(a) || !support.contains(a)) {
                    return Err(invalid("discrete atoms must share a dimension and lie in the support"));
                }
                if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return Err(invalid("discrete weights must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("discrete weights sum to {total}, expected 1")));
                }
            }
        }
        Ok(Self { family, support })
    }

    /// Uniform laws default to their own box as support; every other family to full space.
    pub fn with_default_support(family: Family) -> Result<Self> {
        let support = match &family {
            Family::UniformBox { lower, upper } => SupportSet::Box {
                lower: lower.clone(),
                upper: upper.clone(),
            },
            other => SupportSet::full(other.dim()),
        };
        Self::new(family, support)
    }

    pub fn dirac(location: Vec<f64>) -> Result<Self> {
        Self::with_default_support(Family::Dirac { location })
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::with_default_support(Family::UniformBox { lower, upper })
    }

    pub fn gaussian(mean: Vec<f64>, std_dev: f64) -> Result<Self> {
        Self::with_default_support(Family::GaussianIsotropic { mean, std_dev })
    }

    pub fn discrete(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::with_default_support(Family::Discrete { atoms, weights })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    /// Same distribution on a different (validated) support.
    pub fn with_support(&self, support: SupportSet) -> Result<Self> {
        Self::new(self.family.clone(), support)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.family {
            Family::Dirac { location } => location.clone(),
            Family::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| {
                    let t: f64 = rng.random();
                    (l + t * (u - l)).min(*u)
                })
                .collect(),
            Family::GaussianIsotropic { mean, std_dev } => mean
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + std_dev * z
                })
                .collect(),
            Family::Discrete { atoms, weights } => {
                let t: f64 = rng.random();
                let mut cum = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    cum += w;
                    if t < cum {
                        return a.clone();
                    }
                }
                // rounding left t just above the cumulative total
                atoms
                    .iter()
                    .zip(weights)
                    .rev()
                    .find(|(_, w)| **w > 0.0)
                    .map(|(a, _)| a.clone())
                    .unwrap_or_else(|| atoms[atoms.len() - 1].clone())
            }
        }
    }

    /// `P{ξ ≤ x}` for a one-dimensional law.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        self.require_1d()?;
        Ok(Cdf1d::new(self).at(x))
    }

    /// `P{ξ < x}` for a one-dimensional law.
    pub fn cdf_left_1d(&self, x: f64) -> Result<f64> {
        self.require_1d()?;
        Ok(Cdf1d::new(self).left_of(x))
    }

    /// Generalized inverse `inf { x : F(x) ≥ t }` of a one-dimensional law, `t ∈ (0, 1)`.
    pub fn quantile_1d(&self, t: f64) -> Result<f64> {
        self.require_1d()?;
        if !(t > 0.0 && t < 1.0) {
            return Err(crate::error::domain(format!("quantile level {t} must lie in (0, 1)")));
        }
        Ok(match &self.family {
            Family::Dirac { location } => location[0],
            Family::UniformBox { lower, upper } => lower[0] + t * (upper[0] - lower[0]),
            Family::GaussianIsotropic { mean, std_dev } => {
                normal(mean[0], *std_dev).inverse_cdf(t)
            }
            Family::Discrete { atoms, weights } => {
                let mut pairs: Vec<(f64, f64)> =
                    atoms.iter().map(|a| a[0]).zip(weights.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut cum = 0.0;
                let mut last = pairs[pairs.len() - 1].0;
                for (x, w) in pairs {
                    cum += w;
                    if cum >= t {
                        last = x;
                        break;
                    }
                }
                last
            }
        })
    }

    fn require_1d(&self) -> Result<()> {
        if self.dim() != 1 {
            return Err(invalid(format!(
                "one-dimensional law expected, {} has dimension {}",
                self.family.name(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn atoms(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        match &self.family {
            Family::Dirac { location } => Some((vec![location.clone()], vec![1.0])),
            Family::Discrete { atoms, weights } => Some((atoms.clone(), weights.clone())),
            _ => None,
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal {
    Normal::new(mean, sd).expect("validated gaussian parameters")
}

/// Shift `v` with `q = p + v` when `q` is a translate of `p`.
fn translation_offset(p: &Family, q: &Family) -> Option<Vec<f64>> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    let diff = |a: &[f64], b: &[f64]| b.iter().zip(a).map(|(y, x)| y - x).collect::<Vec<_>>();
    match (p, q) {
        (Family::Dirac { location: a }, Family::Dirac { location: b }) => Some(diff(a, b)),
        (
            Family::UniformBox { lower: lp, upper: up },
            Family::UniformBox { lower: lq, upper: uq },
        ) => {
            let same_shape = lp
                .iter()
                .zip(up)
                .zip(lq.iter().zip(uq))
                .all(|((l1, u1), (l2, u2))| close(u1 - l1, u2 - l2));
            same_shape.then(|| {
                lp.iter()
                    .zip(up)
                    .zip(lq.iter().zip(uq))
                    .map(|((l1, u1), (l2, u2))| 0.5 * (l2 + u2) - 0.5 * (l1 + u1))
                    .collect()
            })
        }
        (
            Family::GaussianIsotropic { mean: mp, std_dev: sp },
            Family::GaussianIsotropic { mean: mq, std_dev: sq },
        ) => (sp == sq).then(|| diff(mp, mq)),
        (
            Family::Discrete { atoms: ap, weights: wp },
            Family::Discrete { atoms: aq, weights: wq },
        ) => {
            if ap.len() != aq.len() || wp != wq {
                return None;
            }
            let shift = diff(&ap[0], &aq[0]);
            let consistent = ap.iter().zip(aq).all(|(a, b)| {
                a.iter()
                    .zip(b)
                    .zip(&shift)
                    .all(|((x, y), s)| close(y - x, *s))
            });
            consistent.then_some(shift)
        }
        _ => None,
    }
}

/// Exact 1-Wasserstein distance under the ground `norm`.
///
/// Returns [`Error::NoClosedForm`] for pairs outside the supported table rather than
/// approximating.
pub fn wasserstein_distance(p: &DistributionSpec, q: &DistributionSpec, norm: Norm) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(invalid(format!(
            "cannot compare distributions of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    if let Some(shift) = translation_offset(&p.family, &q.family) {
        return Ok(norm.of(&shift));
    }
    if p.dim() == 1 {
        return Ok(one_dimensional_w1(p, q));
    }
    if let (Some((ap, wp)), Some((aq, wq))) = (p.atoms(), q.atoms()) {
        if ap.len() <= MAX_TRANSPORT_ATOMS && aq.len() <= MAX_TRANSPORT_ATOMS {
            let cost: Vec<Vec<f64>> = ap
                .iter()
                .map(|a| aq.iter().map(|b| norm.distance(a, b)).collect())
                .collect();
            return Ok(transport_cost(&wp, &wq, &cost));
        }
    }
    Err(Error::NoClosedForm {
        left: p.family.name().to_string(),
        right: q.family.name().to_string(),
    })
}

/// One-dimensional CDF with left limits; discrete atoms are sorted with prefix sums.
struct Cdf1d<'a> {
    spec: &'a DistributionSpec,
    sorted: Vec<(f64, f64)>,
}

impl<'a> Cdf1d<'a> {
    fn new(spec: &'a DistributionSpec) -> Self {
        let sorted = match &spec.family {
            Family::Discrete { atoms, weights } => {
                let mut pairs: Vec<(f64, f64)> =
                    atoms.iter().map(|a| a[0]).zip(weights.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut cum = 0.0;
                for pair in pairs.iter_mut() {
                    cum += pair.1;
                    pair.1 = cum;
                }
                pairs
            }
            _ => Vec::new(),
        };
        Self { spec, sorted }
    }

    fn at(&self, x: f64) -> f64 {
        match &self.spec.family {
            Family::Dirac { location } => (location[0] <= x) as u8 as f64,
            Family::UniformBox { lower, upper } => uniform_cdf(lower[0], upper[0], x, false),
            Family::GaussianIsotropic { mean, std_dev } => normal(mean[0], *std_dev).cdf(x),
            Family::Discrete { .. } => {
                let idx = self.sorted.partition_point(|(a, _)| *a <= x);
                if idx == 0 {
                    0.0
                } else {
                    self.sorted[idx - 1].1.min(1.0)
                }
            }
        }
    }

    fn left_of(&self, x: f64) -> f64 {
        match &self.spec.family {
            Family::Dirac { location } => (location[0] < x) as u8 as f64,
            Family::UniformBox { lower, upper } => uniform_cdf(lower[0], upper[0], x, true),
            Family::GaussianIsotropic { .. } => self.at(x),
            Family::Discrete { .. } => {
                let idx = self.sorted.partition_point(|(a, _)| *a < x);
                if idx == 0 {
                    0.0
                } else {
                    self.sorted[idx - 1].1.min(1.0)
                }
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match &self.spec.family {
            Family::Dirac { location } => vec![location[0]],
            Family::UniformBox { lower, upper } => vec![lower[0], upper[0]],
            Family::GaussianIsotropic { mean, std_dev } => {
                let reach = GAUSSIAN_REACH * std_dev;
                vec![mean[0] - reach, mean[0], mean[0] + reach]
            }
            Family::Discrete { .. } => self.sorted.iter().map(|(a, _)| *a).collect(),
        }
    }

    fn is_smooth(&self) -> bool {
        matches!(self.spec.family, Family::GaussianIsotropic { .. })
    }
}

// Gaussian mass beyond 40 standard deviations is below 1e-340.
const GAUSSIAN_REACH: f64 = 40.0;

fn uniform_cdf(lo: f64, hi: f64, x: f64, strict: bool) -> f64 {
    if lo == hi {
        return if strict { (lo < x) as u8 as f64 } else { (lo <= x) as u8 as f64 };
    }
    if x <= lo {
        0.0
    } else if x >= hi {
        1.0
    } else {
        (x - lo) / (hi - lo)
    }
}

/// `∫ |F_p - F_q| dx` over the real line.
///
/// Between consecutive breakpoints the difference is affine when neither law is
/// gaussian, and is integrated exactly; otherwise adaptive Gauss-Kronrod is used.
fn one_dimensional_w1(p: &DistributionSpec, q: &DistributionSpec) -> f64 {
    let fp = Cdf1d::new(p);
    let fq = Cdf1d::new(q);
    let mut cuts: Vec<f64> = fp.breakpoints();
    cuts.extend(fq.breakpoints());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let smooth = fp.is_smooth() || fq.is_smooth();
    let mut acc = crate::kernels::CompensatedSum::default();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        if smooth {
            let f = |x: f64| (fp.at(x) - fq.at(x)).abs();
            acc.add(adaptive_gauss_kronrod(&f, a, b, 1e-13, 0));
        } else {
            let d0 = fp.at(a) - fq.at(a);
            let d1 = fp.left_of(b) - fq.left_of(b);
            acc.add(abs_affine_integral(d0, d1, b - a));
        }
    }
    acc.value().max(0.0)
}

/// `∫_0^h |d0 + (d1 - d0) t/h| dt`.
fn abs_affine_integral(d0: f64, d1: f64, h: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * h
    } else {
        0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn adaptive_gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = K15_WEIGHTS[7] * f(c);
    let mut gauss = G7_WEIGHTS[3] * f(c);
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    kronrod *= h;
    gauss *= h;
    if (kronrod - gauss).abs() <= tol || depth >= 40 || h < 1e-14 {
        kronrod
    } else {
        adaptive_gauss_kronrod(f, a, c, 0.5 * tol, depth + 1)
            + adaptive_gauss_kronrod(f, c, b, 0.5 * tol, depth + 1)
    }
}

/// Minimum-cost transport between two finite laws by successive shortest paths.
fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let m = supply.len();
    let n = demand.len();
    let eps = 1e-15;
    let mut left = supply.to_vec();
    let mut need = demand.to_vec();
    let mut flow = vec![vec![0.0; n]; m];
    let target = supply.iter().sum::<f64>().min(demand.iter().sum::<f64>());
    let mut shipped = 0.0;
    // node layout: sources 0..m, sinks m..m+n
    for _ in 0..4 * (m + n) * (m + n) + 16 {
        if shipped >= target - 1e-13 {
            break;
        }
        // Bellman-Ford from a virtual origin attached to every source with spare supply.
        let total = m + n;
        let mut dist = vec![f64::INFINITY; total];
        let mut prev: Vec<Option<usize>> = vec![None; total];
        for i in 0..m {
            if left[i] > eps {
                dist[i] = 0.0;
            }
        }
        for _ in 0..total {
            let mut changed = false;
            for i in 0..m {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let nd = dist[i] + cost[i][j];
                        if nd < dist[m + j] - 1e-15 {
                            dist[m + j] = nd;
                            prev[m + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[m + j].is_finite() {
                    for i in 0..m {
                        if flow[i][j] > eps {
                            let nd = dist[m + j] - cost[i][j];
                            if nd < dist[i] - 1e-15 {
                                dist[i] = nd;
                                prev[i] = Some(m + j);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..n)
            .filter(|&j| need[j] > eps && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(sink) = sink else { break };
        // walk back to the originating source, collecting the bottleneck
        let mut path = vec![m + sink];
        let mut node = m + sink;
        while let Some(p) = prev[node] {
            path.push(p);
            node = p;
        }
        let origin = node;
        let mut amount = left[origin].min(need[sink]);
        for w in path.windows(2).rev() {
            let (to, from) = (w[0], w[1]);
            if from >= m {
                // backward arc sink(from) -> source(to) cancels flow[to][from - m]
                amount = amount.min(flow[to][from - m]);
            }
        }
        if amount <= eps {
            break;
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < m {
                flow[from][to - m] += amount;
            } else {
                flow[to][from - m] -= amount;
            }
        }
        left[origin] -= amount;
        need[sink] -= amount;
        shipped += amount;
    }
    let mut acc = crate::kernels::CompensatedSum::default();
    for i in 0..m {
        for j in 0..n {
            if flow[i][j] > 0.0 {
                acc.add(flow[i][j] * cost[i][j]);
            }
        }
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepJump {
    /// Lag from which the jump is in effect (`k ≥ at`).
    pub at: usize,
    pub magnitude: f64,
}

/// Variation budget `ρ(k)`: an upper bound on `W1(P_i, P_{i+k})`.
///
/// Always `ρ(0) = 0`, nonnegative and nondecreasing in `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", try_from = "RawBudget")]
pub enum VariationBudget {
    /// `ρ(k) = rate · k`.
    Linear { rate: f64 },
    /// `ρ(k) = Σ magnitude` over jumps with `at ≤ k`.
    Step { jumps: Vec<StepJump> },
    /// Explicit `(k, ρ(k))` pairs; lags between entries take the next tabulated value.
    Tabulated { table: Vec<(usize, f64)> },
}

#[derive(Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
enum RawBudget {
    Linear { rate: f64 },
    Step { jumps: Vec<StepJump> },
    Tabulated { table: Vec<(usize, f64)> },
}

impl TryFrom<RawBudget> for VariationBudget {
    type Error = Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        match raw {
            RawBudget::Linear { rate } => Self::linear(rate),
            RawBudget::Step { jumps } => Self::step(jumps),
            RawBudget::Tabulated { table } => Self::tabulated(table),
        }
    }
}

impl VariationBudget {
    pub fn zero() -> Self {
        VariationBudget::Linear { rate: 0.0 }
    }

    pub fn linear(rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(invalid(format!("linear budget rate {rate} must be finite and >= 0")));
        }
        Ok(VariationBudget::Linear { rate })
    }

    pub fn step(mut jumps: Vec<StepJump>) -> Result<Self> {
        for j in &jumps {
            if j.at == 0 {
                return Err(invalid("step budget jumps must start at k >= 1 so that rho(0) = 0"));
            }
            if !(j.magnitude >= 0.0) || !j.magnitude.is_finite() {
                return Err(invalid("step budget magnitudes must be finite and >= 0"));
            }
        }
        jumps.sort_by_key(|j| j.at);
        Ok(VariationBudget::Step { jumps })
    }

    pub fn tabulated(table: Vec<(usize, f64)>) -> Result<Self> {
        if table.is_empty() {
            return Err(invalid("tabulated budget needs at least one entry"));
        }
        let mut last: Option<(usize, f64)> = None;
        for &(k, v) in &table {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("tabulated budget value rho({k}) = {v} must be >= 0")));
            }
            if k == 0 && v != 0.0 {
                return Err(invalid("tabulated budget must have rho(0) = 0"));
            }
            if let Some((pk, pv)) = last {
                if k <= pk {
                    return Err(invalid("tabulated budget lags must be strictly increasing"));
                }
                if v < pv {
                    return Err(invalid(format!(
                        "tabulated budget must be nondecreasing, rho({k}) = {v} < rho({pk}) = {pv}"
                    )));
                }
            }
            last = Some((k, v));
        }
        Ok(VariationBudget::Tabulated { table })
    }

    /// `ρ(k)`.
    pub fn eval(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        Ok(match self {
            VariationBudget::Linear { rate } => rate * k as f64,
            VariationBudget::Step { jumps } => jumps
                .iter()
                .filter(|j| j.at <= k)
                .map(|j| j.magnitude)
                .sum(),
            VariationBudget::Tabulated { table } => {
                let idx = table.partition_point(|(t, _)| *t < k);
                match table.get(idx) {
                    Some((_, v)) => *v,
                    None => {
                        return Err(Error::BudgetOutOfRange {
                            k,
                            last: table[table.len() - 1].0,
                        })
                    }
                }
            }
        })
    }

    /// True when `ρ ≡ 0`, i.e. the environment is stationary.
    pub fn is_zero(&self) -> bool {
        match self {
            VariationBudget::Linear { rate } => *rate == 0.0,
            VariationBudget::Step { jumps } => jumps.iter().all(|j| j.magnitude == 0.0),
            VariationBudget::Tabulated { table } => table.iter().all(|(_, v)| *v == 0.0),
        }
    }
}

/// `ρ(k)`, see [`VariationBudget::eval`].
pub fn budget_eval(budget: &VariationBudget, k: usize) -> Result<f64> {
    budget.eval(k)
}

#[derive(Deserialize)]
struct RawSequence {
    specs: Vec<DistributionSpec>,
    budget: VariationBudget,
    #[serde(default)]
    norm: Norm,
}

/// Sampling laws `P_1..P_N` followed by the target `P_{N+1}`, with a verified budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct DistributionSequence {
    specs: Vec<DistributionSpec>,
    budget: VariationBudget,
    norm: Norm,
}

impl TryFrom<RawSequence> for DistributionSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        Self::new(raw.specs, raw.budget, raw.norm)
    }
}

impl DistributionSequence {
    /// Builds the sequence and checks `W1(P_i, P_{i+k}) ≤ ρ(k)` for every pair.
    pub fn new(specs: Vec<DistributionSpec>, budget: VariationBudget, norm: Norm) -> Result<Self> {
        if specs.len() < 2 {
            return Err(invalid(
                "a distribution sequence needs at least one sampling law and a target",
            ));
        }
        let d = specs[0].dim();
        if specs.iter().any(|s| s.dim() != d) {
            return Err(invalid("all distributions in a sequence must share a dimension"));
        }
        let len = specs.len();
        let rho: Vec<f64> = (0..len).map(|k| budget.eval(k)).collect::<Result<_>>()?;
        let violation = (0..len)
            .into_par_iter()
            .map(|i| -> Result<()> {
                for j in i + 1..len {
                    let w = wasserstein_distance(&specs[i], &specs[j], norm)?;
                    if w > rho[j - i] + BUDGET_TOLERANCE {
                        return Err(Error::BudgetViolated {
                            i: i + 1,
                            j: j + 1,
                            distance: w,
                            budget: rho[j - i],
                        });
                    }
                }
                Ok(())
            })
            .find_first(|r| r.is_err());
        if let Some(Err(e)) = violation {
            return Err(e);
        }
        Ok(Self { specs, budget, norm })
    }

    /// Every sample and the target drawn from the same law; `ρ ≡ 0`.
    pub fn stationary(spec: DistributionSpec, n: usize, norm: Norm) -> Result<Self> {
        Self::new(vec![spec; n + 1], VariationBudget::zero(), norm)
    }

    /// Number of samples `N`.
    pub fn n_samples(&self) -> usize {
        self.specs.len() - 1
    }

    pub fn sampling(&self) -> &[DistributionSpec] {
        &self.specs[..self.specs.len() - 1]
    }

    pub fn target(&self) -> &DistributionSpec {
        &self.specs[self.specs.len() - 1]
    }

    pub fn specs(&self) -> &[DistributionSpec] {
        &self.specs
    }

    pub fn budget(&self) -> &VariationBudget {
        &self.budget
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.specs[0].dim()
    }
}

/// Draws `ξ_i ~ P_i` for `i = 1..N` using per-index child seeds of `master_seed`.
pub(crate) fn draw_points(seq: &DistributionSequence, master_seed: u64, parallel: bool) -> Vec<Vec<f64>> {
    let one = |i: usize| {
        let mut rng = seed::rng(seed::child_seed(master_seed, i as u64));
        seq.specs[i].sample(&mut rng)
    };
    let n = seq.n_samples();
    if parallel {
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    }
}

/// One independent draw from each sampling law, with zero radii and ball-only sets.
///
/// The batch's support is the target's support `Ξ`. Output is bit-identical for a given
/// seed regardless of thread count.
pub fn draw_sequence(seq: &DistributionSequence, master_seed: u64) -> SampleBatch {
    let points = draw_points(seq, master_seed, true);
    let n = points.len();
    SampleBatch::new(
        points,
        vec![0.0; n],
        seq.norm,
        SupportMode::BallOnly,
        seq.target().support.clone(),
    )
    .expect("drawn points are consistent with the sequence")
}

/// `P_1 = start`, `P_{i+1} = P_i + drift`, with the tight budget `ρ(k) = ‖drift‖ k`.
pub fn make_drifting_sequence(
    start: Family,
    drift: &[f64],
    n: usize,
    norm: Norm,
) -> Result<DistributionSequence> {
    let budget = VariationBudget::linear(norm.of(drift))?;
    let specs = drifting_specs(start, drift, n)?;
    DistributionSequence::new(specs, budget, norm)
}

/// The translated laws of [`make_drifting_sequence`] without attaching a budget.
pub fn drifting_specs(start: Family, drift: &[f64], n: usize) -> Result<Vec<DistributionSpec>> {
    if matches!(start, Family::Discrete { .. }) {
        return Err(invalid(
            "drifting sequences support dirac, uniform_box and gaussian_isotropic families",
        ));
    }
    if n == 0 {
        return Err(invalid("a drifting sequence needs at least one sample"));
    }
    if drift.len() != start.dim() || drift.iter().any(|v| !v.is_finite()) {
        return Err(invalid("drift must be finite and match the distribution dimension"));
    }
    let families: Vec<Family> = (0..=n)
        .map(|i| {
            let shift: Vec<f64> = drift.iter().map(|v| v * i as f64).collect();
            start.translated(&shift)
        })
        .collect();
    let support = match (&families[0], &families[n]) {
        (Family::UniformBox { lower: l0, upper: u0 }, Family::UniformBox { lower: l1, upper: u1 }) => {
            SupportSet::Box {
                lower: l0.iter().zip(l1).map(|(a, b)| a.min(*b)).collect(),
                upper: u0.iter().zip(u1).map(|(a, b)| a.max(*b)).collect(),
            }
        }
        (f, _) => SupportSet::full(f.dim()),
    };
    families
        .into_iter()
        .map(|f| DistributionSpec::new(f, support.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(lo: f64, hi: f64) -> DistributionSpec {
        DistributionSpec::uniform(vec![lo], vec![hi]).unwrap()
    }

    fn g(m: f64, s: f64) -> DistributionSpec {
        DistributionSpec::gaussian(vec![m], s).unwrap()
    }

    #[test]
    fn dirac_pair_is_norm_of_difference() {
        let a = DistributionSpec::dirac(vec![1.0, 2.0]).unwrap();
        let b = DistributionSpec::dirac(vec![4.0, -2.0]).unwrap();
        assert_eq!(wasserstein_distance(&a, &b, Norm::L2).unwrap(), 5.0);
        assert_eq!(wasserstein_distance(&a, &b, Norm::L1).unwrap(), 7.0);
        assert_eq!(wasserstein_distance(&a, &b, Norm::Linf).unwrap(), 4.0);
    }

    #[test]
    fn translated_uniform_and_gaussian() {
        let w = wasserstein_distance(&u(0.0, 1.0), &u(0.3, 1.3), Norm::L1).unwrap();
        assert!((w - 0.3).abs() < 1e-12);
        let w = wasserstein_distance(&g(0.0, 1.0), &g(2.0, 1.0), Norm::L2).unwrap();
        assert_eq!(w, 2.0);
    }

    #[test]
    fn one_d_uniform_pair_by_cdf_integral() {
        // U[0,1] vs U[0,2]: quantiles t and 2t, W1 = ∫ t dt = 1/2
        let w = wasserstein_distance(&u(0.0, 1.0), &u(0.0, 2.0), Norm::L2).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
        // dirac at 0 vs U[0,1]: E|U| = 1/2
        let d = DistributionSpec::dirac(vec![0.0]).unwrap();
        let w = wasserstein_distance(&d, &u(0.0, 1.0), Norm::L2).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_d_gaussian_scale_change() {
        // W1(N(0,1), N(0,s^2)) = |1-s| E|Z| = |1-s| sqrt(2/pi)
        let w = wasserstein_distance(&g(0.0, 1.0), &g(0.0, 2.0), Norm::L2).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((w - expected).abs() < 1e-9, "{w} vs {expected}");
    }

    #[test]
    fn discrete_transport_matches_assignment() {
        let a = DistributionSpec::discrete(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let b = DistributionSpec::discrete(vec![vec![1.0, 1.0], vec![0.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let w = wasserstein_distance(&a, &b, Norm::L1).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unsupported_pair_errors() {
        let a = DistributionSpec::uniform(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = DistributionSpec::uniform(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert!(matches!(
            wasserstein_distance(&a, &b, Norm::L2),
            Err(Error::NoClosedForm { .. })
        ));
        let c = DistributionSpec::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        assert!(wasserstein_distance(&a, &c, Norm::L2).is_err());
    }

    #[test]
    fn budget_forms() {
        let lin = VariationBudget::linear(0.01).unwrap();
        assert!((lin.eval(7).unwrap() - 0.07).abs() < 1e-15);
        let step = VariationBudget::step(vec![StepJump { at: 3, magnitude: 0.5 }]).unwrap();
        assert_eq!(step.eval(2).unwrap(), 0.0);
        assert_eq!(step.eval(5).unwrap(), 0.5);
        let tab = VariationBudget::tabulated(vec![(1, 0.1), (4, 0.3)]).unwrap();
        assert_eq!(tab.eval(0).unwrap(), 0.0);
        assert_eq!(tab.eval(2).unwrap(), 0.3);
        assert!(matches!(tab.eval(5), Err(Error::BudgetOutOfRange { k: 5, last: 4 })));
        for b in [lin, step, tab] {
            assert_eq!(b.eval(0).unwrap(), 0.0);
        }
    }

    #[test]
    fn budget_validation() {
        assert!(VariationBudget::tabulated(vec![(0, 0.1)]).is_err());
        assert!(VariationBudget::tabulated(vec![(1, 0.2), (2, 0.1)]).is_err());
        assert!(VariationBudget::step(vec![StepJump { at: 0, magnitude: 1.0 }]).is_err());
        assert!(VariationBudget::linear(-1.0).is_err());
    }

    #[test]
    fn gaussian_rejects_bounded_support() {
        let fam = Family::GaussianIsotropic { mean: vec![0.0], std_dev: 1.0 };
        let sup = SupportSet::bounded(vec![-5.0], vec![5.0]).unwrap();
        assert!(DistributionSpec::new(fam, sup).is_err());
    }

    #[test]
    fn drifting_sequence_properties() {
        let seq = make_drifting_sequence(
            Family::GaussianIsotropic { mean: vec![0.0], std_dev: 1.0 },
            &[0.01],
            20,
            Norm::L2,
        )
        .unwrap();
        let w = wasserstein_distance(&seq.specs()[0], &seq.specs()[10], Norm::L2).unwrap();
        assert!((w - 0.1).abs() < 1e-12);
        assert!((seq.budget().eval(10).unwrap() - 0.1).abs() < 1e-15);

        let seq = make_drifting_sequence(
            Family::Dirac { location: vec![1.0, 2.0] },
            &[0.5, -0.25],
            8,
            Norm::L1,
        )
        .unwrap();
        assert_eq!(
            seq.target().family(),
            &Family::Dirac { location: vec![1.0 + 8.0 * 0.5, 2.0 - 8.0 * 0.25] }
        );

        let stat = make_drifting_sequence(
            Family::UniformBox { lower: vec![0.0], upper: vec![1.0] },
            &[0.0],
            5,
            Norm::L2,
        )
        .unwrap();
        assert!(stat.budget().is_zero());
    }

    #[test]
    fn drifting_rejects_discrete() {
        let fam = Family::Discrete { atoms: vec![vec![0.0]], weights: vec![1.0] };
        assert!(make_drifting_sequence(fam, &[0.1], 3, Norm::L2).is_err());
    }

    #[test]
    fn sequence_rejects_budget_violation() {
        let specs = drifting_specs(Family::Dirac { location: vec![0.0] }, &[0.1], 4).unwrap();
        let err = DistributionSequence::new(specs, VariationBudget::linear(0.05).unwrap(), Norm::L2)
            .unwrap_err();
        assert!(matches!(err, Error::BudgetViolated { .. }));
    }

    #[test]
    fn draws_are_deterministic_and_in_support() {
        let seq = make_drifting_sequence(
            Family::UniformBox { lower: vec![0.0, -1.0], upper: vec![1.0, 1.0] },
            &[0.01, 0.0],
            50,
            Norm::Linf,
        )
        .unwrap();
        let a = draw_sequence(&seq, 42);
        let b = draw_sequence(&seq, 42);
        assert_eq!(a.points(), b.points());
        assert_eq!(draw_points(&seq, 42, false), a.points().to_vec());
        for (i, p) in a.points().iter().enumerate() {
            assert!(seq.specs()[i].support().contains(p));
        }
        assert_ne!(draw_sequence(&seq, 43).points(), a.points());
    }

    #[test]
    fn dirac_draws_are_constant() {
        let seq = DistributionSequence::stationary(
            DistributionSpec::dirac(vec![0.3, 0.4]).unwrap(),
            10,
            Norm::L2,
        )
        .unwrap();
        assert!(draw_sequence(&seq, 1).points().iter().all(|p| p == &vec![0.3, 0.4]));
    }

    #[test]
    fn json_round_trip_keeps_validation() {
        let seq = make_drifting_sequence(
            Family::UniformBox { lower: vec![0.0], upper: vec![1.0] },
            &[0.02],
            3,
            Norm::L2,
        )
        .unwrap();
        let text = serde_json::to_string(&seq).unwrap();
        let back: DistributionSequence = serde_json::from_str(&text).unwrap();
        assert_eq!(back, seq);
        let broken = text.replace("\"rate\":0.02", "\"rate\":0.001");
        assert!(serde_json::from_str::<DistributionSequence>(&broken).is_err());
    }
}
