//! Monte Carlo estimation of the probability of infeasibility
//! `P{X̂^r_α ⊄ X^{N+1}_ε}` and comparison against the closed-form bounds.
//!
//! A trial draws `ξ_1..ξ_N`, builds the robust feasible set and is *bad* when that set
//! contains a decision point whose true target violation exceeds `ε`. Trials are seeded
//! by `(master_seed, trial index)` and aggregated as integer counts, so results do not
//! depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_baseline, bound_covering, bound_robust_covering, bound_robust_finite, penalties, BoundKind,
    BoundValue,
};
use crate::distributions::{draw_points, make_drifting_sequence, DistributionSequence, DistributionSpec, Family, Norm};
use crate::error::{domain, invalid, Error, Result};
use crate::kernels::min_sample_size;
use crate::saa::{
    is_feasible, radii_from_theta, true_violation_probability, BiAffine, DecisionSet, MonteCarloOptions,
    ProblemInstance, RiskConfig, SampleBatch, SupportMode,
};
use crate::seed;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Acceptance slack in Wilson half-widths.
pub const SLACK_HALF_WIDTHS: f64 = 4.0;

/// Largest Monte Carlo standard error accepted for a target violation probability.
pub const MAX_VIOLATION_STD_ERROR: f64 = 1e-3;

/// How the radii `r_1..r_N` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RadiiRule {
    /// `r_i = 0`, the classic SAA.
    Zero,
    /// `r_i = ρ(N+1-i)/θ`.
    Theta { theta: f64 },
    Explicit { radii: Vec<f64> },
}

impl RadiiRule {
    pub fn radii(&self, sequence: &DistributionSequence) -> Result<Vec<f64>> {
        let n = sequence.n_samples();
        match self {
            RadiiRule::Zero => Ok(vec![0.0; n]),
            RadiiRule::Theta { theta } => radii_from_theta(sequence.budget(), n, *theta),
            RadiiRule::Explicit { radii } => {
                if radii.len() != n {
                    return Err(invalid(format!("{} explicit radii for N = {n} samples", radii.len())));
                }
                if let Some(i) = radii.iter().position(|r| !(*r >= 0.0)) {
                    return Err(invalid(format!("radius r_{} = {} must be >= 0", i + 1, radii[i])));
                }
                Ok(radii.clone())
            }
        }
    }
}

fn default_trials() -> usize {
    10_000
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialConfig {
    pub instance: ProblemInstance,
    pub sequence: DistributionSequence,
    #[serde(default = "default_radii")]
    pub radii: RadiiRule,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub support_mode: SupportMode,
    #[serde(default)]
    pub monte_carlo: MonteCarloOptions,
}

fn default_radii() -> RadiiRule {
    RadiiRule::Zero
}

impl TrialConfig {
    pub fn new(instance: ProblemInstance, sequence: DistributionSequence, radii: RadiiRule, trials: usize, master_seed: u64) -> Self {
        Self {
            instance,
            sequence,
            radii,
            trials,
            master_seed,
            support_mode: SupportMode::BallOnly,
            monte_carlo: MonteCarloOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<Vec<f64>> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.instance.decision_set.points().is_none() {
            return Err(invalid("estimation requires a finite decision set"));
        }
        if let Some(d) = self.instance.sample_dim {
            if d != self.sequence.dim() {
                return Err(invalid("instance sample dimension differs from the sequence dimension"));
            }
        }
        self.radii.radii(&self.sequence)
    }
}

/// Wilson score interval for `successes` out of `trials`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilsonInterval {
    pub low: f64,
    pub high: f64,
}

impl WilsonInterval {
    pub fn new(successes: usize, trials: usize, z: f64) -> Self {
        let m = trials as f64;
        let p = successes as f64 / m;
        let z2 = z * z;
        let denom = 1.0 + z2 / m;
        let center = (p + z2 / (2.0 * m)) / denom;
        let half = z / denom * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
        Self {
            low: (center - half).max(0.0).min(p),
            high: (center + half).min(1.0).max(p),
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }
}

/// A theoretical bound and whether the empirical frequency respected it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub bound: BoundKind,
    pub value: BoundValue,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub trials: usize,
    pub bad_trials: usize,
    pub frequency: f64,
    pub interval: WilsonInterval,
    pub half_width: f64,
    /// Target violation probability of each decision point.
    pub violation_probabilities: Vec<f64>,
    pub bounds: Vec<BoundCheck>,
}

impl EstimateResult {
    /// Empirical frequency within `min(1, bound) + 4` half-widths for every bound.
    pub fn passed(&self) -> bool {
        self.bounds.iter().all(|b| b.passed)
    }

    /// `frequency ≤ limit + 4` half-widths.
    pub fn within(&self, limit: f64) -> bool {
        self.frequency <= limit + SLACK_HALF_WIDTHS * self.half_width
    }
}

/// Runs the trials of `config` on a pool of `jobs` threads (0 means all cores).
pub fn estimate_infeasibility(config: &TrialConfig, jobs: usize) -> Result<EstimateResult> {
    let radii = config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| estimate_in_pool(config, radii))
}

fn estimate_in_pool(config: &TrialConfig, radii: Vec<f64>) -> Result<EstimateResult> {
    let inst = &config.instance;
    let seq = &config.sequence;
    let points = inst.decision_set.points().expect("validated as finite");
    let target = seq.target();
    let eps = inst.risk.epsilon;

    let probs: Vec<_> = points
        .par_iter()
        .map(|x| true_violation_probability(x, target, &inst.constraint, &config.monte_carlo))
        .collect();
    if let Some(p) = probs.iter().find(|p| !p.exact && p.std_error > MAX_VIOLATION_STD_ERROR) {
        return Err(domain(format!(
            "target violation probability standard error {} exceeds {MAX_VIOLATION_STD_ERROR}; \
             raise monte_carlo.draws",
            p.std_error
        )));
    }
    let bad: Vec<&Vec<f64>> = points
        .iter()
        .zip(&probs)
        .filter(|(_, p)| p.value > eps)
        .map(|(x, _)| x)
        .collect();

    let n = seq.n_samples();
    let support = target.support().clone();
    let trial = |t: usize| -> Result<bool> {
        let xi = draw_points(seq, seed::child_seed(config.master_seed, t as u64), false);
        let batch = SampleBatch::new(xi, radii.clone(), seq.norm(), config.support_mode, support.clone())?;
        for x in &bad {
            if is_feasible(x, &inst.constraint, &batch, inst.risk.gamma, inst.risk.alpha)? {
                return Ok(true);
            }
        }
        Ok(false)
    };
    let bad_trials = if bad.is_empty() {
        0
    } else {
        let outcomes: Vec<Result<bool>> = (0..config.trials).into_par_iter().map(trial).collect();
        let mut count = 0;
        for (t, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(true) => count += 1,
                Ok(false) => {}
                Err(e) => {
                    return Err(Error::Trial {
                        trial: t,
                        source: Box::new(e),
                    })
                }
            }
        }
        count
    };

    let frequency = bad_trials as f64 / config.trials as f64;
    let interval = WilsonInterval::new(bad_trials, config.trials, Z_95);
    let half_width = interval.half_width();
    let mut result = EstimateResult {
        n_samples: n,
        trials: config.trials,
        bad_trials,
        frequency,
        interval,
        half_width,
        violation_probabilities: probs.iter().map(|p| p.value).collect(),
        bounds: Vec::new(),
    };
    for (kind, value) in applicable_bounds(config, &radii)? {
        let passed = result.within(value.clamped);
        result.bounds.push(BoundCheck {
            bound: kind,
            value,
            passed,
        });
    }
    Ok(result)
}

/// Bounds that hold for the configuration: always the finite robust bound, plus the
/// covering one when a Lipschitz constant and a positive margin are known.
fn applicable_bounds(config: &TrialConfig, radii: &[f64]) -> Result<Vec<(BoundKind, BoundValue)>> {
    let inst = &config.instance;
    let risk = &inst.risk;
    let p = penalties(config.sequence.budget(), risk.epsilon, radii)?;
    let card = inst.decision_set.cardinality().expect("finite");
    let mut out = vec![(BoundKind::RobustFinite, bound_robust_finite(card, risk.alpha, &p)?)];
    let diameter = inst.diameter();
    if let Some(l) = risk.lipschitz {
        if risk.gamma > 0.0 && diameter > 0.0 {
            out.push((
                BoundKind::RobustCovering,
                bound_robust_covering(l, diameter, risk.gamma, inst.decision_set.dim(), risk.alpha, &p)?,
            ));
        }
    }
    Ok(out)
}

/// Parameters of the two-bound comparison sweep over `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    /// Decision dimension `n`.
    pub dim: usize,
    pub epsilon: f64,
    pub alpha: f64,
    /// `LD/γ`.
    pub ratio: f64,
    /// Defaults to `(ε - α)/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub n_min: usize,
    pub n_max: usize,
}

fn one() -> usize {
    1
}

impl SweepParams {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or((self.epsilon - self.alpha) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub covering: BoundValue,
    pub baseline: BoundValue,
    /// `baseline / covering`, formed from the logarithms.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub beta: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Smallest `N` whose covering bound is below 1.
    pub fn first_below_one(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.covering.raw < 1.0).map(|r| r.n_samples)
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Columns `N,covering,covering_log10,baseline,baseline_log10,ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["N", "covering", "covering_log10", "baseline", "baseline_log10", "ratio"])?;
        for r in &self.rows {
            w.write_record([
                r.n_samples.to_string(),
                r.covering.raw.to_string(),
                r.covering.log10.to_string(),
                r.baseline.raw.to_string(),
                r.baseline.log10.to_string(),
                r.ratio.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the covering bound and the baseline bound for every `N` in range, with
/// `L = LD/γ`, `D = 1`, `γ = 1`.
pub fn sweep_bound_comparison(params: &SweepParams) -> Result<SweepTable> {
    if params.n_min == 0 || params.n_min > params.n_max {
        return Err(invalid("sweep needs 1 <= n_min <= n_max"));
    }
    if !(params.ratio > 0.0) {
        return Err(domain(format!("LD/gamma = {} must be > 0", params.ratio)));
    }
    let beta = params.beta();
    let rows = (params.n_min..=params.n_max)
        .into_par_iter()
        .map(|n| {
            let covering = bound_covering(params.ratio, 1.0, 1.0, params.dim, params.alpha, params.epsilon, n)?;
            let baseline =
                bound_baseline(params.ratio, 1.0, 1.0, params.dim, params.alpha, params.epsilon, beta, n)?;
            let ratio = 10f64.powf(baseline.log10 - covering.log10);
            Ok(SweepRow {
                n_samples: n,
                covering,
                baseline,
                ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { beta, rows })
}

/// The data-generating environment of a confidence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    /// Every sample drawn from the target.
    Stationary,
    /// Samples drift upward by `rate` per step into the target, so early samples
    /// understate violations as much as the budget `ρ(k) = rate·k` allows.
    AdversarialDrift { rate: f64 },
}

/// Checks `P{X̂^r_α ⊆ X^{N+1}_ε} ≥ 1 - δ` at the minimum sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCheck {
    pub card_x: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub theta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub environment: Environment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceReport {
    pub check: ConfidenceCheck,
    /// `None` when `δ ≥ 1` makes the guarantee vacuous.
    #[serde(rename = "N")]
    pub n_samples: Option<usize>,
    pub estimate: Option<EstimateResult>,
    pub passed: bool,
}

/// One row per report.
///
/// Columns `card_x,delta,epsilon,alpha,theta,N,trials,bad_trials,frequency,half_width,passed`;
/// the estimate columns are empty for vacuous checks.
pub fn write_confidence_csv<W: Write>(out: W, reports: &[ConfidenceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "card_x", "delta", "epsilon", "alpha", "theta", "N", "trials", "bad_trials", "frequency", "half_width",
        "passed",
    ])?;
    for r in reports {
        let c = &r.check;
        let e = r.estimate.as_ref();
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            c.card_x.to_string(),
            c.delta.to_string(),
            c.epsilon.to_string(),
            c.alpha.to_string(),
            c.theta.to_string(),
            opt(r.n_samples.map(|v| v.to_string())),
            opt(e.map(|e| e.trials.to_string())),
            opt(e.map(|e| e.bad_trials.to_string())),
            opt(e.map(|e| e.frequency.to_string())),
            opt(e.map(|e| e.half_width.to_string())),
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the one-dimensional test problem of a confidence check.
///
/// The target is `U[0, 1]` and `g(x, ξ) = ξ - x`, so `v(x) = 1 - x`. Every decision point
/// sits just past the risk level, `v(x_j) = ε + 10⁻⁴ (j + 1)`, which makes each of them
/// a candidate for a bad trial.
pub fn confidence_trial_config(check: &ConfidenceCheck, n_samples: usize) -> Result<TrialConfig> {
    if check.card_x == 0 {
        return Err(domain("decision set cardinality must be at least 1"));
    }
    let points: Vec<Vec<f64>> = (0..check.card_x)
        .map(|j| vec![1.0 - (check.epsilon + 1e-4 * (j + 1) as f64)])
        .collect();
    if points.iter().any(|p| p[0] <= 0.0) {
        return Err(domain("epsilon plus the point offsets must stay below 1"));
    }
    let risk = RiskConfig {
        theta: Some(check.theta),
        delta: Some(check.delta.min(1.0)),
        ..RiskConfig::new(check.epsilon, check.alpha, 0.0)
    };
    let constraint = BiAffine::separable(vec![-1.0], vec![1.0], 0.0).into();
    let instance = ProblemInstance::new(DecisionSet::finite(points)?, constraint, None, risk)?.with_sample_dim(1)?;
    let target = Family::UniformBox {
        lower: vec![0.0],
        upper: vec![1.0],
    };
    let (sequence, radii) = match check.environment {
        Environment::Stationary => (
            DistributionSequence::stationary(DistributionSpec::with_default_support(target)?, n_samples, Norm::L2)?,
            RadiiRule::Zero,
        ),
        Environment::AdversarialDrift { rate } => {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(domain(format!("drift rate {rate} must be finite and >= 0")));
            }
            let start = target.translated(&[-rate * n_samples as f64]);
            (
                make_drifting_sequence(start, &[rate], n_samples, Norm::L2)?,
                RadiiRule::Theta { theta: check.theta },
            )
        }
    };
    Ok(TrialConfig::new(instance, sequence, radii, check.trials, check.master_seed))
}

/// Runs a confidence check at `N = min_sample_size(|X|, δ, ε, α, θ)`.
///
/// Passes when the empirical infeasibility frequency is at most `δ` plus 4 half-widths.
pub fn verify_confidence(check: &ConfidenceCheck, jobs: usize) -> Result<ConfidenceReport> {
    if check.delta >= 1.0 {
        return Ok(ConfidenceReport {
            check: check.clone(),
            n_samples: None,
            estimate: None,
            passed: true,
        });
    }
    let n = min_sample_size(check.card_x, check.delta, check.epsilon, check.alpha, check.theta)?;
    let config = confidence_trial_config(check, n)?;
    let estimate = estimate_infeasibility(&config, jobs)?;
    let passed = estimate.within(check.delta);
    Ok(ConfidenceReport {
        check: check.clone(),
        n_samples: Some(n),
        estimate: Some(estimate),
        passed,
    })
}

/// One row per labelled estimate.
///
/// Columns `config,N,trials,bad_trials,frequency,wilson_low,wilson_high,half_width,bounds,passed`,
/// where `bounds` lists `name=clamped value` pairs separated by `;`.
pub fn write_estimates_csv<W: Write>(out: W, rows: &[(String, EstimateResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config", "N", "trials", "bad_trials", "frequency", "wilson_low", "wilson_high", "half_width", "bounds",
        "passed",
    ])?;
    for (label, e) in rows {
        let bounds = e
            .bounds
            .iter()
            .map(|b| format!("{}={}", b.bound, b.value.clamped))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            label.clone(),
            e.n_samples.to_string(),
            e.trials.to_string(),
            e.bad_trials.to_string(),
            e.frequency.to_string(),
            e.interval.low.to_string(),
            e.interval.high.to_string(),
            e.half_width.to_string(),
            bounds,
            e.passed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
