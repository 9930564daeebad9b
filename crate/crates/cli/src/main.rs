//! `saa`: bounds, sample sizes, Monte Carlo simulation and the bound comparison sweep,
//! driven by JSON configuration files.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use saa_core::bounds::{penalties, BoundKind};
use saa_core::harness::{
    estimate_infeasibility, sweep_bound_comparison, verify_confidence, write_confidence_csv, write_estimates_csv,
    ConfidenceCheck, SweepParams, SweepTable,
};
use saa_core::kernels::min_sample_size;
use saa_core::saa::radii_from_theta;
use saa_core::{BoundInputs, BoundReport, Error as CoreError, TrialConfig, VariationBudget};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "saa", version, about = "Chance-constrained SAA bounds and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides every master seed in the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "K", default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate closed-form bounds and write bounds.csv.
    Bounds(CommonArgs),
    /// Monte Carlo estimates of the probability of infeasibility.
    Simulate(CommonArgs),
    /// Print the minimum sample size for a target confidence.
    SampleSize(CommonArgs),
    /// Compare the covering and baseline bounds over a range of N; writes figure1.csv.
    Sweep(CommonArgs),
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Validation(String),
    BoundCheck(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::BoundCheck(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::BoundCheck(m) => write!(f, "bound check failed: {m}"),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let root = match &e {
            CoreError::Trial { source, .. } => source.as_ref(),
            other => other,
        };
        match root {
            CoreError::Io(_) | CoreError::Csv(_) => Failure::Internal(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn read_config<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        if at == "." {
            Failure::Validation(format!("{}: {inner}", path.display()))
        } else {
            Failure::Validation(format!("{}: at `{at}`: {inner}", path.display()))
        }
    })
}

fn check_version(version: Option<u32>) -> Outcome<()> {
    match version {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(Failure::Validation(format!(
            "unsupported config version {v} (this build reads version {SCHEMA_VERSION})"
        ))),
    }
}

fn prepare_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Validation(format!("output directory {} is not writable: {e}", dir.display())))
}

fn create(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Internal(format!("cannot create {}: {e}", path.display())))
}

fn write_resolved<T: Serialize>(dir: &Path, config: &T) -> Outcome<()> {
    let mut w = create(dir, "resolved_config.json")?;
    serde_json::to_writer_pretty(&mut w, config).map_err(|e| Failure::Internal(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `"N": 100` or `"N": {"from": 1, "to": 2000}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SampleCount {
    One(usize),
    Range { from: usize, to: usize },
}

impl SampleCount {
    fn values(&self) -> Outcome<Vec<usize>> {
        match *self {
            SampleCount::One(n) => Ok(vec![n]),
            SampleCount::Range { from, to } if from <= to => Ok((from..=to).collect()),
            SampleCount::Range { from, to } => Err(Failure::Validation(format!("empty N range {from}..{to}"))),
        }
    }
}

/// Drifting-sample penalty inputs: explicit `p_i`, or a budget plus radii.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PenaltySource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    penalties: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<VariationBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radii: Option<Vec<f64>>,
}

impl PenaltySource {
    fn resolve(&self, epsilon: f64, n: usize) -> Outcome<Vec<f64>> {
        if let Some(p) = &self.penalties {
            return Ok(p.clone());
        }
        let budget = self.budget.clone().unwrap_or_else(VariationBudget::zero);
        let radii = match (&self.radii, self.theta) {
            (Some(r), None) => r.clone(),
            (None, Some(theta)) => radii_from_theta(&budget, n, theta)?,
            (None, None) => vec![0.0; n],
            (Some(_), Some(_)) => {
                return Err(Failure::Validation("give either `radii` or `theta`, not both".into()))
            }
        };
        if radii.len() != n {
            return Err(Failure::Validation(format!("{} radii given for N = {n}", radii.len())));
        }
        Ok(penalties(&budget, epsilon, &radii)?)
    }
}

/// One requested bound; the fields each kind needs are required by the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "snake_case", deny_unknown_fields)]
enum BoundRequest {
    Finite {
        #[serde(rename = "N")]
        n: SampleCount,
        epsilon: f64,
        alpha: f64,
        card_x: usize,
    },
    Covering {
        #[serde(rename = "N")]
        n: SampleCount,
        epsilon: f64,
        alpha: f64,
        gamma: f64,
        lipschitz: f64,
        diameter: f64,
        dim: usize,
    },
    Baseline {
        #[serde(rename = "N")]
        n: SampleCount,
        epsilon: f64,
        alpha: f64,
        gamma: f64,
        lipschitz: f64,
        diameter: f64,
        dim: usize,
        beta: f64,
    },
    RobustFinite {
        #[serde(rename = "N")]
        n: SampleCount,
        epsilon: f64,
        alpha: f64,
        card_x: usize,
        #[serde(default)]
        drift: PenaltySource,
    },
    RobustCovering {
        #[serde(rename = "N")]
        n: SampleCount,
        epsilon: f64,
        alpha: f64,
        gamma: f64,
        lipschitz: f64,
        diameter: f64,
        dim: usize,
        #[serde(default)]
        drift: PenaltySource,
    },
}

impl BoundRequest {
    fn expand(&self) -> Outcome<Vec<(BoundKind, BoundInputs)>> {
        let mut out = Vec::new();
        let (kind, counts) = match self {
            BoundRequest::Finite { n, .. } => (BoundKind::Finite, n),
            BoundRequest::Covering { n, .. } => (BoundKind::Covering, n),
            BoundRequest::Baseline { n, .. } => (BoundKind::Baseline, n),
            BoundRequest::RobustFinite { n, .. } => (BoundKind::RobustFinite, n),
            BoundRequest::RobustCovering { n, .. } => (BoundKind::RobustCovering, n),
        };
        for n_samples in counts.values()? {
            let inputs = match self {
                BoundRequest::Finite {
                    epsilon, alpha, card_x, ..
                } => BoundInputs {
                    card_x: Some(*card_x),
                    ..BoundInputs::new(n_samples, *epsilon, *alpha)
                },
                BoundRequest::Covering {
                    epsilon,
                    alpha,
                    gamma,
                    lipschitz,
                    diameter,
                    dim,
                    ..
                } => covering_inputs(n_samples, *epsilon, *alpha, *gamma, *lipschitz, *diameter, *dim),
                BoundRequest::Baseline {
                    epsilon,
                    alpha,
                    gamma,
                    lipschitz,
                    diameter,
                    dim,
                    beta,
                    ..
                } => BoundInputs {
                    beta: Some(*beta),
                    ..covering_inputs(n_samples, *epsilon, *alpha, *gamma, *lipschitz, *diameter, *dim)
                },
                BoundRequest::RobustFinite {
                    epsilon,
                    alpha,
                    card_x,
                    drift,
                    ..
                } => BoundInputs {
                    card_x: Some(*card_x),
                    penalties: Some(drift.resolve(*epsilon, n_samples)?),
                    ..BoundInputs::new(n_samples, *epsilon, *alpha)
                },
                BoundRequest::RobustCovering {
                    epsilon,
                    alpha,
                    gamma,
                    lipschitz,
                    diameter,
                    dim,
                    drift,
                    ..
                } => BoundInputs {
                    penalties: Some(drift.resolve(*epsilon, n_samples)?),
                    ..covering_inputs(n_samples, *epsilon, *alpha, *gamma, *lipschitz, *diameter, *dim)
                },
            };
            out.push((kind, inputs));
        }
        Ok(out)
    }
}

fn covering_inputs(n: usize, epsilon: f64, alpha: f64, gamma: f64, l: f64, d: f64, dim: usize) -> BoundInputs {
    BoundInputs {
        gamma,
        lipschitz: Some(l),
        diameter: Some(d),
        dim: Some(dim),
        ..BoundInputs::new(n, epsilon, alpha)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(default)]
    bounds: Vec<BoundRequest>,
    /// Also write figure1.csv for this sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Experiment {
    label: String,
    config: TrialConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(default)]
    experiments: Vec<Experiment>,
    #[serde(default)]
    confidence: Vec<ConfidenceCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleSizeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    card_x: usize,
    delta: f64,
    epsilon: f64,
    alpha: f64,
    theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(flatten)]
    params: SweepParams,
}

fn write_sweep(dir: &Path, table: &SweepTable) -> Outcome<()> {
    let mut w = create(dir, "figure1.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn print_sweep_summary(table: &SweepTable) {
    println!("beta = {}", table.beta);
    match table.first_below_one() {
        Some(n) => println!("covering bound first below 1 at N = {n}"),
        None => println!("covering bound stays at or above 1 over the range"),
    }
    println!("max baseline/covering ratio = {:.6e}", table.max_ratio());
}

fn run_bounds(args: &CommonArgs) -> Outcome<()> {
    let config: BoundsConfig = read_config(&args.config)?;
    check_version(config.version)?;
    if config.bounds.is_empty() && config.sweep.is_none() {
        return Err(Failure::Validation("no bounds requested".into()));
    }
    let mut report = BoundReport::default();
    for request in &config.bounds {
        for (kind, inputs) in request.expand()? {
            report.push(kind, &inputs)?;
        }
    }
    let table = config.sweep.as_ref().map(sweep_bound_comparison).transpose()?;
    prepare_out(&args.out)?;
    write_resolved(&args.out, &config)?;
    if !report.rows.is_empty() {
        let mut w = create(&args.out, "bounds.csv")?;
        report.write_csv(&mut w)?;
        w.flush()?;
        println!("{:<16} {:>7} {:>14} {:>10} {:>9}", "bound", "N", "raw", "log10", "clamped");
        for r in &report.rows {
            println!(
                "{:<16} {:>7} {:>14.6e} {:>10.4} {:>9.6}",
                r.bound.name(),
                r.n_samples,
                r.value.raw,
                r.value.log10,
                r.value.clamped
            );
        }
    }
    if let Some(table) = &table {
        write_sweep(&args.out, table)?;
        print_sweep_summary(table);
    }
    Ok(())
}

fn run_simulate(args: &CommonArgs) -> Outcome<()> {
    let mut config: SimulateConfig = read_config(&args.config)?;
    check_version(config.version)?;
    if config.experiments.is_empty() && config.confidence.is_empty() {
        return Err(Failure::Validation("no experiments or confidence checks requested".into()));
    }
    if let Some(seed) = args.seed {
        for e in &mut config.experiments {
            e.config.master_seed = seed;
        }
        for c in &mut config.confidence {
            c.master_seed = seed;
        }
    }
    for e in &config.experiments {
        e.config.validate().map_err(|err| Failure::Validation(format!("experiment `{}`: {err}", e.label)))?;
    }
    prepare_out(&args.out)?;
    write_resolved(&args.out, &config)?;

    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for e in &config.experiments {
        let r = estimate_infeasibility(&e.config, args.jobs)?;
        let bounds: Vec<String> = r.bounds.iter().map(|b| format!("{}={:.6e}", b.bound, b.value.clamped)).collect();
        println!(
            "{}: N = {}, frequency = {} ({}/{}), 95% Wilson [{:.6}, {:.6}], bounds {} -> {}",
            e.label,
            r.n_samples,
            r.frequency,
            r.bad_trials,
            r.trials,
            r.interval.low,
            r.interval.high,
            bounds.join(", "),
            if r.passed() { "ok" } else { "VIOLATED" }
        );
        if !r.passed() {
            failures.push(e.label.clone());
        }
        rows.push((e.label.clone(), r));
    }
    if !rows.is_empty() {
        let mut w = create(&args.out, "estimates.csv")?;
        write_estimates_csv(&mut w, &rows)?;
        w.flush()?;
    }

    let mut reports = Vec::new();
    for (i, c) in config.confidence.iter().enumerate() {
        let r = verify_confidence(c, args.jobs)?;
        match (&r.n_samples, &r.estimate) {
            (Some(n), Some(e)) => println!(
                "confidence[{i}]: N = {n}, frequency = {} vs delta = {} -> {}",
                e.frequency,
                c.delta,
                if r.passed { "ok" } else { "VIOLATED" }
            ),
            _ => println!("confidence[{i}]: delta >= 1, guarantee is vacuous -> ok"),
        }
        if !r.passed {
            failures.push(format!("confidence[{i}]"));
        }
        reports.push(r);
    }
    if !reports.is_empty() {
        let mut w = create(&args.out, "confidence.csv")?;
        write_confidence_csv(&mut w, &reports)?;
        w.flush()?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::BoundCheck(failures.join(", ")))
    }
}

fn run_sample_size(args: &CommonArgs) -> Outcome<()> {
    let c: SampleSizeConfig = read_config(&args.config)?;
    check_version(c.version)?;
    let n = min_sample_size(c.card_x, c.delta, c.epsilon, c.alpha, c.theta)?;
    println!("{n}");
    Ok(())
}

fn run_sweep(args: &CommonArgs) -> Outcome<()> {
    let c: SweepConfig = read_config(&args.config)?;
    check_version(c.version)?;
    let table = sweep_bound_comparison(&c.params)?;
    prepare_out(&args.out)?;
    write_resolved(&args.out, &c)?;
    write_sweep(&args.out, &table)?;
    print_sweep_summary(&table);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Bounds(a) => run_bounds(a),
        Command::Simulate(a) => run_simulate(a),
        Command::SampleSize(a) => run_sample_size(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("saa: {f}");
            ExitCode::from(f.code())
        }
    }
}
