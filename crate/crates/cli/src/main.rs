//! `relmean` command-line interface. Every successful run prints a single
//! JSON object (keys sorted) on stdout; diagnostics go to stderr.
//!
//! Exit codes: 0 on success, 2 on argument or input errors, 1 when a run
//! fails at runtime.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use relmean_core::counting::{
    eps_prime, gibbs_estimate, linext_approx_count, linext_count_exact,
    lognormal_sigma_for_relvar, Poset,
};
use relmean_core::harness::{self, EstimatorKind};
use relmean_core::sources::Scaled;
use relmean_core::{
    estimate_mean, lower_bound_samples, stage1_params, stage2_params, theorem1_total, ApproxSpec,
    CoverageConfig, Distribution, Error, Mode, SampleSource, StagePlan, RNG_ALGORITHM, VERSION,
};

const DIST_HELP: &str = "\
Distributions (--dist) use NAME:PARAM,PARAM:
  constant:V          every draw equals V
  normal:MEAN,SD      normal distribution
  lognormal:S         exp(S Z), Z standard normal
  bernoulli:P[,SCALE] SCALE with probability P, else 0
  pareto:A            Pareto on [1, inf) with tail index A
  recorded:PATH       replay a file with one value per line";

#[derive(Debug, Parser)]
#[command(name = "relmean", version, about = "Mean estimation with a relative (epsilon, delta) guarantee", after_help = DIST_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-stage estimator once on a seeded source.
    Estimate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        dist: String,
    },
    /// Sample counts for both stages and the total.
    Samplesize {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Lower bound on the draws any method needs.
    Lowerbound {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Repeat one estimator and count failures against the true mean.
    Coverage {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        dist: String,
        #[arg(long, default_value_t = 1000)]
        reps: u64,
        /// two_stage, median_of_means or naive_mean
        #[arg(long, default_value = "two_stage", value_parser = parse_estimator)]
        estimator: EstimatorKind,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage of all three estimators at a shared draw budget.
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        dist: String,
        #[arg(long, default_value_t = 1000)]
        reps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Approximate the number of linear extensions of a small poset.
    Linext {
        #[command(flatten)]
        common: CommonArgs,
        /// First line n, then `i j` per line meaning i precedes j (1-based).
        #[arg(long)]
        poset: PathBuf,
        /// Membership draws per level [default: n(n-1)].
        #[arg(long)]
        m_per_level: Option<u64>,
    },
    /// Ratio estimate from two synthetic lognormal streams.
    Gibbs {
        #[command(flatten)]
        common: CommonArgs,
        /// Relative variance of both streams.
        #[arg(long, default_value_t = 2.0 * std::f64::consts::E)]
        relvar: f64,
        /// True ratio E[W]/E[V].
        #[arg(long, default_value_t = 2.0)]
        ratio: f64,
    },
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// paper or strict
    #[arg(long, default_value = "strict", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct SpecArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Bound on the relative standard deviation sigma/mu.
    #[arg(long)]
    c: f64,
}

impl SpecArgs {
    fn spec(&self) -> Result<ApproxSpec, CliError> {
        ApproxSpec::new(self.common.epsilon, self.common.delta, self.c).map_err(CliError::from)
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn envelope(command: &str, spec: Value, mode: Mode, seed: u64) -> Value {
    json!({
        "command": command,
        "spec": spec,
        "mode": mode.as_str(),
        "seed": seed,
        "version": VERSION,
        "rng": RNG_ALGORITHM,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn write_reports(reports: &[relmean_core::CoverageReport], out: Option<&PathBuf>) -> Result<(), CliError> {
    if let Some(path) = out {
        harness::write_csv(reports, path)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Estimate { spec, dist } => {
            let s = spec.spec()?;
            let dist = Distribution::parse(&dist)?;
            let mut src = SampleSource::new(dist.clone(), spec.common.seed)?;
            let report = estimate_mean(&mut src, &s, spec.common.mode)?;
            Ok(merge(
                envelope("estimate", json!(s), spec.common.mode, spec.common.seed),
                json!({
                    "distribution": dist.to_string(),
                    "mu_hat": report.mu_hat,
                    "mu1": report.mu1,
                    "stage1_median": report.stage1_median,
                    "alpha": report.alpha.alpha(),
                    "samples_stage1": report.samples_stage1,
                    "samples_stage2": report.samples_stage2,
                    "total_samples": report.total_samples,
                    "plan": report.plan,
                }),
            ))
        }
        Command::Samplesize { spec } => {
            let s = spec.spec()?;
            let mode = spec.common.mode;
            let p1 = stage1_params(&s, mode)?;
            let plan = StagePlan::new(&s, mode)?;
            Ok(merge(
                envelope("samplesize", json!(s), mode, spec.common.seed),
                json!({
                    "total": theorem1_total(&s)?,
                    "plan_total": plan.total_samples(),
                    "stage2_n": stage2_params(&s)?,
                    "epsilon1": p1.epsilon1,
                    "k": p1.k,
                    "m": p1.m,
                }),
            ))
        }
        Command::Lowerbound { spec } => {
            let s = spec.spec()?;
            Ok(merge(
                envelope("lowerbound", json!(s), spec.common.mode, spec.common.seed),
                json!({
                    "lower_bound": lower_bound_samples(&s)?,
                    "upper_total": theorem1_total(&s)?,
                }),
            ))
        }
        Command::Coverage { spec, dist, reps, estimator, out } => {
            let s = spec.spec()?;
            let config = CoverageConfig {
                spec: s,
                distribution: Distribution::parse(&dist)?,
                replications: reps,
                seed: spec.common.seed,
                mode: spec.common.mode,
                estimator,
            };
            let report = relmean_core::run_coverage(&config)?;
            write_reports(std::slice::from_ref(&report), out.as_ref())?;
            Ok(merge(
                envelope("coverage", json!(s), spec.common.mode, spec.common.seed),
                json!({ "report": report }),
            ))
        }
        Command::Compare { spec, dist, reps, out } => {
            let s = spec.spec()?;
            let dist = Distribution::parse(&dist)?;
            let reports =
                relmean_core::compare_estimators(&s, &dist, reps, spec.common.seed, spec.common.mode)?;
            write_reports(&reports, out.as_ref())?;
            Ok(merge(
                envelope("compare", json!(s), spec.common.mode, spec.common.seed),
                json!({ "reports": reports }),
            ))
        }
        Command::Linext { common, poset, m_per_level } => {
            let p = Poset::load(&poset)
                .map_err(|e| CliError::Usage(format!("{}: {e}", poset.display())))?;
            let n = p.len() as u64;
            let m = m_per_level.unwrap_or((n * n.saturating_sub(1)).max(1));
            // validates epsilon and delta before the run
            ApproxSpec::new(common.epsilon, common.delta, 1.0)?;
            let est = linext_approx_count(&p, common.epsilon, common.delta, m, common.seed)?;
            let spec = json!({
                "epsilon": common.epsilon,
                "delta": common.delta,
                "c": est.c_squared.sqrt(),
            });
            Ok(merge(
                envelope("linext", spec, Mode::Strict, common.seed),
                json!({
                    "elements": n,
                    "estimate": est.estimate,
                    "exact": linext_count_exact(&p)?,
                    "ratio_estimate": est.ratio_estimate,
                    "ratio_epsilon": est.ratio_epsilon,
                    "c_squared": est.c_squared,
                    "m_per_level": est.m_per_level,
                    "levels": est.levels,
                    "membership_draws": est.membership_draws,
                }),
            ))
        }
        Command::Gibbs { common, relvar, ratio } => {
            if !(relvar > 0.0 && relvar.is_finite()) || !(ratio > 0.0 && ratio.is_finite()) {
                return Err(CliError::Usage("--relvar and --ratio must be positive".into()));
            }
            let c = relvar.sqrt();
            ApproxSpec::new(common.epsilon, common.delta, c)?;
            let ep = eps_prime(common.epsilon)?;
            let dist = Distribution::LogNormal {
                sigma: lognormal_sigma_for_relvar(relvar),
            };
            let mut w = Scaled::new(SampleSource::replicate(dist.clone(), common.seed, 0)?, ratio);
            let mut v = SampleSource::replicate(dist, common.seed, 1)?;
            let g = gibbs_estimate(&mut w, &mut v, common.epsilon, common.delta, c, common.mode)?;
            let spec = json!({ "epsilon": common.epsilon, "delta": common.delta, "c": c });
            Ok(merge(
                envelope("gibbs", spec, common.mode, common.seed),
                json!({
                    "estimate": g.estimate,
                    "true_ratio": ratio,
                    "epsilon_prime": ep,
                    "mu_w": g.w.mu_hat,
                    "mu_v": g.v.mu_hat,
                    "relvar": relvar,
                    "total_samples": g.w.total_samples + g.v.total_samples,
                }),
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
