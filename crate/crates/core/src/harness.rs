//! Monte Carlo certification of the (epsilon, delta) guarantee.
//!
//! Each replication runs on its own sub-seeded stream (the replicate
//! index), so replications may run in parallel while the aggregate stays
//! a deterministic, index-ordered reduction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_mean, median_odd, stage1_params, ApproxSpec, Mode, StagePlan,
};
use crate::sources::{Distribution, SampleSource, SampleStream};

pub const MIN_REPLICATIONS: u64 = 100;

pub const CSV_HEADER: [&str; 13] = [
    "estimator",
    "distribution",
    "epsilon",
    "delta",
    "c",
    "mode",
    "R",
    "seed",
    "samples_per_run",
    "failures",
    "failure_rate",
    "binomial_3sigma",
    "mean_abs_rel_error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EstimatorKind {
    #[serde(rename = "two_stage")]
    TwoStage,
    #[serde(rename = "median_of_means")]
    MedianOfMeansOnly,
    #[serde(rename = "naive_mean")]
    NaiveMean,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::TwoStage,
        EstimatorKind::MedianOfMeansOnly,
        EstimatorKind::NaiveMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::TwoStage => "two_stage",
            EstimatorKind::MedianOfMeansOnly => "median_of_means",
            EstimatorKind::NaiveMean => "naive_mean",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_stage" | "twostage" => Ok(EstimatorKind::TwoStage),
            "median_of_means" | "mom" => Ok(EstimatorKind::MedianOfMeansOnly),
            "naive_mean" | "naive" => Ok(EstimatorKind::NaiveMean),
            other => Err(Error::Parse(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub spec: ApproxSpec,
    pub distribution: Distribution,
    pub replications: u64,
    pub seed: u64,
    pub mode: Mode,
    pub estimator: EstimatorKind,
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::Config(format!(
                "need at least {MIN_REPLICATIONS} replications, got {}",
                self.replications
            )));
        }
        let facts = self.distribution.facts()?;
        // c_bound > c voids the guarantee; allow for round-off in sqrt.
        if facts.true_relvar > self.spec.c * self.spec.c * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "distribution {} has relative sd {} above c = {}",
                self.distribution, facts.c_bound, self.spec.c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub estimator: EstimatorKind,
    pub distribution: String,
    pub spec: ApproxSpec,
    pub mode: Mode,
    pub replications: u64,
    pub seed: u64,
    pub samples_per_run: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub binomial_3sigma: f64,
    pub mean_abs_rel_error: f64,
}

/// `3 sqrt(p (1 - p) / R)`.
pub fn binomial_3sigma(p: f64, replications: u64) -> f64 {
    3.0 * (p * (1.0 - p) / replications as f64).sqrt()
}

/// Median of an odd number of group means spending exactly `budget`
/// draws: groups target `k` draws each, and the remainder is spread one
/// draw at a time over the leading groups.
pub fn median_of_means_budget<S: SampleStream + ?Sized>(
    source: &mut S,
    k: u64,
    budget: u64,
) -> Result<f64> {
    if k == 0 || budget == 0 {
        return Err(Error::InvalidParameter("group size and budget must be positive".into()));
    }
    let mut groups = (budget / k).max(1);
    if groups.is_multiple_of(2) {
        groups -= 1;
    }
    let (base, extra) = (budget / groups, budget % groups);
    let mut means = Vec::with_capacity(groups as usize);
    for g in 0..groups {
        let size = base + u64::from(g < extra);
        let mut sum = 0.0;
        for _ in 0..size {
            sum += source.next_sample()?;
        }
        means.push(sum / size as f64);
    }
    Ok(median_odd(&mut means))
}

fn sample_mean<S: SampleStream + ?Sized>(source: &mut S, n: u64) -> Result<f64> {
    let mut sum = 0.0;
    for _ in 0..n {
        sum += source.next_sample()?;
    }
    Ok(sum / n as f64)
}

/// Draw budget for one run: the two-stage plan total for the chosen mode,
/// shared by the baselines so every estimator sees the same sample count.
pub fn run_budget(spec: &ApproxSpec, mode: Mode) -> Result<u64> {
    Ok(StagePlan::new(spec, mode)?.total_samples())
}

fn single_run(config: &CoverageConfig, budget: u64, replicate: u64) -> Result<f64> {
    let mut src = SampleSource::replicate(config.distribution.clone(), config.seed, replicate)?;
    match config.estimator {
        EstimatorKind::TwoStage => Ok(estimate_mean(&mut src, &config.spec, config.mode)?.mu_hat),
        EstimatorKind::MedianOfMeansOnly => {
            // nu² = 1/8 groups at the final accuracy epsilon
            let c_sq = config.spec.c * config.spec.c;
            let k = (8.0 * c_sq / (config.spec.epsilon * config.spec.epsilon)).ceil() as u64;
            median_of_means_budget(&mut src, k.max(1), budget)
        }
        EstimatorKind::NaiveMean => sample_mean(&mut src, budget),
    }
}

struct Tally {
    failures: u64,
    abs_rel_error: f64,
}

fn tally(estimates: &[f64], mean: f64, radius: f64) -> Tally {
    let failures = estimates.iter().filter(|&&e| (e - mean).abs() > radius * mean).count() as u64;
    let abs_rel_error = estimates.iter().map(|e| ((e - mean) / mean).abs()).sum::<f64>();
    Tally {
        failures,
        abs_rel_error,
    }
}

/// Runs the configured estimator `R` times and counts failures
/// `|mu_hat - mu| > epsilon mu` against the true mean.
pub fn run_coverage(config: &CoverageConfig) -> Result<CoverageReport> {
    config.validate()?;
    let mean = config.distribution.facts()?.true_mean;
    let budget = run_budget(&config.spec, config.mode)?;
    let estimates = (0..config.replications)
        .into_par_iter()
        .map(|rep| single_run(config, budget, rep))
        .collect::<Result<Vec<f64>>>()?;
    let t = tally(&estimates, mean, config.spec.epsilon);
    let r = config.replications;
    Ok(CoverageReport {
        estimator: config.estimator,
        distribution: config.distribution.to_string(),
        spec: config.spec,
        mode: config.mode,
        replications: r,
        seed: config.seed,
        samples_per_run: budget,
        failures: t.failures,
        failure_rate: t.failures as f64 / r as f64,
        binomial_3sigma: binomial_3sigma(config.spec.delta, r),
        mean_abs_rel_error: t.abs_rel_error / r as f64,
    })
}

/// One report per estimator, all at the same per-run draw budget.
pub fn compare_estimators(
    spec: &ApproxSpec,
    distribution: &Distribution,
    replications: u64,
    seed: u64,
    mode: Mode,
) -> Result<Vec<CoverageReport>> {
    EstimatorKind::ALL
        .iter()
        .map(|&estimator| {
            run_coverage(&CoverageConfig {
                spec: *spec,
                distribution: distribution.clone(),
                replications,
                seed,
                mode,
                estimator,
            })
        })
        .collect()
}

/// Outcome of running stage one alone at its own accuracy and budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage1Coverage {
    pub epsilon1: f64,
    /// Failure budget the group count was derived from.
    pub budget: f64,
    pub replications: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub binomial_3sigma: f64,
}

/// Counts how often the raw median of means misses
/// `[mu (1 - epsilon1), mu (1 + epsilon1)]`.
pub fn stage1_coverage(
    spec: &ApproxSpec,
    distribution: &Distribution,
    replications: u64,
    seed: u64,
    mode: Mode,
) -> Result<Stage1Coverage> {
    let config = CoverageConfig {
        spec: *spec,
        distribution: distribution.clone(),
        replications,
        seed,
        mode,
        estimator: EstimatorKind::TwoStage,
    };
    config.validate()?;
    let mean = distribution.facts()?.true_mean;
    let p = stage1_params(spec, mode)?;
    let medians = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut src = SampleSource::replicate(distribution.clone(), seed, rep)?;
            crate::estimator::median_of_means(&mut src, p.k, p.m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let failures = tally(&medians, mean, p.epsilon1).failures;
    let budget = mode.stage1_delta(spec.delta);
    Ok(Stage1Coverage {
        epsilon1: p.epsilon1,
        budget,
        replications,
        failures,
        failure_rate: failures as f64 / replications as f64,
        binomial_3sigma: binomial_3sigma(budget, replications),
    })
}

/// Decimal rendering with 9 significant digits and no exponent.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    // round to 9 significant digits first so the magnitude is final
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    let magnitude = rounded.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn record(r: &CoverageReport) -> [String; 13] {
    [
        r.estimator.to_string(),
        r.distribution.clone(),
        format_sig9(r.spec.epsilon),
        format_sig9(r.spec.delta),
        format_sig9(r.spec.c),
        r.mode.to_string(),
        r.replications.to_string(),
        r.seed.to_string(),
        r.samples_per_run.to_string(),
        r.failures.to_string(),
        format_sig9(r.failure_rate),
        format_sig9(r.binomial_3sigma),
        format_sig9(r.mean_abs_rel_error),
    ]
}

pub fn write_csv_to<W: Write>(reports: &[CoverageReport], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(reports: &[CoverageReport], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(reports, std::io::BufWriter::new(file))
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or_default();
    raw.parse()
        .map_err(|_| Error::Parse(format!("column {} has bad value {raw:?}", CSV_HEADER[i])))
}

/// Reads back a file produced by [`write_csv_to`].
pub fn read_csv_from<R: std::io::Read>(input: R) -> Result<Vec<CoverageReport>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(CoverageReport {
            estimator: field(&rec, 0)?,
            distribution: rec.get(1).unwrap_or_default().to_string(),
            spec: ApproxSpec {
                epsilon: field(&rec, 2)?,
                delta: field(&rec, 3)?,
                c: field(&rec, 4)?,
            },
            mode: field(&rec, 5)?,
            replications: field(&rec, 6)?,
            seed: field(&rec, 7)?,
            samples_per_run: field(&rec, 8)?,
            failures: field(&rec, 9)?,
            failure_rate: field(&rec, 10)?,
            binomial_3sigma: field(&rec, 11)?,
            mean_abs_rel_error: field(&rec, 12)?,
        });
    }
    Ok(out)
}
