//! The two-stage estimator and its sample-count formulas.
//!
//! Stage one runs median-of-means at the coarse accuracy
//! `epsilon1 = sqrt(epsilon * c² / (1 + c²))` and divides the result by
//! `1 - epsilon1²`. Stage two averages `mu1 + psi(alpha (X - mu1)) / alpha`
//! over fresh draws, with `alpha = epsilon / (c² mu1)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::psi::{scaled_psi, TruncationScale};
use crate::sources::SampleStream;

/// Requested relative accuracy `epsilon`, failure probability `delta`
/// and the known bound `c` on the relative standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub c: f64,
}

impl ApproxSpec {
    pub fn new(epsilon: f64, delta: f64, c: f64) -> Result<Self> {
        let spec = Self { epsilon, delta, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "c must be positive and finite, got {}",
                self.c
            )));
        }
        Ok(())
    }

    #[inline]
    fn c_sq(&self) -> f64 {
        self.c * self.c
    }
}

/// How the failure budget is split between the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Stage-one group count computed from `delta`, reproducing the
    /// published total sample counts.
    #[serde(rename = "paper")]
    PaperExact,
    /// Stage-one group count computed from `delta / 2`, so a union bound
    /// over both stages gives total failure at most `delta`.
    #[default]
    Strict,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PaperExact => "paper",
            Mode::Strict => "strict",
        }
    }

    /// Failure budget used for the stage-one group count.
    pub fn stage1_delta(self, delta: f64) -> f64 {
        match self {
            Mode::PaperExact => delta,
            Mode::Strict => delta / 2.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Mode::PaperExact),
            "strict" => Ok(Mode::Strict),
            other => Err(Error::Parse(format!(
                "mode must be `paper` or `strict`, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stage1Params {
    pub epsilon1: f64,
    /// Draws per group.
    pub k: u64,
    /// Number of groups; always odd and at least 3.
    pub m: u64,
}

/// Every derived parameter of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagePlan {
    pub epsilon1: f64,
    pub k: u64,
    pub m: u64,
    pub n: u64,
    pub mode: Mode,
}

impl StagePlan {
    pub fn new(spec: &ApproxSpec, mode: Mode) -> Result<Self> {
        let Stage1Params { epsilon1, k, m } = stage1_params(spec, mode)?;
        Ok(Self {
            epsilon1,
            k,
            m,
            n: stage2_params(spec)?,
            mode,
        })
    }

    pub fn stage1_samples(&self) -> u64 {
        self.k * self.m
    }

    pub fn total_samples(&self) -> u64 {
        self.stage1_samples() + self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    /// Bias-corrected stage-one estimate.
    pub mu1: f64,
    /// Raw median of the stage-one group means.
    pub stage1_median: f64,
    pub alpha: TruncationScale,
    pub mu_hat: f64,
    pub samples_stage1: u64,
    pub samples_stage2: u64,
    pub total_samples: u64,
    pub plan: StagePlan,
}

/// `ceil(ln(7 / (48 sqrt(pi) d)) / ln(16/7))`, clamped below at 1 so the
/// median always sees at least three groups.
fn half_group_count(d: f64) -> u64 {
    let ratio = (7.0 / (48.0 * PI.sqrt() * d)).ln() / (16.0f64 / 7.0).ln();
    (ratio.ceil() as u64).max(1)
}

fn group_size(spec: &ApproxSpec) -> u64 {
    // 8c²/epsilon1² simplifies to 8(1 + c²)/epsilon; the simplified form
    // avoids round-off pushing an exact integer over the ceiling.
    (8.0 * (1.0 + spec.c_sq()) / spec.epsilon).ceil() as u64
}

pub fn stage1_params(spec: &ApproxSpec, mode: Mode) -> Result<Stage1Params> {
    spec.validate()?;
    let c_sq = spec.c_sq();
    Ok(Stage1Params {
        epsilon1: (spec.epsilon * c_sq / (1.0 + c_sq)).sqrt(),
        k: group_size(spec),
        m: 2 * half_group_count(mode.stage1_delta(spec.delta)) + 1,
    })
}

/// Stage-two draw count `ceil(2 c² epsilon⁻² ln(4/delta) / (1 - epsilon))`.
pub fn stage2_params(spec: &ApproxSpec) -> Result<u64> {
    spec.validate()?;
    let raw = 2.0 * spec.c_sq() * (4.0 / spec.delta).ln()
        / (spec.epsilon * spec.epsilon * (1.0 - spec.epsilon));
    Ok(raw.ceil() as u64)
}

/// Total draws of the two-stage method with the stage-one group count
/// taken from `delta` (the published count).
pub fn theorem1_total(spec: &ApproxSpec) -> Result<u64> {
    let stage2 = stage2_params(spec)?;
    Ok(stage2 + group_size(spec) * (2 * half_group_count(spec.delta) + 1))
}

/// Failure bound for the median of `2r + 1` i.i.d. estimates, each outside
/// the target interval with probability at most `nu_sq`.
pub fn mom_failure_bound(nu_sq: f64, r: u64) -> Result<f64> {
    if !(nu_sq > 0.0 && nu_sq < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "nu² must lie in (0, 1/2), got {nu_sq}"
        )));
    }
    if r == 0 {
        return Err(Error::InvalidParameter("r must be at least 1".into()));
    }
    let q = nu_sq * (1.0 - nu_sq);
    let r = r as f64;
    Ok(q / ((PI * r).sqrt() * (1.0 - 2.0 * nu_sq)) * (r * (4.0 * q).ln()).exp())
}

/// Median of `m` consecutive group means of `k` draws each.
pub fn median_of_means<S: SampleStream + ?Sized>(source: &mut S, k: u64, m: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("group size k must be at least 1".into()));
    }
    if m.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "group count m must be odd, got {m}"
        )));
    }
    let mut means = Vec::with_capacity(m as usize);
    for _ in 0..m {
        let mut sum = 0.0;
        for _ in 0..k {
            sum += source.next_sample()?;
        }
        means.push(sum / k as f64);
    }
    Ok(median_odd(&mut means))
}

/// Middle order statistic of an odd-length slice.
pub(crate) fn median_odd(values: &mut [f64]) -> f64 {
    debug_assert!(values.len() % 2 == 1);
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, f64::total_cmp).1
}

fn stage1_inner<S: SampleStream + ?Sized>(
    source: &mut S,
    plan: &StagePlan,
) -> Result<(f64, f64)> {
    let median = median_of_means(source, plan.k, plan.m)?;
    let mu1 = median / (1.0 - plan.epsilon1 * plan.epsilon1);
    if !(mu1 > 0.0) {
        return Err(Error::NonPositiveEstimate(mu1));
    }
    Ok((median, mu1))
}

/// Bias-corrected median-of-means estimate `mu1`.
pub fn stage1_estimate<S: SampleStream + ?Sized>(
    source: &mut S,
    spec: &ApproxSpec,
    mode: Mode,
) -> Result<f64> {
    let plan = StagePlan::new(spec, mode)?;
    stage1_inner(source, &plan).map(|(_, mu1)| mu1)
}

fn stage2_inner<S: SampleStream + ?Sized>(
    source: &mut S,
    mu1: f64,
    spec: &ApproxSpec,
    n: u64,
) -> Result<(f64, TruncationScale)> {
    if !(mu1 > 0.0 && mu1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "stage-two centre must be positive, got {mu1}"
        )));
    }
    let alpha = TruncationScale::new(spec.epsilon / (spec.c_sq() * mu1))?;
    let mut sum = 0.0;
    for _ in 0..n {
        let x = source.next_sample()?;
        sum += mu1 + scaled_psi(alpha, x - mu1);
    }
    Ok((sum / n as f64, alpha))
}

/// Average of the truncated draws around `mu1`; returns `(mu_hat, alpha)`.
pub fn stage2_estimate<S: SampleStream + ?Sized>(
    source: &mut S,
    mu1: f64,
    spec: &ApproxSpec,
) -> Result<(f64, TruncationScale)> {
    let n = stage2_params(spec)?;
    stage2_inner(source, mu1, spec, n)
}

/// Runs both stages on consecutive, disjoint stretches of `source`.
pub fn estimate_mean<S: SampleStream + ?Sized>(
    source: &mut S,
    spec: &ApproxSpec,
    mode: Mode,
) -> Result<EstimateReport> {
    let plan = StagePlan::new(spec, mode)?;
    let (stage1_median, mu1) = stage1_inner(source, &plan)?;
    let (mu_hat, alpha) = stage2_inner(source, mu1, spec, plan.n)?;
    Ok(EstimateReport {
        mu1,
        stage1_median,
        alpha,
        mu_hat,
        samples_stage1: plan.stage1_samples(),
        samples_stage2: plan.n,
        total_samples: plan.total_samples(),
        plan,
    })
}

/// Lower bound on the draws any (epsilon, delta) method needs when the
/// relative standard deviation equals `c`. Requires
/// `delta < 1/sqrt(2 pi)`; the result may be fractional or negative.
pub fn lower_bound_samples(spec: &ApproxSpec) -> Result<f64> {
    spec.validate()?;
    let l = (1.0 / ((2.0 * PI).sqrt() * spec.delta)).ln();
    if !(l > 0.0) {
        return Err(Error::Domain(format!(
            "delta must be below 1/sqrt(2 pi) = {:.6}, got {}",
            1.0 / (2.0 * PI).sqrt(),
            spec.delta
        )));
    }
    let correction = ((2.0 * l + 1.0) / (2.0 * l).sqrt()).ln();
    Ok(2.0 * spec.c_sq() / (spec.epsilon * spec.epsilon) * (l - correction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{Distribution, FromFn, SampleSource};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(e: f64, d: f64, c: f64) -> ApproxSpec {
        ApproxSpec::new(e, d, c).unwrap()
    }

    fn recorded(values: Vec<f64>) -> SampleSource {
        SampleSource::new(Distribution::Recorded(values.into()), 0).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ApproxSpec::new(0.0, 0.1, 1.0).is_err());
        assert!(ApproxSpec::new(1.0, 0.1, 1.0).is_err());
        assert!(ApproxSpec::new(0.1, 0.0, 1.0).is_err());
        assert!(ApproxSpec::new(0.1, 1.0, 1.0).is_err());
        assert!(ApproxSpec::new(0.1, 0.1, 0.0).is_err());
        assert!(ApproxSpec::new(0.1, 0.1, f64::INFINITY).is_err());
        assert!(ApproxSpec::new(f64::NAN, 0.1, 1.0).is_err());
    }

    #[test]
    fn mode_strings() {
        assert_eq!("paper".parse::<Mode>().unwrap(), Mode::PaperExact);
        assert_eq!("strict".parse::<Mode>().unwrap(), Mode::Strict);
        assert!("loose".parse::<Mode>().is_err());
        assert_eq!(Mode::default(), Mode::Strict);
    }

    #[test]
    fn stage1_examples() {
        let s = spec(0.1, 0.05, 1.0);
        let p = stage1_params(&s, Mode::PaperExact).unwrap();
        assert_relative_eq!(p.epsilon1, 0.223_606_797_749_978_97, max_relative = 1e-12);
        assert_eq!((p.k, p.m), (160, 3));
        let p = stage1_params(&s, Mode::Strict).unwrap();
        assert_eq!((p.k, p.m), (160, 5));
    }

    #[test]
    fn large_delta_clamps_group_count() {
        // ln(7/(48 sqrt(pi) 0.1))/ln(16/7) = -0.236, clamped to 1
        let p = stage1_params(&spec(0.2, 0.1, 1.0), Mode::PaperExact).unwrap();
        assert_eq!((p.k, p.m), (80, 3));
        let p = stage1_params(&spec(0.2, 0.9, 1.0), Mode::Strict).unwrap();
        assert_eq!(p.m, 3);
    }

    #[test]
    fn stage2_examples() {
        assert_eq!(stage2_params(&spec(0.1, 0.05, 1.0)).unwrap(), 974);
        assert_eq!(stage2_params(&spec(0.2, 0.1, 1.0)).unwrap(), 231);
    }

    #[test]
    fn theorem1_examples() {
        assert_eq!(theorem1_total(&spec(0.1, 0.05, 1.0)).unwrap(), 1454);
        assert_eq!(theorem1_total(&spec(0.2, 0.1, 1.0)).unwrap(), 471);
    }

    #[test]
    fn mom_bound_examples() {
        // mpmath, 40 digits
        assert_relative_eq!(
            mom_failure_bound(0.125, 1).unwrap(),
            0.035_996_470_825_312_576,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            mom_failure_bound(0.125, 2).unwrap(),
            0.011_135_840_020_970_981,
            max_relative = 1e-12
        );
        assert!(mom_failure_bound(0.5, 1).is_err());
        assert!(mom_failure_bound(0.0, 1).is_err());
        assert!(mom_failure_bound(0.1, 0).is_err());
    }

    /// Exact probability that the median of `2r + 1` draws lands in a tail of mass `q`.
    fn median_tail(q: f64, r: u64) -> f64 {
        let n = 2 * r + 1;
        let mut binom = 1.0;
        let mut total = 0.0;
        for j in 0..=n {
            if j > r {
                total += binom * q.powi(j as i32) * (1.0 - q).powi((n - j) as i32);
            }
            binom = binom * (n - j) as f64 / (j + 1) as f64;
        }
        total
    }

    #[test]
    fn median_bound_covers_split_mass_only() {
        // outside mass split evenly: the bound holds
        for r in 1..=6 {
            let two_sided = 2.0 * median_tail(0.0625, r);
            assert!(two_sided <= mom_failure_bound(0.125, r).unwrap(), "r {r}");
        }
        // all outside mass on one side: the bound is exceeded
        assert_relative_eq!(median_tail(0.125, 1), 22.0 / 512.0, max_relative = 1e-14);
        assert!(median_tail(0.125, 1) > mom_failure_bound(0.125, 1).unwrap());
        assert!(median_tail(1.0 / 9.0, 2) > mom_failure_bound(1.0 / 9.0, 2).unwrap());
        assert!(median_tail(1.0 / 9.0, 3) > mom_failure_bound(1.0 / 9.0, 3).unwrap());
    }

    #[test]
    fn mom_bound_decreasing_in_r() {
        for &nu_sq in &[0.01, 0.125, 0.25, 0.49] {
            let mut prev = f64::INFINITY;
            for r in 1..60 {
                let b = mom_failure_bound(nu_sq, r).unwrap();
                assert!(b < prev, "nu² {nu_sq}, r {r}");
                prev = b;
            }
        }
    }

    #[test]
    fn median_of_means_degenerate() {
        let mut s = SampleSource::new(Distribution::Constant(5.0), 0).unwrap();
        assert_eq!(median_of_means(&mut s, 7, 3).unwrap(), 5.0);
        let mut alt = recorded([0.0, 2.0].repeat(3));
        assert_eq!(median_of_means(&mut alt, 2, 3).unwrap(), 1.0);
        assert!(matches!(
            median_of_means(&mut recorded(vec![1.0; 5]), 2, 3),
            Err(Error::InsufficientSamples { consumed: 5 })
        ));
        assert!(median_of_means(&mut recorded(vec![1.0; 8]), 2, 4).is_err());
    }

    #[test]
    fn median_of_means_matches_straightforward_recomputation() {
        let d = Distribution::Normal { mean: 10.0, sd: 2.0 };
        let got = median_of_means(&mut SampleSource::new(d.clone(), 11).unwrap(), 100, 5).unwrap();

        let mut replay = SampleSource::new(d, 11).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| replay.next_sample().unwrap()).collect();
        let mut means: Vec<f64> = xs.chunks(100).map(|g| g.iter().sum::<f64>() / 100.0).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, means[2]);
        assert!((9.0..=11.0).contains(&got));
    }

    #[test]
    fn stage1_examples_constant() {
        let s = spec(0.1, 0.05, 1.0);
        let mut src = SampleSource::new(Distribution::Constant(5.0), 0).unwrap();
        let mu1 = stage1_estimate(&mut src, &s, Mode::Strict).unwrap();
        assert_relative_eq!(mu1, 5.0 / 0.95, max_relative = 1e-12);

        for &eps in &[0.05, 0.3, 0.9] {
            for &c in &[0.5, 1.0, 3.0] {
                let s = spec(eps, 0.1, c);
                let e1 = stage1_params(&s, Mode::Strict).unwrap().epsilon1;
                let mut one = SampleSource::new(Distribution::Constant(1.0), 0).unwrap();
                let mu1 = stage1_estimate(&mut one, &s, Mode::Strict).unwrap();
                assert_relative_eq!(mu1, 1.0 / (1.0 - e1 * e1), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn stage1_lognormal_matches_replay() {
        let s = spec(0.1, 0.05, 1.0);
        let d = Distribution::LogNormal { sigma: 0.8 };
        let mu1 = stage1_estimate(&mut SampleSource::new(d.clone(), 5).unwrap(), &s, Mode::Strict).unwrap();

        let p = stage1_params(&s, Mode::Strict).unwrap();
        let mut replay = SampleSource::new(d, 5).unwrap();
        let mut means: Vec<f64> = (0..p.m)
            .map(|_| (0..p.k).map(|_| replay.next_sample().unwrap()).sum::<f64>() / p.k as f64)
            .collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = means[means.len() / 2] / (1.0 - p.epsilon1 * p.epsilon1);
        assert_eq!(mu1, expected);
    }

    #[test]
    fn stage1_rejects_nonpositive() {
        let s = spec(0.1, 0.05, 1.0);
        let mut src = SampleSource::new(Distribution::Constant(-1.0), 0).unwrap();
        assert!(matches!(
            stage1_estimate(&mut src, &s, Mode::Strict),
            Err(Error::NonPositiveEstimate(_))
        ));
        let mut zero = SampleSource::new(Distribution::Constant(0.0), 0).unwrap();
        assert!(matches!(
            estimate_mean(&mut zero, &s, Mode::Strict),
            Err(Error::NonPositiveEstimate(_))
        ));
    }

    #[test]
    fn stage2_fixed_points() {
        let s = spec(0.1, 0.05, 1.0);
        let mut src = SampleSource::new(Distribution::Constant(3.0), 0).unwrap();
        let (mu_hat, alpha) = stage2_estimate(&mut src, 3.0, &s).unwrap();
        assert_eq!(mu_hat, 3.0);
        assert_relative_eq!(alpha.alpha(), 0.1 / 3.0);
        assert!(stage2_estimate(&mut src, 0.0, &s).is_err());
        assert!(stage2_estimate(&mut src, -2.0, &s).is_err());
    }

    #[test]
    fn stage2_single_draw_weight() {
        // epsilon / (c² mu1) = 1 with mu1 = 1 needs epsilon = c², so every
        // draw equals 2 and the average is the single weight 1 + psi(1).
        let s = spec(0.25, 0.05, 0.5);
        let mut src = SampleSource::new(Distribution::Constant(2.0), 0).unwrap();
        let (mu_hat, alpha) = stage2_estimate(&mut src, 1.0, &s).unwrap();
        assert_eq!(alpha.alpha(), 1.0);
        assert_relative_eq!(mu_hat, 1.916_290_731_874_155, max_relative = 1e-14);
    }

    #[test]
    fn stage2_weights_increase_with_draw() {
        let s = spec(0.2, 0.1, 1.0);
        let n = stage2_params(&s).unwrap() as usize;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = -50.0 + i as f64 * 0.5;
            let mut src = recorded(vec![x; n]);
            let (w, _) = stage2_estimate(&mut src, 2.0, &s).unwrap();
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn constant_source_meets_accuracy() {
        for &mu0 in &[0.001, 1.0, 5.0, 1e6] {
            for &eps in &[0.01, 0.1, 0.5, 0.9] {
                let s = spec(eps, 0.05, 1.0);
                let mut src = SampleSource::new(Distribution::Constant(mu0), 0).unwrap();
                let r = estimate_mean(&mut src, &s, Mode::Strict).unwrap();
                assert!((r.mu_hat - mu0).abs() <= eps * mu0, "mu0 {mu0} eps {eps}");
            }
        }
    }

    #[test]
    fn report_bookkeeping() {
        let s = spec(0.1, 0.05, 1.0);
        let d = Distribution::Normal { mean: 10.0, sd: 3.0 };
        let mut src = SampleSource::new(d, 1).unwrap();
        let r = estimate_mean(&mut src, &s, Mode::PaperExact).unwrap();
        assert_eq!(r.total_samples, r.samples_stage1 + r.samples_stage2);
        assert_eq!(r.total_samples, theorem1_total(&s).unwrap());
        assert_eq!(src.position() as u64, r.total_samples);
        assert_relative_eq!(r.alpha.alpha(), 0.1 / r.mu1, max_relative = 1e-15);
    }

    #[test]
    fn stages_use_disjoint_draws() {
        // Stage one sees only the first k*m values; the stage-two values
        // are distinguishable so reuse would change the answer.
        let s = spec(0.5, 0.5, 1.0);
        let plan = StagePlan::new(&s, Mode::Strict).unwrap();
        let mut values = vec![4.0; plan.stage1_samples() as usize];
        values.extend(vec![2.0; plan.n as usize]);
        let r = estimate_mean(&mut recorded(values), &s, Mode::Strict).unwrap();
        assert_eq!(r.stage1_median, 4.0);
        assert!(r.mu_hat < r.mu1);
    }

    #[test]
    fn deterministic_reports() {
        let s = spec(0.1, 0.05, 1.0);
        let d = Distribution::Pareto { shape: 2.5 };
        let a = estimate_mean(&mut SampleSource::new(d.clone(), 3).unwrap(), &s, Mode::Strict).unwrap();
        let b = estimate_mean(&mut SampleSource::new(d, 3).unwrap(), &s, Mode::Strict).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mu_hat.to_bits(), b.mu_hat.to_bits());
    }

    #[test]
    fn exhausted_stream_propagates() {
        let s = spec(0.1, 0.05, 1.0);
        let mut calls = 0;
        let mut src = FromFn(|| {
            calls += 1;
            if calls > 500 {
                Err(Error::InsufficientSamples { consumed: 500 })
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(
            estimate_mean(&mut src, &s, Mode::Strict),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn lower_bound_example() {
        // mpmath, 40 digits
        let lb = lower_bound_samples(&spec(0.1, 0.05, 1.0)).unwrap();
        assert_relative_eq!(lb, 229.817_375_398_187_98, max_relative = 1e-9);
        assert!(matches!(
            lower_bound_samples(&spec(0.1, 0.4, 1.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn lower_bound_scales_with_c_over_epsilon() {
        let base = lower_bound_samples(&spec(0.1, 0.01, 1.0)).unwrap();
        for &(e, c) in &[(0.05, 1.0), (0.1, 3.0), (0.2, 0.5), (0.01, 10.0)] {
            let lb = lower_bound_samples(&spec(e, 0.01, c)).unwrap();
            assert_relative_eq!(lb, base * (c * c / (e * e)) / 100.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn stage2_halving_epsilon() {
        for &e in &[0.05, 0.2, 0.6] {
            for &(d, c) in &[(0.05f64, 1.0), (1e-4, 2.5)] {
                let raw = |e: f64| 2.0 * c * c * (4.0 / d).ln() / (e * e * (1.0 - e));
                let ratio = raw(e / 2.0) / raw(e);
                assert_relative_eq!(ratio, 4.0 * (1.0 - e) / (1.0 - e / 2.0), max_relative = 1e-12);
                let n = stage2_params(&spec(e / 2.0, d, c)).unwrap();
                assert_eq!(n, raw(e / 2.0).ceil() as u64);
            }
        }
    }

    #[test]
    fn theorem1_monotone_on_grid() {
        // 1/(eps² (1 - eps)) bottoms out at eps = 2/3, so the epsilon sweep
        // stays below that; see `theorem1_grows_again_near_one`.
        let eps = [0.01, 0.05, 0.1, 0.2, 0.5, 0.6];
        let deltas = [1e-8, 1e-6, 1e-4, 1e-2, 0.05, 0.1, 0.3, 0.6];
        let cs = [0.1, 0.5, 1.0, 2.0, 10.0];
        let total = |e, d, c| theorem1_total(&spec(e, d, c)).unwrap();
        for &e in &eps {
            for &c in &cs {
                for w in deltas.windows(2) {
                    assert!(total(e, w[1], c) <= total(e, w[0], c));
                }
            }
            for &d in &deltas {
                for w in cs.windows(2) {
                    assert!(total(e, d, w[0]) <= total(e, d, w[1]));
                }
            }
        }
        for &d in &deltas {
            for &c in &cs {
                for w in eps.windows(2) {
                    assert!(total(w[1], d, c) <= total(w[0], d, c));
                }
            }
        }
    }

    #[test]
    fn theorem1_grows_again_near_one() {
        let s = |e| spec(e, 1e-3, 1.0);
        assert!(theorem1_total(&s(0.95)).unwrap() > theorem1_total(&s(0.6)).unwrap());
    }

    proptest! {
        #[test]
        fn group_size_identity(e in 1e-3f64..0.999, d in 1e-9f64..0.999, c in 1e-2f64..50.0) {
            let s = spec(e, d, c);
            let p = stage1_params(&s, Mode::Strict).unwrap();
            prop_assert_eq!(p.k, (8.0 * (1.0 + c * c) / e).ceil() as u64);
            prop_assert!(p.k as f64 >= 8.0 * c * c / (p.epsilon1 * p.epsilon1) * (1.0 - 1e-12));
            prop_assert!(((p.epsilon1.powi(2) - e * c * c / (1.0 + c * c)) / p.epsilon1.powi(2)).abs() < 1e-12);
            prop_assert!(p.epsilon1 < 1.0);
            prop_assert!(p.m % 2 == 1 && p.m >= 3);
            prop_assert!(stage1_params(&s, Mode::PaperExact).unwrap().m <= p.m);
        }

        #[test]
        fn theorem1_is_paper_plan_total(e in 1e-3f64..0.999, d in 1e-9f64..0.999, c in 1e-2f64..50.0) {
            let s = spec(e, d, c);
            let plan = StagePlan::new(&s, Mode::PaperExact).unwrap();
            prop_assert_eq!(theorem1_total(&s).unwrap(), plan.total_samples());
        }

        #[test]
        fn scale_equivariance(seed in any::<u64>(), lambda in 1e-3f64..1e3) {
            let s = spec(0.2, 0.1, 1.0);
            let d = Distribution::LogNormal { sigma: 0.7 };
            let base = estimate_mean(&mut SampleSource::new(d.clone(), seed).unwrap(), &s, Mode::Strict).unwrap();
            let mut scaled = crate::sources::Scaled::new(SampleSource::new(d, seed).unwrap(), lambda);
            let r = estimate_mean(&mut scaled, &s, Mode::Strict).unwrap();
            prop_assert!(((r.mu_hat - lambda * base.mu_hat) / (lambda * base.mu_hat)).abs() <= 1e-12);
        }
    }
}
