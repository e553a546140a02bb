//! Mean estimation with a guaranteed relative error for random variables
//! whose relative standard deviation is bounded by a known `c`.
//!
//! [`estimate_mean`] returns `mu_hat` with `P(|mu_hat - mu| > epsilon mu) <= delta`
//! using about `2 c² epsilon⁻² ln(1/delta)` draws and no assumption beyond a
//! finite variance. The crate also carries the matching sample-count
//! formulas, a Monte Carlo harness that checks the guarantee empirically,
//! and approximate-counting applications built on the estimator.

pub mod counting;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod psi;
pub mod sources;

pub use error::{Error, Result};
pub use estimator::{
    estimate_mean, lower_bound_samples, median_of_means, mom_failure_bound, stage1_estimate,
    stage1_params, stage2_estimate, stage2_params, theorem1_total, ApproxSpec, EstimateReport,
    Mode, Stage1Params, StagePlan,
};
pub use harness::{
    compare_estimators, run_coverage, stage1_coverage, write_csv, CoverageConfig, CoverageReport,
    EstimatorKind,
};
pub use psi::{psi, psi_lower, psi_upper, scaled_psi, TruncationScale};
pub use sources::{Distribution, SampleSource, SampleStream, SourceFacts, RNG_ALGORITHM};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
