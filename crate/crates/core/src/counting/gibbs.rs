//! Combining two independent mean estimates into a ratio estimate, as
//! used for partition-function ratios `Z(beta)/Z(0) = E[W]/E[V]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate_mean, ApproxSpec, EstimateReport, Mode};
use crate::sources::SampleStream;

/// Per-estimate accuracy `(sqrt(1 + epsilon²) - 1) / epsilon`.
pub fn eps_prime(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    // same value as (sqrt(1 + e²) - 1)/e without the cancellation
    Ok(epsilon / (1.0 + epsilon.hypot(1.0)))
}

/// `(mu_w / mu_v) / sqrt(1 + epsilon²)`.
///
/// When both inputs are within `eps_prime(epsilon)` relative error of
/// their targets the result is within `epsilon` of `E[W]/E[V]`.
pub fn gibbs_combine(mu_w: f64, mu_v: f64, epsilon: f64) -> Result<f64> {
    if !(mu_w > 0.0 && mu_w.is_finite() && mu_v > 0.0 && mu_v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "both estimates must be positive, got ({mu_w}, {mu_v})"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    Ok(mu_w / mu_v / epsilon.hypot(1.0))
}

/// `sigma` such that `exp(sigma Z)` has relative variance `relvar`.
pub fn lognormal_sigma_for_relvar(relvar: f64) -> f64 {
    relvar.ln_1p().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsEstimate {
    pub estimate: f64,
    pub epsilon_prime: f64,
    pub w: EstimateReport,
    pub v: EstimateReport,
}

/// Estimates `E[W]` and `E[V]` each at accuracy `eps_prime(epsilon)` and
/// failure `delta / 2`, then combines them.
pub fn gibbs_estimate<W, V>(
    w: &mut W,
    v: &mut V,
    epsilon: f64,
    delta: f64,
    c: f64,
    mode: Mode,
) -> Result<GibbsEstimate>
where
    W: SampleStream + ?Sized,
    V: SampleStream + ?Sized,
{
    let epsilon_prime = eps_prime(epsilon)?;
    let spec = ApproxSpec::new(epsilon_prime, delta / 2.0, c)?;
    let w = estimate_mean(w, &spec, mode)?;
    let v = estimate_mean(v, &spec, mode)?;
    Ok(GibbsEstimate {
        estimate: gibbs_combine(w.mu_hat, v.mu_hat, epsilon)?,
        epsilon_prime,
        w,
        v,
    })
}
