//! The truncation function used by the second stage, together with the
//! envelopes that bound it from above and below.
//!
//! `psi` is `ln(1 + u + u²/2)` for `u >= 0` and `-ln(1 - u + u²/2)` for
//! `u <= 0`: close to the identity on `[-1, 1]` and logarithmic beyond.

use crate::error::{Error, Result};

/// Positive scale `alpha` applied before truncation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize)]
#[serde(transparent)]
pub struct TruncationScale(f64);

impl TruncationScale {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidParameter(format!(
                "truncation scale must be positive and finite, got {alpha}"
            )))
        }
    }

    #[inline]
    pub fn alpha(self) -> f64 {
        self.0
    }
}

/// Upper envelope `ln(1 + u + u²/2)`.
#[inline]
pub fn psi_upper(u: f64) -> f64 {
    // 1 + u + u²/2 >= 1/2, so the increment never reaches -1.
    (u + 0.5 * u * u).ln_1p()
}

/// Lower envelope `-ln(1 - u + u²/2)`.
#[inline]
pub fn psi_lower(u: f64) -> f64 {
    -(-u + 0.5 * u * u).ln_1p()
}

#[inline]
pub fn psi(u: f64) -> f64 {
    if u >= 0.0 {
        psi_upper(u)
    } else {
        psi_lower(u)
    }
}

/// `psi(alpha * u) / alpha`; approximately `u` while `|alpha * u|` is small.
#[inline]
pub fn scaled_psi(scale: TruncationScale, u: f64) -> f64 {
    let alpha = scale.alpha();
    psi(alpha * u) / alpha
}
