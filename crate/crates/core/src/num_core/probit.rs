//! Standard normal CDF/PDF and the tail-safe log-CDF used by the probit
//! likelihood.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Φ(z).
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// φ(z).
#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// log Φ(z), accurate in both tails.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 0.0 {
        // Φ(z) = 1 − Φ(−z); log1p keeps precision as Φ(−z) → 0.
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z > -30.0 {
        (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv
            + 105.0 * inv * inv * inv * inv;
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// φ(z)/Φ(z), the derivative of log Φ.
#[inline]
pub fn inv_mills(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_ndtr(z)).exp()
}

/// Probit link: returns (Φ(z), φ(z)).
pub fn probit_link(z: f64) -> Result<(f64, f64)> {
    if !z.is_finite() {
        return Err(Error::invalid(format!("probit_link needs finite input, got {z}")));
    }
    Ok((norm_cdf(z), norm_pdf(z)))
}
