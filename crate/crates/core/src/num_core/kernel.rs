use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the scaled squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Output scale σ² (variance of the latent).
    pub output_scale: f64,
    /// Lengthscale ℓ in input-space units.
    pub lengthscale: f64,
}

impl KernelParams {
    pub fn new(output_scale: f64, lengthscale: f64) -> Result<Self> {
        let params = Self {
            output_scale,
            lengthscale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "output_scale must be positive, got {}",
                self.output_scale
            )));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        Ok(())
    }

    /// Kernel value from a precomputed squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        self.output_scale * (-0.5 * sq_dist / (self.lengthscale * self.lengthscale)).exp()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// σ² · exp(−‖x − x′‖² / (2ℓ²)).
pub fn rbf_kernel(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<f64> {
    if x.is_empty() || x.len() != x_prime.len() {
        return Err(Error::invalid(format!(
            "kernel inputs must share a dimension >= 1 (got {} and {})",
            x.len(),
            x_prime.len()
        )));
    }
    Ok(params.eval_sq_dist(sq_dist(x, x_prime)))
}
