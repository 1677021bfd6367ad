//! Gauss-Hermite rules for Gaussian expectations of the Bernoulli-probit
//! log-likelihood.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};

use super::probit::{inv_mills, log_ndtr, norm_cdf};
use crate::error::{Error, Result};

pub const DEFAULT_GH_ORDER: usize = 20;

/// Nodes and weights for ∫ exp(−t²) g(t) dt, weights pre-divided by √π so
/// that `Σ wᵢ g(μ + √(2v) tᵢ)` estimates E[g(f)] for f ~ N(μ, v).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch: eigen-decomposition of the Hermite Jacobi matrix.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be >= 1"));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for i in 0..order.saturating_sub(1) {
            let b = (((i + 1) as f64) / 2.0).sqrt();
            jacobi[(i, i + 1)] = b;
            jacobi[(i + 1, i)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                // μ₀ = √π cancels against the 1/√π normalization.
                (eig.eigenvalues[k], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize to remove eigen-solver asymmetry.
        let n = pairs.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let t = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-t, w);
            pairs[j] = (t, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    /// Shared, lazily built rule for `order`.
    pub fn cached(order: usize) -> Result<Arc<GaussHermite>> {
        static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
        if let Some(rule) = cache.read().expect("quadrature cache poisoned").get(&order) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(GaussHermite::new(order)?);
        cache
            .write()
            .expect("quadrature cache poisoned")
            .insert(order, rule.clone());
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// E[g(f)] for f ~ N(mean, var).
    pub fn expectation(&self, mean: f64, var: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * g(mean + scale * t))
            .sum()
    }
}

fn check_var(var: f64) -> Result<()> {
    if var < 0.0 || !var.is_finite() {
        return Err(Error::invalid(format!("variance must be >= 0, got {var}")));
    }
    Ok(())
}

fn check_label(y: u8) -> Result<f64> {
    match y {
        0 => Ok(-1.0),
        1 => Ok(1.0),
        _ => Err(Error::invalid(format!("label must be 0 or 1, got {y}"))),
    }
}

/// E_{f~N(mean,var)}[y log Φ(f) + (1−y) log(1 − Φ(f))].
pub fn gh_expected_bernoulli_loglik(mean: f64, var: f64, y: u8, order: usize) -> Result<f64> {
    check_var(var)?;
    let sign = check_label(y)?;
    let rule = GaussHermite::cached(order)?;
    if var == 0.0 {
        return Ok(log_ndtr(sign * mean));
    }
    Ok(rule.expectation(mean, var, |f| log_ndtr(sign * f)))
}

/// Expected log-likelihood and its derivatives with respect to the Gaussian
/// mean and variance. `sign` is +1 for label 1 and −1 for label 0.
///
/// Derivatives are those of the quadrature sum itself so that training
/// gradients are exact for the objective being optimized. As v → 0 the
/// variance derivative switches to its limit ½E[ℓ''].
pub fn gh_expected_loglik_with_grad(
    mean: f64,
    var: f64,
    sign: f64,
    rule: &GaussHermite,
) -> (f64, f64, f64) {
    let scale = (2.0 * var.max(0.0)).sqrt();
    let mut value = 0.0;
    let mut d_mean = 0.0;
    let mut d2 = 0.0;
    let mut d_var = 0.0;
    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
        let z = sign * (mean + scale * t);
        let lam = inv_mills(z);
        value += w * log_ndtr(z);
        d_mean += w * sign * lam;
        d2 += w * (-lam * (z + lam));
        d_var += w * sign * lam * t;
    }
    if scale > 1e-5 {
        (value, d_mean, d_var / scale)
    } else {
        (value, d_mean, 0.5 * d2)
    }
}

/// ∫ Φ(f) N(f; mean, var) df = Φ(mean / √(1 + var)).
pub fn marginal_bernoulli_prob(mean: f64, var: f64) -> Result<f64> {
    check_var(var)?;
    Ok(norm_cdf(mean / (1.0 + var).sqrt()))
}
