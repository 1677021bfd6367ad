use nalgebra::DVector;

use crate::bfgpc::{joint_latent_posterior, predict_latent, BfgpcModel};
use crate::domain::Fidelity;
use crate::error::{Error, Result};
use crate::num_core::{gaussian_mi, marginal_bernoulli_prob, norm_cdf, norm_pdf, GaussianJoint};

/// Absolute nugget added to latent covariances before any MI evaluation.
pub const LATENT_NUGGET: f64 = 1e-6;

/// Nugget for the linearized probability covariance: the latent nugget
/// mapped through the steepest slope of Φ, so BPMI and LFMI coincide when
/// every latent mean is zero.
pub const PROBABILITY_NUGGET: f64 = LATENT_NUGGET / (2.0 * std::f64::consts::PI);

fn split(n: usize, num_queries: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_queries == 0 || num_queries >= n {
        return Err(Error::invalid(format!(
            "need at least one query and one test entry, got {num_queries} queries of {n}"
        )));
    }
    Ok(((0..num_queries).collect(), (num_queries..n).collect()))
}

/// First-order probit linearization: N(Φ(μ), DΣD) with D = diag(φ(μ)).
/// No nugget is applied.
pub fn linearize_probit(joint: &GaussianJoint) -> GaussianJoint {
    let slope: DVector<f64> = joint.mean.map(norm_pdf);
    let mut cov = joint.cov.clone();
    for j in 0..cov.ncols() {
        for i in 0..cov.nrows() {
            cov[(i, j)] *= slope[i] * slope[j];
        }
    }
    GaussianJoint {
        mean: joint.mean.map(norm_cdf),
        cov,
    }
}

/// LFMI on a latent joint whose first `num_queries` entries are the batch.
pub fn lfmi_from_joint(joint: &GaussianJoint, num_queries: usize) -> Result<f64> {
    let (a, b) = split(joint.dim(), num_queries)?;
    gaussian_mi(&joint.clone().with_nugget(LATENT_NUGGET), &a, &b)
}

/// BPMI on a latent joint; the nugget is added after the slope scaling so
/// saturated entries fall below the floor and carry no information.
pub fn bpmi_from_joint(joint: &GaussianJoint, num_queries: usize) -> Result<f64> {
    let (a, b) = split(joint.dim(), num_queries)?;
    gaussian_mi(&linearize_probit(joint).with_nugget(PROBABILITY_NUGGET), &a, &b)
}

fn batch_joint(
    model: &BfgpcModel,
    batch: &[(Vec<f64>, Fidelity)],
    test_points: &[Vec<f64>],
) -> Result<GaussianJoint> {
    if batch.is_empty() || test_points.is_empty() {
        return Err(Error::invalid("batch and test points must both be nonempty"));
    }
    joint_latent_posterior(model, batch, test_points)
}

pub fn lfmi_score(model: &BfgpcModel, batch: &[(Vec<f64>, Fidelity)], test_points: &[Vec<f64>]) -> Result<f64> {
    lfmi_from_joint(&batch_joint(model, batch, test_points)?, batch.len())
}

pub fn bpmi_score(model: &BfgpcModel, batch: &[(Vec<f64>, Fidelity)], test_points: &[Vec<f64>]) -> Result<f64> {
    bpmi_from_joint(&batch_joint(model, batch, test_points)?, batch.len())
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// β·φ(μ)²σ² + (1−β)·H[p], with p the marginal class-1 probability.
pub fn max_uncertainty_from_moments(mean: f64, var: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta must lie in [0, 1]"));
    }
    let p = marginal_bernoulli_prob(mean, var)?;
    let phi = norm_pdf(mean);
    Ok(beta * phi * phi * var + (1.0 - beta) * binary_entropy(p))
}

pub fn max_uncertainty_score(model: &BfgpcModel, x: &[f64], fidelity: Fidelity, beta: f64) -> Result<f64> {
    let (mu, var) = predict_latent(model, &[x.to_vec()], fidelity)?;
    max_uncertainty_from_moments(mu[0], var[0], beta)
}
