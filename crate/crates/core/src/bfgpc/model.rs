use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::posterior::{inducing_cov, sq_dists};
use crate::domain::{Domain, Fidelity};
use crate::error::{Error, Result};
use crate::num_core::KernelParams;
use crate::rng;

/// Relative diagonal jitter on the inducing-point prior covariance:
/// K_ZZ = σ² (R_ZZ + jitter · I).
pub const INDUCING_JITTER: f64 = 1e-6;

/// One latent GP: prior hyperparameters, inducing inputs and the
/// variational distribution over the inducing values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGp {
    pub kernel: KernelParams,
    pub mean_const: f64,
    /// Inducing inputs Z, one row per point.
    pub inducing: DMatrix<f64>,
    pub var_mean: DVector<f64>,
    /// Lower-triangular factor of the variational covariance, positive diagonal.
    pub var_chol: DMatrix<f64>,
}

impl LatentGp {
    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn inducing_points(&self) -> Vec<Vec<f64>> {
        (0..self.inducing.nrows())
            .map(|i| self.inducing.row(i).iter().copied().collect())
            .collect()
    }

    pub(crate) fn validate(&self, input_dim: usize) -> Result<()> {
        self.kernel.validate()?;
        let m = self.num_inducing();
        if m == 0 {
            return Err(Error::invalid("latent GP needs at least one inducing point"));
        }
        if self.inducing.ncols() != input_dim {
            return Err(Error::invalid("inducing points have the wrong dimension"));
        }
        if self.var_mean.len() != m || self.var_chol.shape() != (m, m) {
            return Err(Error::invalid("variational parameters do not match inducing count"));
        }
        for j in 0..m {
            if self.var_chol[(j, j)].is_nan() || self.var_chol[(j, j)] <= 0.0 {
                return Err(Error::invalid("variational Cholesky diagonal must be positive"));
            }
            for i in 0..j {
                if self.var_chol[(i, j)] != 0.0 {
                    return Err(Error::invalid("variational Cholesky must be lower triangular"));
                }
            }
        }
        if !self.mean_const.is_finite() || self.var_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite latent parameters"));
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) bi-fidelity classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgpcModel {
    pub lf: LatentGp,
    pub delta: LatentGp,
    pub rho: f64,
    pub domain: Domain,
}

impl BfgpcModel {
    pub fn input_dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.lf.validate(self.input_dim())?;
        self.delta.validate(self.input_dim())?;
        if !self.rho.is_finite() {
            return Err(Error::invalid("rho must be finite"));
        }
        Ok(())
    }

    pub fn latent(&self, which: Fidelity) -> &LatentGp {
        match which {
            Fidelity::Low => &self.lf,
            Fidelity::High => &self.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: u8,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: u8) -> Self {
        Self { x, y }
    }
}

/// Labeled observations per fidelity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub lf: Vec<Observation>,
    pub hf: Vec<Observation>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.lf.len() + self.hf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lf.is_empty() && self.hf.is_empty()
    }

    pub fn get(&self, fidelity: Fidelity) -> &[Observation] {
        match fidelity {
            Fidelity::Low => &self.lf,
            Fidelity::High => &self.hf,
        }
    }

    pub fn push(&mut self, fidelity: Fidelity, obs: Observation) {
        match fidelity {
            Fidelity::Low => self.lf.push(obs),
            Fidelity::High => self.hf.push(obs),
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        for obs in self.lf.iter().chain(&self.hf) {
            domain.check(&obs.x)?;
            if obs.y > 1 {
                return Err(Error::invalid(format!("label {} is not binary", obs.y)));
            }
        }
        Ok(())
    }
}

/// Inducing counts used when training on `data`: min(cap_lf, N_L + N_H) for
/// f_L and min(cap_delta, N_H) for δ, each at least one.
pub fn default_inducing_counts(data: &LabeledDataset, cap_lf: usize, cap_delta: usize) -> (usize, usize) {
    let lf = data.len().min(cap_lf).max(1);
    let delta = data.hf.len().min(cap_delta).max(1);
    (lf, delta)
}

fn fresh_latent(domain: &Domain, count: usize, seed: u64, label: &str) -> LatentGp {
    let mut rng = rng::stream(seed, label, &[]);
    let pts = domain.sample_stratified(count, &mut rng);
    let d = domain.dim();
    LatentGp {
        kernel: KernelParams {
            output_scale: 1.0,
            lengthscale: 0.5 * domain.mean_side(),
        },
        mean_const: 0.0,
        inducing: DMatrix::from_fn(count, d, |i, j| pts[i][j]),
        var_mean: DVector::zeros(count),
        var_chol: DMatrix::identity(count, count),
    }
}

/// Fresh model: stratified inducing points, σ² = 1, ℓ = half the mean domain
/// side, ρ = 1, zero variational means, and variational factors equal to
/// 0.1·I in whitened coordinates (L = 0.1·chol(K_ZZ)).
/// Scale of the initial whitened variational factor.
pub const INIT_WHITENED_SCALE: f64 = 0.1;

impl LatentGp {
    /// Resets q(u) to mean c and factor `scale`·chol(K_ZZ) under the current
    /// kernel, i.e. `scale`·I in whitened coordinates.
    pub fn reset_variational(&mut self, scale: f64) -> Result<()> {
        let d2 = sq_dists(&self.inducing, &self.inducing);
        let chol = inducing_cov(self, &d2).cholesky().ok_or_else(|| Error::NumericalFailure {
            message: "K_ZZ is not positive definite".into(),
            min_eigenvalue: f64::NAN,
        })?;
        self.var_mean = DVector::from_element(self.num_inducing(), self.mean_const);
        self.var_chol = chol.l() * scale;
        Ok(())
    }
}

pub fn init_model(
    domain: &Domain,
    lf_inducing_count: usize,
    delta_inducing_count: usize,
    seed: u64,
) -> Result<BfgpcModel> {
    if lf_inducing_count == 0 || delta_inducing_count == 0 {
        return Err(Error::invalid("inducing counts must be >= 1"));
    }
    Domain::new(domain.bounds().to_vec())?;
    let mut lf = fresh_latent(domain, lf_inducing_count, seed, "inducing-lf");
    let mut delta = fresh_latent(domain, delta_inducing_count, seed, "inducing-delta");
    lf.reset_variational(INIT_WHITENED_SCALE)?;
    delta.reset_variational(INIT_WHITENED_SCALE)?;
    Ok(BfgpcModel {
        lf,
        delta,
        rho: 1.0,
        domain: domain.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_places_points_in_domain() {
        let dom = Domain::unit_square();
        let m = init_model(&dom, 16, 8, 3).unwrap();
        assert_eq!(m.lf.num_inducing(), 16);
        for p in m.lf.inducing_points() {
            assert!(dom.contains(&p));
        }
        assert_eq!(m.rho, 1.0);
        assert_eq!(m.lf.kernel.lengthscale, 0.5);
        // S = 0.01·K_ZZ: whitened factor 0.1·I.
        let d2 = sq_dists(&m.delta.inducing, &m.delta.inducing);
        let k = inducing_cov(&m.delta, &d2);
        let s = &m.delta.var_chol * m.delta.var_chol.transpose();
        assert!((s - k * 0.01).abs().max() < 1e-14);
        m.validate().unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let dom = Domain::unit_square();
        let a = init_model(&dom, 10, 5, 42).unwrap();
        let b = init_model(&dom, 10, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = init_model(&dom, 10, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_inducing_rejected() {
        assert!(init_model(&Domain::unit_square(), 0, 4, 1).is_err());
        assert!(init_model(&Domain::unit_square(), 4, 0, 1).is_err());
    }

    #[test]
    fn inducing_counts() {
        let mut d = LabeledDataset::default();
        for i in 0..100 {
            d.lf.push(Observation::new(vec![0.5, i as f64 / 100.0], 0));
        }
        assert_eq!(default_inducing_counts(&d, 64, 32), (64, 1));
        d.hf.push(Observation::new(vec![0.5, 0.5], 1));
        assert_eq!(default_inducing_counts(&d, 64, 32), (64, 1));
    }
}
