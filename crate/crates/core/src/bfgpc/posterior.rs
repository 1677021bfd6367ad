//! Sparse variational predictive equations and joint posterior assembly.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::model::{BfgpcModel, LatentGp, INDUCING_JITTER};
use crate::domain::Fidelity;
use crate::error::{Error, Result};
use crate::num_core::{marginal_bernoulli_prob, stabilized_cholesky, CholeskyFactor, GaussianJoint};

/// Rows of `points` as an N×d matrix.
pub(crate) fn points_matrix(points: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), dim, |i, j| points[i][j])
}

/// Pairwise squared distances between the rows of `a` and `b`.
pub(crate) fn sq_dists(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for j in 0..b.nrows() {
        for i in 0..a.nrows() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                let d = a[(i, k)] - b[(j, k)];
                s += d * d;
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Unit-variance RBF correlation from squared distances.
pub(crate) fn rbf_corr(d2: &DMatrix<f64>, lengthscale: f64) -> DMatrix<f64> {
    let c = -0.5 / (lengthscale * lengthscale);
    d2.map(|v| (c * v).exp())
}

/// Factor of K_ZZ = σ² (R_ZZ + jitter · I).
pub(crate) fn inducing_cov(latent: &LatentGp, d2zz: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = rbf_corr(d2zz, latent.kernel.lengthscale);
    for i in 0..k.nrows() {
        k[(i, i)] += INDUCING_JITTER;
    }
    k * latent.kernel.output_scale
}

/// Precomputed quantities for predicting one latent.
pub struct LatentPosterior<'a> {
    latent: &'a LatentGp,
    kzz_chol: CholeskyFactor,
    /// K_ZZ⁻¹ (m − c).
    alpha: DVector<f64>,
}

impl<'a> LatentPosterior<'a> {
    pub fn new(latent: &'a LatentGp) -> Result<Self> {
        let d2 = sq_dists(&latent.inducing, &latent.inducing);
        let kzz_chol = stabilized_cholesky(&inducing_cov(latent, &d2))?;
        let r = latent.var_mean.add_scalar(-latent.mean_const);
        let alpha = kzz_chol.solve_vec(&r);
        Ok(Self {
            latent,
            kzz_chol,
            alpha,
        })
    }

    fn projections(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let kzx = rbf_corr(&sq_dists(&self.latent.inducing, x), self.latent.kernel.lengthscale)
            * self.latent.kernel.output_scale;
        let mut a = kzx.clone();
        self.kzz_chol.solve_mut(&mut a);
        let c = self.latent.var_chol.transpose() * &a;
        (kzx, a, c)
    }

    fn mean(&self, kzx: &DMatrix<f64>) -> DVector<f64> {
        kzx.tr_mul(&self.alpha).add_scalar(self.latent.mean_const)
    }

    /// Marginal predictive means and variances at the rows of `x`.
    pub fn marginals(&self, x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let (kzx, a, c) = self.projections(x);
        let mean = self.mean(&kzx);
        let s2 = self.latent.kernel.output_scale;
        let var = DVector::from_fn(x.nrows(), |n, _| {
            let q = kzx.column(n).dot(&a.column(n));
            let s = c.column(n).norm_squared();
            (s2 - q + s).max(0.0)
        });
        (mean, var)
    }

    /// Full predictive mean and covariance at the rows of `x`.
    pub fn joint(&self, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (kzx, a, c) = self.projections(x);
        let mean = self.mean(&kzx);
        let kxx = rbf_corr(&sq_dists(x, x), self.latent.kernel.lengthscale)
            * self.latent.kernel.output_scale;
        let mut cov = kxx - kzx.tr_mul(&a) + c.tr_mul(&c);
        // Symmetrize away rounding.
        let n = cov.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            cov[(j, j)] = cov[(j, j)].max(0.0);
        }
        (mean, cov)
    }
}

fn check_points(model: &BfgpcModel, points: &[Vec<f64>]) -> Result<()> {
    for p in points {
        model.domain.check(p)?;
    }
    Ok(())
}

/// Marginal latent moments of f_L (fidelity L) or f_H = ρ f_L + δ (fidelity H).
pub fn predict_latent(
    model: &BfgpcModel,
    points: &[Vec<f64>],
    fidelity: Fidelity,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_points(model, points)?;
    let x = points_matrix(points, model.input_dim());
    let (mu_l, var_l) = LatentPosterior::new(&model.lf)?.marginals(&x);
    match fidelity {
        Fidelity::Low => Ok((mu_l, var_l)),
        Fidelity::High => {
            let (mu_d, var_d) = LatentPosterior::new(&model.delta)?.marginals(&x);
            let rho = model.rho;
            Ok((mu_l * rho + mu_d, var_l * (rho * rho) + var_d))
        }
    }
}

/// Class-1 probability with the latent uncertainty marginalized out.
pub fn predict_proba(model: &BfgpcModel, points: &[Vec<f64>], fidelity: Fidelity) -> Result<Vec<f64>> {
    let (mu, var) = predict_latent(model, points, fidelity)?;
    mu.iter()
        .zip(var.iter())
        .map(|(&m, &v)| marginal_bernoulli_prob(m, v))
        .collect()
}

/// Deduplicates locations by exact bit pattern, returning unique points and
/// the index of each input in the unique list.
fn dedup(points: impl Iterator<Item = Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut unique = Vec::new();
    let mut index = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for p in points {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let idx = *seen.entry(key).or_insert_with(|| {
            unique.push(p);
            unique.len() - 1
        });
        index.push(idx);
    }
    (unique, index)
}

/// Joint Gaussian over [f_Q; f_H(X′)]: queries first in input order, then
/// test points. Built as T g where g stacks f_L at the unique f_L locations
/// and δ at the unique δ locations with block-diagonal covariance.
pub fn joint_latent_posterior(
    model: &BfgpcModel,
    queries: &[(Vec<f64>, Fidelity)],
    test_points: &[Vec<f64>],
) -> Result<GaussianJoint> {
    if queries.is_empty() && test_points.is_empty() {
        return Err(Error::invalid("joint posterior needs at least one query or test point"));
    }
    for (x, _) in queries {
        model.domain.check(x)?;
    }
    check_points(model, test_points)?;

    // Every output row needs f_L; H rows additionally need δ.
    let rows: Vec<(&Vec<f64>, Fidelity)> = queries
        .iter()
        .map(|(x, m)| (x, *m))
        .chain(test_points.iter().map(|x| (x, Fidelity::High)))
        .collect();
    let (l_locs, l_idx) = dedup(rows.iter().map(|(x, _)| (*x).clone()));
    let h_rows: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 == Fidelity::High).collect();
    let (d_locs, d_idx_h) = dedup(h_rows.iter().map(|&i| rows[i].0.clone()));
    let mut d_idx = vec![usize::MAX; rows.len()];
    for (k, &i) in h_rows.iter().enumerate() {
        d_idx[i] = d_idx_h[k];
    }

    let dim = model.input_dim();
    let (mu_l, cov_l) = LatentPosterior::new(&model.lf)?.joint(&points_matrix(&l_locs, dim));
    let (mu_d, cov_d) = if d_locs.is_empty() {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        LatentPosterior::new(&model.delta)?.joint(&points_matrix(&d_locs, dim))
    };

    let n = rows.len();
    // Sparse rows of T: coefficient on f_L, and on δ (H rows only).
    let a: Vec<f64> = rows
        .iter()
        .map(|(_, m)| if *m == Fidelity::High { model.rho } else { 1.0 })
        .collect();
    let mean = DVector::from_fn(n, |i, _| {
        let mut v = a[i] * mu_l[l_idx[i]];
        if d_idx[i] != usize::MAX {
            v += mu_d[d_idx[i]];
        }
        v
    });
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let mut v = a[i] * a[j] * cov_l[(l_idx[i], l_idx[j])];
            if d_idx[i] != usize::MAX && d_idx[j] != usize::MAX {
                v += cov_d[(d_idx[i], d_idx[j])];
            }
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(GaussianJoint { mean, cov })
}
