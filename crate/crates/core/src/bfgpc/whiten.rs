//! Whitened optimization coordinates. The model stores q(u) = N(m, LLᵀ)
//! directly; the optimizer works in (v, L_v) with m = c + L_K v and
//! L = L_K L_v, where L_K is the Cholesky factor of K_ZZ. The layout
//! matches the stored parameter vector block for block.

use nalgebra::{DMatrix, DVector};

use super::model::{BfgpcModel, LatentGp};
use super::objective::ParamLayout;
use super::posterior::{inducing_cov, rbf_corr, sq_dists};
use crate::error::{Error, Result};

fn kzz_factor(latent: &LatentGp, d2zz: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    inducing_cov(latent, d2zz)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NumericalFailure {
            message: "K_ZZ is not positive definite".into(),
            min_eigenvalue: f64::NAN,
        })
}

/// Cached inducing geometry per latent (inducing points are fixed).
pub(crate) struct Whitener {
    d2_lf: DMatrix<f64>,
    d2_delta: DMatrix<f64>,
}

struct Block<'a> {
    latent: &'a LatentGp,
    d2: &'a DMatrix<f64>,
    offset: usize,
}

impl Whitener {
    pub(crate) fn new(model: &BfgpcModel) -> Self {
        Self {
            d2_lf: sq_dists(&model.lf.inducing, &model.lf.inducing),
            d2_delta: sq_dists(&model.delta.inducing, &model.delta.inducing),
        }
    }

    fn blocks<'a>(&'a self, model: &'a BfgpcModel) -> [Block<'a>; 2] {
        let layout = ParamLayout::of(model);
        [
            Block {
                latent: &model.lf,
                d2: &self.d2_lf,
                offset: 0,
            },
            Block {
                latent: &model.delta,
                d2: &self.d2_delta,
                offset: layout.delta_offset(),
            },
        ]
    }

    /// Whitened coordinates of the model's current state.
    pub(crate) fn whiten(&self, model: &BfgpcModel, stored: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = stored.clone();
        for b in self.blocks(model) {
            let m = b.latent.num_inducing();
            let lk = kzz_factor(b.latent, b.d2)?;
            let r = b.latent.var_mean.add_scalar(-b.latent.mean_const);
            let v = lk.solve_lower_triangular(&r).expect("nonsingular factor");
            let lv = lk.solve_lower_triangular(&b.latent.var_chol).expect("nonsingular factor");
            write_raw(&mut out, b.offset, m, &v, &log_diag(lv));
        }
        Ok(out)
    }

    /// Stored coordinates for whitened `theta`; hyperparameters, c and ρ
    /// pass through unchanged.
    pub(crate) fn unwhiten(&self, model: &BfgpcModel, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = theta.clone();
        for b in self.blocks(model) {
            let m = b.latent.num_inducing();
            let (v, lv_log, hyper) = read_raw(theta, b.offset, m);
            let mut latent = b.latent.clone();
            latent.kernel.output_scale = hyper[0].exp();
            latent.kernel.lengthscale = hyper[1].exp();
            let lk = kzz_factor(&latent, b.d2)?;
            let mean = (&lk * v).add_scalar(hyper[2]);
            let chol = &lk * exp_diag(lv_log);
            write_raw(&mut out, b.offset, m, &mean, &log_diag(chol));
        }
        Ok(out)
    }

    /// Maps ∂loss/∂(stored) to ∂loss/∂(whitened). `model` must hold the
    /// stored coordinates corresponding to `theta`.
    pub(crate) fn pull_back(
        &self,
        model: &BfgpcModel,
        theta: &DVector<f64>,
        grad: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut out = grad.clone();
        for b in self.blocks(model) {
            let latent = b.latent;
            let m = latent.num_inducing();
            let lk = kzz_factor(latent, b.d2)?;
            let (v, lv_log, _) = read_raw(theta, b.offset, m);
            let lv = exp_diag(lv_log);
            let (g_m, mut g_l, g_hyper) = read_raw(grad, b.offset, m);
            // Packed diagonal gradients are w.r.t. log L_ii.
            for i in 0..m {
                g_l[(i, i)] /= latent.var_chol[(i, i)];
            }
            let g_v = lk.transpose() * &g_m;
            let mut g_lv = (lk.transpose() * &g_l).lower_triangle();
            for i in 0..m {
                g_lv[(i, i)] *= lv[(i, i)];
            }

            // L_K scales with σ, so both m − c and L scale with σ.
            let r = latent.var_mean.add_scalar(-latent.mean_const);
            let g_log_s2 = g_hyper[0] + 0.5 * (g_m.dot(&r) + g_l.dot(&latent.var_chol));

            // ∂L_K/∂log ℓ = L_K Φ(L_K⁻¹ dK L_K⁻ᵀ), Φ = lower triangle with half diagonal.
            let ell = latent.kernel.lengthscale;
            let d_k = rbf_corr(b.d2, ell).component_mul(b.d2) * (latent.kernel.output_scale / (ell * ell));
            let x = lk.solve_lower_triangular(&d_k).expect("nonsingular factor");
            let x = lk.solve_lower_triangular(&x.transpose()).expect("nonsingular factor");
            let mut phi = x.lower_triangle();
            for i in 0..m {
                phi[(i, i)] *= 0.5;
            }
            let d_lk = &lk * phi;
            let g_log_ell = g_hyper[1] + g_m.dot(&(&d_lk * &v)) + g_l.dot(&(&d_lk * &lv));
            let g_c = g_hyper[2] + g_m.sum();

            write_raw(&mut out, b.offset, m, &g_v, &g_lv);
            let h = b.offset + m + m * (m + 1) / 2;
            out[h] = g_log_s2;
            out[h + 1] = g_log_ell;
            out[h + 2] = g_c;
        }
        Ok(out)
    }
}

fn log_diag(mut l: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..l.nrows() {
        l[(i, i)] = l[(i, i)].ln();
    }
    l
}

fn exp_diag(mut l: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..l.nrows() {
        l[(i, i)] = l[(i, i)].exp();
    }
    l
}

/// Block at `offset` as (vector, lower-packed matrix, [log σ², log ℓ, c]),
/// entries copied verbatim.
fn read_raw(theta: &DVector<f64>, offset: usize, m: usize) -> (DVector<f64>, DMatrix<f64>, [f64; 3]) {
    let v = DVector::from_fn(m, |i, _| theta[offset + i]);
    let mut l = DMatrix::zeros(m, m);
    let mut k = offset + m;
    for j in 0..m {
        for i in j..m {
            l[(i, j)] = theta[k];
            k += 1;
        }
    }
    (v, l, [theta[k], theta[k + 1], theta[k + 2]])
}

fn write_raw(theta: &mut DVector<f64>, offset: usize, m: usize, v: &DVector<f64>, l: &DMatrix<f64>) {
    for i in 0..m {
        theta[offset + i] = v[i];
    }
    let mut k = offset + m;
    for j in 0..m {
        for i in j..m {
            theta[k] = l[(i, j)];
            k += 1;
        }
    }
}
