//! ELBO, KL terms, the regularized training loss and its analytic gradient.
//!
//! Per latent with K = K_ZZ, A = K⁻¹K_ZX, r = m − c·1 and S = L Lᵀ:
//!
//!   μₙ = c + aₙᵀ r
//!   vₙ = σ² − kₙᵀ aₙ + aₙᵀ S aₙ
//!   KL = ½[tr(K⁻¹S) + rᵀK⁻¹r − M + log|K| − log|S|]
//!
//! The gradient is propagated from ∂ELBO/∂μₙ and ∂ELBO/∂vₙ back to the
//! variational parameters, the log-hyperparameters, the mean constant and ρ.

use nalgebra::{DMatrix, DVector};

use super::model::{BfgpcModel, LabeledDataset, LatentGp};
use super::posterior::{inducing_cov, points_matrix, rbf_corr, sq_dists};
use super::train::{ThetaPrior, TrainingConfig};
use crate::error::{Error, Result};
use crate::num_core::{gh_expected_loglik_with_grad, logdet_from_factor, stabilized_cholesky, GaussHermite};

/// Components of the training objective at one parameter setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub expected_loglik_lf: f64,
    pub expected_loglik_hf: f64,
    pub kl_lf: f64,
    pub kl_delta: f64,
    pub penalty: f64,
}

impl LossBreakdown {
    pub fn elbo(&self) -> f64 {
        self.expected_loglik_lf + self.expected_loglik_hf - self.kl_lf - self.kl_delta
    }

    pub fn loss(&self) -> f64 {
        -self.elbo() + self.penalty
    }
}

/// Squared-distance caches for one latent; inducing inputs are fixed during
/// training so these are computed once per restart.
pub(crate) struct LatentGeometry {
    d2zz: DMatrix<f64>,
    d2zx: DMatrix<f64>,
}

impl LatentGeometry {
    fn new(latent: &LatentGp, x: &DMatrix<f64>) -> Self {
        Self {
            d2zz: sq_dists(&latent.inducing, &latent.inducing),
            d2zx: sq_dists(&latent.inducing, x),
        }
    }
}

/// Training data laid out for the objective. f_L is evaluated at the LF
/// points followed by the HF points; δ at the HF points.
pub(crate) struct Prepared {
    n_lf: usize,
    sign_lf: Vec<f64>,
    sign_hf: Vec<f64>,
    geo_lf: LatentGeometry,
    geo_delta: LatentGeometry,
}

impl Prepared {
    pub(crate) fn new(model: &BfgpcModel, data: &LabeledDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty in both fidelities"));
        }
        data.validate(&model.domain)?;
        let dim = model.input_dim();
        let all: Vec<Vec<f64>> = data.lf.iter().chain(&data.hf).map(|o| o.x.clone()).collect();
        let hf: Vec<Vec<f64>> = data.hf.iter().map(|o| o.x.clone()).collect();
        let x_all = points_matrix(&all, dim);
        let x_hf = points_matrix(&hf, dim);
        let sign = |y: u8| if y == 1 { 1.0 } else { -1.0 };
        Ok(Self {
            n_lf: data.lf.len(),
            sign_lf: data.lf.iter().map(|o| sign(o.y)).collect(),
            sign_hf: data.hf.iter().map(|o| sign(o.y)).collect(),
            geo_lf: LatentGeometry::new(&model.lf, &x_all),
            geo_delta: LatentGeometry::new(&model.delta, &x_hf),
        })
    }
}

struct LatentForward {
    rzz: DMatrix<f64>,
    kzz: DMatrix<f64>,
    kzz_lower: DMatrix<f64>,
    rzx: DMatrix<f64>,
    kzx: DMatrix<f64>,
    a: DMatrix<f64>,
    /// Lᵀ A
    c: DMatrix<f64>,
    r: DVector<f64>,
    /// K⁻¹ r
    p: DVector<f64>,
    mu: DVector<f64>,
    var: DVector<f64>,
}

fn solve_chol(lower: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    lower.solve_lower_triangular_mut(b);
    lower.tr_solve_lower_triangular_mut(b);
}

fn latent_forward(latent: &LatentGp, geo: &LatentGeometry) -> Result<LatentForward> {
    let s2 = latent.kernel.output_scale;
    let ell = latent.kernel.lengthscale;
    let rzz = rbf_corr(&geo.d2zz, ell);
    let kzz = inducing_cov(latent, &geo.d2zz);
    let kzz_lower = stabilized_cholesky(&kzz)?.lower;
    let rzx = rbf_corr(&geo.d2zx, ell);
    let kzx = &rzx * s2;
    let mut a = kzx.clone();
    solve_chol(&kzz_lower, &mut a);
    let c = latent.var_chol.tr_mul(&a);
    let r = latent.var_mean.add_scalar(-latent.mean_const);
    let mut p = r.clone();
    kzz_lower.solve_lower_triangular_mut(&mut p);
    kzz_lower.tr_solve_lower_triangular_mut(&mut p);
    let n = kzx.ncols();
    let mu = a.tr_mul(&r).add_scalar(latent.mean_const);
    let var = DVector::from_fn(n, |j, _| {
        s2 - kzx.column(j).dot(&a.column(j)) + c.column(j).norm_squared()
    });
    Ok(LatentForward {
        rzz,
        kzz,
        kzz_lower,
        rzx,
        kzx,
        a,
        c,
        r,
        p,
        mu,
        var,
    })
}

fn kl_value(latent: &LatentGp, fwd: &LatentForward) -> f64 {
    let m = latent.num_inducing() as f64;
    let mut w = latent.var_chol.clone();
    fwd.kzz_lower.solve_lower_triangular_mut(&mut w);
    let trace = w.norm_squared();
    let quad = fwd.r.dot(&fwd.p);
    let logdet_k = logdet_from_factor(&fwd.kzz_lower);
    let logdet_s = logdet_from_factor(&latent.var_chol);
    0.5 * (trace + quad - m + logdet_k - logdet_s)
}

/// Gradient of (data term − KL) for one latent.
pub(crate) struct LatentGrad {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
    pub log_output_scale: f64,
    pub log_lengthscale: f64,
    pub mean_const: f64,
}

fn latent_backward(
    latent: &LatentGp,
    geo: &LatentGeometry,
    fwd: &LatentForward,
    g_mu: &DVector<f64>,
    g_var: &DVector<f64>,
) -> LatentGrad {
    let s2 = latent.kernel.output_scale;
    let ell = latent.kernel.lengthscale;
    let l = &latent.var_chol;
    let m = latent.num_inducing();

    let mut kinv = DMatrix::identity(m, m);
    solve_chol(&fwd.kzz_lower, &mut kinv);
    // K⁻¹ L and L⁻ᵀ
    let kinv_l = &kinv * l;
    let mut l_inv = DMatrix::identity(m, m);
    l.solve_lower_triangular_mut(&mut l_inv);
    let l_inv_t = l_inv.transpose();

    let a_gmu = &fwd.a * g_mu;
    let mut a_gv = fwd.a.clone();
    for (j, mut col) in a_gv.column_iter_mut().enumerate() {
        col *= g_var[j];
    }
    let g_s = &a_gv * fwd.a.transpose();
    // B = K⁻¹ S A = K⁻¹ L (Lᵀ A)
    let b = &kinv_l * &fwd.c;
    let h = &a_gv * b.transpose();

    // Variational parameters.
    let mean = &a_gmu - &fwd.p;
    let mut chol = (&g_s * l) * 2.0 - (&kinv_l - &l_inv_t);
    for j in 0..m {
        for i in 0..j {
            chol[(i, j)] = 0.0;
        }
    }
    let sum_gmu: f64 = g_mu.sum();
    let mean_const = sum_gmu - a_gmu.sum() + fwd.p.sum();

    // ∂/∂K_ZX and ∂/∂K_ZZ coefficients.
    let mut w = (&b - &fwd.a) * 2.0;
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col *= g_var[j];
        col.axpy(g_mu[j], &fwd.p, 1.0);
    }
    let mut xk = &g_s - &h - h.transpose() - &a_gmu * fwd.p.transpose();
    xk += (&kinv_l * kinv_l.transpose() + &fwd.p * fwd.p.transpose() - &kinv) * 0.5;

    let sum_gv: f64 = g_var.sum();
    let log_output_scale = xk.dot(&fwd.kzz) + w.dot(&fwd.kzx) + s2 * sum_gv;
    let inv_l2 = 1.0 / (ell * ell);
    let dk_zz = fwd.rzz.component_mul(&geo.d2zz) * (s2 * inv_l2);
    let dk_zx = fwd.rzx.component_mul(&geo.d2zx) * (s2 * inv_l2);
    let log_lengthscale = xk.dot(&dk_zz) + w.dot(&dk_zx);

    LatentGrad {
        mean,
        chol,
        log_output_scale,
        log_lengthscale,
        mean_const,
    }
}

/// Expected log-likelihoods and their (μ, v) derivatives for both
/// fidelities, plus ∂/∂ρ of the HF term.
struct DataTerms {
    ell_lf: f64,
    ell_hf: f64,
    g_mu_l: DVector<f64>,
    g_var_l: DVector<f64>,
    g_mu_d: DVector<f64>,
    g_var_d: DVector<f64>,
    g_rho: f64,
}

fn data_terms(
    prep: &Prepared,
    rho: f64,
    fl: &LatentForward,
    fd: &LatentForward,
    rule: &GaussHermite,
) -> DataTerms {
    let n_all = fl.mu.len();
    let n_hf = fd.mu.len();
    let mut g_mu_l = DVector::zeros(n_all);
    let mut g_var_l = DVector::zeros(n_all);
    let mut g_mu_d = DVector::zeros(n_hf);
    let mut g_var_d = DVector::zeros(n_hf);
    let mut ell_lf = 0.0;
    for i in 0..prep.n_lf {
        let (v, dm, dv) = gh_expected_loglik_with_grad(fl.mu[i], fl.var[i], prep.sign_lf[i], rule);
        ell_lf += v;
        g_mu_l[i] = dm;
        g_var_l[i] = dv;
    }
    let mut ell_hf = 0.0;
    let mut g_rho = 0.0;
    for j in 0..n_hf {
        let i = prep.n_lf + j;
        let mu = rho * fl.mu[i] + fd.mu[j];
        let var = rho * rho * fl.var[i] + fd.var[j];
        let (v, dm, dv) = gh_expected_loglik_with_grad(mu, var, prep.sign_hf[j], rule);
        ell_hf += v;
        g_mu_d[j] = dm;
        g_var_d[j] = dv;
        g_mu_l[i] = rho * dm;
        g_var_l[i] = rho * rho * dv;
        g_rho += dm * fl.mu[i] + 2.0 * rho * dv * fl.var[i];
    }
    DataTerms {
        ell_lf,
        ell_hf,
        g_mu_l,
        g_var_l,
        g_mu_d,
        g_var_d,
        g_rho,
    }
}

/// Layout of the flat trainable parameter vector:
/// per latent `[m (M), packed lower L with log-diagonal, log σ², log ℓ, c]`
/// for f_L then δ, followed by ρ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ParamLayout {
    pub m_lf: usize,
    pub m_delta: usize,
}

impl ParamLayout {
    pub fn of(model: &BfgpcModel) -> Self {
        Self {
            m_lf: model.lf.num_inducing(),
            m_delta: model.delta.num_inducing(),
        }
    }

    fn block(m: usize) -> usize {
        m + m * (m + 1) / 2 + 3
    }

    pub fn len(&self) -> usize {
        Self::block(self.m_lf) + Self::block(self.m_delta) + 1
    }

    pub fn delta_offset(&self) -> usize {
        Self::block(self.m_lf)
    }

    /// Offsets of (log σ², log ℓ) for f_L and δ.
    pub fn hyper_offsets(&self) -> [usize; 4] {
        let hl = self.m_lf + self.m_lf * (self.m_lf + 1) / 2;
        let d0 = self.delta_offset();
        let hd = d0 + self.m_delta + self.m_delta * (self.m_delta + 1) / 2;
        [hl, hl + 1, hd, hd + 1]
    }
}

fn pack_latent(latent: &LatentGp, out: &mut Vec<f64>) {
    let m = latent.num_inducing();
    out.extend(latent.var_mean.iter());
    for j in 0..m {
        out.push(latent.var_chol[(j, j)].ln());
        for i in (j + 1)..m {
            out.push(latent.var_chol[(i, j)]);
        }
    }
    out.push(latent.kernel.output_scale.ln());
    out.push(latent.kernel.lengthscale.ln());
    out.push(latent.mean_const);
}

fn unpack_latent(latent: &mut LatentGp, theta: &[f64]) -> usize {
    let m = latent.num_inducing();
    let mut k = 0;
    for i in 0..m {
        latent.var_mean[i] = theta[k];
        k += 1;
    }
    for j in 0..m {
        latent.var_chol[(j, j)] = theta[k].exp();
        k += 1;
        for i in (j + 1)..m {
            latent.var_chol[(i, j)] = theta[k];
            k += 1;
        }
    }
    latent.kernel.output_scale = theta[k].exp();
    latent.kernel.lengthscale = theta[k + 1].exp();
    latent.mean_const = theta[k + 2];
    k + 3
}

fn pack_latent_grad(latent: &LatentGp, g: &LatentGrad, out: &mut Vec<f64>) {
    let m = latent.num_inducing();
    out.extend(g.mean.iter());
    for j in 0..m {
        // Chain rule through L_jj = exp(θ).
        out.push(g.chol[(j, j)] * latent.var_chol[(j, j)]);
        for i in (j + 1)..m {
            out.push(g.chol[(i, j)]);
        }
    }
    out.push(g.log_output_scale);
    out.push(g.log_lengthscale);
    out.push(g.mean_const);
}

pub(crate) fn pack_params(model: &BfgpcModel) -> DVector<f64> {
    let mut v = Vec::with_capacity(ParamLayout::of(model).len());
    pack_latent(&model.lf, &mut v);
    pack_latent(&model.delta, &mut v);
    v.push(model.rho);
    DVector::from_vec(v)
}

pub(crate) fn unpack_params(model: &mut BfgpcModel, theta: &DVector<f64>) {
    let s = theta.as_slice();
    let k = unpack_latent(&mut model.lf, s);
    let k2 = unpack_latent(&mut model.delta, &s[k..]);
    model.rho = s[k + k2];
}

fn log_hypers(model: &BfgpcModel) -> [f64; 4] {
    [
        model.lf.kernel.output_scale.ln(),
        model.lf.kernel.lengthscale.ln(),
        model.delta.kernel.output_scale.ln(),
        model.delta.kernel.lengthscale.ln(),
    ]
}

fn evaluate(
    model: &BfgpcModel,
    prep: &Prepared,
    rule: &GaussHermite,
    reg: Option<(f64, &ThetaPrior)>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<DVector<f64>>)> {
    let fl = latent_forward(&model.lf, &prep.geo_lf)?;
    let fd = latent_forward(&model.delta, &prep.geo_delta)?;
    let terms = data_terms(prep, model.rho, &fl, &fd, rule);
    let thetas = log_hypers(model);
    let penalty = match reg {
        Some((lambda, prior)) => {
            lambda
                * thetas
                    .iter()
                    .zip(prior.centers())
                    .map(|(t, c)| (t - c) * (t - c))
                    .sum::<f64>()
        }
        None => 0.0,
    };
    let breakdown = LossBreakdown {
        expected_loglik_lf: terms.ell_lf,
        expected_loglik_hf: terms.ell_hf,
        kl_lf: kl_value(&model.lf, &fl),
        kl_delta: kl_value(&model.delta, &fd),
        penalty,
    };
    if !want_grad {
        return Ok((breakdown, None));
    }
    let gl = latent_backward(&model.lf, &prep.geo_lf, &fl, &terms.g_mu_l, &terms.g_var_l);
    let gd = latent_backward(&model.delta, &prep.geo_delta, &fd, &terms.g_mu_d, &terms.g_var_d);
    let mut g = Vec::new();
    pack_latent_grad(&model.lf, &gl, &mut g);
    pack_latent_grad(&model.delta, &gd, &mut g);
    g.push(terms.g_rho);
    // Loss gradient = −∂ELBO + ∂penalty.
    let mut grad = -DVector::from_vec(g);
    if let Some((lambda, prior)) = reg {
        let offs = ParamLayout::of(model).hyper_offsets();
        for ((off, t), c) in offs.iter().zip(thetas).zip(prior.centers()) {
            grad[*off] += 2.0 * lambda * (t - c);
        }
    }
    Ok((breakdown, Some(grad)))
}

/// Loss components and ∂loss/∂θ in the [`ParamLayout`] parameterization.
pub(crate) fn loss_and_gradient(
    model: &BfgpcModel,
    prep: &Prepared,
    rule: &GaussHermite,
    lambda: f64,
    prior: &ThetaPrior,
) -> Result<(LossBreakdown, DVector<f64>)> {
    let (b, g) = evaluate(model, prep, rule, Some((lambda, prior)), true)?;
    Ok((b, g.expect("gradient requested")))
}

pub(crate) fn breakdown(
    model: &BfgpcModel,
    prep: &Prepared,
    rule: &GaussHermite,
    lambda: f64,
    prior: &ThetaPrior,
) -> Result<LossBreakdown> {
    Ok(evaluate(model, prep, rule, Some((lambda, prior)), false)?.0)
}

/// Evidence lower bound of `data` under `model`.
pub fn elbo(model: &BfgpcModel, data: &LabeledDataset, gh_order: usize) -> Result<f64> {
    model.validate()?;
    let prep = Prepared::new(model, data)?;
    let rule = GaussHermite::cached(gh_order)?;
    Ok(evaluate(model, &prep, &rule, None, false)?.0.elbo())
}

/// KL[q(u_L) ‖ p(u_L)] and KL[q(u_δ) ‖ p(u_δ)].
pub fn kl_divergences(model: &BfgpcModel) -> Result<(f64, f64)> {
    model.validate()?;
    let kl = |latent: &LatentGp| -> Result<f64> {
        let geo = LatentGeometry {
            d2zz: sq_dists(&latent.inducing, &latent.inducing),
            d2zx: DMatrix::zeros(latent.num_inducing(), 0),
        };
        Ok(kl_value(latent, &latent_forward(latent, &geo)?))
    };
    Ok((kl(&model.lf)?, kl(&model.delta)?))
}

/// −ELBO + λ Σ (θ − θ_prior)² over the log kernel hyperparameters.
pub fn regularized_loss(model: &BfgpcModel, data: &LabeledDataset, config: &TrainingConfig) -> Result<f64> {
    model.validate()?;
    let prep = Prepared::new(model, data)?;
    let rule = GaussHermite::cached(config.gh_order)?;
    let prior = config.theta_prior_for(&model.domain);
    Ok(breakdown(model, &prep, &rule, config.reg_lambda, &prior)?.loss())
}

/// [`regularized_loss`] and its gradient with respect to
/// [`BfgpcModel::parameters`].
pub fn regularized_loss_gradient(
    model: &BfgpcModel,
    data: &LabeledDataset,
    config: &TrainingConfig,
) -> Result<(f64, DVector<f64>)> {
    model.validate()?;
    let prep = Prepared::new(model, data)?;
    let rule = GaussHermite::cached(config.gh_order)?;
    let prior = config.theta_prior_for(&model.domain);
    let (b, g) = loss_and_gradient(model, &prep, &rule, config.reg_lambda, &prior)?;
    Ok((b.loss(), g))
}

impl BfgpcModel {
    /// Flat trainable parameters: per latent (f_L, then δ) the variational
    /// mean, the column-major lower Cholesky factor with log diagonal,
    /// log σ², log ℓ and the mean constant; ρ last.
    pub fn parameters(&self) -> DVector<f64> {
        pack_params(self)
    }

    pub fn set_parameters(&mut self, theta: &DVector<f64>) -> Result<()> {
        let n = ParamLayout::of(self).len();
        if theta.len() != n {
            return Err(Error::invalid(format!("expected {n} parameters, got {}", theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        unpack_params(self, theta);
        Ok(())
    }
}
