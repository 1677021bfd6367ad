//! Independent dense-algebra oracles shared by the integration targets.
//! Deliberately avoids the library's Cholesky and dedup paths: inverses and
//! determinants go through nalgebra's LU.
#![allow(dead_code)]

use bpmi_core::bfgpc::{init_model, BfgpcModel, LabeledDataset, LatentGp, Observation, INDUCING_JITTER};
use bpmi_core::num_core::KernelParams;
use bpmi_core::rng::{self, StreamRng};
use bpmi_core::{Domain, Fidelity};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn kern(a: &[f64], b: &[f64], k: &KernelParams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    k.output_scale * (-d2 / (2.0 * k.lengthscale * k.lengthscale)).exp()
}

fn inducing_rows(latent: &LatentGp) -> Vec<Vec<f64>> {
    (0..latent.inducing.nrows())
        .map(|i| latent.inducing.row(i).iter().copied().collect())
        .collect()
}

pub fn kzz(latent: &LatentGp) -> DMatrix<f64> {
    let z = inducing_rows(latent);
    let m = z.len();
    DMatrix::from_fn(m, m, |i, j| {
        kern(&z[i], &z[j], &latent.kernel) + if i == j { INDUCING_JITTER * latent.kernel.output_scale } else { 0.0 }
    })
}

pub fn kzx(latent: &LatentGp, x: &[Vec<f64>]) -> DMatrix<f64> {
    let z = inducing_rows(latent);
    DMatrix::from_fn(z.len(), x.len(), |i, j| kern(&z[i], &x[j], &latent.kernel))
}

/// Variational predictive q(f(x)) = ∫ p(f | u) q(u) du over the given points.
pub fn dense_latent_joint(latent: &LatentGp, x: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let kinv = kzz(latent).try_inverse().expect("invertible K_ZZ");
    let kzx = kzx(latent, x);
    let s = &latent.var_chol * latent.var_chol.transpose();
    let c = latent.mean_const;
    let r = latent.var_mean.map(|v| v - c);
    let a = &kinv * &kzx;
    let mean = a.transpose() * r + DVector::from_element(x.len(), c);
    let kxx = DMatrix::from_fn(x.len(), x.len(), |i, j| kern(&x[i], &x[j], &latent.kernel));
    let cov = kxx - kzx.transpose() * &a + a.transpose() * s * &a;
    (mean, cov)
}

/// Joint over rows of (x, fidelity) with f_H = ρ f_L + δ, assembled
/// entry-wise without deduplication.
pub fn dense_joint(model: &BfgpcModel, rows: &[(Vec<f64>, Fidelity)]) -> (DVector<f64>, DMatrix<f64>) {
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let (ml, cl) = dense_latent_joint(&model.lf, &xs);
    let (md, cd) = dense_latent_joint(&model.delta, &xs);
    let n = rows.len();
    let hi = |i: usize| rows[i].1 == Fidelity::High;
    let a = |i: usize| if hi(i) { model.rho } else { 1.0 };
    let mean = DVector::from_fn(n, |i, _| a(i) * ml[i] + if hi(i) { md[i] } else { 0.0 });
    let cov = DMatrix::from_fn(n, n, |i, j| {
        a(i) * a(j) * cl[(i, j)] + if hi(i) && hi(j) { cd[(i, j)] } else { 0.0 }
    });
    (mean, cov)
}

pub fn gaussian_entropy(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows() as f64;
    let det = cov.clone().lu().determinant();
    0.5 * (n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + det.ln())
}

/// I(A; B) = H(A) + H(B) − H(A, B).
pub fn entropy_mi(cov: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
    let sub = |idx: &[usize]| DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])]);
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    gaussian_entropy(&sub(a)) + gaussian_entropy(&sub(b)) - gaussian_entropy(&sub(&ab))
}

pub fn random_spd(r: &mut StreamRng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

fn randomize_latent(latent: &mut LatentGp, r: &mut StreamRng) {
    let m = latent.num_inducing();
    latent.kernel = KernelParams::new(r.random_range(0.5..2.0), r.random_range(0.2..0.6)).unwrap();
    latent.mean_const = r.random_range(-0.3..0.3);
    latent.var_mean = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
    latent.var_chol = DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => r.random_range(0.2..0.8),
        std::cmp::Ordering::Greater => r.random_range(-0.2..0.2),
        std::cmp::Ordering::Less => 0.0,
    });
}

/// Fresh model with randomized variational and kernel parameters.
pub fn random_model(seed: u64, m_lf: usize, m_delta: usize) -> BfgpcModel {
    let mut model = init_model(&Domain::unit_square(), m_lf, m_delta, seed).unwrap();
    let mut r = rng::stream(seed, "oracle-model", &[]);
    randomize_latent(&mut model.lf, &mut r);
    randomize_latent(&mut model.delta, &mut r);
    model.rho = r.random_range(0.5..1.2);
    model
}

pub fn random_points(r: &mut StreamRng, n: usize) -> Vec<Vec<f64>> {
    Domain::unit_square().sample_uniform_n(n, r)
}

pub fn random_data(seed: u64, n_lf: usize, n_hf: usize) -> LabeledDataset {
    let mut r = rng::stream(seed, "oracle-data", &[]);
    let mut data = LabeledDataset::default();
    for x in random_points(&mut r, n_lf) {
        let y = r.random_range(0..2u8);
        data.push(Fidelity::Low, Observation::new(x, y));
    }
    for x in random_points(&mut r, n_hf) {
        let y = r.random_range(0..2u8);
        data.push(Fidelity::High, Observation::new(x, y));
    }
    data
}

pub fn std_normal(r: &mut StreamRng) -> f64 {
    r.sample(StandardNormal)
}

/// Lower Cholesky factor by the textbook recurrence (no jitter).
pub fn plain_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        l[(j, j)] = d.max(0.0).sqrt();
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if l[(j, j)] > 0.0 { v / l[(j, j)] } else { 0.0 };
        }
    }
    l
}

/// Mean and covariance of the latents at `rows` by hierarchical sampling:
/// u ~ q(u), then f(x) | u from the prior conditional, for each latent.
pub fn hierarchical_moments(
    model: &BfgpcModel,
    rows: &[(Vec<f64>, Fidelity)],
    draws: usize,
    r: &mut StreamRng,
) -> (DVector<f64>, DMatrix<f64>) {
    let xs: Vec<Vec<f64>> = rows.iter().map(|row| row.0.clone()).collect();
    let n = xs.len();
    let prepare = |latent: &LatentGp| {
        let kinv = kzz(latent).try_inverse().expect("invertible K_ZZ");
        let kzx = kzx(latent, &xs);
        let a = &kinv * &kzx;
        let kxx = DMatrix::from_fn(n, n, |i, j| kern(&xs[i], &xs[j], &latent.kernel));
        (a.transpose(), plain_cholesky(&(kxx - kzx.transpose() * &a)))
    };
    let (al, cl) = prepare(&model.lf);
    let (ad, cd) = prepare(&model.delta);
    let block = 10_000;
    let sample = |latent: &LatentGp, a: &DMatrix<f64>, c: &DMatrix<f64>, b: usize, r: &mut StreamRng| {
        let m = latent.num_inducing();
        let e = DMatrix::from_fn(m, b, |_, _| std_normal(r));
        let mut u = &latent.var_chol * e;
        for mut col in u.column_iter_mut() {
            col += &latent.var_mean;
            col.add_scalar_mut(-latent.mean_const);
        }
        let e2 = DMatrix::from_fn(n, b, |_, _| std_normal(r));
        let mut f = a * u + c * e2;
        f.add_scalar_mut(latent.mean_const);
        f
    };
    let mut sum = DVector::zeros(n);
    let mut outer = DMatrix::zeros(n, n);
    let mut done = 0;
    while done < draws {
        let b = block.min(draws - done);
        let fl = sample(&model.lf, &al, &cl, b, r);
        let fd = sample(&model.delta, &ad, &cd, b, r);
        let f = DMatrix::from_fn(n, b, |i, k| match rows[i].1 {
            Fidelity::Low => fl[(i, k)],
            Fidelity::High => model.rho * fl[(i, k)] + fd[(i, k)],
        });
        sum += f.column_sum();
        outer += &f * f.transpose();
        done += b;
    }
    let k = draws as f64;
    let mean = sum / k;
    let cov = (outer - &mean * mean.transpose() * k) / (k - 1.0);
    (mean, cov)
}
