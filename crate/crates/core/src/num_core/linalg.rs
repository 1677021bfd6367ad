//! Nugget-stabilized Cholesky factorization and Gaussian mutual information.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative nugget rungs tried in order, scaled by the mean diagonal.
pub const NUGGET_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    /// Lower-triangular L with L Lᵀ = input + nugget_used · I.
    pub lower: DMatrix<f64>,
    pub nugget_used: f64,
}

impl CholeskyFactor {
    pub fn logdet(&self) -> f64 {
        logdet_from_factor(&self.lower)
    }

    /// Solves (L Lᵀ) X = B in place.
    pub fn solve_mut(&self, b: &mut DMatrix<f64>) {
        self.lower.solve_lower_triangular_mut(b);
        self.lower.tr_solve_lower_triangular_mut(b);
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// (L Lᵀ)⁻¹ as a dense matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.lower.nrows();
        let mut eye = DMatrix::identity(n, n);
        self.solve_mut(&mut eye);
        eye
    }
}

pub fn logdet_from_factor(lower: &DMatrix<f64>) -> f64 {
    2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::invalid(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    let n = cov.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!(
                    "covariance not symmetric at ({i},{j}): {} vs {}",
                    cov[(i, j)],
                    cov[(j, i)]
                )));
            }
        }
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariance has non-finite entries"));
    }
    Ok(())
}

/// Plain Cholesky of `a + nugget·I` reading the lower triangle; `None` on a
/// non-positive pivot.
fn cholesky_lower(a: &DMatrix<f64>, nugget: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + nugget;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

fn min_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let sym = (cov + cov.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Walks the nugget ladder from `start_rung`, scaling rungs by `scale`.
/// Returns the factor and the rung that succeeded.
fn factor_on_ladder(
    cov: &DMatrix<f64>,
    scale: f64,
    start_rung: usize,
) -> Result<(CholeskyFactor, usize)> {
    for (rung, rel) in NUGGET_LADDER.iter().enumerate().skip(start_rung) {
        let nugget = rel * scale;
        if let Some(lower) = cholesky_lower(cov, nugget) {
            return Ok((CholeskyFactor { lower, nugget_used: nugget }, rung));
        }
    }
    Err(Error::NumericalFailure {
        message: format!(
            "cholesky failed for {}x{} matrix at maximum nugget {:.3e}",
            cov.nrows(),
            cov.ncols(),
            NUGGET_LADDER[NUGGET_LADDER.len() - 1] * scale
        ),
        min_eigenvalue: min_eigenvalue(cov),
    })
}

fn mean_diagonal(cov: &DMatrix<f64>) -> f64 {
    if cov.nrows() == 0 {
        return 0.0;
    }
    cov.diagonal().mean()
}

/// Factors `cov + nugget·I`, escalating the nugget through
/// [`NUGGET_LADDER`] × mean diagonal until the factorization succeeds.
pub fn stabilized_cholesky(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    check_symmetric(cov)?;
    factor_on_ladder(cov, mean_diagonal(cov), 0).map(|(f, _)| f)
}

/// A multivariate Gaussian over a finite set of latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::invalid(format!(
                "mean length {} does not match covariance size {}",
                mean.len(),
                cov.nrows()
            )));
        }
        check_symmetric(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sub-joint over `idx` (in the given order).
    pub fn select(&self, idx: &[usize]) -> GaussianJoint {
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        GaussianJoint { mean, cov }
    }

    /// Adds `nugget` to every diagonal entry.
    pub fn with_nugget(mut self, nugget: f64) -> GaussianJoint {
        for i in 0..self.dim() {
            self.cov[(i, i)] += nugget;
        }
        self
    }
}

fn validate_split(n: usize, a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mutual information needs two nonempty index sets"));
    }
    let mut seen = vec![false; n];
    for &i in a.iter().chain(b) {
        if i >= n {
            return Err(Error::invalid(format!("index {i} out of range for dimension {n}")));
        }
        if seen[i] {
            return Err(Error::invalid(format!("index {i} appears twice in the split")));
        }
        seen[i] = true;
    }
    if a.len() + b.len() != n {
        return Err(Error::invalid(format!(
            "split covers {} of {} indices",
            a.len() + b.len(),
            n
        )));
    }
    Ok(())
}

/// I(A; B) = ½(log|Σ_A| + log|Σ_B| − log|Σ_AB|) in nats.
///
/// The nugget is chosen on the full joint and reused for both marginal
/// blocks, which keeps the result nonnegative.
pub fn gaussian_mi(joint: &GaussianJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    let n = joint.dim();
    validate_split(n, a, b)?;
    if a.iter().all(|&i| b.iter().all(|&j| joint.cov[(i, j)] == 0.0)) {
        return Ok(0.0);
    }
    let order: Vec<usize> = a.iter().chain(b).copied().collect();
    let full = joint.select(&order);
    let scale = mean_diagonal(&full.cov);
    let (f_ab, rung) = factor_on_ladder(&full.cov, scale, 0)?;
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..n).collect();
    let (f_a, _) = factor_on_ladder(&full.select(&ia).cov, scale, rung)?;
    let (f_b, _) = factor_on_ladder(&full.select(&ib).cov, scale, rung)?;
    let mi = 0.5 * (f_a.logdet() + f_b.logdet() - f_ab.logdet());
    Ok(mi.max(0.0))
}
