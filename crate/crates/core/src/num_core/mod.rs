//! Deterministic numerical primitives shared by the classifier and the
//! acquisition functions.

mod kernel;
mod linalg;
mod probit;
mod quadrature;

pub use kernel::{rbf_kernel, KernelParams};
pub use linalg::{
    gaussian_mi, logdet_from_factor, stabilized_cholesky, CholeskyFactor, GaussianJoint,
    NUGGET_LADDER,
};
pub use probit::{inv_mills, log_ndtr, norm_cdf, norm_pdf, probit_link};
pub use quadrature::{
    gh_expected_bernoulli_loglik, gh_expected_loglik_with_grad, marginal_bernoulli_prob,
    GaussHermite, DEFAULT_GH_ORDER,
};
