//! Bi-fidelity variational GP classifier with the autoregressive structure
//! f_H(x) = ρ f_L(x) + δ(x).
//!
//! Both latents are sparse variational GPs in the unwhitened
//! parameterization q(u) = N(m, L Lᵀ) at fixed inducing locations; each has
//! a constant prior mean and its own scaled RBF kernel.

mod model;
mod objective;
mod posterior;
mod serialize;
mod train;
mod whiten;

pub use model::{
    default_inducing_counts, init_model, BfgpcModel, LabeledDataset, LatentGp, Observation,
    INDUCING_JITTER, INIT_WHITENED_SCALE,
};
pub use objective::{elbo, kl_divergences, regularized_loss, regularized_loss_gradient, LossBreakdown};
pub use posterior::{joint_latent_posterior, predict_latent, predict_proba, LatentPosterior};
pub use serialize::{ModelDocument, MODEL_FORMAT_VERSION};
pub use train::{fit, train, ThetaPrior, TrainedModel, TrainingConfig};

pub(crate) use serialize::check_major_version;
