use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{default_inducing_counts, init_model, BfgpcModel, LabeledDataset, INIT_WHITENED_SCALE};
use super::whiten::Whitener;
use super::objective::{breakdown, loss_and_gradient, pack_params, unpack_params, Prepared};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::num_core::{GaussHermite, DEFAULT_GH_ORDER};
use crate::rng;

/// Centers of the L2 penalty on (log σ²_L, log ℓ_L, log σ²_δ, log ℓ_δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaPrior {
    pub log_output_scale_lf: f64,
    pub log_lengthscale_lf: f64,
    pub log_output_scale_delta: f64,
    pub log_lengthscale_delta: f64,
}

impl ThetaPrior {
    /// Centered on the initialization values.
    pub fn default_for(domain: &Domain) -> Self {
        let log_l = (0.5 * domain.mean_side()).ln();
        Self {
            log_output_scale_lf: 0.0,
            log_lengthscale_lf: log_l,
            log_output_scale_delta: 0.0,
            log_lengthscale_delta: log_l,
        }
    }

    pub fn centers(&self) -> [f64; 4] {
        [
            self.log_output_scale_lf,
            self.log_lengthscale_lf,
            self.log_output_scale_delta,
            self.log_lengthscale_delta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub restarts: usize,
    pub reg_lambda: f64,
    /// `None` centers the penalty on the initialization values.
    pub theta_prior: Option<ThetaPrior>,
    pub gh_order: usize,
    pub seed: u64,
    /// Cap on f_L inducing points (count is min(cap, N_L + N_H)).
    pub lf_inducing_max: usize,
    /// Cap on δ inducing points (count is min(cap, N_H)).
    pub delta_inducing_max: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 500,
            restarts: 3,
            reg_lambda: 1e-2,
            theta_prior: None,
            gh_order: DEFAULT_GH_ORDER,
            seed: 0,
            lf_inducing_max: 64,
            delta_inducing_max: 32,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("training steps must be >= 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("training restarts must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.reg_lambda.is_nan() || self.reg_lambda < 0.0 {
            return Err(Error::invalid("reg_lambda must be >= 0"));
        }
        if self.gh_order == 0 {
            return Err(Error::invalid("gh_order must be >= 1"));
        }
        if self.lf_inducing_max == 0 || self.delta_inducing_max == 0 {
            return Err(Error::invalid("inducing caps must be >= 1"));
        }
        Ok(())
    }

    pub fn theta_prior_for(&self, domain: &Domain) -> ThetaPrior {
        self.theta_prior.unwrap_or_else(|| ThetaPrior::default_for(domain))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: BfgpcModel,
    /// ELBO at every iterate of the winning restart, initial and final included.
    pub elbo_trace: Vec<f64>,
    pub restart: usize,
    /// Restarts aborted on a non-finite loss, with the reason.
    pub failed_restarts: Vec<(usize, String)>,
}

impl TrainedModel {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("trace is never empty")
    }
}

struct Adam {
    lr: f64,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn run_restart(
    start: BfgpcModel,
    data: &LabeledDataset,
    config: &TrainingConfig,
) -> Result<(BfgpcModel, Vec<f64>)> {
    let prep = Prepared::new(&start, data)?;
    let rule = GaussHermite::cached(config.gh_order)?;
    let prior = config.theta_prior_for(&start.domain);
    let mut model = start;
    // Adam runs in whitened coordinates; the model always holds the
    // corresponding stored parameters.
    let whitener = Whitener::new(&model);
    let mut theta = whitener.whiten(&model, &pack_params(&model))?;
    let mut adam = Adam::new(config.learning_rate, theta.len());
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..config.steps {
        let (b, grad) = loss_and_gradient(&model, &prep, &rule, config.reg_lambda, &prior)?;
        let loss = b.loss();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure(format!("non-finite loss at step {step}")));
        }
        trace.push(b.elbo());
        let grad = whitener.pull_back(&model, &theta, &grad)?;
        adam.step(&mut theta, &grad);
        let stored = whitener.unwhiten(&model, &theta)?;
        unpack_params(&mut model, &stored);
    }
    let last = breakdown(&model, &prep, &rule, config.reg_lambda, &prior)?;
    if !last.loss().is_finite() {
        return Err(Error::TrainingFailure("non-finite final loss".into()));
    }
    trace.push(last.elbo());
    Ok((model, trace))
}

/// Starting point of restart `r`: the given model for r = 0, otherwise a
/// re-seeded initialization with perturbed log-hyperparameters and ρ.
fn restart_start(model: &BfgpcModel, config: &TrainingConfig, r: usize) -> Result<BfgpcModel> {
    if r == 0 {
        return Ok(model.clone());
    }
    let seed = rng::derive_seed(config.seed, &[rng::tag("restart"), r as u64]);
    let mut fresh = init_model(
        &model.domain,
        model.lf.num_inducing(),
        model.delta.num_inducing(),
        seed,
    )?;
    let mut rng = rng::stream(seed, "restart-perturb", &[]);
    for latent in [&mut fresh.lf, &mut fresh.delta] {
        latent.kernel.output_scale *= rng.random_range(-0.5f64..0.5).exp();
        latent.kernel.lengthscale *= rng.random_range(-0.5f64..0.5).exp();
        latent.reset_variational(INIT_WHITENED_SCALE)?;
    }
    fresh.rho += rng.random_range(-0.5..0.5);
    Ok(fresh)
}

/// Final model and ELBO trace of one restart.
type RestartOutcome = Result<(BfgpcModel, Vec<f64>)>;

/// Runs `config.restarts` Adam optimizations of the regularized loss and
/// keeps the one with the highest final ELBO.
pub fn train(model: &BfgpcModel, data: &LabeledDataset, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    data.validate(&model.domain)?;
    let results: Vec<(usize, RestartOutcome)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| (r, restart_start(model, config, r).and_then(|s| run_restart(s, data, config))))
        .collect();

    let mut best: Option<(usize, BfgpcModel, Vec<f64>)> = None;
    let mut failed = Vec::new();
    for (r, res) in results {
        match res {
            Ok((m, trace)) => {
                let f = *trace.last().expect("trace has a final entry");
                let better = match &best {
                    None => true,
                    Some((_, _, bt)) => f > *bt.last().expect("trace has a final entry"),
                };
                if better {
                    best = Some((r, m, trace));
                }
            }
            Err(e) => failed.push((r, e.to_string())),
        }
    }
    match best {
        Some((restart, model, elbo_trace)) => Ok(TrainedModel {
            model,
            elbo_trace,
            restart,
            failed_restarts: failed,
        }),
        None => Err(Error::TrainingFailure(format!(
            "all {} restarts failed: {}",
            config.restarts,
            failed
                .iter()
                .map(|(r, e)| format!("#{r}: {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

/// Fresh initialization sized to `data`, then [`train`].
pub fn fit(domain: &Domain, data: &LabeledDataset, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    let (m_lf, m_delta) =
        default_inducing_counts(data, config.lf_inducing_max, config.delta_inducing_max);
    let seed = rng::derive_seed(config.seed, &[rng::tag("init")]);
    let model = init_model(domain, m_lf, m_delta, seed)?;
    train(&model, data, config)
}
