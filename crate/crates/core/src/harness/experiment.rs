use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{elpp, mse_prob};
use super::persist::config_hash;
use crate::acquisition::{greedy_batch, AcquisitionConfig, QueryBatch, Strategy};
use crate::bfgpc::{fit, predict_proba, LabeledDataset, Observation, TrainingConfig};
use crate::domain::Fidelity;
use crate::error::{Error, Result};
use crate::oracles::{sample_labels, OracleSpec};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub oracle: OracleSpec,
    pub strategy: Strategy,
    pub init_lf: usize,
    pub init_hf: usize,
    pub rounds: usize,
    /// Overrides `acquisition.budget`.
    pub round_budget: f64,
    /// (c_L, c_H); overrides `acquisition.costs`.
    pub costs: (f64, f64),
    pub n_repeats_of_experiment: usize,
    pub test_set_size: usize,
    pub training: TrainingConfig,
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            oracle: OracleSpec::toy_linear(),
            strategy: Strategy::Bpmi,
            init_lf: 50,
            init_hf: 25,
            rounds: 5,
            round_budget: 100.0,
            costs: (0.1, 1.0),
            n_repeats_of_experiment: 20,
            test_set_size: 10_000,
            training: TrainingConfig::default(),
            acquisition: AcquisitionConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_lf == 0 || self.init_hf == 0 {
            return Err(Error::Config("init_lf and init_hf must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be >= 1"));
        }
        if self.n_repeats_of_experiment == 0 {
            return Err(Error::Config("n_repeats_of_experiment must be >= 1".into()));
        }
        if self.test_set_size == 0 {
            return Err(Error::Config("test_set_size must be >= 1".into()));
        }
        self.oracle.params.validate()?;
        self.training.validate()?;
        self.acquisition_for(0, 0).validate()
    }

    /// Acquisition settings for one round, with the experiment's budget,
    /// costs and a per-(repeat, round) seed.
    pub fn acquisition_for(&self, repeat: usize, round: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            budget: self.round_budget,
            costs: self.costs,
            seed: rng::derive_seed(self.seed, &[rng::tag("acquire"), repeat as u64, round as u64]),
            ..self.acquisition.clone()
        }
    }

    pub fn training_for(&self, repeat: usize, round: usize) -> TrainingConfig {
        TrainingConfig {
            seed: rng::derive_seed(self.seed, &[rng::tag("train"), repeat as u64, round as u64]),
            ..self.training.clone()
        }
    }

    fn require_toy(&self) -> Result<()> {
        if self.oracle.is_toy() {
            Ok(())
        } else {
            Err(Error::Config(
                "an external oracle needs supplied data; use the suggest/ingest workflow".into(),
            ))
        }
    }
}

/// Held-out HF evaluation set, fixed per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub true_probs: Option<Vec<f64>>,
}

pub fn build_test_set(config: &ExperimentConfig, repeat: usize) -> Result<TestSet> {
    config.require_toy()?;
    let domain = config.oracle.domain();
    let mut r = rng::stream(config.seed, "test-set", &[repeat as u64]);
    let points = domain.sample_uniform_n(config.test_set_size, &mut r);
    let requests: Vec<(Vec<f64>, Fidelity)> = points.iter().map(|x| (x.clone(), Fidelity::High)).collect();
    let labels = sample_labels(&config.oracle, &requests, &mut r)?;
    let true_probs = points
        .iter()
        .map(|x| config.oracle.probability(x, Fidelity::High))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet {
        points,
        labels,
        true_probs: Some(true_probs),
    })
}

/// Uniform random design of `init_lf` LF and `init_hf` HF labeled points.
pub fn initial_design<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<LabeledDataset> {
    if config.init_lf == 0 || config.init_hf == 0 {
        return Err(Error::Config("init_lf and init_hf must be >= 1".into()));
    }
    config.require_toy()?;
    let domain = config.oracle.domain();
    let mut requests = Vec::with_capacity(config.init_lf + config.init_hf);
    for x in domain.sample_uniform_n(config.init_lf, rng) {
        requests.push((x, Fidelity::Low));
    }
    for x in domain.sample_uniform_n(config.init_hf, rng) {
        requests.push((x, Fidelity::High));
    }
    let labels = sample_labels(&config.oracle, &requests, rng)?;
    let mut data = LabeledDataset::default();
    for ((x, m), y) in requests.into_iter().zip(labels) {
        data.push(m, Observation::new(x, y));
    }
    Ok(data)
}

/// Metrics at one data state. Record k is evaluated after training on the
/// data available at the start of round k; `cumulative_cost` is the
/// acquisition spend to reach that state (0 for k = 0; the initial design is
/// not charged) and the query counts describe the batch that led to it (the
/// initial design for k = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub cumulative_cost: f64,
    pub elpp: f64,
    pub mse: Option<f64>,
    pub n_lf_queries: usize,
    pub n_hf_queries: usize,
    pub mean_repeats: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub repeat: usize,
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub config_hash: String,
    pub records: Vec<RoundRecord>,
    /// Batches acquired in rounds 0..rounds.
    pub batches: Vec<QueryBatch>,
    /// Set when a round failed; the log stops at the failed round.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

fn expand(batch: &QueryBatch) -> Vec<(Vec<f64>, Fidelity)> {
    batch
        .queries
        .iter()
        .flat_map(|q| q.samples.iter().map(move |x| (x.clone(), q.fidelity)))
        .collect()
}

/// One repeat of the experiment: `rounds` acquisitions and `rounds + 1`
/// evaluations. A failed round ends the repeat and is recorded in the log.
pub fn run_repeat(config: &ExperimentConfig, repeat: usize) -> Result<RunLog> {
    config.validate()?;
    let test = build_test_set(config, repeat)?;
    let mut data = initial_design(config, &mut rng::stream(config.seed, "initial-design", &[repeat as u64]))?;
    let domain = config.oracle.domain();
    let mut log = RunLog {
        repeat,
        seed: config.seed,
        strategy: Some(config.strategy),
        config_hash: config_hash(config)?,
        ..RunLog::default()
    };
    let mut cumulative = 0.0;
    let (mut n_lf, mut n_hf, mut mean_repeats) = (config.init_lf, config.init_hf, 1.0);

    for round in 0..=config.rounds {
        let start = Instant::now();
        let step = || -> Result<(f64, f64, Option<QueryBatch>)> {
            let trained = fit(&domain, &data, &config.training_for(repeat, round))?;
            let probs = predict_proba(&trained.model, &test.points, Fidelity::High)?;
            let e = elpp(&probs, &test.labels)?;
            let m = match &test.true_probs {
                Some(t) => mse_prob(&probs, t)?,
                None => f64::NAN,
            };
            let batch = if round < config.rounds {
                Some(greedy_batch(&trained.model, config.strategy, &config.acquisition_for(repeat, round))?)
            } else {
                None
            };
            Ok((e, m, batch))
        };
        let (e, m, batch) = match step() {
            Ok(v) => v,
            Err(err) => {
                log.failure = Some(format!("round {round}: {err}"));
                break;
            }
        };
        if let Some(batch) = &batch {
            let requests = expand(batch);
            let mut r = rng::stream(config.seed, "labels", &[repeat as u64, round as u64]);
            let labels = sample_labels(&config.oracle, &requests, &mut r)?;
            for ((x, fid), y) in requests.into_iter().zip(labels) {
                data.push(fid, Observation::new(x, y));
            }
        }
        log.records.push(RoundRecord {
            round,
            cumulative_cost: cumulative,
            elpp: e,
            mse: test.true_probs.as_ref().map(|_| m),
            n_lf_queries: n_lf,
            n_hf_queries: n_hf,
            mean_repeats,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if let Some(batch) = batch {
            cumulative += batch.total_cost;
            n_lf = batch.count(Fidelity::Low);
            n_hf = batch.count(Fidelity::High);
            mean_repeats = batch.mean_repeats();
            log.batches.push(batch);
        }
    }
    Ok(log)
}

/// All repeats, in parallel; failures inside a repeat are recorded in its log.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunLog>> {
    config.validate()?;
    config.require_toy()?;
    (0..config.n_repeats_of_experiment)
        .into_par_iter()
        .map(|r| run_repeat(config, r))
        .collect()
}
