use nalgebra::DMatrix;
use rand::Rng;

use super::scores::{linearize_probit, max_uncertainty_from_moments, LATENT_NUGGET, PROBABILITY_NUGGET};
use super::types::{cost_of, AcquisitionConfig, Query, QueryBatch, Strategy};
use crate::bfgpc::{joint_latent_posterior, predict_latent, predict_proba, BfgpcModel};
use crate::domain::{Domain, Fidelity};
use crate::error::{Error, Result};
use crate::num_core::stabilized_cholesky;
use crate::rng::{self, StreamRng};

/// Candidate (location, fidelity) pairs.
pub type CandidatePool = Vec<(Vec<f64>, Fidelity)>;

/// round(((n_max − 1)/4)·(p(1 − p) + 1)), half away from zero, in [1, n_max].
pub fn repeats_for(p_pred: f64, n_max: u32) -> u32 {
    let p = p_pred.clamp(0.0, 1.0);
    let raw = (n_max.saturating_sub(1) as f64 / 4.0) * (p * (1.0 - p) + 1.0);
    (raw.round() as u32).clamp(1, n_max.max(1))
}

/// Uniform jitter of ±jitter_scale × side per dimension, clamped to the domain.
pub fn apply_jitter<R: Rng + ?Sized>(x: &[f64], jitter_scale: f64, domain: &Domain, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let half = jitter_scale * domain.side(i);
            if half > 0.0 {
                v + rng.random_range(-half..=half)
            } else {
                v
            }
        })
        .collect();
    domain.clamp(&mut out);
    out
}

fn exceeds(total: f64, budget: f64) -> bool {
    // Tolerates accumulated rounding in sums like 0.1 + 0.1 + 0.1.
    total > budget + 1e-9 * budget.max(1.0)
}

/// Fresh candidate pool and test set X′ from the config seed, then greedy
/// selection over that pool.
pub fn greedy_batch(model: &BfgpcModel, strategy: Strategy, config: &AcquisitionConfig) -> Result<QueryBatch> {
    config.validate()?;
    let domain = &model.domain;
    let mut pool = CandidatePool::new();
    for (k, fidelity) in [Fidelity::Low, Fidelity::High].into_iter().enumerate() {
        let mut r = rng::stream(config.seed, "pool", &[k as u64]);
        pool.extend(
            domain
                .sample_uniform_n(config.candidate_count, &mut r)
                .into_iter()
                .map(|x| (x, fidelity)),
        );
    }
    let test_points = if strategy.is_mutual_information() {
        domain.sample_uniform_n(config.test_point_count, &mut rng::stream(config.seed, "test-points", &[]))
    } else {
        Vec::new()
    };
    greedy_over_pool(model, strategy, &pool, &test_points, config)
}

/// Greedy selection over an explicit pool; selected candidates leave the pool.
/// `test_points` is only read by the MI strategies.
pub fn greedy_over_pool(
    model: &BfgpcModel,
    strategy: Strategy,
    pool: &[(Vec<f64>, Fidelity)],
    test_points: &[Vec<f64>],
    config: &AcquisitionConfig,
) -> Result<QueryBatch> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("candidate pool is empty"));
    }
    for (x, _) in pool {
        model.domain.check(x)?;
    }
    let mut builder = Builder::new(model, pool, config);
    match strategy {
        Strategy::Bpmi | Strategy::Lfmi => {
            let p_pred = pool_probabilities(model, pool)?;
            let mut greedy = MiGreedy::new(model, strategy, pool, test_points)?;
            while !builder.closed() {
                let Some((idx, _)) = greedy.step(|i| builder.cost(i)) else { break };
                let repeats = config.fixed_repeats.unwrap_or_else(|| repeats_for(p_pred[idx], config.n_max));
                builder.push(idx, repeats);
            }
        }
        Strategy::MaxUncertainty => {
            let scores = pool_uncertainty(model, pool, config.beta)?;
            builder.alternate(|_, remaining| {
                remaining
                    .iter()
                    .copied()
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if scores[b] >= scores[i] => Some(b),
                        _ => Some(i),
                    })
            });
        }
        Strategy::Random => {
            let mut r = rng::stream(config.seed, "random-pick", &[]);
            builder.alternate(|_, remaining| Some(remaining[r.random_range(0..remaining.len())]));
        }
    }
    Ok(builder.finish())
}

fn pool_probabilities(model: &BfgpcModel, pool: &[(Vec<f64>, Fidelity)]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; pool.len()];
    for fidelity in [Fidelity::Low, Fidelity::High] {
        let idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].1 == fidelity).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| pool[i].0.clone()).collect();
        for (k, p) in predict_proba(model, &pts, fidelity)?.into_iter().enumerate() {
            out[idx[k]] = p;
        }
    }
    Ok(out)
}

fn pool_uncertainty(model: &BfgpcModel, pool: &[(Vec<f64>, Fidelity)], beta: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; pool.len()];
    for fidelity in [Fidelity::Low, Fidelity::High] {
        let idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].1 == fidelity).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| pool[i].0.clone()).collect();
        let (mu, var) = predict_latent(model, &pts, fidelity)?;
        for (k, &i) in idx.iter().enumerate() {
            out[i] = max_uncertainty_from_moments(mu[k], var[k], beta)?;
        }
    }
    Ok(out)
}

struct Builder<'a> {
    domain: &'a Domain,
    pool: &'a [(Vec<f64>, Fidelity)],
    config: &'a AcquisitionConfig,
    jitter: StreamRng,
    taken: Vec<bool>,
    batch: QueryBatch,
}

impl<'a> Builder<'a> {
    fn new(model: &'a BfgpcModel, pool: &'a [(Vec<f64>, Fidelity)], config: &'a AcquisitionConfig) -> Self {
        Self {
            domain: &model.domain,
            pool,
            config,
            jitter: rng::stream(config.seed, "jitter", &[]),
            taken: vec![false; pool.len()],
            batch: QueryBatch::default(),
        }
    }

    fn cost(&self, i: usize) -> f64 {
        cost_of(self.config.costs, self.pool[i].1)
    }

    fn closed(&self) -> bool {
        exceeds(self.batch.total_cost, self.config.budget)
            || self.taken.iter().all(|&t| t)
            || self.config.max_selections.is_some_and(|n| self.batch.queries.len() >= n)
    }

    fn push(&mut self, idx: usize, repeats: u32) {
        let (x, fidelity) = &self.pool[idx];
        let mut samples = Vec::with_capacity(repeats as usize);
        samples.push(x.clone());
        for _ in 1..repeats {
            samples.push(apply_jitter(x, self.config.jitter_scale, self.domain, &mut self.jitter));
        }
        self.taken[idx] = true;
        self.batch.queries.push(Query {
            x: x.clone(),
            fidelity: *fidelity,
            repeats,
            samples,
        });
        // Summed afresh so the invariant holds exactly as stated.
        self.batch.total_cost = self
            .batch
            .queries
            .iter()
            .map(|q| q.repeats as f64 * cost_of(self.config.costs, q.fidelity))
            .sum();
    }

    /// Alternates L, H, L, … picking one candidate per turn; a fidelity
    /// without remaining candidates yields its turn.
    fn alternate(&mut self, mut pick: impl FnMut(Fidelity, &[usize]) -> Option<usize>) {
        let mut turn = Fidelity::Low;
        while !self.closed() {
            let other = match turn {
                Fidelity::Low => Fidelity::High,
                Fidelity::High => Fidelity::Low,
            };
            let mut chosen = None;
            for fidelity in [turn, other] {
                let remaining: Vec<usize> = (0..self.pool.len())
                    .filter(|&i| !self.taken[i] && self.pool[i].1 == fidelity)
                    .collect();
                if !remaining.is_empty() {
                    chosen = pick(fidelity, &remaining);
                    break;
                }
            }
            let Some(idx) = chosen else { break };
            self.push(idx, 1);
            turn = other;
        }
    }

    fn finish(self) -> QueryBatch {
        self.batch
    }
}

/// Greedy MI over a pool. Keeps two covariance states over the pool —
/// conditioned on the batch Q, and on X′ then Q — so the marginal gain of
/// candidate q is ½[log var(q | Q) − log var(q | Q, X′)].
pub(crate) struct MiGreedy {
    given_batch: DMatrix<f64>,
    given_tests: DMatrix<f64>,
    available: Vec<bool>,
    floor: f64,
}

impl MiGreedy {
    pub(crate) fn new(
        model: &BfgpcModel,
        strategy: Strategy,
        pool: &[(Vec<f64>, Fidelity)],
        test_points: &[Vec<f64>],
    ) -> Result<Self> {
        if test_points.is_empty() {
            return Err(Error::invalid("mutual-information acquisition needs test points"));
        }
        let latent = joint_latent_posterior(model, pool, test_points)?;
        let (joint, nugget) = match strategy {
            Strategy::Lfmi => (latent, LATENT_NUGGET),
            Strategy::Bpmi => (linearize_probit(&latent), PROBABILITY_NUGGET),
            other => return Err(Error::invalid(format!("{other} is not an MI strategy"))),
        };
        let joint = joint.with_nugget(nugget);
        let p = pool.len();
        let t = test_points.len();
        let cov_pp = joint.cov.view((0, 0), (p, p)).into_owned();
        let mut v = joint.cov.view((p, 0), (t, p)).into_owned();
        let tt = stabilized_cholesky(&joint.cov.view((p, p), (t, t)).into_owned())?;
        tt.lower.solve_lower_triangular_mut(&mut v);
        let given_tests = &cov_pp - v.transpose() * &v;
        Ok(Self {
            given_batch: cov_pp,
            given_tests,
            available: vec![true; p],
            floor: 0.5 * nugget,
        })
    }

    pub(crate) fn gain(&self, i: usize) -> f64 {
        let a = self.given_batch[(i, i)].max(self.floor);
        let b = self.given_tests[(i, i)].max(self.floor);
        0.5 * (a.ln() - b.ln())
    }

    /// Selects argmax gain/cost (lowest index on ties) and conditions both
    /// states on it. Returns the index and its raw gain.
    pub(crate) fn step(&mut self, cost: impl Fn(usize) -> f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..self.available.len()).filter(|&i| self.available[i]) {
            let score = self.gain(i) / cost(i);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (idx, _) = best?;
        let gain = self.gain(idx);
        self.available[idx] = false;
        condition(&mut self.given_batch, idx, self.floor);
        condition(&mut self.given_tests, idx, self.floor);
        Some((idx, gain))
    }
}

/// C ← C − c cᵀ / C_ss with c = C[:, s].
fn condition(c: &mut DMatrix<f64>, s: usize, floor: f64) {
    let pivot = c[(s, s)].max(floor);
    let col = c.column(s).into_owned();
    c.ger(-1.0 / pivot, &col, &col, 1.0);
}
