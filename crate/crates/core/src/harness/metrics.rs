use serde::{Deserialize, Serialize};

use super::experiment::RunLog;
use crate::error::{Error, Result};

/// Probabilities are clamped to [PROB_CLAMP, 1 − PROB_CLAMP] before logging.
pub const PROB_CLAMP: f64 = 1e-12;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid("metrics need at least one point"));
    }
    Ok(())
}

/// Mean log predictive probability of the observed labels.
pub fn elpp(pred_probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(pred_probs.len(), labels.len())?;
    let mut total = 0.0;
    for (&p, &y) in pred_probs.iter().zip(labels) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total += match y {
            1 => p.ln(),
            0 => (1.0 - p).ln(),
            other => return Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        };
    }
    Ok(total / pred_probs.len() as f64)
}

pub fn mse_prob(pred_probs: &[f64], true_probs: &[f64]) -> Result<f64> {
    check_lengths(pred_probs.len(), true_probs.len())?;
    let sum: f64 = pred_probs.iter().zip(true_probs).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(sum / pred_probs.len() as f64)
}

/// Per-round statistics across repeats (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub round: usize,
    /// Repeats contributing to this round (failed repeats drop out).
    pub count: usize,
    pub cumulative_cost_mean: f64,
    pub elpp_mean: f64,
    pub elpp_std: f64,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(runs: &[RunLog]) -> Vec<SummaryRecord> {
    let rounds = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
    (0..rounds)
        .filter_map(|round| {
            let recs: Vec<_> = runs.iter().filter_map(|r| r.records.get(round)).collect();
            if recs.is_empty() {
                return None;
            }
            let elpps: Vec<f64> = recs.iter().map(|r| r.elpp).collect();
            let costs: Vec<f64> = recs.iter().map(|r| r.cumulative_cost).collect();
            let mses: Option<Vec<f64>> = recs.iter().map(|r| r.mse).collect();
            let (elpp_mean, elpp_std) = mean_std(&elpps);
            let mse = mses.map(|m| mean_std(&m));
            Some(SummaryRecord {
                round,
                count: recs.len(),
                cumulative_cost_mean: mean_std(&costs).0,
                elpp_mean,
                elpp_std,
                mse_mean: mse.map(|m| m.0),
                mse_std: mse.map(|m| m.1),
            })
        })
        .collect()
}
