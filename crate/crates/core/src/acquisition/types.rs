use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Fidelity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "BPMI")]
    Bpmi,
    #[serde(rename = "LFMI")]
    Lfmi,
    #[serde(rename = "MAXUNC")]
    MaxUncertainty,
    #[serde(rename = "RANDOM")]
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Bpmi,
        Strategy::Lfmi,
        Strategy::MaxUncertainty,
        Strategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bpmi => "BPMI",
            Strategy::Lfmi => "LFMI",
            Strategy::MaxUncertainty => "MAXUNC",
            Strategy::Random => "RANDOM",
        }
    }

    pub fn is_mutual_information(self) -> bool {
        matches!(self, Strategy::Bpmi | Strategy::Lfmi)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// A selected (location, fidelity) with its repeat count. `samples` holds
/// the `repeats` locations actually simulated: the original first, then
/// jittered copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
    pub repeats: u32,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub queries: Vec<Query>,
    pub total_cost: f64,
}

impl QueryBatch {
    pub fn count(&self, fidelity: Fidelity) -> usize {
        self.queries.iter().filter(|q| q.fidelity == fidelity).count()
    }

    pub fn num_samples(&self) -> usize {
        self.queries.iter().map(|q| q.samples.len()).sum()
    }

    pub fn mean_repeats(&self) -> f64 {
        if self.queries.is_empty() {
            0.0
        } else {
            self.queries.iter().map(|q| q.repeats as f64).sum::<f64>() / self.queries.len() as f64
        }
    }

    pub fn last_cost(&self, costs: (f64, f64)) -> f64 {
        self.queries
            .last()
            .map(|q| q.repeats as f64 * cost_of(costs, q.fidelity))
            .unwrap_or(0.0)
    }
}

pub(crate) fn cost_of(costs: (f64, f64), fidelity: Fidelity) -> f64 {
    match fidelity {
        Fidelity::Low => costs.0,
        Fidelity::High => costs.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// (c_L, c_H)
    pub costs: (f64, f64),
    pub budget: f64,
    /// Candidates drawn per fidelity.
    pub candidate_count: usize,
    /// Size of the uniform test set X′ for the MI strategies.
    pub test_point_count: usize,
    pub n_max: u32,
    /// Jitter half-width as a fraction of each domain side.
    pub jitter_scale: f64,
    /// Weight of the epistemic term in the max-uncertainty score.
    pub beta: f64,
    pub seed: u64,
    /// Overrides the adaptive repeat count when set.
    pub fixed_repeats: Option<u32>,
    /// Caps the number of selections regardless of budget.
    pub max_selections: Option<usize>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            costs: (0.1, 1.0),
            budget: 100.0,
            candidate_count: 256,
            test_point_count: 100,
            n_max: 13,
            jitter_scale: 0.01,
            beta: 0.5,
            seed: 0,
            fixed_repeats: None,
            max_selections: None,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let (cl, ch) = self.costs;
        if !(cl > 0.0 && ch > 0.0 && cl.is_finite() && ch.is_finite()) {
            return Err(Error::invalid("costs must be positive"));
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::invalid("budget must be positive"));
        }
        if self.candidate_count == 0 {
            return Err(Error::invalid("candidate_count must be >= 1"));
        }
        if self.test_point_count == 0 {
            return Err(Error::invalid("test_point_count must be >= 1"));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max must be >= 1"));
        }
        if self.jitter_scale.is_nan() || self.jitter_scale < 0.0 {
            return Err(Error::invalid("jitter_scale must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("beta must lie in [0, 1]"));
        }
        if self.max_selections == Some(0) {
            return Err(Error::invalid("max_selections must be >= 1"));
        }
        if self.fixed_repeats == Some(0) {
            return Err(Error::invalid("fixed_repeats must be >= 1"));
        }
        Ok(())
    }
}
