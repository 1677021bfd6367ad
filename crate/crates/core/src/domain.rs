use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Data source of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fidelity {
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "H")]
    High,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Low => "L",
            Fidelity::High => "H",
        }
    }
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "l" | "low" => Ok(Fidelity::Low),
            "H" | "h" | "high" => Ok(Fidelity::High),
            other => Err(Error::invalid(format!("unknown fidelity {other:?} (expected L or H)"))),
        }
    }
}

/// Axis-aligned box of per-dimension `[lo, hi]` bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Domain {
    bounds: Vec<[f64; 2]>,
}

impl Domain {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("domain needs at least one dimension"));
        }
        for (i, [lo, hi]) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "invalid bounds [{lo}, {hi}] in dimension {i}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit_square() -> Self {
        Self {
            bounds: vec![[0.0, 1.0], [0.0, 1.0]],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn side(&self, i: usize) -> f64 {
        self.bounds[i][1] - self.bounds[i][0]
    }

    pub fn mean_side(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).sum::<f64>() / self.dim() as f64
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::invalid(format!("point {x:?} outside domain {:?}", self.bounds)))
        }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, [lo, hi]) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    pub fn sample_uniform_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_uniform(rng)).collect()
    }

    /// Latin hypercube sample: each dimension is cut into `n` strata and
    /// every stratum receives exactly one point.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut points = vec![vec![0.0; self.dim()]; n];
        for (d, [lo, hi]) in self.bounds.iter().enumerate() {
            let mut strata: Vec<usize> = (0..n).collect();
            // Fisher-Yates
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                strata.swap(i, j);
            }
            for (p, s) in points.iter_mut().zip(strata) {
                let u = (s as f64 + rng.random::<f64>()) / n as f64;
                p[d] = lo + (hi - lo) * u;
            }
        }
        points
    }
}
