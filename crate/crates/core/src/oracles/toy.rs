use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Fidelity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    /// Base sharpness α of the sigmoid boundary.
    pub alpha: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { alpha: 20.0 }
    }
}

impl ToyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleKind {
    ToyLinear,
    ToyNonlinear,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    #[serde(default)]
    pub params: ToyParams,
    /// Exchange directory for the external kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_dir: Option<PathBuf>,
}

impl OracleSpec {
    pub fn toy_linear() -> Self {
        Self {
            kind: OracleKind::ToyLinear,
            params: ToyParams::default(),
            exchange_dir: None,
        }
    }

    pub fn toy_nonlinear() -> Self {
        Self {
            kind: OracleKind::ToyNonlinear,
            ..Self::toy_linear()
        }
    }

    pub fn is_toy(&self) -> bool {
        self.kind != OracleKind::External
    }

    pub fn domain(&self) -> Domain {
        Domain::unit_square()
    }

    /// True class-1 probability at `x` for the given fidelity.
    pub fn probability(&self, x: &[f64], fidelity: Fidelity) -> Result<f64> {
        match (self.kind, fidelity) {
            (OracleKind::External, _) => Err(Error::Unsupported(
                "external oracle has no closed-form probability; use the exchange protocol".into(),
            )),
            (_, Fidelity::Low) => lf_probability(x, &self.params),
            (OracleKind::ToyLinear, Fidelity::High) => hf_probability_linear(x, &self.params),
            (OracleKind::ToyNonlinear, Fidelity::High) => hf_probability_nonlinear(x, &self.params),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_unit_square(x: &[f64]) -> Result<()> {
    Domain::unit_square().check(x)
}

/// d_L(x₁) = (cos(πx₁/2) + 1)/3 − 0.1
pub fn lf_boundary(x1: f64) -> f64 {
    ((PI * x1 / 2.0).cos() + 1.0) / 3.0 - 0.1
}

fn sharpness(x1: f64, params: &ToyParams) -> f64 {
    params.alpha * (1.0 - 0.75 * x1)
}

fn field(x: &[f64], params: &ToyParams, boundary: impl Fn(f64) -> f64) -> Result<f64> {
    check_unit_square(x)?;
    params.validate()?;
    Ok(sigmoid(sharpness(x[0], params) * (x[1] - boundary(x[0]))))
}

pub fn lf_probability(x: &[f64], params: &ToyParams) -> Result<f64> {
    field(x, params, lf_boundary)
}

pub fn hf_probability_linear(x: &[f64], params: &ToyParams) -> Result<f64> {
    field(x, params, |x1| 0.8 * lf_boundary(x1) + 0.3)
}

pub fn hf_probability_nonlinear(x: &[f64], params: &ToyParams) -> Result<f64> {
    field(x, params, |x1| {
        lf_boundary(x1) + 0.2 * (3.0 * PI * x1).sin() * (1.0 - x1) + 0.1
    })
}

/// Independent Bernoulli draws at each requested (x, fidelity).
pub fn sample_labels<R: Rng + ?Sized>(
    oracle: &OracleSpec,
    requests: &[(Vec<f64>, Fidelity)],
    rng: &mut R,
) -> Result<Vec<u8>> {
    if !oracle.is_toy() {
        return Err(Error::Unsupported(
            "labels for an external oracle come from the exchange protocol".into(),
        ));
    }
    requests
        .iter()
        .map(|(x, m)| {
            let p = oracle.probability(x, *m)?;
            Ok(u8::from(rng.random::<f64>() < p))
        })
        .collect()
}
