//! Versioned JSON document for a trained model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{BfgpcModel, LatentGp};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::num_core::KernelParams;

pub const MODEL_FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentDocument {
    output_scale: f64,
    lengthscale: f64,
    mean_const: f64,
    inducing_points: Vec<Vec<f64>>,
    var_mean: Vec<f64>,
    /// Rows of the lower-triangular factor, zeros above the diagonal included.
    var_chol: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    format_version: String,
    kind: String,
    input_dim: usize,
    domain_bounds: Vec<[f64; 2]>,
    rho: f64,
    lf: LatentDocument,
    delta: LatentDocument,
}

fn latent_doc(l: &LatentGp) -> LatentDocument {
    let m = l.num_inducing();
    LatentDocument {
        output_scale: l.kernel.output_scale,
        lengthscale: l.kernel.lengthscale,
        mean_const: l.mean_const,
        inducing_points: l.inducing_points(),
        var_mean: l.var_mean.iter().copied().collect(),
        var_chol: (0..m).map(|i| l.var_chol.row(i).iter().copied().collect()).collect(),
    }
}

fn latent_from_doc(d: &LatentDocument, dim: usize) -> Result<LatentGp> {
    let m = d.inducing_points.len();
    if d.inducing_points.iter().any(|p| p.len() != dim)
        || d.var_mean.len() != m
        || d.var_chol.len() != m
        || d.var_chol.iter().any(|r| r.len() != m)
    {
        return Err(Error::invalid("model document has inconsistent array shapes"));
    }
    Ok(LatentGp {
        kernel: KernelParams::new(d.output_scale, d.lengthscale)?,
        mean_const: d.mean_const,
        inducing: DMatrix::from_fn(m, dim, |i, j| d.inducing_points[i][j]),
        var_mean: DVector::from_vec(d.var_mean.clone()),
        var_chol: DMatrix::from_fn(m, m, |i, j| d.var_chol[i][j]),
    })
}

pub(crate) fn check_major_version(found: &str, expected: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().map(str::to_owned);
    if major(found) != major(expected) {
        return Err(Error::invalid(format!(
            "unsupported format_version {found:?} (expected {expected})"
        )));
    }
    Ok(())
}

impl ModelDocument {
    pub fn from_model(model: &BfgpcModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION.to_string(),
            kind: "bfgpc".to_string(),
            input_dim: model.input_dim(),
            domain_bounds: model.domain.bounds().to_vec(),
            rho: model.rho,
            lf: latent_doc(&model.lf),
            delta: latent_doc(&model.delta),
        }
    }

    pub fn into_model(self) -> Result<BfgpcModel> {
        check_major_version(&self.format_version, MODEL_FORMAT_VERSION)?;
        if self.kind != "bfgpc" {
            return Err(Error::invalid(format!("unexpected model kind {:?}", self.kind)));
        }
        let domain = Domain::new(self.domain_bounds.clone())?;
        if domain.dim() != self.input_dim {
            return Err(Error::invalid("input_dim does not match domain_bounds"));
        }
        let model = BfgpcModel {
            lf: latent_from_doc(&self.lf, self.input_dim)?,
            delta: latent_from_doc(&self.delta, self.input_dim)?,
            rho: self.rho,
            domain,
        };
        model.validate()?;
        Ok(model)
    }
}

impl BfgpcModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from_model(self))
            .expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad model document: {e}")))?;
        doc.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
