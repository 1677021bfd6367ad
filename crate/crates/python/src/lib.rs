//! Python bindings: training, prediction, batch selection and the toy
//! experiment harness. Points cross the boundary as lists of coordinate
//! lists; configuration objects cross as JSON strings.

use std::path::PathBuf;

use bpmi_core::acquisition::{bpmi_score, greedy_batch, lfmi_score, AcquisitionConfig, QueryBatch, Strategy};
use bpmi_core::bfgpc::{fit, predict_latent, predict_proba, BfgpcModel, LabeledDataset, Observation, TrainingConfig};
use bpmi_core::harness::{run_experiment, summarize, ExperimentConfig};
use bpmi_core::oracles::{sample_labels, OracleSpec};
use bpmi_core::{rng, Domain, Error, Fidelity};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NumericalFailure { .. } | Error::TrainingFailure(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn fidelity(s: &str) -> PyResult<Fidelity> {
    s.parse().map_err(to_py)
}

fn strategy(s: &str) -> PyResult<Strategy> {
    s.parse().map_err(to_py)
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("bad {what}: {e}"))),
    }
}

fn oracle(kind: &str) -> PyResult<OracleSpec> {
    match kind {
        "linear" => Ok(OracleSpec::toy_linear()),
        "nonlinear" => Ok(OracleSpec::toy_nonlinear()),
        other => Err(PyValueError::new_err(format!("unknown toy problem {other:?} (linear or nonlinear)"))),
    }
}

fn observations(x: Vec<Vec<f64>>, y: Vec<u8>) -> PyResult<Vec<Observation>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err(format!("{} points but {} labels", x.len(), y.len())));
    }
    Ok(x.into_iter().zip(y).map(|(x, y)| Observation::new(x, y)).collect())
}

/// Trained bi-fidelity classifier.
#[pyclass(name = "Model", module = "bpmi", frozen)]
struct PyModel {
    inner: BfgpcModel,
}

#[pymethods]
impl PyModel {
    /// Fits a model to labeled LF and HF data. `bounds` defaults to the unit
    /// square; `training` is a JSON object of training settings.
    #[staticmethod]
    #[pyo3(signature = (lf_x, lf_y, hf_x, hf_y, bounds=None, training=None))]
    fn fit(
        py: Python<'_>,
        lf_x: Vec<Vec<f64>>,
        lf_y: Vec<u8>,
        hf_x: Vec<Vec<f64>>,
        hf_y: Vec<u8>,
        bounds: Option<Vec<[f64; 2]>>,
        training: Option<&str>,
    ) -> PyResult<Self> {
        let domain = match bounds {
            Some(b) => Domain::new(b).map_err(to_py)?,
            None => Domain::unit_square(),
        };
        let config: TrainingConfig = from_json(training, "training config")?;
        let data = LabeledDataset { lf: observations(lf_x, lf_y)?, hf: observations(hf_x, hf_y)? };
        let trained = py.detach(|| fit(&domain, &data, &config)).map_err(to_py)?;
        Ok(Self { inner: trained.model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: BfgpcModel::from_json(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: BfgpcModel::load(&path).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[pyo3(signature = (points, fidelity="H"))]
    fn predict_proba(&self, points: Vec<Vec<f64>>, fidelity: &str) -> PyResult<Vec<f64>> {
        predict_proba(&self.inner, &points, self::fidelity(fidelity)?).map_err(to_py)
    }

    /// Latent mean and variance at each point.
    #[pyo3(signature = (points, fidelity="H"))]
    fn predict_latent(&self, points: Vec<Vec<f64>>, fidelity: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (mean, var) = predict_latent(&self.inner, &points, self::fidelity(fidelity)?).map_err(to_py)?;
        Ok((mean.iter().copied().collect(), var.iter().copied().collect()))
    }

    /// Mutual information between a batch of (x, fidelity) queries and the HF
    /// latents at `test_points`, under "LFMI" or "BPMI".
    fn score(&self, strategy: &str, queries: Vec<(Vec<f64>, String)>, test_points: Vec<Vec<f64>>) -> PyResult<f64> {
        let queries = queries
            .into_iter()
            .map(|(x, f)| Ok((x, fidelity(&f)?)))
            .collect::<PyResult<Vec<_>>>()?;
        match self::strategy(strategy)? {
            Strategy::Lfmi => lfmi_score(&self.inner, &queries, &test_points),
            Strategy::Bpmi => bpmi_score(&self.inner, &queries, &test_points),
            other => return Err(PyValueError::new_err(format!("{other} is not a mutual-information score"))),
        }
        .map_err(to_py)
    }

    /// Selects a query batch. Returns a dict with `total_cost` and `queries`,
    /// each query a dict of `x`, `fidelity`, `repeats` and `samples`.
    #[pyo3(signature = (strategy="BPMI", acquisition=None))]
    fn suggest<'py>(&self, py: Python<'py>, strategy: &str, acquisition: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let config: AcquisitionConfig = from_json(acquisition, "acquisition config")?;
        let strategy = self::strategy(strategy)?;
        let batch = py.detach(|| greedy_batch(&self.inner, strategy, &config)).map_err(to_py)?;
        batch_dict(py, &batch)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dim={}, rho={:.4}, inducing=({}, {}))",
            self.inner.input_dim(),
            self.inner.rho,
            self.inner.lf.num_inducing(),
            self.inner.delta.num_inducing()
        )
    }
}

fn batch_dict<'py>(py: Python<'py>, batch: &QueryBatch) -> PyResult<Bound<'py, PyDict>> {
    let queries = batch
        .queries
        .iter()
        .map(|q| {
            let d = PyDict::new(py);
            d.set_item("x", &q.x)?;
            d.set_item("fidelity", q.fidelity.as_str())?;
            d.set_item("repeats", q.repeats)?;
            d.set_item("samples", &q.samples)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    out.set_item("total_cost", batch.total_cost)?;
    out.set_item("queries", queries)?;
    Ok(out)
}

/// True Bernoulli parameter of a toy problem ("linear" or "nonlinear").
#[pyfunction]
#[pyo3(signature = (points, fidelity="H", problem="linear"))]
fn toy_probability(points: Vec<Vec<f64>>, fidelity: &str, problem: &str) -> PyResult<Vec<f64>> {
    let oracle = oracle(problem)?;
    let fid = self::fidelity(fidelity)?;
    points.iter().map(|x| oracle.probability(x, fid).map_err(to_py)).collect()
}

/// Bernoulli labels from a toy problem, reproducible from `seed`.
#[pyfunction]
#[pyo3(signature = (points, fidelity="H", problem="linear", seed=0))]
fn toy_labels(points: Vec<Vec<f64>>, fidelity: &str, problem: &str, seed: u64) -> PyResult<Vec<u8>> {
    let oracle = oracle(problem)?;
    let fid = self::fidelity(fidelity)?;
    let requests: Vec<_> = points.into_iter().map(|x| (x, fid)).collect();
    sample_labels(&oracle, &requests, &mut rng::stream(seed, "python-labels", &[])).map_err(to_py)
}

type Dicts<'py> = Vec<Bound<'py, PyDict>>;

/// Runs a toy experiment from a JSON config. Returns one list of per-round
/// record dicts per repeat, plus the per-round summary.
#[pyfunction]
fn run_toy<'py>(py: Python<'py>, config: &str) -> PyResult<(Vec<Dicts<'py>>, Dicts<'py>)> {
    let config: ExperimentConfig = from_json(Some(config), "experiment config")?;
    let runs = py.detach(|| run_experiment(&config)).map_err(to_py)?;
    let records = runs
        .iter()
        .map(|run| {
            run.records
                .iter()
                .map(|r| {
                    let d = PyDict::new(py);
                    d.set_item("repeat", run.repeat)?;
                    d.set_item("round", r.round)?;
                    d.set_item("cumulative_cost", r.cumulative_cost)?;
                    d.set_item("elpp", r.elpp)?;
                    d.set_item("mse", r.mse)?;
                    d.set_item("n_lf_queries", r.n_lf_queries)?;
                    d.set_item("n_hf_queries", r.n_hf_queries)?;
                    d.set_item("mean_repeats", r.mean_repeats)?;
                    Ok(d)
                })
                .collect::<PyResult<Vec<_>>>()
        })
        .collect::<PyResult<Vec<_>>>()?;
    let summary = summarize(&runs)
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("round", s.round)?;
            d.set_item("count", s.count)?;
            d.set_item("cumulative_cost_mean", s.cumulative_cost_mean)?;
            d.set_item("elpp_mean", s.elpp_mean)?;
            d.set_item("elpp_std", s.elpp_std)?;
            d.set_item("mse_mean", s.mse_mean)?;
            d.set_item("mse_std", s.mse_std)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((records, summary))
}

#[pymodule]
fn bpmi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(toy_probability, m)?)?;
    m.add_function(wrap_pyfunction!(toy_labels, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    Ok(())
}
