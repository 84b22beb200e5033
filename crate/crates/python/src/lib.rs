//! Python bindings. Results that carry many fields come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use infillgp::gp_sim::{simulate_joint, Truth};
use infillgp::{analysis, design, harness, inference, prediction, quadvar};
use infillgp::{CovarianceModel, Dataset as CoreDataset, Error, FeatureSpec, McmcConfig, PriorSpec, QvConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::Json(_) | Error::Domain(_) | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        Error::Numerical { .. } | Error::Accuracy { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) if o.is_none() => Ok(T::default()),
        Some(o) => {
            let text: String = py.import("json")?.call_method1("dumps", (o,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
        }
    }
}

fn features(degree: u32) -> FeatureSpec {
    FeatureSpec::PolynomialTotalDegree { degree }
}

/// Covariance family with parameters `(θ, α, ν)` and optional `μ`.
#[pyclass(name = "CovarianceModel", frozen)]
#[derive(Clone)]
struct PyModel {
    inner: CovarianceModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn matern(theta: f64, alpha: f64, nu: f64) -> Self {
        Self { inner: CovarianceModel::matern(theta, alpha, nu) }
    }

    #[staticmethod]
    fn generalized_wendland(theta: f64, alpha: f64, nu: f64, mu: f64) -> Self {
        Self { inner: CovarianceModel::generalized_wendland(theta, alpha, nu, mu) }
    }

    #[staticmethod]
    fn confluent_hypergeometric(theta: f64, alpha: f64, nu: f64, mu: f64) -> Self {
        Self { inner: CovarianceModel::confluent_hypergeometric(theta, alpha, nu, mu) }
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn radial(&self, r: f64) -> PyResult<f64> {
        self.inner.radial(r).map_err(to_py)
    }

    fn kernel(&self, h: Vec<f64>) -> PyResult<f64> {
        self.inner.kernel_value(&h).map_err(to_py)
    }

    fn spectral_density(&self, w: Vec<f64>) -> PyResult<f64> {
        self.inner.spectral_density(&w).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("CovarianceModel({:?}, theta={}, alpha={}, nu={})", self.inner.family, self.inner.theta, self.inner.alpha, self.inner.nu)
    }
}

/// Observations on a stratified design.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Wraps observed values on the design with offsets `delta` (row-major, `m^d × d`).
    #[new]
    #[pyo3(signature = (m, d, delta, y, degree=1))]
    fn new(m: usize, d: usize, delta: Vec<f64>, y: Vec<f64>, degree: u32) -> PyResult<Self> {
        let des = design::Design::from_offsets(m, d, delta).map_err(to_py)?;
        Ok(Self { inner: CoreDataset::new(des, features(degree), y).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(dir: PathBuf, stem: &str) -> PyResult<Self> {
        Ok(Self { inner: CoreDataset::read(&dir, stem).map_err(to_py)? })
    }

    fn write(&self, dir: PathBuf, stem: &str) -> PyResult<()> {
        self.inner.write(&dir, stem).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.design.m()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.clone()
    }

    /// Row-major design points.
    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.design.points().to_vec()
    }

    #[getter]
    fn latent(&self) -> Option<Vec<f64>> {
        self.inner.x_true.clone()
    }
}

/// Simulates one replicate on a seeded stratified design. With `extra_points`
/// the latent values there are returned as well.
#[pyfunction]
#[pyo3(signature = (model, tau, beta, m, d, seed, replicate=0, degree=1, extra_points=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &PyModel,
    tau: f64,
    beta: Vec<f64>,
    m: usize,
    d: usize,
    seed: u64,
    replicate: u64,
    degree: u32,
    extra_points: Option<Vec<f64>>,
) -> PyResult<(PyDataset, Vec<f64>)> {
    let truth = Truth { model: model.inner, tau, beta };
    let extra = extra_points.unwrap_or_default();
    py.allow_threads(|| {
        let des = design::stratified_design_replicate(m, d, seed, replicate)?;
        simulate_joint(&truth, &des, &features(degree), &extra, seed, replicate)
    })
    .map(|(inner, x)| (PyDataset { inner }, x))
    .map_err(to_py)
}

/// Quadratic-variation estimates of `θ` and `τ` as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, nu, config=None))]
fn estimate<'py>(py: Python<'py>, dataset: &PyDataset, nu: f64, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: QvConfig = from_json(py, config)?;
    let est = quadvar::estimate(&dataset.inner, nu, &cfg).map_err(to_py)?;
    to_dict(py, &est)
}

#[pyfunction]
#[pyo3(signature = (model, tau, dataset, a0=1e6))]
fn marginal_log_likelihood(model: &PyModel, tau: f64, dataset: &PyDataset, a0: f64) -> PyResult<f64> {
    inference::marginal_log_likelihood(&model.inner, tau, &dataset.inner, a0).map_err(to_py)
}

/// Runs the sampler; `config` and `priors` are dicts with the same keys as the
/// experiment configuration. Returns a dict with the draws and diagnostics.
#[pyfunction]
#[pyo3(signature = (dataset, template, config=None, priors=None))]
fn run_mcmc<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    template: &PyModel,
    config: Option<&Bound<'py, PyAny>>,
    priors: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: McmcConfig = from_json(py, config)?;
    let pri: PriorSpec = from_json(py, priors)?;
    let chain = py.allow_threads(|| inference::run_mcmc(&dataset.inner, &template.inner, &pri, &cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("theta", chain.thetas())?;
    out.set_item("alpha", chain.alphas())?;
    out.set_item("tau", chain.taus())?;
    out.set_item("log_post", chain.draws.iter().map(|d| d.log_post).collect::<Vec<_>>())?;
    out.set_item("acceptance_rate", chain.acceptance_rate)?;
    out.set_item("coordinate_acceptance", chain.coordinate_acceptance.to_vec())?;
    out.set_item("final_step", chain.final_step.to_vec())?;
    Ok(out.into_any())
}

/// Predictive mean and variance at row-major `points`, β integrated out.
#[pyfunction]
#[pyo3(signature = (model, tau, dataset, points, a0=1e6))]
fn predict(model: &PyModel, tau: f64, dataset: &PyDataset, points: Vec<f64>, a0: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let pr = prediction::Predictor::new(&model.inner, tau, &dataset.inner, a0).map_err(to_py)?;
    let res = pr.predict(&points).map_err(to_py)?;
    Ok((res.iter().map(|r| r.mean).collect(), res.iter().map(|r| r.variance).collect()))
}

#[pyfunction]
fn blup(model: &PyModel, tau: f64, beta: Vec<f64>, dataset: &PyDataset, points: Vec<f64>) -> PyResult<Vec<f64>> {
    prediction::blup_many(&model.inner, tau, &beta, &dataset.inner, &points).map_err(to_py)
}

/// Slope, intercept and slope standard error of `log error` on `log n`.
#[pyfunction]
fn rate_regression(ns: Vec<f64>, errors: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = analysis::rate_regression(&ns, &errors).map_err(to_py)?;
    Ok((f.slope, f.intercept, f.stderr_slope))
}

#[pyfunction]
#[pyo3(signature = (sample_sets, quantiles=analysis::DEFAULT_QUANTILES))]
fn w2_barycenter(sample_sets: Vec<Vec<f64>>, quantiles: usize) -> PyResult<Vec<f64>> {
    analysis::w2_barycenter(&sample_sets, quantiles).map_err(to_py)
}

#[pyfunction]
fn theoretical_rates(nu: f64, d: usize) -> (f64, f64) {
    analysis::theoretical_rates(nu, d)
}

/// Runs a harness command with a JSON configuration string.
#[pyfunction]
fn run_command(py: Python<'_>, command: &str, config_json: &str, out: PathBuf) -> PyResult<()> {
    let cfg = harness::ExperimentConfig::from_json(config_json).map_err(to_py)?;
    py.allow_threads(|| harness::run_command(command, &cfg, &out)).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "infillgp")]
fn infillgp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(run_mcmc, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(blup, m)?)?;
    m.add_function(wrap_pyfunction!(rate_regression, m)?)?;
    m.add_function(wrap_pyfunction!(w2_barycenter, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_rates, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
