//! Python bindings. Structured results cross the boundary as JSON strings.

use itrans::experiments::{self, ExperimentConfig};
use itrans::measures::{BoundaryMeasure, KappaMetric};
use itrans::optics::MediumSpec;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: itrans::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn load(path: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::load(std::path::Path::new(path)).map_err(py_err)
}

/// Subcriticality certificate of a medium given as JSON.
#[pyfunction]
#[pyo3(signature = (medium_json, samples = 4096))]
fn certify(medium_json: &str, samples: usize) -> PyResult<String> {
    let spec: MediumSpec = serde_json::from_str(medium_json).map_err(json_err)?;
    let m = spec.build().map_err(py_err)?;
    let cert = itrans::optics::certify(&m, samples).map_err(py_err)?;
    serde_json::to_string(&cert).map_err(json_err)
}

/// W₁,κ distance between two measures in JSON-lines form.
#[pyfunction]
fn w1kappa(mu_jsonl: &str, nu_jsonl: &str, kappa: f64) -> PyResult<f64> {
    let mu = BoundaryMeasure::read_jsonl(mu_jsonl.as_bytes()).map_err(py_err)?;
    let nu = BoundaryMeasure::read_jsonl(nu_jsonl.as_bytes()).map_err(py_err)?;
    let metric = KappaMetric::new(kappa).map_err(py_err)?;
    itrans::measures::w1kappa(&mu, &nu, &metric).map_err(py_err)
}

/// Ballistic stability sweep; returns the records as a JSON array.
#[pyfunction]
fn sweep_ballistic(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = load(config)?;
    let records = py.detach(|| experiments::run_ballistic_sweep(&cfg)).map_err(py_err)?;
    serde_json::to_string(&records).map_err(json_err)
}

/// Single-scattering stability sweep; returns the records as a JSON array.
#[pyfunction]
fn sweep_single(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = load(config)?;
    let records = py.detach(|| experiments::run_singlescatter_sweep(&cfg)).map_err(py_err)?;
    serde_json::to_string(&records).map_err(json_err)
}

/// η-scaling table with rows and fitted slopes as JSON.
#[pyfunction]
fn eta_scaling(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = load(config)?;
    let table = py.detach(|| experiments::run_eta_scaling(&cfg)).map_err(py_err)?;
    serde_json::to_string(&table).map_err(json_err)
}

/// Log-log slope and intercept of (x, y) pairs.
#[pyfunction]
#[pyo3(signature = (points, log_correction = false))]
fn fit_exponent(points: Vec<(f64, f64)>, log_correction: bool) -> PyResult<(f64, f64)> {
    let fit = experiments::fit_exponent(&points, log_correction).map_err(py_err)?;
    Ok((fit.slope, fit.intercept))
}

#[pymodule]
fn itrans_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(w1kappa, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_ballistic, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_single, m)?)?;
    m.add_function(wrap_pyfunction!(eta_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    Ok(())
}
