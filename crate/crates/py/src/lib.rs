//! Python bindings. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use lerwlab::config::{workers_from_env, SimConfig, DEFAULT_SEED};
use lerwlab::experiment::{law_json, load_spec, run_spec, window_hit_estimates};
use lerwlab::kernel::HalfLineKernelTable;
use lerwlab::oracle::{enumerate_le_law, Functional};
use lerwlab::verify::{run_suite, VerifyOptions};
use lerwlab::{LabError, LatticePath};

fn err(e: LabError) -> PyErr {
    match e.exit_code() {
        2..=4 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn workers() -> PyResult<usize> {
    workers_from_env().map_err(err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Chronological loop erasure of a nearest-neighbour path.
#[pyfunction]
fn loop_erase(points: Vec<Vec<i32>>) -> PyResult<Vec<Vec<i32>>> {
    let d = points.first().map_or(0, |p| p.len());
    let path = LatticePath::from_flat(d, points.concat()).map_err(err)?;
    let erased = lerwlab::loop_erasure::loop_erase(&path).map_err(err)?;
    Ok(erased.path().points().map(|p| p.to_vec()).collect())
}

/// Half-line kernel `q_t(a, m)` as a nested list indexed `[a][m]`.
#[pyfunction]
#[pyo3(signature = (t, m_max, tol = 1e-9))]
fn halfline_kernel(t: f64, m_max: usize, tol: f64) -> PyResult<Vec<Vec<f64>>> {
    let tab = HalfLineKernelTable::build(t, m_max, tol).map_err(err)?;
    Ok((0..=m_max).map(|a| tab.row(a).to_vec()).collect())
}

/// Exact law of `endpoint`, `le_length` or `tau_window` for `N`-step walks.
#[pyfunction]
#[pyo3(signature = (n, d, functional = "endpoint"))]
fn oracle_law<'py>(py: Python<'py>, n: usize, d: usize, functional: &str) -> PyResult<Bound<'py, PyAny>> {
    let f = Functional::parse(functional, d).map_err(err)?;
    let law = enumerate_le_law(n, d, &f).map_err(err)?;
    to_py(py, &law_json(&law))
}

/// Monte Carlo estimates of `P(x in gamma[n, 2n - 1])`.
#[pyfunction]
#[pyo3(signature = (x, n, replicas, seed = DEFAULT_SEED, r_in = 16.0, rho = 8.0))]
fn window_hit<'py>(py: Python<'py>, x: Vec<i32>, n: Vec<u64>, replicas: u64, seed: u64, r_in: f64, rho: f64) -> PyResult<Bound<'py, PyAny>> {
    let sim = SimConfig::new(x.len(), replicas, r_in).with_seed(seed).with_rho(rho);
    let w = workers()?;
    let est = py.detach(|| window_hit_estimates(&sim, &x, &n, w)).map_err(err)?;
    to_py(py, &est)
}

/// Runs a spec file; returns the written paths.
#[pyfunction]
fn run(py: Python<'_>, spec: PathBuf) -> PyResult<Vec<PathBuf>> {
    let spec = load_spec(&spec).map_err(err)?;
    let w = workers()?;
    Ok(py.detach(|| run_spec(&spec, w)).map_err(err)?.files)
}

/// Runs a verification suite; returns `(passed, report text)`.
#[pyfunction]
#[pyo3(signature = (suite, replicas = None, seed = DEFAULT_SEED))]
fn verify(py: Python<'_>, suite: &str, replicas: Option<u64>, seed: u64) -> PyResult<(bool, String)> {
    let opts = VerifyOptions { seed, workers: workers()?, replicas };
    let rep = py.detach(|| run_suite(suite, &opts)).map_err(err)?;
    Ok((rep.pass(), rep.render()))
}

#[pymodule(name = "lerwlab")]
fn lerwlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(loop_erase, m)?)?;
    m.add_function(wrap_pyfunction!(halfline_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_law, m)?)?;
    m.add_function(wrap_pyfunction!(window_hit, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
