//! Python bindings. Instances travel as text in the `optdesign v1` format and
//! results come back as the JSON report, so the Python side needs no schema.

use optdesign::graphapps::{self, GRAPH_TAG};
use optdesign::instance::{self, gen_gaussian, gen_knapsack};
use optdesign::pipeline::{solve_graph, solve_instance, Method, SolveOptions};
use optdesign::relaxation::DEFAULT_TOL;
use optdesign::report::init_thread_pool;
use optdesign::verify::{lemma_suite, trap_suite};
use optdesign::{Error, ObjectiveKind};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::NotApplicable(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn objective(s: &str) -> PyResult<ObjectiveKind> {
    match s.to_ascii_lowercase().as_str() {
        "d" => Ok(ObjectiveKind::D),
        "a" => Ok(ObjectiveKind::A),
        "e" => Ok(ObjectiveKind::E),
        _ => Err(PyValueError::new_err(format!("unknown objective '{s}'"))),
    }
}

/// Gaussian instance text; `budget` adds a cardinality row, or `m` random cost rows.
#[pyfunction]
#[pyo3(signature = (d, n, seed=0, budget=None, m=None))]
fn generate_gaussian(d: usize, n: usize, seed: u64, budget: Option<f64>, m: Option<usize>) -> PyResult<String> {
    if d == 0 || n < d {
        return Err(PyValueError::new_err("need 1 <= d <= n"));
    }
    let inst = match (m, budget) {
        (Some(m), Some(b)) => gen_knapsack(d, n, m, b, seed),
        (Some(_), None) => return Err(PyValueError::new_err("m requires budget")),
        (None, Some(b)) => gen_gaussian(d, n, seed).with_cardinality(b),
        (None, None) => gen_gaussian(d, n, seed),
    };
    Ok(instance::format_instance(&inst))
}

/// Solves instance or graph text and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (text, objective_kind, method, eps=None, seed=0, budget=None, tol=DEFAULT_TOL, rescale=true))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    text: &str,
    objective_kind: &str,
    method: &str,
    eps: Option<f64>,
    seed: u64,
    budget: Option<f64>,
    tol: f64,
    rescale: bool,
) -> PyResult<String> {
    let kind = objective(objective_kind)?;
    let method: Method = method.parse().map_err(to_py)?;
    let opts = SolveOptions { eps, seed, tol, rescale };
    let text = text.to_owned();
    py.detach(move || {
        let solved = if text.split_whitespace().next() == Some(GRAPH_TAG) {
            let budget = budget.ok_or_else(|| Error::InvalidArgument("graphs need a budget".into()))?;
            solve_graph(&graphapps::parse_graph(&text)?, kind, method, budget, &opts)?
        } else {
            let mut inst = instance::parse_instance(&text)?;
            if let Some(b) = budget {
                inst = inst.with_cardinality(b);
            }
            solve_instance(&inst, kind, method, &opts)?
        };
        Ok(solved.report.to_json())
    })
    .map_err(to_py)
}

/// Runs the lemma or trap suite; returns (passed, printable lines).
#[pyfunction]
#[pyo3(signature = (suite, cases=100, seed=0))]
fn verify(py: Python<'_>, suite: &str, cases: usize, seed: u64) -> PyResult<(bool, Vec<String>)> {
    let report = match suite {
        "lemmas" => py.detach(|| lemma_suite(cases, seed)),
        "traps" => py.detach(trap_suite),
        _ => return Err(PyValueError::new_err(format!("unknown suite '{suite}'"))),
    };
    Ok((report.passed(), report.checks.iter().map(|c| c.line()).collect()))
}

#[pymodule]
fn optdesign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    init_thread_pool();
    m.add("SCHEMA_VERSION", optdesign::report::SCHEMA_VERSION)?;
    m.add_function(wrap_pyfunction!(generate_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
