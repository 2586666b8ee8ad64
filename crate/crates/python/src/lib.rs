//! Python module `intmed`: data generation, estimation and simulation studies.

use std::collections::HashMap;

use intmed::data::{Contrast, Dataset, EffectSpec, EstimandFamily, VariableRoles};
use intmed::density_ratio::DEFAULT_RATIO_BOUNDS;
use intmed::estimators::{estimate as run_estimate, EstimationConfig, EstimatorChoice, DEFAULT_TMLE_MAX_ITER};
use intmed::learners::{LearnerKind, StackConfig, DEFAULT_PROB_BOUND};
use intmed::nuisance::NuisanceConfig;
use intmed::simulation::{run_study, DgmId};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(value_error)
}

fn stack(names: &[String], prob_bound: f64) -> PyResult<StackConfig> {
    let kinds = names.iter().map(|n| parse::<LearnerKind>(n)).collect::<PyResult<Vec<_>>>()?;
    Ok(StackConfig::new(kinds).with_prob_bound(prob_bound))
}

/// Columns of a simulated dataset; missing outcomes are NaN.
#[pyfunction]
#[pyo3(signature = (dgm, n, seed=1))]
fn generate(dgm: &str, n: usize, seed: u64) -> PyResult<HashMap<String, Vec<f64>>> {
    let d = parse::<DgmId>(dgm)?.generate(n, seed);
    Ok(d.roles().all_columns().into_iter().map(|c| (c.to_string(), d.column(c).unwrap_or_default().to_vec())).collect())
}

/// Effects and efficiency bounds of a simulation mechanism.
#[pyfunction]
fn true_values<'py>(py: Python<'py>, dgm: &str) -> PyResult<Bound<'py, PyDict>> {
    let t = parse::<DgmId>(dgm)?.true_values();
    let out = PyDict::new(py);
    out.set_item("ide", t.ide)?;
    out.set_item("iie", t.iie)?;
    out.set_item("ide_bound", t.ide_bound)?;
    out.set_item("iie_bound", t.iie_bound)?;
    Ok(out)
}

/// Estimates the requested contrasts from named columns; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    data, family, a, y, *, w=vec![], z=vec![], m=vec![], s=None,
    contrasts=vec!["IDE".to_string(), "IIE".to_string()], estimator="both", folds=10,
    learners=None, exposure_learners=None, prob_bound=DEFAULT_PROB_BOUND,
    ratio_bounds=DEFAULT_RATIO_BOUNDS, tmle_max_iter=DEFAULT_TMLE_MAX_ITER, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    data: HashMap<String, Vec<f64>>,
    family: &str,
    a: String,
    y: String,
    w: Vec<String>,
    z: Vec<String>,
    m: Vec<String>,
    s: Option<String>,
    contrasts: Vec<String>,
    estimator: &str,
    folds: usize,
    learners: Option<Vec<String>>,
    exposure_learners: Option<Vec<String>>,
    prob_bound: f64,
    ratio_bounds: (f64, f64),
    tmle_max_iter: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let family = parse::<EstimandFamily>(family)?;
    let roles = VariableRoles { s, w, a, z, m, y };
    let names = learners
        .unwrap_or_else(|| StackConfig::default_ensemble().members.iter().map(|k| k.name().to_string()).collect());
    let stack = stack(&names, prob_bound)?;
    let exposure_stack = match exposure_learners {
        Some(n) => self::stack(&n, prob_bound)?,
        None => stack.clone(),
    };
    let config = EstimationConfig {
        estimator: parse::<EstimatorChoice>(estimator)?,
        nuisance: NuisanceConfig { folds, stack, exposure_stack, ratio_bounds, seed },
        tmle_max_iter,
    };
    let contrasts = contrasts.iter().map(|c| parse::<Contrast>(c)).collect::<PyResult<Vec<_>>>()?;
    let spec = EffectSpec::new(family, contrasts);
    let json = py
        .allow_threads(|| {
            let d = Dataset::new(data, roles, family)?;
            let report = run_estimate(&d, &spec, &config)?;
            Ok::<_, intmed::Error>(serde_json::to_string(&report).expect("reports serialize"))
        })
        .map_err(value_error)?;
    from_json(py, &json)
}

/// Runs a Monte Carlo study; returns one dict per (n, estimator, effect).
#[pyfunction]
#[pyo3(signature = (dgm, n, reps=200, estimator="both", seed=1))]
fn simulate<'py>(py: Python<'py>, dgm: &str, n: Vec<usize>, reps: usize, estimator: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let dgm = parse::<DgmId>(dgm)?;
    let choice = parse::<EstimatorChoice>(estimator)?;
    let result = py.allow_threads(|| run_study(dgm, &n, reps, choice, seed)).map_err(value_error)?;
    from_json(py, &serde_json::to_string(&result.rows).expect("rows serialize"))
}

#[pymodule]
#[pyo3(name = "intmed")]
fn intmed_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(true_values, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
