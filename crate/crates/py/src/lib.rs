//! Python bindings for the core library.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vaml_core::calibration::{self, suite, DiscreteInstance};
use vaml_core::envs::{self, GarnetSpec};
use vaml_core::harness::{self, bootstrap, SweepConfig};
use vaml_core::{losses, mdp, model, rng};

fn to_py(err: vaml_core::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

fn matrix_to_rows(matrix: &DMatrix<f64>) -> Vec<Vec<f64>> {
    matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A finite Markov reward process `(P, r, γ)`.
#[pyclass(name = "FiniteMdp", module = "vaml", frozen, skip_from_py_object)]
struct PyFiniteMdp {
    inner: mdp::FiniteMdp,
}

#[pymethods]
impl PyFiniteMdp {
    #[new]
    fn new(transition: Vec<Vec<f64>>, reward: Vec<f64>, discount: f64) -> PyResult<Self> {
        let inner = mdp::FiniteMdp::new(rows_to_matrix(&transition)?, reward, discount).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.transition())
    }

    #[getter]
    fn reward(&self) -> Vec<f64> {
        self.inner.reward().to_vec()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    fn __repr__(&self) -> String {
        format!("FiniteMdp(n_states={}, discount={})", self.inner.n_states(), self.inner.discount())
    }
}

/// Softmax transition model with logits `φᵀψ`.
#[pyclass(name = "LowRankModel", module = "vaml", frozen, skip_from_py_object)]
struct PyLowRankModel {
    inner: model::LowRankModel,
}

#[pymethods]
impl PyLowRankModel {
    /// Factors drawn from `N(0, init_scale²)` with the given seed.
    #[new]
    #[pyo3(signature = (n_states, n_contexts, rank, init_scale = 1e-3, seed = 0))]
    fn new(n_states: usize, n_contexts: usize, rank: usize, init_scale: f64, seed: u64) -> PyResult<Self> {
        let inner = model::LowRankModel::init(n_states, n_contexts, rank, init_scale, &mut rng::stream(seed))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_contexts(&self) -> usize {
        self.inner.n_contexts()
    }

    fn predict_row(&self, context: usize) -> PyResult<Vec<f64>> {
        if context >= self.inner.n_contexts() {
            return Err(PyValueError::new_err("context out of range"));
        }
        Ok(self.inner.predict_row(context))
    }

    /// Row-stochastic `contexts × states` matrix as nested lists.
    fn transition_matrix(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.transition_matrix())
    }

    /// `k` rollouts of `m` steps from `context`.
    #[pyo3(signature = (context, m, k, seed = 0))]
    fn sample(&self, context: usize, m: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        model::sample_model(&self.inner, context, m, k, &mut rng::stream(seed)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "LowRankModel(n_states={}, n_contexts={}, rank={})",
            self.inner.n_states(),
            self.inner.n_contexts(),
            self.inner.rank()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_states = 50, n_successors = 10, temperature = 1.0, discount = 0.9, seed = 0))]
fn generate_garnet(
    n_states: usize,
    n_successors: usize,
    temperature: f64,
    discount: f64,
    seed: u64,
) -> PyResult<PyFiniteMdp> {
    let inner = envs::generate_garnet(&GarnetSpec {
        n_states,
        n_successors,
        temperature,
        discount,
        seed,
    })
    .map_err(to_py)?;
    Ok(PyFiniteMdp { inner })
}

#[pyfunction]
fn exact_value(mdp: &PyFiniteMdp) -> PyResult<Vec<f64>> {
    mdp::exact_value(&mdp.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (mdp, v, b = 1))]
fn bellman_operator(mdp: &PyFiniteMdp, v: Vec<f64>, b: usize) -> PyResult<Vec<f64>> {
    mdp::bellman_operator(&mdp.inner, &v, b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, mdp, v, state, m = 1))]
fn itervaml_expectation(model: &PyLowRankModel, mdp: &PyFiniteMdp, v: Vec<f64>, state: usize, m: usize) -> PyResult<f64> {
    if state >= mdp.inner.n_states() {
        return Err(PyValueError::new_err("state out of range"));
    }
    losses::itervaml_expectation(&model.inner, &mdp.inner, &v, m, state).map_err(to_py)
}

#[pyfunction]
fn itervaml_sampled(model_values: Vec<f64>, env_value: f64) -> PyResult<f64> {
    losses::itervaml_sampled(&model_values, env_value).map_err(to_py)
}

#[pyfunction]
fn variance_estimate(model_values: Vec<f64>) -> PyResult<f64> {
    losses::variance_estimate(&model_values).map_err(to_py)
}

#[pyfunction]
fn cvaml_sampled(model_values: Vec<f64>, env_value: f64) -> PyResult<f64> {
    losses::cvaml_sampled(&model_values, env_value).map_err(to_py)
}

/// Expected k-sample loss of predicting with `q` when the truth is `p`.
#[pyfunction]
fn g_objective(f_values: Vec<f64>, p: Vec<f64>, k: usize, q: Vec<f64>) -> PyResult<f64> {
    let instance = DiscreteInstance::new(f_values, p, k).map_err(to_py)?;
    calibration::g_objective(&instance, &q).map_err(to_py)
}

#[pyfunction]
fn lemma_a4_descent(g_values: Vec<f64>, mu: Vec<f64>) -> PyResult<f64> {
    calibration::lemma_a4_descent(&g_values, &mu).map_err(to_py)
}

/// Returns `(brm_minimizer, surrogate_minimizer, bias_norm)`.
#[pyfunction]
fn prop23_value_bias(mdp: &PyFiniteMdp, v_tar: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let report = calibration::prop23_value_bias(&mdp.inner, &v_tar).map_err(to_py)?;
    Ok((report.brm_minimizer, report.surrogate_minimizer, report.bias_norm))
}

/// Percentile bootstrap of the mean; returns `(mean, lower, upper)`.
#[pyfunction]
#[pyo3(signature = (samples, confidence = 0.95, n_resamples = 2000, seed = 0))]
fn bootstrap_ci(samples: Vec<f64>, confidence: f64, n_resamples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let ci = bootstrap::bootstrap_ci(&samples, confidence, n_resamples, &mut rng::stream(seed)).map_err(to_py)?;
    Ok((ci.mean, ci.lower, ci.upper))
}

/// Runs a Garnet sweep described by a TOML string and returns the CSV rows
/// as `(problem_seed, tau, rank, algorithm, metric, value, step)` tuples.
#[pyfunction]
#[pyo3(signature = (config_toml, jobs = 1))]
fn run_garnet_sweep(
    py: Python<'_>,
    config_toml: &str,
    jobs: usize,
) -> PyResult<Vec<(u64, f64, usize, String, String, f64, u64)>> {
    let config = SweepConfig::from_toml_str(config_toml).map_err(to_py)?;
    let records = py.detach(|| harness::run_sweep(&config, jobs)).map_err(to_py)?;
    Ok(records
        .iter()
        .flat_map(|r| r.rows())
        .map(|row| (row.problem_seed, row.tau, row.rank, row.algorithm, row.metric, row.value, row.step))
        .collect())
}

/// The self-check suite as `(name, passed, detail)` tuples.
#[pyfunction]
fn verify(py: Python<'_>) -> PyResult<Vec<(String, bool, String)>> {
    let outcomes = py.detach(suite::run_suite).map_err(to_py)?;
    Ok(outcomes.into_iter().map(|o| (o.name, o.passed, o.detail)).collect())
}

#[pymodule]
fn vaml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFiniteMdp>()?;
    m.add_class::<PyLowRankModel>()?;
    m.add_function(wrap_pyfunction!(generate_garnet, m)?)?;
    m.add_function(wrap_pyfunction!(exact_value, m)?)?;
    m.add_function(wrap_pyfunction!(bellman_operator, m)?)?;
    m.add_function(wrap_pyfunction!(itervaml_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(itervaml_sampled, m)?)?;
    m.add_function(wrap_pyfunction!(variance_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(cvaml_sampled, m)?)?;
    m.add_function(wrap_pyfunction!(g_objective, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_a4_descent, m)?)?;
    m.add_function(wrap_pyfunction!(prop23_value_bias, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(run_garnet_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
