//! Python bindings for the `crpfl` simulator.
//!
//! Build with `maturin develop` from this directory; the module imports as
//! `crpfl`.

use std::path::PathBuf;

use pyo3::exceptions::{PyAttributeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};

use crpfl::env::{waterfill_allocate, Candidate};
use crpfl::orchestrator::{summarize, MetricsLog};

fn py_err(e: crpfl::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Categorical hidden Markov model over conflict observations.
#[pyclass(name = "HmmParams", module = "crpfl", from_py_object)]
#[derive(Clone)]
pub struct PyHmmParams {
    inner: crpfl::hmm::HmmParams,
}

#[pymethods]
impl PyHmmParams {
    #[new]
    fn new(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> PyResult<Self> {
        let inner = crpfl::hmm::HmmParams::new(transition, emission, initial).map_err(py_err)?;
        Ok(PyHmmParams { inner })
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        self.inner.transition().to_vec()
    }

    #[getter]
    fn emission(&self) -> Vec<Vec<f64>> {
        self.inner.emission().to_vec()
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.initial().to_vec()
    }

    fn log_likelihood(&self, obs: Vec<usize>) -> PyResult<f64> {
        crpfl::hmm::log_likelihood(&self.inner, &obs).map_err(py_err)
    }

    /// Filtered state distributions, one row per observation.
    fn filter(&self, obs: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let fwd = crpfl::hmm::forward(&self.inner, &obs).map_err(py_err)?;
        (0..fwd.len())
            .map(|t| crpfl::hmm::posterior_state(&fwd, t).map_err(py_err))
            .collect()
    }

    /// Conflict probability `current_round - last_round` rounds after the
    /// last observation.
    #[pyo3(signature = (obs, last_round, current_round))]
    fn predict_conflict(&self, obs: Vec<usize>, last_round: u64, current_round: u64) -> PyResult<f64> {
        let h = crpfl::hmm::SelectionHistory::with_observations(0, obs, last_round, current_round).map_err(py_err)?;
        crpfl::hmm::predict_conflict(&self.inner, &h).map_err(py_err)
    }

    fn prior_conflict(&self, steps: u64) -> f64 {
        self.inner.prior_conflict(steps)
    }

    #[pyo3(signature = (obs, smoothing = 1e-6))]
    fn baum_welch_step(&self, obs: Vec<usize>, smoothing: f64) -> PyResult<Self> {
        let inner = crpfl::hmm::baum_welch_step_with(&self.inner, &obs, smoothing).map_err(py_err)?;
        Ok(PyHmmParams { inner })
    }

    /// Moves `rho` of the way toward `estimate`.
    fn blend(&self, estimate: &PyHmmParams, rho: f64) -> PyResult<Self> {
        let inner = crpfl::hmm::incremental_update(&self.inner, &estimate.inner, rho).map_err(py_err)?;
        Ok(PyHmmParams { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "HmmParams(transition={:?}, emission={:?}, initial={:?})",
            self.inner.transition(),
            self.inner.emission(),
            self.inner.initial()
        )
    }
}

fn to_toml(value: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if value.is_instance_of::<PyBool>() {
        Ok(toml::Value::Boolean(value.extract()?))
    } else if value.is_instance_of::<PyInt>() {
        Ok(toml::Value::Integer(value.extract()?))
    } else if value.is_instance_of::<PyFloat>() {
        Ok(toml::Value::Float(value.extract()?))
    } else if value.is_instance_of::<PyString>() {
        Ok(toml::Value::String(value.extract()?))
    } else if let Ok(list) = value.cast::<PyList>() {
        list.iter()
            .map(|v| to_toml(&v))
            .collect::<PyResult<Vec<_>>>()
            .map(toml::Value::Array)
    } else {
        Err(PyTypeError::new_err(format!("unsupported config value {value}")))
    }
}

fn from_toml<'py>(py: Python<'py>, value: &toml::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        toml::Value::Boolean(b) => PyBool::new(py, *b).to_owned().into_any(),
        toml::Value::Integer(i) => i.into_pyobject(py)?.into_any(),
        toml::Value::Float(f) => f.into_pyobject(py)?.into_any(),
        toml::Value::String(s) => s.into_pyobject(py)?.into_any(),
        toml::Value::Array(a) => {
            let items = a.iter().map(|v| from_toml(py, v)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        other => other.to_string().into_pyobject(py)?.into_any(),
    })
}

/// Experiment configuration; keyword arguments override the defaults.
#[pyclass(name = "Config", module = "crpfl", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: crpfl::orchestrator::ExperimentConfig,
}

impl PyConfig {
    fn table(&self) -> toml::Table {
        self.inner
            .to_toml_string()
            .parse()
            .expect("config serializes to a table")
    }

    fn with_overrides(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let Some(kw) = overrides else {
            return Ok(self.clone());
        };
        let mut table = self.table();
        for (k, v) in kw.iter() {
            table.insert(k.extract()?, to_toml(&v)?);
        }
        let inner = crpfl::orchestrator::ExperimentConfig::from_toml_str(&table.to_string()).map_err(py_err)?;
        Ok(PyConfig { inner })
    }
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = PyConfig {
            inner: Default::default(),
        };
        base.with_overrides(overrides)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = crpfl::orchestrator::ExperimentConfig::load(&path).map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = crpfl::orchestrator::ExperimentConfig::from_toml_str(text).map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    /// Copy with some keys replaced.
    #[pyo3(signature = (**overrides))]
    fn replace(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        self.with_overrides(overrides)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in self.table() {
            d.set_item(k, from_toml(py, &v)?)?;
        }
        Ok(d)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        match self.table().get(name) {
            Some(v) => from_toml(py, v),
            None => Err(PyAttributeError::new_err(name.to_string())),
        }
    }

    fn __eq__(&self, other: &PyConfig) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(policy={}, seed={}, rounds={})",
            self.inner.policy, self.inner.seed, self.inner.rounds
        )
    }
}

/// Metrics of a finished run.
#[pyclass(name = "RunResult", module = "crpfl", skip_from_py_object)]
pub struct PyRunResult {
    log: MetricsLog,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn rounds(&self) -> u64 {
        self.log.num_rounds()
    }

    #[getter]
    fn policy(&self) -> String {
        self.log.policy.clone()
    }

    fn __len__(&self) -> usize {
        self.log.rows.len()
    }

    /// Final-window summary as a dict.
    #[pyo3(signature = (window = 200))]
    fn summary<'py>(&self, py: Python<'py>, window: u64) -> PyResult<Bound<'py, PyDict>> {
        let s = summarize(&self.log, window);
        let d = PyDict::new(py);
        d.set_item("rounds", s.rounds)?;
        d.set_item("final_reward", s.final_reward)?;
        d.set_item("mean_conflicts", s.mean_conflicts)?;
        d.set_item("accuracy", s.accuracy)?;
        d.set_item("participation_cv", s.participation_cv)?;
        d.set_item("reward_auc", s.reward_auc)?;
        Ok(d)
    }

    fn to_csv(&self) -> String {
        self.log.to_csv_string()
    }

    fn to_json(&self) -> String {
        self.log.to_json_string()
    }
}

/// Runs an experiment, writing exports to `out` when given.
#[pyfunction]
#[pyo3(signature = (config = None, out = None))]
fn run_experiment(py: Python<'_>, config: Option<PyConfig>, out: Option<PathBuf>) -> PyResult<PyRunResult> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let log = py
        .detach(|| crpfl::orchestrator::run_experiment(&cfg, out.as_deref()))
        .map_err(py_err)?;
    Ok(PyRunResult { log })
}

#[pyfunction]
#[pyo3(signature = (counts, epsilon = 1e-8))]
fn fairness(counts: Vec<u64>, epsilon: f64) -> f64 {
    crpfl::sac::fairness_metric(&counts, epsilon)
}

#[pyfunction]
fn reward(round_latency: f64, conflict_penalty: f64, fairness: f64, alpha: f64) -> f64 {
    crpfl::sac::compute_reward(round_latency, conflict_penalty, fairness, alpha)
}

/// Bandwidth per client for `(client_id, snr, demand)` candidates.
#[pyfunction]
#[pyo3(signature = (candidates, total_bandwidth, min_unit = 0.0))]
fn waterfill(candidates: Vec<(usize, f64, f64)>, total_bandwidth: f64, min_unit: f64) -> Vec<(usize, f64)> {
    let cands: Vec<Candidate> = candidates
        .into_iter()
        .map(|(client_id, snr, demand)| Candidate { client_id, snr, demand })
        .collect();
    waterfill_allocate(&cands, total_bandwidth, min_unit)
        .into_iter()
        .map(|g| (g.client_id, g.bandwidth))
        .collect()
}

/// Agent observation vector: scaled latencies followed by conflict probabilities.
#[pyfunction]
fn encode_state(latencies: Vec<f64>, conflict_probs: Vec<f64>, l_max: f64) -> PyResult<Vec<f64>> {
    let s = crpfl::sac::encode_state(&latencies, &conflict_probs, l_max).map_err(py_err)?;
    Ok(s.features().to_vec())
}

/// Log-probability of an ordered subset under Plackett-Luce sampling.
#[pyfunction]
fn subset_log_prob(logits: Vec<f64>, order: Vec<usize>) -> PyResult<f64> {
    crpfl::sac::plackett_luce::log_prob(&logits, &order).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "crpfl")]
pub fn crpfl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHmmParams>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fairness, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill, m)?)?;
    m.add_function(wrap_pyfunction!(encode_state, m)?)?;
    m.add_function(wrap_pyfunction!(subset_log_prob, m)?)?;
    m.add(
        "POLICIES",
        crpfl::orchestrator::PolicyKind::ALL.map(|p| p.to_string()).to_vec(),
    )?;
    Ok(())
}
