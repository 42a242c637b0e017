//! Python bindings.
//!
//! Build with `cargo build --release -p regiotoll-py --features extension-module`
//! and copy `libregiotoll_py.so` to `regiotoll.so` somewhere on `sys.path`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use regiotoll::metrics::{self, MetricsReport};
use regiotoll::network::NetworkSpec;
use regiotoll::plant::Trajectory;
use regiotoll::{dso, qdue};
use regiotoll::{Error, ErrorKind, Pipeline, Scenario, ScenarioConfig, Stage};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Validation => PyValueError::new_err(msg),
        ErrorKind::Numerical => PyArithmeticError::new_err(msg),
        ErrorKind::Io => PyOSError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py)?,
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py)?,
        },
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// A validated scenario.
#[pyclass(name = "Scenario", module = "regiotoll", frozen)]
struct PyScenario {
    inner: Scenario,
}

impl PyScenario {
    fn build(config: ScenarioConfig) -> PyResult<Self> {
        Ok(Self {
            inner: config.build().map_err(py_err)?,
        })
    }
}

#[pymethods]
impl PyScenario {
    /// The shipped Zurich case study.
    #[staticmethod]
    fn zurich() -> PyResult<Self> {
        Self::build(ScenarioConfig::zurich())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::build(ScenarioConfig::from_toml(text).map_err(py_err)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::build(ScenarioConfig::load(&path).map_err(py_err)?)
    }

    fn with_seed(&self, seed: u64) -> PyResult<Self> {
        let mut c = self.inner.config.clone();
        c.seed = seed;
        Self::build(c)
    }

    /// Copy with a different logit scale.
    fn with_mu(&self, mu: f64) -> PyResult<Self> {
        let mut c = self.inner.config.clone();
        c.choice.mu = mu;
        Self::build(c)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.config.to_toml().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.config.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.config.choice.mu
    }

    #[getter]
    fn regions(&self) -> usize {
        self.inner.spec.k()
    }

    #[getter]
    fn horizon_steps(&self) -> usize {
        self.inner.horizon_steps()
    }

    #[getter]
    fn step_seconds(&self) -> f64 {
        self.inner.step_seconds()
    }

    /// Total demand over the horizon [veh].
    #[getter]
    fn demand_volume(&self) -> f64 {
        self.inner.demand.total_volume()
    }

    /// Accumulation at the peak of each region's MFD [veh].
    fn critical_accumulations(&self) -> Vec<f64> {
        let spec = &self.inner.spec;
        spec.region_ids().map(|i| spec.critical(i).accumulation).collect()
    }

    /// Simulates the logit user equilibrium.
    fn simulate_qdue(&self, py: Python<'_>) -> PyResult<PyRun> {
        let s = &self.inner;
        let run = py
            .detach(|| qdue::run_qdue(&s.spec, &s.demand, &s.config.choice, s.horizon_steps(), s.step_seconds(), None))
            .map_err(py_err)?;
        Ok(PyRun::new("QDUE", &s.spec, run.trajectory))
    }

    /// Solves the rolling-horizon system optimum.
    fn solve_dso(&self, py: Python<'_>) -> PyResult<PyRun> {
        let s = &self.inner;
        let run = py
            .detach(|| dso::run_lrho(&s.spec, &s.demand, &s.pwa, &s.config.lrho, s.horizon_steps(), s.step_seconds()))
            .map_err(py_err)?;
        Ok(PyRun::new("DSO", &s.spec, run.trajectory))
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, regions={}, seed={}, mu={})",
            self.inner.config.name,
            self.inner.spec.k(),
            self.inner.seed(),
            self.inner.config.choice.mu
        )
    }
}

/// A simulated trajectory and its metrics.
#[pyclass(name = "Run", module = "regiotoll", frozen)]
struct PyRun {
    label: String,
    traj: Trajectory,
    report: MetricsReport,
}

impl PyRun {
    fn new(label: &str, spec: &NetworkSpec, traj: Trajectory) -> Self {
        Self {
            label: label.to_string(),
            report: MetricsReport::from_trajectory(spec, &traj),
            traj,
        }
    }
}

#[pymethods]
impl PyRun {
    #[getter]
    fn label(&self) -> &str {
        &self.label
    }

    #[getter]
    fn steps(&self) -> usize {
        self.traj.len()
    }

    /// Total time spent [veh h].
    #[getter]
    fn tts(&self) -> f64 {
        self.report.tts
    }

    /// Total travelled distance [veh km].
    #[getter]
    fn ttd(&self) -> f64 {
        self.report.ttd
    }

    #[getter]
    fn vehicles_served(&self) -> f64 {
        self.report.vehicles_served
    }

    #[getter]
    fn stored_at_end(&self) -> f64 {
        self.report.stored_at_end
    }

    #[getter]
    fn ts_per_region(&self) -> Vec<f64> {
        self.report.ts_per_region.clone()
    }

    /// Region totals per step, final state included.
    fn accumulation(&self) -> Vec<Vec<f64>> {
        self.traj
            .steps
            .iter()
            .map(|s| s.state.totals())
            .chain(std::iter::once(self.traj.final_state.totals()))
            .collect()
    }

    /// Split rates per step, one column per transfer triple.
    fn splits(&self) -> Vec<Vec<f64>> {
        self.traj.steps.iter().map(|s| s.split.theta.clone()).collect()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.report)
    }

    /// Rows of the comparison table with `self` as the baseline.
    fn compare<'py>(&self, py: Python<'py>, other: &PyRun) -> PyResult<Bound<'py, PyAny>> {
        let table = metrics::compare(&self.report, &other.report, &self.label, &other.label).map_err(py_err)?;
        to_py(py, &table.rows)
    }

    fn __repr__(&self) -> String {
        format!("Run(label={:?}, steps={}, tts={:.3})", self.label, self.traj.len(), self.report.tts)
    }
}

/// Staged pipeline writing artifacts under `out`.
#[pyclass(name = "Pipeline", module = "regiotoll", frozen)]
struct PyPipeline {
    inner: Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(scenario: &PyScenario, out: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Pipeline::new(scenario.inner.clone(), out).map_err(py_err)?,
        })
    }

    /// Runs `stages` (comma separated, or `all`) and returns the manifest.
    #[pyo3(signature = (stages = "all"))]
    fn run<'py>(&self, py: Python<'py>, stages: &str) -> PyResult<Bound<'py, PyAny>> {
        let stages = Stage::parse_list(stages).map_err(py_err)?;
        let manifest = py.detach(|| self.inner.run(&stages)).map_err(py_err)?;
        to_py(py, &manifest)
    }

    /// Metrics and prices gathered from the stored runs.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary().map_err(py_err)?)
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir().to_path_buf()
    }

    #[getter]
    fn config_sha256(&self) -> &str {
        self.inner.config_sha256()
    }
}

/// Multinomial logit shares for the given costs.
#[pyfunction]
fn mnl_split(costs: Vec<f64>, mu: f64) -> PyResult<Vec<f64>> {
    qdue::mnl_split(&costs, mu).map_err(py_err)
}

/// Relative improvement of `variant` over `baseline` in percent.
#[pyfunction]
fn improvement(baseline: f64, variant: f64) -> PyResult<f64> {
    metrics::improvement(baseline, variant).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "regiotoll")]
pub fn regiotoll_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRun>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(mnl_split, m)?)?;
    m.add_function(wrap_pyfunction!(improvement, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_python_exceptions() {
        Python::initialize();
        Python::attach(|py| {
            let e = py_err(Error::config("x", "bad"));
            assert!(e.is_instance_of::<PyValueError>(py));
            let e = py_err(Error::Numerical("nan".into()));
            assert!(e.is_instance_of::<PyArithmeticError>(py));
            let e = py_err(Error::MissingArtifact("a.csv".into()));
            assert!(e.is_instance_of::<PyOSError>(py));
        });
    }

    #[test]
    fn json_values_convert() {
        Python::initialize();
        Python::attach(|py| {
            let v = serde_json::json!({"a": [1, 2.5, null], "b": true, "c": "x"});
            let obj = json_to_py(py, &v).unwrap();
            assert_eq!(obj.repr().unwrap().to_string(), "{'a': [1, 2.5, None], 'b': True, 'c': 'x'}");
        });
    }
}
