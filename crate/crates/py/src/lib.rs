//! Python bindings: scenarios, runs, the attack linear algebra and the
//! detector.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use shipgrid::attack;
use shipgrid::detector::{self, Activation, DetectorConfig, DetectorError, DetectorModel, TrainingSet};
use shipgrid::run::TimeSeries;
use shipgrid::scenario::ScenarioConfig;
use shipgrid::CommGraph;

create_exception!(shipgrid_py, ShipgridError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    ShipgridError::new_err(e.to_string())
}

fn graph(weights: Vec<Vec<f64>>) -> PyResult<CommGraph> {
    CommGraph::build(&weights).map_err(err)
}

/// Laplacian `L = Z_in - A` of a weight matrix (row k = agent k's inbound weights).
#[pyfunction]
fn laplacian(weights: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(graph(weights)?.laplacian().to_rows())
}

/// Access-level matrix `W` of a weight matrix.
#[pyfunction]
fn access_matrix(weights: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(attack::access_matrix(&graph(weights)?).matrix().to_rows())
}

/// Orthonormal basis of the null space of `W`: injections invisible in aggregate.
#[pyfunction]
fn stealth_basis(weights: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(attack::stealth_basis(&attack::access_matrix(&graph(weights)?)))
}

#[pyclass(name = "Scenario", module = "shipgrid_py")]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = shipgrid::parse_scenario(text).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = shipgrid::scenario::load_scenario(&path).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn n_attacks(&self) -> usize {
        self.inner.attacks.len()
    }

    /// The same scenario with attacks and detectors removed.
    fn dry_run(&self) -> Self {
        Self {
            inner: self.inner.dry_run(),
        }
    }

    /// Runs the scenario (training inline detectors first). Releases the GIL.
    fn run(&self, py: Python<'_>) -> PyResult<PyTimeSeries> {
        let cfg = self.inner.clone();
        let (ts, _) = py.detach(move || shipgrid::run_scenario(&cfg)).map_err(err)?;
        Ok(PyTimeSeries { inner: ts })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, agents={}, steps={}, attacks={}, detectors={})",
            self.inner.name,
            self.inner.n_agents(),
            self.inner.steps(),
            self.inner.attacks.len(),
            self.inner.detectors.len()
        )
    }
}

#[pyclass(name = "TimeSeries", module = "shipgrid_py")]
struct PyTimeSeries {
    inner: TimeSeries,
}

#[pymethods]
impl PyTimeSeries {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .column(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    fn __contains__(&self, name: &str) -> bool {
        self.inner.column(name).is_some()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for name in self.inner.names() {
            d.set_item(name, self.inner.col(name).to_vec())?;
        }
        Ok(d)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv_file(&path).map_err(err)
    }

    /// Sample-level detection metrics as a dict; raises if no detector ran.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = shipgrid::compute_metrics(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("true_positive_samples", m.true_positive_samples)?;
        d.set_item("false_positive_samples", m.false_positive_samples)?;
        d.set_item("true_negative_samples", m.true_negative_samples)?;
        d.set_item("false_negative_samples", m.false_negative_samples)?;
        d.set_item("detection_latency", m.detection_latency)?;
        Ok(d)
    }
}

#[pyclass(name = "Detector", module = "shipgrid_py")]
struct PyDetector {
    inner: DetectorModel,
}

#[pymethods]
impl PyDetector {
    /// Trains on an attack-free series. A model that misses the MSE
    /// tolerance is still returned; check `converged`.
    #[staticmethod]
    #[pyo3(signature = (
        series, window = 20, hidden = (16, 16), activation = "tanh",
        learning_rate = 0.01, mse_tolerance = 1e-6, max_epochs = 10_000,
        seed = 0, stride = 1, radius = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        series: Vec<f64>,
        window: usize,
        hidden: (usize, usize),
        activation: &str,
        learning_rate: f64,
        mse_tolerance: f64,
        max_epochs: usize,
        seed: u64,
        stride: usize,
        radius: Option<f64>,
    ) -> PyResult<Self> {
        let cfg = DetectorConfig {
            window,
            hidden: [hidden.0, hidden.1],
            activation: activation.parse::<Activation>().map_err(err)?,
            learning_rate,
            mse_tolerance,
            max_epochs,
            radius,
            seed,
            stride,
        };
        let ts = TrainingSet::from_series_strided(&series, window, stride).map_err(err)?;
        let inner = match py.detach(|| detector::train(&ts, &cfg)) {
            Ok(m) => m,
            Err(DetectorError::DidNotConverge { model, .. }) => *model,
            Err(e) => return Err(err(e)),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DetectorModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn predict(&self, window: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&window).map_err(err)
    }

    /// True if `x_in` lies outside the allowable region around `x_p`.
    fn is_anomaly(&self, x_in: f64, x_p: f64) -> bool {
        self.inner.classify(x_in, x_p) == detector::Decision::Anomaly
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window()
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }

    #[getter]
    fn max_residual(&self) -> f64 {
        self.inner.max_residual
    }

    #[getter]
    fn achieved_mse(&self) -> f64 {
        self.inner.achieved_mse
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn history(&self) -> Vec<f64> {
        self.inner.history.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Detector(window={}, mse={:e}, radius={:e})",
            self.inner.window(),
            self.inner.achieved_mse,
            self.inner.radius
        )
    }
}

/// `(1/S) Σ (p_i - o_i)²`.
#[pyfunction]
fn mse(predictions: Vec<f64>, observations: Vec<f64>) -> PyResult<f64> {
    detector::mse(&predictions, &observations).map_err(err)
}

#[pymodule]
fn shipgrid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ShipgridError", m.py().get_type::<ShipgridError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTimeSeries>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(access_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(stealth_basis, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    Ok(())
}
