//! Python bindings: parameters, level histograms, fitting, what-if
//! predictions and synthetic levels.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use movefit_core::distributions;
use movefit_core::fitting::{self, FitterConfig};
use movefit_core::ingestion::{EmpiricalLevelData, IngestionConfig};
use movefit_core::report::FitRecord;
use movefit_core::synthgen::{self, LevelSpec};
use movefit_core::validation::{self, Correction};
use movefit_core::whatif;

fn value_error(err: movefit_core::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Negative binomial `f(m) = C(m+n-1, m) (1-p)^n p^m`.
#[pyclass(frozen, skip_from_py_object, name = "NegBinParams", module = "movefit")]
#[derive(Clone)]
pub struct PyNegBinParams {
    inner: distributions::NegBinParams,
}

#[pymethods]
impl PyNegBinParams {
    #[new]
    fn new(n: f64, p: f64) -> PyResult<Self> {
        distributions::NegBinParams::new(n, p)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[staticmethod]
    fn from_scale(n: f64, scale: f64) -> PyResult<Self> {
        distributions::NegBinParams::from_scale(n, scale)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[getter]
    fn n(&self) -> f64 {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p()
    }

    fn pmf(&self, m: u64) -> f64 {
        self.inner.pmf(m)
    }

    fn cdf(&self, m: u64) -> f64 {
        self.inner.cdf(m)
    }

    /// `sum_{m=1..upper} f(m)`.
    fn mass_in_moves(&self, upper: u64) -> f64 {
        self.inner.mass_in_moves(upper)
    }

    fn mode(&self) -> u64 {
        self.inner.mode()
    }

    fn quantile(&self, q: f64) -> PyResult<u64> {
        self.inner.quantile(q).map_err(value_error)
    }

    /// `(mean, variance, scale)`.
    fn moments(&self) -> (f64, f64, f64) {
        let m = self.inner.moments();
        (m.mean, m.variance, m.scale)
    }

    fn sample(&self, seed: u64, count: usize) -> Vec<u64> {
        self.inner.sample(seed, count)
    }

    fn __repr__(&self) -> String {
        format!("NegBinParams(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// Histogram of moves-to-complete for one level, truncated at its move limit.
#[pyclass(frozen, skip_from_py_object, name = "Level", module = "movefit")]
#[derive(Clone)]
pub struct PyLevel {
    inner: EmpiricalLevelData,
}

#[pymethods]
impl PyLevel {
    #[new]
    fn new(level_id: String, move_limit: u32, counts: BTreeMap<u32, u64>, total_attempts: u64) -> PyResult<Self> {
        EmpiricalLevelData::new(level_id, move_limit, counts, total_attempts)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    #[getter]
    fn level_id(&self) -> &str {
        self.inner.level_id()
    }

    #[getter]
    fn move_limit(&self) -> u32 {
        self.inner.move_limit()
    }

    #[getter]
    fn total_attempts(&self) -> u64 {
        self.inner.total_attempts()
    }

    #[getter]
    fn counts(&self) -> BTreeMap<u32, u64> {
        self.inner.histogram().clone()
    }

    fn completion_rate(&self) -> f64 {
        self.inner.completion_rate()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Level({:?}, move_limit={}, total_attempts={})",
            self.inner.level_id(),
            self.inner.move_limit(),
            self.inner.total_attempts()
        )
    }
}

#[pyclass(frozen, skip_from_py_object, name = "FitResult", module = "movefit")]
#[derive(Clone)]
pub struct PyFitResult {
    inner: fitting::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn level_id(&self) -> &str {
        &self.inner.level_id
    }

    #[getter]
    fn move_limit(&self) -> u32 {
        self.inner.move_limit
    }

    #[getter]
    fn params(&self) -> PyNegBinParams {
        PyNegBinParams {
            inner: self.inner.params,
        }
    }

    #[getter]
    fn n(&self) -> f64 {
        self.inner.params.n()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.params.p()
    }

    #[getter]
    fn ks_distance(&self) -> f64 {
        self.inner.ks_distance
    }

    #[getter]
    fn fitted_completion(&self) -> f64 {
        self.inner.fitted_completion
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn boundary_hit(&self) -> Vec<&'static str> {
        self.inner.boundary_hit.iter().map(|h| h.as_str()).collect()
    }

    /// The record as written by the command-line `fit`.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&FitRecord::from(&self.inner)).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult({:?}, n={}, p={}, D={}, converged={})",
            self.inner.level_id,
            self.inner.params.n(),
            self.inner.params.p(),
            self.inner.ks_distance,
            self.inner.converged
        )
    }
}

fn config(grid_n: usize, grid_p: usize) -> PyResult<FitterConfig> {
    let config = FitterConfig {
        grid_n_points: grid_n,
        grid_p_points: grid_p,
        ..FitterConfig::default()
    };
    config.validate().map_err(value_error)?;
    Ok(config)
}

/// Grid of starts, bounded least squares from each, winner by KS distance.
#[pyfunction]
#[pyo3(signature = (level, grid_n = 16, grid_p = 16))]
fn fit_level(py: Python<'_>, level: &PyLevel, grid_n: usize, grid_p: usize) -> PyResult<PyFitResult> {
    let config = config(grid_n, grid_p)?;
    let data = level.inner.clone();
    py.detach(|| fitting::initial_guess_search(&data, &config))
        .map(|inner| PyFitResult { inner })
        .map_err(value_error)
}

/// Fits complete move counts over `(0, 10 * move_limit]`.
#[pyfunction]
#[pyo3(signature = (level_id, counts, move_limit, grid_n = 16, grid_p = 16))]
fn fit_untruncated(
    py: Python<'_>,
    level_id: &str,
    counts: BTreeMap<u32, u64>,
    move_limit: u32,
    grid_n: usize,
    grid_p: usize,
) -> PyResult<PyFitResult> {
    let config = config(grid_n, grid_p)?;
    py.detach(|| fitting::fit_untruncated(level_id, &counts, move_limit, &config))
        .map(|inner| PyFitResult { inner })
        .map_err(value_error)
}

#[pyfunction]
fn ks_distance(level: &PyLevel, params: &PyNegBinParams) -> PyResult<f64> {
    validation::ks_distance(&level.inner, &params.inner).map_err(value_error)
}

/// Completion at `move_limit + delta`. With `correction = (alpha, beta)` the
/// prediction is mapped to the observed scale by inverting `alpha * c + beta`.
#[pyfunction]
#[pyo3(signature = (fit, delta, correction = None))]
fn predict_completion(fit: &PyFitResult, delta: i64, correction: Option<(f64, f64)>) -> PyResult<f64> {
    let correction = correction
        .map(|(a, b)| Correction::new(a, b))
        .transpose()
        .map_err(value_error)?;
    whatif::predict_completion(&fit.inner, delta, correction.as_ref()).map_err(value_error)
}

/// Simulates one level and returns its histogram, cleaned unless `filtered`
/// is false.
#[pyfunction]
#[pyo3(signature = (level_id, params, move_limit, num_players, max_attempts_per_player, seed, contamination = 0.0, filtered = true))]
#[allow(clippy::too_many_arguments)]
fn simulate_level(
    py: Python<'_>,
    level_id: String,
    params: &PyNegBinParams,
    move_limit: u32,
    num_players: u32,
    max_attempts_per_player: u32,
    seed: u64,
    contamination: f64,
    filtered: bool,
) -> PyResult<PyLevel> {
    let spec = LevelSpec {
        level_id,
        params: params.inner,
        move_limit,
        num_players,
        max_attempts_per_player,
        booster_contamination_rate: contamination,
        seed,
    };
    let cleaning = filtered.then(IngestionConfig::default);
    py.detach(|| synthgen::level_data(&spec, cleaning))
        .map(|inner| PyLevel { inner })
        .map_err(value_error)
}

/// Per-attempt completion probability of a simulated level.
#[pyfunction]
fn oracle_completion_rate(params: &PyNegBinParams, move_limit: u32) -> PyResult<f64> {
    let spec = LevelSpec {
        level_id: "oracle".into(),
        params: params.inner,
        move_limit,
        num_players: 1,
        max_attempts_per_player: 1,
        booster_contamination_rate: 0.0,
        seed: 0,
    };
    synthgen::oracle_completion_rate(&spec).map_err(value_error)
}

#[pymodule]
fn movefit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNegBinParams>()?;
    m.add_class::<PyLevel>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit_level, m)?)?;
    m.add_function(wrap_pyfunction!(fit_untruncated, m)?)?;
    m.add_function(wrap_pyfunction!(ks_distance, m)?)?;
    m.add_function(wrap_pyfunction!(predict_completion, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_level, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_completion_rate, m)?)?;
    Ok(())
}
