//! Python bindings. Matrices cross the boundary as lists of rows (any nested
//! sequence of floats, including 2-D numpy arrays, is accepted on input).

use addmar::datagen::{simulate as simulate_core, NoiseSpec, SimulationConfig, Structure};
use addmar::io;
use addmar::metrics::{self, BacktestOptions, ForecastModel, ReMode, SvarTuning, Tuning};
use addmar::model::{AdditiveMarParams, MatrixSeries, Penalties};
use addmar::prox;
use addmar::selection::{grid_search as grid_search_core, Criterion, GridMode, LambdaGrid};
use addmar::solver::{fit as fit_core, FitReport, SolverConfig};
use addmar::transforms::{self, Transform};
use addmar::{Error, Matrix};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: &Rows) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix: rows differ in length"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn to_series(data: &[Rows]) -> PyResult<MatrixSeries> {
    let mats = data.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
    MatrixSeries::new(mats).map_err(py_err)
}

fn series_rows(s: &MatrixSeries) -> Vec<Rows> {
    s.matrices().iter().map(to_rows).collect()
}

/// The four transition blocks `L1, S1` (row side) and `L2, S2` (column side).
#[pyclass(name = "Params", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: AdditiveMarParams,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(l1: Rows, s1: Rows, l2: Rows, s2: Rows) -> PyResult<Self> {
        let inner = AdditiveMarParams::new(to_matrix(&l1)?, to_matrix(&s1)?, to_matrix(&l2)?, to_matrix(&s2)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn zeros(d1: usize, d2: usize) -> Self {
        Self {
            inner: AdditiveMarParams::zeros(d1, d2),
        }
    }

    #[getter]
    fn d1(&self) -> usize {
        self.inner.d1()
    }

    #[getter]
    fn d2(&self) -> usize {
        self.inner.d2()
    }

    #[getter]
    fn l1(&self) -> Rows {
        to_rows(&self.inner.l1)
    }

    #[getter]
    fn s1(&self) -> Rows {
        to_rows(&self.inner.s1)
    }

    #[getter]
    fn l2(&self) -> Rows {
        to_rows(&self.inner.l2)
    }

    #[getter]
    fn s2(&self) -> Rows {
        to_rows(&self.inner.s2)
    }

    /// One noise-free step `A Y + Y B^T`.
    fn apply(&self, y: Rows) -> PyResult<Rows> {
        let y = to_matrix(&y)?;
        if y.shape() != (self.inner.d1(), self.inner.d2()) {
            return Err(PyValueError::new_err("matrix shape does not match the parameters"));
        }
        Ok(to_rows(&self.inner.apply(&y)))
    }

    fn to_json(&self) -> String {
        io::ModelFile::from_params(&self.inner).to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = io::ModelFile::from_json(text).and_then(|m| m.params()).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("Params(d1={}, d2={})", self.inner.d1(), self.inner.d2())
    }
}

/// Result of a fit.
#[pyclass(name = "FitResult", skip_from_py_object)]
struct PyFitResult {
    report: FitReport,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn params(&self) -> PyParams {
        PyParams {
            inner: self.report.params.clone(),
        }
    }

    /// `(lambda_L1, lambda_S1, lambda_L2, lambda_S2)`.
    #[getter]
    fn penalties(&self) -> (f64, f64, f64, f64) {
        let p = self.report.penalties;
        (p.lambda_l1, p.lambda_s1, p.lambda_l2, p.lambda_s2)
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.report.objective_trace.clone()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.report.final_objective()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.outer_iters
    }

    #[getter]
    fn ranks(&self) -> (usize, usize) {
        (self.report.est_rank_l1, self.report.est_rank_l2)
    }

    #[getter]
    fn densities(&self) -> (f64, f64) {
        (self.report.est_density_s1, self.report.est_density_s2)
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.report.aic
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(objective={:.6e}, ranks=({}, {}), converged={})",
            self.report.final_objective(),
            self.report.est_rank_l1,
            self.report.est_rank_l2,
            self.report.converged
        )
    }
}

fn solver_config(outer_tol: f64, max_iters: usize) -> SolverConfig {
    SolverConfig {
        outer_tol,
        outer_max_iters: max_iters,
        ..SolverConfig::default()
    }
}

/// Fits with fixed penalties.
#[pyfunction]
#[pyo3(signature = (series, lambda_l1, lambda_s1, lambda_l2, lambda_s2, outer_tol = 1e-6, max_iters = 200))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    series: Vec<Rows>,
    lambda_l1: f64,
    lambda_s1: f64,
    lambda_l2: f64,
    lambda_s2: f64,
    outer_tol: f64,
    max_iters: usize,
) -> PyResult<PyFitResult> {
    let series = to_series(&series)?;
    let pen = Penalties::new(lambda_l1, lambda_s1, lambda_l2, lambda_s2).map_err(py_err)?;
    let cfg = solver_config(outer_tol, max_iters);
    let report = py.detach(|| fit_core(&series, &pen, &cfg)).map_err(py_err)?;
    Ok(PyFitResult { report })
}

/// Grid search over a data-driven penalty grid. `criterion` is `"aic"`,
/// `"oracle-rank"` or `"oracle-support"`; oracle criteria need `truth`.
#[pyfunction]
#[pyo3(signature = (series, criterion = "aic", truth = None, grid_points = 8, min_ratio = 0.01, full_cross = false))]
fn grid_search(
    py: Python<'_>,
    series: Vec<Rows>,
    criterion: &str,
    truth: Option<PyParams>,
    grid_points: usize,
    min_ratio: f64,
    full_cross: bool,
) -> PyResult<PyFitResult> {
    let series = to_series(&series)?;
    let need = || PyValueError::new_err("oracle criteria need `truth`");
    let crit = match criterion {
        "aic" => Criterion::Aic,
        "oracle-rank" => {
            let t = truth.as_ref().ok_or_else(need)?;
            Criterion::OracleRank {
                r1: prox::numerical_rank(&t.inner.l1),
                r2: prox::numerical_rank(&t.inner.l2),
            }
        }
        "oracle-support" => {
            let t = truth.as_ref().ok_or_else(need)?;
            Criterion::OracleSupport {
                s1: t.inner.s1.clone(),
                s2: t.inner.s2.clone(),
            }
        }
        other => return Err(PyValueError::new_err(format!("unknown criterion `{other}`"))),
    };
    let mode = if full_cross { GridMode::FullCross } else { GridMode::CoupledPairs };
    let grid = LambdaGrid::from_data(&series, grid_points, min_ratio, mode).map_err(py_err)?;
    let (_, report) = py
        .detach(|| grid_search_core(&series, &grid, &SolverConfig::default(), &crit))
        .map_err(py_err)?;
    Ok(PyFitResult { report })
}

/// Simulates a series; returns `(series, truth)`.
#[pyfunction]
#[pyo3(signature = (d1, d2, t, r1, r2, e1, e2, seed, rho_target = 0.8, burn_in = 200, structure = "lowrank_plus_sparse", sigma = None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    d1: usize,
    d2: usize,
    t: usize,
    r1: usize,
    r2: usize,
    e1: f64,
    e2: f64,
    seed: u64,
    rho_target: f64,
    burn_in: usize,
    structure: &str,
    sigma: Option<f64>,
) -> PyResult<(Vec<Rows>, PyParams)> {
    let mut cfg = SimulationConfig::new(d1, d2, t, r1, r2, e1, e2, seed);
    cfg.rho_target = rho_target;
    cfg.burn_in = burn_in;
    cfg.structure = Structure::parse(structure).map_err(py_err)?;
    if let Some(s) = sigma {
        cfg.noise = NoiseSpec::Iid { sigma: s };
    }
    let (series, truth) = simulate_core(&cfg).map_err(py_err)?;
    Ok((series_rows(&series), PyParams { inner: truth }))
}

/// Forecast path for horizons `1..=h` from `y_last`.
#[pyfunction]
fn forecast(params: PyParams, y_last: Rows, h: usize) -> PyResult<Vec<Rows>> {
    if h == 0 {
        return Err(PyValueError::new_err("forecast horizon must be >= 1"));
    }
    let path = metrics::forecast_path(&params.inner, &to_matrix(&y_last)?, h).map_err(py_err)?;
    Ok(path.iter().map(to_rows).collect())
}

#[pyfunction]
fn soft_threshold(m: Rows, tau: f64) -> PyResult<Rows> {
    Ok(to_rows(&prox::soft_threshold(&to_matrix(&m)?, tau).map_err(py_err)?))
}

/// Returns `(matrix, rank)`.
#[pyfunction]
fn singular_value_threshold(m: Rows, tau: f64) -> PyResult<(Rows, usize)> {
    let out = prox::singular_value_threshold(&to_matrix(&m)?, tau).map_err(py_err)?;
    Ok((to_rows(&out.matrix), out.rank))
}

/// `mode` is `"low_rank"`, `"sparse"` or `"both"`.
#[pyfunction]
#[pyo3(signature = (estimate, truth, mode = "both"))]
fn relative_error(estimate: PyParams, truth: PyParams, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "low_rank" => ReMode::LowRank,
        "sparse" => ReMode::Sparse,
        "both" => ReMode::Both,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    metrics::relative_error(&estimate.inner, &truth.inner, mode).map_err(py_err)
}

/// Returns `(sensitivity, specificity)`; `None` where undefined.
#[pyfunction]
#[pyo3(signature = (estimate, truth, zero_tol = 0.0))]
fn support_metrics(estimate: Rows, truth: Rows, zero_tol: f64) -> PyResult<(Option<f64>, Option<f64>)> {
    let m = metrics::support_metrics(&to_matrix(&estimate)?, &to_matrix(&truth)?, zero_tol).map_err(py_err)?;
    Ok((m.sn, m.sp))
}

/// Rolling-origin RMSE of `h`-step forecasts. Penalties are chosen by AIC at the first origin.
#[pyfunction]
#[pyo3(signature = (series, h, model = "additive_mar", window = 10, grid_points = 6))]
fn rolling_backtest(
    py: Python<'_>,
    series: Vec<Rows>,
    h: usize,
    model: &str,
    window: usize,
    grid_points: usize,
) -> PyResult<f64> {
    let series = to_series(&series)?;
    let model = ForecastModel::parse(model).map_err(py_err)?;
    let opts = BacktestOptions {
        tuning: Tuning::Search {
            grid: None,
            criterion: Criterion::Aic,
        },
        svar_tuning: SvarTuning::Aic(None),
        window,
        grid_points,
        ..BacktestOptions::default()
    };
    let report = py
        .detach(|| metrics::rolling_backtest(&series, h, &opts, &SolverConfig::default(), model))
        .map_err(py_err)?;
    Ok(report.rmse)
}

/// Applies one of `"none"`, `"diff"`, `"logdiff"`, `"logdiff2"` to each series and
/// trims all outputs from the front to a common length.
#[pyfunction]
fn transform_panel(series: Vec<Vec<f64>>, transforms: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
    let t = transforms
        .iter()
        .map(|s| Transform::parse(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    transforms::transform_panel(&series, &t).map_err(py_err)
}

#[pyfunction]
fn read_series(path: &str) -> PyResult<Vec<Rows>> {
    Ok(series_rows(&io::parse_series(path.as_ref()).map_err(py_err)?))
}

#[pyfunction]
fn write_series(path: &str, series: Vec<Rows>) -> PyResult<()> {
    io::write_series(path.as_ref(), &to_series(&series)?).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "addmar")]
fn addmar_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(forecast, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(singular_value_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(support_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(transform_panel, m)?)?;
    m.add_function(wrap_pyfunction!(read_series, m)?)?;
    m.add_function(wrap_pyfunction!(write_series, m)?)?;
    Ok(())
}
