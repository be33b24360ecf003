//! Estimation-quality metrics, recursive forecasts and the rolling-origin backtest.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{AdditiveMarParams, MatrixSeries, Penalties};
use crate::selection::{grid_search, Criterion, GridMode, LambdaGrid};
use crate::solver::{density_tolerance, estimate_rank, fit, SolverConfig};
use crate::svar::{fit_sparse_var, forecast_svar, select_sparse_var, svar_lambda_max};
use crate::Matrix;

/// Which components enter the relative error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReMode {
    LowRank,
    Sparse,
    /// All four blocks: `e^2` over the full parameter norm.
    Both,
}

fn sq_dist(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm_squared()
}

/// `sum ||est_k - truth_k||_F^2`, over all four blocks.
pub fn estimation_error_sq(est: &AdditiveMarParams, truth: &AdditiveMarParams) -> f64 {
    sq_dist(&est.l1, &truth.l1) + sq_dist(&est.l2, &truth.l2) + sq_dist(&est.s1, &truth.s1) + sq_dist(&est.s2, &truth.s2)
}

pub fn relative_error(est: &AdditiveMarParams, truth: &AdditiveMarParams, mode: ReMode) -> Result<f64> {
    if est.d1() != truth.d1() || est.d2() != truth.d2() {
        return Err(Error::dim("estimate and truth have different dimensions"));
    }
    let (num, den) = match mode {
        ReMode::LowRank => (
            sq_dist(&est.l1, &truth.l1) + sq_dist(&est.l2, &truth.l2),
            truth.l1.norm_squared() + truth.l2.norm_squared(),
        ),
        ReMode::Sparse => (
            sq_dist(&est.s1, &truth.s1) + sq_dist(&est.s2, &truth.s2),
            truth.s1.norm_squared() + truth.s2.norm_squared(),
        ),
        ReMode::Both => (
            estimation_error_sq(est, truth),
            truth.l1.norm_squared() + truth.l2.norm_squared() + truth.s1.norm_squared() + truth.s2.norm_squared(),
        ),
    };
    if den == 0.0 {
        return Err(Error::arg("relative error undefined: truth has zero norm"));
    }
    Ok(num / den)
}

/// Sensitivity and specificity of a support estimate; `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics {
    pub sn: Option<f64>,
    pub sp: Option<f64>,
}

pub fn support_metrics(est_s: &Matrix, true_s: &Matrix, zero_tol: f64) -> Result<SupportMetrics> {
    if est_s.shape() != true_s.shape() {
        return Err(Error::dim(format!(
            "estimate {:?} and truth {:?} differ in shape",
            est_s.shape(),
            true_s.shape()
        )));
    }
    let (mut tp, mut fnn, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (e, t) in est_s.iter().zip(true_s.iter()) {
        let est_nz = e.abs() > zero_tol;
        match (*t != 0.0, est_nz) {
            (true, true) => tp += 1,
            (true, false) => fnn += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    let rate = |a: usize, b: usize| if a + b == 0 { None } else { Some(a as f64 / (a + b) as f64) };
    Ok(SupportMetrics {
        sn: rate(tp, fnn),
        sp: rate(tn, fp),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub re: f64,
    pub sn_s1: Option<f64>,
    pub sp_s1: Option<f64>,
    pub sn_s2: Option<f64>,
    pub sp_s2: Option<f64>,
    pub rank_l1_hat: Option<usize>,
    pub rank_l2_hat: Option<usize>,
}

/// RE in `mode`, support recovery when the truth has sparse parts, ranks when it has low-rank parts.
pub fn evaluate(est: &AdditiveMarParams, truth: &AdditiveMarParams, mode: ReMode) -> Result<MetricsReport> {
    let re = relative_error(est, truth, mode)?;
    let has_sparse = truth.s1.norm() > 0.0 || truth.s2.norm() > 0.0;
    let has_low_rank = truth.l1.norm() > 0.0 || truth.l2.norm() > 0.0;
    let (m1, m2) = if has_sparse {
        (
            support_metrics(&est.s1, &truth.s1, density_tolerance(&est.s1))?,
            support_metrics(&est.s2, &truth.s2, density_tolerance(&est.s2))?,
        )
    } else {
        let none = SupportMetrics { sn: None, sp: None };
        (none, none)
    };
    Ok(MetricsReport {
        re,
        sn_s1: m1.sn,
        sp_s1: m1.sp,
        sn_s2: m2.sn,
        sp_s2: m2.sp,
        rank_l1_hat: has_low_rank.then(|| estimate_rank(&est.l1)),
        rank_l2_hat: has_low_rank.then(|| estimate_rank(&est.l2)),
    })
}

/// Iterates the noise-free transition `h` times from `y_last`.
pub fn forecast(params: &AdditiveMarParams, y_last: &Matrix, h: usize) -> Result<Matrix> {
    if h == 0 {
        return Err(Error::arg("forecast horizon must be >= 1"));
    }
    if y_last.shape() != (params.d1(), params.d2()) {
        return Err(Error::dim(format!(
            "parameters are for ({}, {}) matrices, got {:?}",
            params.d1(),
            params.d2(),
            y_last.shape()
        )));
    }
    let a = params.row_transition();
    let bt = params.col_transition().transpose();
    let mut y = y_last.clone();
    for _ in 0..h {
        y = &a * &y + &y * &bt;
    }
    Ok(y)
}

/// Forecast paths `h = 1..=steps`.
pub fn forecast_path(params: &AdditiveMarParams, y_last: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(steps);
    let mut y = y_last.clone();
    for _ in 0..steps {
        y = forecast(params, &y, 1)?;
        out.push(y.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastModel {
    AdditiveMar,
    SparseVar,
}

impl ForecastModel {
    pub fn name(self) -> &'static str {
        match self {
            ForecastModel::AdditiveMar => "additive_mar",
            ForecastModel::SparseVar => "sparse_var",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "additive_mar" | "additive-mar" | "mar" => Ok(ForecastModel::AdditiveMar),
            "sparse_var" | "sparse-var" | "svar" => Ok(ForecastModel::SparseVar),
            other => Err(Error::arg(format!("unknown model `{other}`"))),
        }
    }
}

/// How penalties are chosen for the additive model inside a backtest.
#[derive(Debug, Clone, PartialEq)]
pub enum Tuning {
    Fixed(Penalties),
    /// Grid search; `grid: None` builds a data-driven grid on the tuning window.
    Search { grid: Option<LambdaGrid>, criterion: Criterion },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SvarTuning {
    Fixed(f64),
    /// AIC over the list, or a data-driven geometric list when `None`.
    Aic(Option<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOptions {
    pub tuning: Tuning,
    pub svar_tuning: SvarTuning,
    /// Number of trailing time points the origins span.
    pub window: usize,
    /// Re-run tuning at every origin instead of only the first.
    pub retune_each_origin: bool,
    /// Fit once at the first origin and reuse the model (fast, off by default).
    pub fit_once: bool,
    /// Points per axis for data-driven grids.
    pub grid_points: usize,
    /// Smallest grid value relative to `lambda_max`.
    pub grid_min_ratio: f64,
    pub grid_mode: GridMode,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            tuning: Tuning::Search {
                grid: None,
                criterion: Criterion::Aic,
            },
            svar_tuning: SvarTuning::Aic(None),
            window: 10,
            retune_each_origin: false,
            fit_once: false,
            grid_points: 6,
            grid_min_ratio: 0.01,
            grid_mode: GridMode::CoupledPairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub model: ForecastModel,
    pub horizon: usize,
    pub rmse: f64,
    pub n_origins: usize,
    /// Squared Frobenius forecast error per origin, divided by `d1 d2`.
    pub errors: Vec<f64>,
}

enum Fitted {
    Mar(AdditiveMarParams),
    Svar(crate::svar::SparseVarModel),
}

impl Fitted {
    fn predict(&self, y_last: &Matrix, h: usize) -> Result<Matrix> {
        match self {
            Fitted::Mar(p) => forecast(p, y_last, h),
            Fitted::Svar(m) => forecast_svar(m, y_last, h),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Hyper {
    Mar(Penalties),
    Svar(f64),
}

fn tune(train: &MatrixSeries, model: ForecastModel, opts: &BacktestOptions, cfg: &SolverConfig) -> Result<(Hyper, Fitted)> {
    match model {
        ForecastModel::AdditiveMar => match &opts.tuning {
            Tuning::Fixed(p) => {
                let r = fit(train, p, cfg)?;
                Ok((Hyper::Mar(*p), Fitted::Mar(r.params)))
            }
            Tuning::Search { grid, criterion } => {
                let grid = match grid {
                    Some(g) => g.clone(),
                    None => LambdaGrid::from_data(train, opts.grid_points, opts.grid_min_ratio, opts.grid_mode)?,
                };
                let (p, r) = grid_search(train, &grid, cfg, criterion)?;
                Ok((Hyper::Mar(p), Fitted::Mar(r.params)))
            }
        },
        ForecastModel::SparseVar => match &opts.svar_tuning {
            SvarTuning::Fixed(l) => {
                let m = fit_sparse_var(train, *l, cfg)?;
                Ok((Hyper::Svar(*l), Fitted::Svar(m)))
            }
            SvarTuning::Aic(list) => {
                let lambdas = match list {
                    Some(l) => l.clone(),
                    None => crate::selection::geometric_grid(
                        svar_lambda_max(train),
                        opts.grid_min_ratio,
                        opts.grid_points.max(2) * 2,
                    ),
                };
                let m = select_sparse_var(train, &lambdas, cfg)?;
                Ok((Hyper::Svar(m.lambda), Fitted::Svar(m)))
            }
        },
    }
}

fn refit(train: &MatrixSeries, hyper: Hyper, cfg: &SolverConfig) -> Result<Fitted> {
    match hyper {
        Hyper::Mar(p) => Ok(Fitted::Mar(fit(train, &p, cfg)?.params)),
        Hyper::Svar(l) => Ok(Fitted::Svar(fit_sparse_var(train, l, cfg)?)),
    }
}

/// Rolling-origin RMSE of `h`-step forecasts.
///
/// For each training length `n` in `T-window ..= T-h`, the model is fitted on
/// the first `n` matrices and forecasts index `n - 1 + h`. The RMSE averages
/// `||Y - Y_hat||_F^2 / (d1 d2)` over the `window - h + 1` origins.
pub fn rolling_backtest(
    series: &MatrixSeries,
    h: usize,
    opts: &BacktestOptions,
    cfg: &SolverConfig,
    model: ForecastModel,
) -> Result<BacktestReport> {
    let t = series.len();
    let w = opts.window;
    if h == 0 || h > w {
        return Err(Error::arg(format!("horizon must be in 1..={w}, got {h}")));
    }
    if t <= w + h {
        return Err(Error::arg(format!(
            "series too short: backtest with window {w} and horizon {h} needs T > {}, got {t}",
            w + h
        )));
    }
    let lengths: Vec<usize> = (t - w..=t - h).collect();
    let first_train = series.prefix(lengths[0])?;
    let (hyper, first_fit) = tune(&first_train, model, opts, cfg)?;

    let scale = (series.d1() * series.d2()) as f64;
    let score = |fitted: &Fitted, n: usize| -> Result<f64> {
        let pred = fitted.predict(series.get(n - 1), h)?;
        Ok((series.get(n - 1 + h) - pred).norm_squared() / scale)
    };

    let mut errors = vec![score(&first_fit, lengths[0])?];
    let rest: Vec<f64> = lengths[1..]
        .par_iter()
        .map(|&n| {
            if opts.fit_once {
                return score(&first_fit, n);
            }
            let train = series.prefix(n)?;
            let fitted = if opts.retune_each_origin {
                tune(&train, model, opts, cfg)?.1
            } else {
                refit(&train, hyper, cfg)?
            };
            score(&fitted, n)
        })
        .collect::<Result<_>>()?;
    errors.extend(rest);

    let mse = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(BacktestReport {
        model,
        horizon: h,
        rmse: mse.sqrt(),
        n_origins: errors.len(),
        errors,
    })
}
