//! Lasso-penalized VAR(1) on the vectorized series, the comparison baseline.
//!
//! `vec` stacks columns: entry `(i, j)` of a `d1 x d2` matrix sits at index
//! `i + d1 * j`. Under this convention the additive model's transition is
//! `I_{d2} (x) A + B (x) I_{d1}`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{max_eigenvalue, AdditiveMarParams, MatrixSeries};
use crate::prox::shrink;
use crate::selection::Aic;
use crate::solver::SolverConfig;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVarModel {
    pub transition: Matrix,
    pub lambda: f64,
    pub d1: usize,
    pub d2: usize,
    pub iters: usize,
    pub converged: bool,
    /// Lasso objective after each iteration.
    pub objective_trace: Vec<f64>,
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, d1: usize, d2: usize) -> Result<Matrix> {
    if v.len() != d1 * d2 {
        return Err(Error::dim(format!("vector of length {} cannot be {d1}x{d2}", v.len())));
    }
    Ok(Matrix::from_column_slice(d1, d2, v.as_slice()))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `Phi(p) = I_{d2} (x) (L1 + S1) + (L2 + S2) (x) I_{d1}`.
pub fn embed_additive(params: &AdditiveMarParams) -> Matrix {
    let (d1, d2) = (params.d1(), params.d2());
    kron(&Matrix::identity(d2, d2), &params.row_transition())
        + kron(&params.col_transition(), &Matrix::identity(d1, d1))
}

struct VecStats {
    /// `sum_t x_t x_t^T`
    gram: Matrix,
    /// `sum_t y_t x_t^T`
    cross: Matrix,
    /// `sum_t ||y_t||^2`
    constant: f64,
    n: f64,
}

impl VecStats {
    fn new(series: &MatrixSeries) -> Self {
        let p = series.d1() * series.d2();
        let mut gram = Matrix::zeros(p, p);
        let mut cross = Matrix::zeros(p, p);
        let mut constant = 0.0;
        for (prev, next) in series.pairs() {
            let x = vec(prev);
            let y = vec(next);
            gram.ger(1.0, &x, &x, 1.0);
            cross.ger(1.0, &y, &x, 1.0);
            constant += y.norm_squared();
        }
        Self {
            gram,
            cross,
            constant,
            n: series.n_pairs() as f64,
        }
    }

    fn loss(&self, phi: &Matrix) -> f64 {
        let v = self.constant - 2.0 * phi.dot(&self.cross) + (phi * &self.gram).dot(phi);
        (v / (2.0 * self.n)).max(0.0)
    }

    fn grad(&self, phi: &Matrix) -> Matrix {
        (phi * &self.gram - &self.cross) / self.n
    }
}

/// `(1/2N) sum_t ||vec(Y_t) - Phi vec(Y_{t-1})||^2`.
pub fn svar_loss(series: &MatrixSeries, phi: &Matrix) -> Result<f64> {
    let p = series.d1() * series.d2();
    if phi.shape() != (p, p) {
        return Err(Error::dim(format!("transition must be {p}x{p}")));
    }
    let total: f64 = series
        .pairs()
        .map(|(prev, next)| (vec(next) - phi * vec(prev)).norm_squared())
        .sum();
    Ok(total / (2.0 * series.n_pairs() as f64))
}

/// Smallest `lambda` giving `Phi = 0`.
pub fn svar_lambda_max(series: &MatrixSeries) -> f64 {
    VecStats::new(series).cross.amax() / series.n_pairs() as f64
}

/// Proximal gradient (accelerated with restart) on the lasso objective.
/// Uses `cfg.inner_tol`, `cfg.inner_max_iters` and `cfg.use_acceleration`.
pub fn fit_sparse_var(series: &MatrixSeries, lambda: f64, cfg: &SolverConfig) -> Result<SparseVarModel> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::arg(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    cfg.validate()?;
    let stats = VecStats::new(series);
    let lip = max_eigenvalue(&stats.gram) / stats.n;
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(Error::DegenerateData("regressor history is identically zero".into()));
    }
    let eta = 1.0 / lip;
    let tau = eta * lambda;
    let p = series.d1() * series.d2();
    let f = |phi: &Matrix| stats.loss(phi) + lambda * phi.iter().map(|v| v.abs()).sum::<f64>();

    let mut x = Matrix::zeros(p, p);
    let mut fx = f(&x);
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut converged = false;
    let mut iters = 0;

    // zero is optimal when the gradient there is within lambda entrywise
    if stats.cross.amax() / stats.n <= lambda {
        converged = true;
    } else {
        for _ in 0..cfg.inner_max_iters {
            iters += 1;
            let step = |from: &Matrix| {
                let g = stats.grad(from);
                (from - g * eta).map(|v| shrink(v, tau))
            };
            let mut x_new = step(&y);
            let mut f_new = f(&x_new);
            if cfg.use_acceleration && f_new > fx {
                x_new = step(&x);
                f_new = f(&x_new);
                momentum = 1.0;
            }
            if !f_new.is_finite() {
                return Err(Error::Divergence("non-finite lasso objective".into()));
            }
            if f_new > fx {
                converged = true;
                break;
            }
            let change = if fx == 0.0 { 0.0 } else { (fx - f_new) / fx.abs() };
            if cfg.use_acceleration {
                let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
                y = &x_new + (&x_new - &x) * ((momentum - 1.0) / next);
                momentum = next;
            } else {
                y = x_new.clone();
            }
            x = x_new;
            fx = f_new;
            trace.push(fx);
            if change < cfg.inner_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(SparseVarModel {
        transition: x,
        lambda,
        d1: series.d1(),
        d2: series.d2(),
        iters,
        converged,
        objective_trace: trace,
    })
}

/// Applies `Phi^h` to `vec(y_last)` and reshapes.
pub fn forecast_svar(model: &SparseVarModel, y_last: &Matrix, h: usize) -> Result<Matrix> {
    if h == 0 {
        return Err(Error::arg("forecast horizon must be >= 1"));
    }
    if y_last.shape() != (model.d1, model.d2) {
        return Err(Error::dim(format!(
            "model is for ({}, {}) matrices, got {:?}",
            model.d1,
            model.d2,
            y_last.shape()
        )));
    }
    let mut v = vec(y_last);
    for _ in 0..h {
        v = &model.transition * v;
    }
    unvec(&v, model.d1, model.d2)
}

/// AIC with complexity `2 nnz(Phi)`, on the same `1/(2N)`-scaled RSS as the additive model.
pub fn svar_aic(series: &MatrixSeries, model: &SparseVarModel) -> Result<Aic> {
    let rss = svar_loss(series, &model.transition)?;
    let tol = 1e-6 * model.transition.amax().max(1.0);
    let nnz = model.transition.iter().filter(|v| v.abs() > tol).count();
    Ok(crate::selection::aic_from_parts(series.n_pairs(), rss, 0, 0, nnz, 0))
}

/// Fits every lambda and keeps the lowest AIC (ties to the larger lambda).
pub fn select_sparse_var(series: &MatrixSeries, lambdas: &[f64], cfg: &SolverConfig) -> Result<SparseVarModel> {
    if lambdas.is_empty() {
        return Err(Error::arg("empty lambda list"));
    }
    use rayon::prelude::*;
    let fits: Vec<(f64, SparseVarModel)> = lambdas
        .par_iter()
        .map(|&l| {
            let m = fit_sparse_var(series, l, cfg)?;
            Ok((svar_aic(series, &m)?.value, m))
        })
        .collect::<Result<_>>()?;
    let best = (0..fits.len())
        .min_by(|&a, &b| {
            fits[a]
                .0
                .total_cmp(&fits[b].0)
                .then_with(|| fits[b].1.lambda.total_cmp(&fits[a].1.lambda))
        })
        .expect("non-empty");
    Ok(fits.into_iter().nth(best).expect("in range").1)
}
