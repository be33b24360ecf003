//! Model types, the penalized least-squares objective and its block gradients.
//!
//! The additive model is `Y_t = (L1 + S1) Y_{t-1} + Y_{t-1} (L2 + S2)^T + E_t`.
//! Series are indexed `t = 0..T-1`; the loss sums over the `N = T - 1`
//! transitions `(t-1 -> t)` and is normalized by `N`.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::Matrix;

/// An ordered sequence of equally shaped real matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    data: Vec<Matrix>,
    d1: usize,
    d2: usize,
}

impl MatrixSeries {
    pub fn new(data: Vec<Matrix>) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::arg(format!(
                "a series needs at least 2 time points, got {}",
                data.len()
            )));
        }
        let (d1, d2) = data[0].shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::dim("matrices must have positive dimensions"));
        }
        for (t, m) in data.iter().enumerate() {
            if m.shape() != (d1, d2) {
                return Err(Error::dim(format!(
                    "matrix at t={t} has shape {:?}, expected ({d1}, {d2})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("non-finite entry at t={t}")));
            }
        }
        Ok(Self { data, d1, d2 })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; a valid series holds at least two matrices.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Number of transition pairs, `T - 1`.
    pub fn n_pairs(&self) -> usize {
        self.data.len() - 1
    }

    pub fn get(&self, t: usize) -> &Matrix {
        &self.data[t]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.data
    }

    pub fn last(&self) -> &Matrix {
        &self.data[self.data.len() - 1]
    }

    /// Iterator over `(Y_{t-1}, Y_t)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&Matrix, &Matrix)> + '_ {
        self.data.windows(2).map(|w| (&w[0], &w[1]))
    }

    /// The first `len` matrices as a new series.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len > self.data.len() {
            return Err(Error::arg(format!(
                "prefix length {len} exceeds series length {}",
                self.data.len()
            )));
        }
        Self::new(self.data[..len].to_vec())
    }

    pub fn into_inner(self) -> Vec<Matrix> {
        self.data
    }
}

/// Identifies one of the four parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    L1,
    S1,
    L2,
    S2,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::L1, Block::S1, Block::L2, Block::S2];

    pub fn side(self) -> Side {
        match self {
            Block::L1 | Block::S1 => Side::Row,
            Block::L2 | Block::S2 => Side::Col,
        }
    }

    pub fn is_low_rank(self) -> bool {
        matches!(self, Block::L1 | Block::L2)
    }

    /// The other block acting on the same side.
    pub fn partner(self) -> Block {
        match self {
            Block::L1 => Block::S1,
            Block::S1 => Block::L1,
            Block::L2 => Block::S2,
            Block::S2 => Block::L2,
        }
    }
}

/// Row side transitions act on the left (`A Y`), column side on the right (`Y B^T`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Row,
    Col,
}

/// Low-rank and sparse components of both transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveMarParams {
    pub l1: Matrix,
    pub s1: Matrix,
    pub l2: Matrix,
    pub s2: Matrix,
}

impl AdditiveMarParams {
    pub fn new(l1: Matrix, s1: Matrix, l2: Matrix, s2: Matrix) -> Result<Self> {
        let d1 = l1.nrows();
        let d2 = l2.nrows();
        for (name, m, d) in [("L1", &l1, d1), ("S1", &s1, d1), ("L2", &l2, d2), ("S2", &s2, d2)] {
            if m.shape() != (d, d) {
                return Err(Error::dim(format!(
                    "{name} has shape {:?}, expected ({d}, {d})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("{name} has non-finite entries")));
            }
        }
        if d1 == 0 || d2 == 0 {
            return Err(Error::dim("parameter blocks must be non-empty"));
        }
        Ok(Self { l1, s1, l2, s2 })
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        Self {
            l1: Matrix::zeros(d1, d1),
            s1: Matrix::zeros(d1, d1),
            l2: Matrix::zeros(d2, d2),
            s2: Matrix::zeros(d2, d2),
        }
    }

    pub fn d1(&self) -> usize {
        self.l1.nrows()
    }

    pub fn d2(&self) -> usize {
        self.l2.nrows()
    }

    /// `A = L1 + S1`.
    pub fn row_transition(&self) -> Matrix {
        &self.l1 + &self.s1
    }

    /// `B = L2 + S2`.
    pub fn col_transition(&self) -> Matrix {
        &self.l2 + &self.s2
    }

    pub fn block(&self, b: Block) -> &Matrix {
        match b {
            Block::L1 => &self.l1,
            Block::S1 => &self.s1,
            Block::L2 => &self.l2,
            Block::S2 => &self.s2,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Matrix {
        match b {
            Block::L1 => &mut self.l1,
            Block::S1 => &mut self.s1,
            Block::L2 => &mut self.l2,
            Block::S2 => &mut self.s2,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            l1: &self.l1 * c,
            s1: &self.s1 * c,
            l2: &self.l2 * c,
            s2: &self.s2 * c,
        }
    }

    /// One noise-free step of the model: `A Y + Y B^T`.
    pub fn apply(&self, y: &Matrix) -> Matrix {
        self.row_transition() * y + y * self.col_transition().transpose()
    }

    pub(crate) fn check_against(&self, series: &MatrixSeries) -> Result<()> {
        if self.d1() != series.d1() || self.d2() != series.d2() {
            return Err(Error::dim(format!(
                "parameters are for ({}, {}) matrices, series has ({}, {})",
                self.d1(),
                self.d2(),
                series.d1(),
                series.d2()
            )));
        }
        Ok(())
    }
}

/// Regularization weights for the four blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub lambda_l1: f64,
    pub lambda_s1: f64,
    pub lambda_l2: f64,
    pub lambda_s2: f64,
}

impl Penalties {
    pub fn new(lambda_l1: f64, lambda_s1: f64, lambda_l2: f64, lambda_s2: f64) -> Result<Self> {
        let p = Self {
            lambda_l1,
            lambda_s1,
            lambda_l2,
            lambda_s2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda, lambda, lambda)
    }

    pub fn zero() -> Self {
        Self {
            lambda_l1: 0.0,
            lambda_s1: 0.0,
            lambda_l2: 0.0,
            lambda_s2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_L1", self.lambda_l1),
            ("lambda_S1", self.lambda_s1),
            ("lambda_L2", self.lambda_l2),
            ("lambda_S2", self.lambda_s2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn for_block(&self, b: Block) -> f64 {
        match b {
            Block::L1 => self.lambda_l1,
            Block::S1 => self.lambda_s1,
            Block::L2 => self.lambda_l2,
            Block::S2 => self.lambda_s2,
        }
    }

    pub fn total(&self) -> f64 {
        self.lambda_l1 + self.lambda_s1 + self.lambda_l2 + self.lambda_s2
    }
}

/// Proximal gradient step sizes `1/L` for the row-side and column-side blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta_row: f64,
    pub eta_col: f64,
}

/// `R_t = Y_t - A Y_{t-1} - Y_{t-1} B^T` for every transition.
pub fn residuals(series: &MatrixSeries, params: &AdditiveMarParams) -> Result<Vec<Matrix>> {
    params.check_against(series)?;
    let a = params.row_transition();
    let bt = params.col_transition().transpose();
    Ok(series
        .pairs()
        .map(|(prev, next)| next - &a * prev - prev * &bt)
        .collect())
}

/// `(1/2N) sum_t ||R_t||_F^2`.
pub fn smooth_loss(series: &MatrixSeries, params: &AdditiveMarParams) -> Result<f64> {
    let res = residuals(series, params)?;
    let n = series.n_pairs() as f64;
    Ok(res.iter().map(|r| r.norm_squared()).sum::<f64>() / (2.0 * n))
}

pub fn l1_norm(m: &Matrix) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    m.singular_values().iter().sum()
}

/// Penalty part of the objective for the given parameters.
pub fn penalty(params: &AdditiveMarParams, pen: &Penalties) -> f64 {
    Block::ALL
        .iter()
        .map(|&b| block_penalty(b, params.block(b), pen.for_block(b)))
        .sum()
}

pub(crate) fn block_penalty(b: Block, m: &Matrix, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    if b.is_low_rank() {
        lambda * nuclear_norm(m)
    } else {
        lambda * l1_norm(m)
    }
}

/// Smooth loss plus the nuclear-norm and l1 penalties.
pub fn objective(series: &MatrixSeries, params: &AdditiveMarParams, pen: &Penalties) -> Result<f64> {
    pen.validate()?;
    Ok(smooth_loss(series, params)? + penalty(params, pen))
}

/// Gradient of the smooth loss with respect to `A = L1 + S1` (and so to L1 and S1).
pub fn grad_row(series: &MatrixSeries, params: &AdditiveMarParams) -> Result<Matrix> {
    let res = residuals(series, params)?;
    let n = series.n_pairs() as f64;
    let mut g = Matrix::zeros(series.d1(), series.d1());
    for (r, (prev, _)) in res.iter().zip(series.pairs()) {
        g.gemm(-1.0 / n, r, &prev.transpose(), 1.0);
    }
    Ok(g)
}

/// Gradient of the smooth loss with respect to `B = L2 + S2`.
pub fn grad_col(series: &MatrixSeries, params: &AdditiveMarParams) -> Result<Matrix> {
    let res = residuals(series, params)?;
    let n = series.n_pairs() as f64;
    let mut g = Matrix::zeros(series.d2(), series.d2());
    for (r, (prev, _)) in res.iter().zip(series.pairs()) {
        g.gemm_tr(-1.0 / n, r, prev, 1.0);
    }
    Ok(g)
}

/// Gram matrices `sum_t Y_{t-1} Y_{t-1}^T` (row) and `sum_t Y_{t-1}^T Y_{t-1}` (col), unnormalized.
pub(crate) fn regressor_grams(series: &MatrixSeries) -> (Matrix, Matrix) {
    let (d1, d2) = (series.d1(), series.d2());
    let mut g_row = Matrix::zeros(d1, d1);
    let mut g_col = Matrix::zeros(d2, d2);
    for (prev, _) in series.pairs() {
        g_row.gemm(1.0, prev, &prev.transpose(), 1.0);
        g_col.gemm_tr(1.0, prev, prev, 1.0);
    }
    (g_row, g_col)
}

pub(crate) fn max_eigenvalue(sym: &Matrix) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Step sizes from the exact Lipschitz constants of the block gradients.
pub fn step_sizes(series: &MatrixSeries) -> Result<StepSizes> {
    let (g_row, g_col) = regressor_grams(series);
    let n = series.n_pairs() as f64;
    let l_row = max_eigenvalue(&g_row) / n;
    let l_col = max_eigenvalue(&g_col) / n;
    if !(l_row > 0.0 && l_col > 0.0) || !l_row.is_finite() || !l_col.is_finite() {
        return Err(Error::DegenerateData(
            "regressor history Y_0..Y_{T-2} is identically zero".into(),
        ));
    }
    Ok(StepSizes {
        eta_row: 1.0 / l_row,
        eta_col: 1.0 / l_col,
    })
}

/// Quadratic form of the smooth loss restricted to one side, with the other
/// side's transition held fixed:
/// `loss(X) = (1/2N) (c - 2 <X, M> + <X G, X>)`, gradient `-(1/N)(M - X G)`.
#[derive(Debug, Clone)]
pub(crate) struct SideQuadratic {
    pub cross: Matrix,
    pub gram: Matrix,
    pub constant: f64,
    pub n: f64,
}

impl SideQuadratic {
    /// Row side: `X = A`, fixed `B`.
    pub fn row(series: &MatrixSeries, b: &Matrix, gram_row: &Matrix) -> Self {
        let d1 = series.d1();
        let bt = b.transpose();
        let mut cross = Matrix::zeros(d1, d1);
        let mut constant = 0.0;
        for (prev, next) in series.pairs() {
            let z = next - prev * &bt;
            cross.gemm(1.0, &z, &prev.transpose(), 1.0);
            constant += z.norm_squared();
        }
        Self {
            cross,
            gram: gram_row.clone(),
            constant,
            n: series.n_pairs() as f64,
        }
    }

    /// Column side: `X = B`, fixed `A`.
    pub fn col(series: &MatrixSeries, a: &Matrix, gram_col: &Matrix) -> Self {
        let d2 = series.d2();
        let mut cross = Matrix::zeros(d2, d2);
        let mut constant = 0.0;
        for (prev, next) in series.pairs() {
            let z = next - a * prev;
            cross.gemm_tr(1.0, &z, prev, 1.0);
            constant += z.norm_squared();
        }
        Self {
            cross,
            gram: gram_col.clone(),
            constant,
            n: series.n_pairs() as f64,
        }
    }

    pub fn loss(&self, x: &Matrix) -> f64 {
        let xg = x * &self.gram;
        let v = self.constant - 2.0 * x.dot(&self.cross) + xg.dot(x);
        (v / (2.0 * self.n)).max(0.0)
    }

    pub fn grad(&self, x: &Matrix) -> Matrix {
        (x * &self.gram - &self.cross) / self.n
    }
}
