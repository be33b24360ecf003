//! Alternating block minimization over `(L1, S1, L2, S2)`.
//!
//! Each sweep updates the four blocks in turn. A block update solves its
//! subproblem (the other three blocks held fixed) by proximal gradient with
//! step `1/L`: singular value thresholding for the low-rank blocks, soft
//! thresholding for the sparse ones. Acceleration uses Nesterov momentum with
//! a function-value restart, so every accepted iterate decreases the block
//! objective.

use crate::error::{Error, Result};
use crate::model::{
    block_penalty, objective, regressor_grams, smooth_loss, step_sizes, AdditiveMarParams, Block,
    MatrixSeries, Penalties, Side, SideQuadratic, StepSizes,
};
use crate::prox::{numerical_rank, shrink, singular_value_threshold};
use crate::selection::aic_from_parts;
use crate::Matrix;

/// Starting point of the outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Provided(AdditiveMarParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stop once the relative change of the objective over one sweep drops below this.
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    /// Relative change of the block objective that ends a block solve.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub use_acceleration: bool,
    pub init: Init,
    /// Update order within a sweep.
    pub block_order: [Block; 4],
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            outer_max_iters: 200,
            inner_tol: 1e-8,
            inner_max_iters: 500,
            use_acceleration: true,
            init: Init::Zeros,
            block_order: Block::ALL,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::arg("solver tolerances must be > 0"));
        }
        if self.outer_max_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::arg("solver iteration caps must be >= 1"));
        }
        let mut seen = self.block_order.to_vec();
        seen.sort_by_key(|b| *b as u8);
        seen.dedup();
        if seen.len() != 4 {
            return Err(Error::arg("block_order must name each block exactly once"));
        }
        Ok(())
    }

    /// Same settings with all tolerances tightened by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            outer_tol: self.outer_tol / factor,
            inner_tol: self.inner_tol / factor,
            ..self.clone()
        }
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: AdditiveMarParams,
    pub penalties: Penalties,
    /// Objective after each outer sweep.
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub converged: bool,
    pub smooth_loss: f64,
    pub est_rank_l1: usize,
    pub est_rank_l2: usize,
    pub est_density_s1: f64,
    pub est_density_s2: f64,
    pub nnz_s1: usize,
    pub nnz_s2: usize,
    pub aic: f64,
    /// Set when the residual sum of squares is zero and `aic` is the sentinel floor.
    pub aic_degenerate: bool,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace has at least one entry")
    }
}

/// Numerical rank used for reporting.
pub fn estimate_rank(m: &Matrix) -> usize {
    numerical_rank(m)
}

/// Fraction of entries with `|m| > zero_tol`.
pub fn estimate_density(m: &Matrix, zero_tol: f64) -> Result<f64> {
    if !(zero_tol >= 0.0) {
        return Err(Error::arg(format!("zero_tol must be >= 0, got {zero_tol}")));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(count_nonzero(m, zero_tol) as f64 / m.len() as f64)
}

pub(crate) fn count_nonzero(m: &Matrix, zero_tol: f64) -> usize {
    m.iter().filter(|v| v.abs() > zero_tol).count()
}

/// Round-off guard for support reporting: `1e-6 * max(max|m|, 1)`.
pub fn density_tolerance(m: &Matrix) -> f64 {
    1e-6 * m.amax().max(1.0)
}

/// Data-dependent quantities shared by every block solve on one series.
pub(crate) struct Workspace {
    gram_row: Matrix,
    gram_col: Matrix,
    steps: StepSizes,
}

impl Workspace {
    pub fn new(series: &MatrixSeries) -> Result<Self> {
        let steps = step_sizes(series)?;
        let (gram_row, gram_col) = regressor_grams(series);
        Ok(Self {
            gram_row,
            gram_col,
            steps,
        })
    }

    fn side_quadratic(&self, side: Side, series: &MatrixSeries, params: &AdditiveMarParams) -> SideQuadratic {
        match side {
            Side::Row => SideQuadratic::row(series, &params.col_transition(), &self.gram_row),
            Side::Col => SideQuadratic::col(series, &params.row_transition(), &self.gram_col),
        }
    }

    fn step(&self, side: Side) -> f64 {
        match side {
            Side::Row => self.steps.eta_row,
            Side::Col => self.steps.eta_col,
        }
    }
}

/// Applies the block's prox and returns the result with its penalty value.
fn prox_step(block: Block, v: &Matrix, tau: f64, lambda: f64) -> Result<(Matrix, f64)> {
    if block.is_low_rank() {
        let out = singular_value_threshold(v, tau)?;
        let pen = lambda * out.nuclear_norm();
        Ok((out.matrix, pen))
    } else {
        let out = v.map(|x| shrink(x, tau));
        let pen = lambda * out.iter().map(|x| x.abs()).sum::<f64>();
        Ok((out, pen))
    }
}

fn dual_norm(block: Block, g: &Matrix) -> f64 {
    if block.is_low_rank() {
        g.singular_values().iter().cloned().fold(0.0, f64::max)
    } else {
        g.amax()
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    let denom = old.abs().max(new.abs());
    if denom == 0.0 {
        0.0
    } else {
        (old - new).abs() / denom
    }
}

/// Solves one block subproblem; returns the block and the number of prox steps taken.
pub(crate) fn solve_block_in(
    ws: &Workspace,
    block: Block,
    series: &MatrixSeries,
    params: &AdditiveMarParams,
    pen: &Penalties,
    cfg: &SolverConfig,
) -> Result<(Matrix, usize)> {
    let side = block.side();
    let quad = ws.side_quadratic(side, series, params);
    let eta = ws.step(side);
    let lambda = pen.for_block(block);
    let tau = eta * lambda;
    let fixed = params.block(block.partner());
    let x0 = params.block(block);

    // Zero is optimal when the gradient there lies inside the dual-norm ball.
    if x0.iter().all(|&v| v == 0.0) {
        let g = quad.grad(fixed);
        if dual_norm(block, &g) <= lambda {
            return Ok((x0.clone(), 0));
        }
    }

    let f = |x: &Matrix, pen_x: f64| quad.loss(&(x + fixed)) + pen_x;
    let mut x = x0.clone();
    let mut fx = f(&x, block_penalty(block, &x, lambda));
    if !fx.is_finite() {
        return Err(Error::Divergence(format!("non-finite objective at start of {block:?} solve")));
    }

    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut iters = 0;
    for _ in 0..cfg.inner_max_iters {
        iters += 1;
        let g = quad.grad(&(&y + fixed));
        let (mut x_new, mut pen_new) = prox_step(block, &(&y - g * eta), tau, lambda)?;
        let mut f_new = f(&x_new, pen_new);
        if cfg.use_acceleration && f_new > fx {
            // restart: plain step from the last accepted iterate
            let g = quad.grad(&(&x + fixed));
            let (xr, pr) = prox_step(block, &(&x - g * eta), tau, lambda)?;
            x_new = xr;
            pen_new = pr;
            f_new = f(&x_new, pen_new);
            momentum = 1.0;
        }
        if !f_new.is_finite() {
            return Err(Error::Divergence(format!("non-finite objective in {block:?} solve")));
        }
        if f_new > fx {
            // no descent possible beyond round-off
            break;
        }
        let change = relative_change(fx, f_new);
        if cfg.use_acceleration {
            let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next;
            y = &x_new + (&x_new - &x) * beta;
            momentum = next;
        } else {
            y = x_new.clone();
        }
        let _ = pen_new;
        x = x_new;
        fx = f_new;
        if change < cfg.inner_tol {
            break;
        }
    }
    Ok((x, iters))
}

/// Minimizes the objective over one block with the other three fixed.
pub fn solve_block(
    block: Block,
    series: &MatrixSeries,
    params: &AdditiveMarParams,
    pen: &Penalties,
    cfg: &SolverConfig,
) -> Result<Matrix> {
    params.check_against(series)?;
    pen.validate()?;
    cfg.validate()?;
    let ws = Workspace::new(series)?;
    let (m, _) = solve_block_in(&ws, block, series, params, pen, cfg)?;
    let before = objective(series, params, pen)?;
    let mut updated = params.clone();
    *updated.block_mut(block) = m;
    let after = objective(series, &updated, pen)?;
    if !after.is_finite() {
        return Err(Error::Divergence(format!("non-finite objective after {block:?} solve")));
    }
    if after > before + 1e-12 * before.abs() {
        return Ok(params.block(block).clone());
    }
    Ok(std::mem::replace(updated.block_mut(block), Matrix::zeros(0, 0)))
}

/// Fits the additive model by alternating block minimization.
pub fn fit(series: &MatrixSeries, pen: &Penalties, cfg: &SolverConfig) -> Result<FitReport> {
    pen.validate()?;
    cfg.validate()?;
    let ws = Workspace::new(series)?;
    let mut params = match &cfg.init {
        Init::Zeros => AdditiveMarParams::zeros(series.d1(), series.d2()),
        Init::Provided(p) => {
            p.check_against(series)?;
            p.clone()
        }
    };

    let mut obj = objective(series, &params, pen)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut inner_total = 0;
    let mut sweeps = 0;
    while sweeps < cfg.outer_max_iters {
        sweeps += 1;
        let previous = params.clone();
        for &b in &cfg.block_order {
            let (m, it) = solve_block_in(&ws, b, series, &params, pen, cfg)?;
            inner_total += it;
            *params.block_mut(b) = m;
        }
        let new_obj = objective(series, &params, pen)?;
        if !new_obj.is_finite() {
            return Err(Error::Divergence(format!("non-finite objective after sweep {sweeps}")));
        }
        if new_obj > obj * (1.0 + 1e-12) {
            // round-off only; keep the previous point
            params = previous;
            trace.push(obj);
            converged = true;
            break;
        }
        let change = relative_change(obj, new_obj);
        obj = new_obj;
        trace.push(obj);
        if change < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(build_report(series, params, *pen, trace, sweeps, inner_total, converged))
}

pub(crate) fn build_report(
    series: &MatrixSeries,
    params: AdditiveMarParams,
    pen: Penalties,
    objective_trace: Vec<f64>,
    outer_iters: usize,
    inner_iters: usize,
    converged: bool,
) -> FitReport {
    let loss = smooth_loss(series, &params).expect("shapes checked by caller");
    let tol1 = density_tolerance(&params.s1);
    let tol2 = density_tolerance(&params.s2);
    let nnz_s1 = count_nonzero(&params.s1, tol1);
    let nnz_s2 = count_nonzero(&params.s2, tol2);
    let est_rank_l1 = estimate_rank(&params.l1);
    let est_rank_l2 = estimate_rank(&params.l2);
    let aic = aic_from_parts(series.n_pairs(), loss, est_rank_l1, est_rank_l2, nnz_s1, nnz_s2);
    FitReport {
        est_density_s1: nnz_s1 as f64 / params.s1.len() as f64,
        est_density_s2: nnz_s2 as f64 / params.s2.len() as f64,
        params,
        penalties: pen,
        objective_trace,
        outer_iters,
        inner_iters,
        converged,
        smooth_loss: loss,
        est_rank_l1,
        est_rank_l2,
        nnz_s1,
        nnz_s2,
        aic: aic.value,
        aic_degenerate: aic.degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    /// Simulates `Y_t = A Y_{t-1} + Y_{t-1} B^T + noise * Z_t` from a random start.
    fn simulate(params: &AdditiveMarParams, t: usize, noise: f64, seed: u64) -> MatrixSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d1, d2) = (params.d1(), params.d2());
        let mut data = vec![random_matrix(&mut rng, d1, d2, 1.0)];
        for _ in 1..t {
            let e = random_matrix(&mut rng, d1, d2, 1.0) * noise;
            let next = params.apply(data.last().unwrap()) + e;
            data.push(next);
        }
        MatrixSeries::new(data).unwrap()
    }

    fn stable_params(seed: u64, d1: usize, d2: usize) -> AdditiveMarParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 0.4 / (d1.max(d2) as f64).sqrt();
        AdditiveMarParams::new(
            random_matrix(&mut rng, d1, d1, s),
            random_matrix(&mut rng, d1, d1, s),
            random_matrix(&mut rng, d2, d2, s),
            random_matrix(&mut rng, d2, d2, s),
        )
        .unwrap()
    }

    #[test]
    fn rank_and_density_helpers() {
        assert_eq!(estimate_rank(&Matrix::zeros(5, 5)), 0);
        assert_eq!(estimate_rank(&Matrix::identity(6, 6)), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let low = random_matrix(&mut rng, 15, 3, 1.0) * random_matrix(&mut rng, 3, 15, 1.0);
        assert_eq!(estimate_rank(&low), 3);

        assert_eq!(estimate_density(&Matrix::zeros(4, 4), 0.0).unwrap(), 0.0);
        assert_eq!(estimate_density(&Matrix::from_element(4, 4, 1.0), 0.5).unwrap(), 1.0);
        let mut m = Matrix::zeros(5, 5);
        for k in 0..5 {
            m[(k, (2 * k) % 5)] = 0.3;
        }
        assert_eq!(estimate_density(&m, 1e-6).unwrap(), 0.2);
        assert!(estimate_density(&m, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            inner_max_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let dup = SolverConfig {
            block_order: [Block::L1, Block::L1, Block::L2, Block::S2],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn huge_penalty_kills_block() {
        let truth = stable_params(1, 4, 3);
        let series = simulate(&truth, 60, 0.5, 2);
        let pen = Penalties::uniform(1e6).unwrap();
        for b in Block::ALL {
            let m = solve_block(b, &series, &AdditiveMarParams::zeros(4, 3), &pen, &SolverConfig::default()).unwrap();
            assert!(m.iter().all(|&v| v == 0.0));
        }
        let report = fit(&series, &pen, &SolverConfig::default()).unwrap();
        assert_eq!(report.params, AdditiveMarParams::zeros(4, 3));
        let at_zero = smooth_loss(&series, &AdditiveMarParams::zeros(4, 3)).unwrap();
        assert_eq!(report.final_objective(), at_zero);
        assert!(report.converged);
    }

    #[test]
    fn block_recovers_truth_on_noise_free_data() {
        let truth = stable_params(11, 5, 4);
        let series = simulate(&truth, 200, 0.0, 12);
        let cfg = SolverConfig {
            inner_tol: 1e-30,
            inner_max_iters: 20_000,
            ..Default::default()
        };
        for b in Block::ALL {
            let mut start = truth.clone();
            *start.block_mut(b) = Matrix::zeros(start.block(b).nrows(), start.block(b).ncols());
            let mut pen = Penalties::uniform(0.1).unwrap();
            match b {
                Block::L1 => pen.lambda_l1 = 0.0,
                Block::S1 => pen.lambda_s1 = 0.0,
                Block::L2 => pen.lambda_l2 = 0.0,
                Block::S2 => pen.lambda_s2 = 0.0,
            }
            let got = solve_block(b, &series, &start, &pen, &cfg).unwrap();
            let err = (got - truth.block(b)).norm();
            assert!(err < 1e-4, "{b:?}: error {err}");
        }
    }

    /// Cyclic coordinate descent for `(1/2N) sum ||y_t - S x_t||^2 + lambda ||S||_1`.
    fn lasso_var_cd(xs: &[Vec<f64>], ys: &[Vec<f64>], lambda: f64) -> Matrix {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut s = Matrix::zeros(d, d);
        for _ in 0..20_000 {
            let mut max_delta = 0.0_f64;
            for i in 0..d {
                for j in 0..d {
                    let mut rho = 0.0;
                    let mut z = 0.0;
                    for (x, y) in xs.iter().zip(ys) {
                        let mut pred = 0.0;
                        for k in 0..d {
                            if k != j {
                                pred += s[(i, k)] * x[k];
                            }
                        }
                        rho += x[j] * (y[i] - pred);
                        z += x[j] * x[j];
                    }
                    rho /= n;
                    z /= n;
                    let new = if rho > lambda {
                        (rho - lambda) / z
                    } else if rho < -lambda {
                        (rho + lambda) / z
                    } else {
                        0.0
                    };
                    max_delta = max_delta.max((new - s[(i, j)]).abs());
                    s[(i, j)] = new;
                }
            }
            if max_delta < 1e-13 {
                break;
            }
        }
        s
    }

    #[test]
    fn sparse_block_with_single_column_is_lasso() {
        let mut truth = stable_params(21, 4, 1);
        truth.l1.fill(0.0);
        truth.l2.fill(0.0);
        truth.s2.fill(0.0);
        let series = simulate(&truth, 80, 1.0, 22);
        let lambda = 0.05;
        let pen = Penalties::new(1e6, lambda, 1e6, 1e6).unwrap();
        let cfg = SolverConfig {
            inner_tol: 1e-30,
            inner_max_iters: 20_000,
            ..Default::default()
        };
        let got = solve_block(Block::S1, &series, &AdditiveMarParams::zeros(4, 1), &pen, &cfg).unwrap();

        let xs: Vec<Vec<f64>> = series.matrices()[..79].iter().map(|m| m.iter().cloned().collect()).collect();
        let ys: Vec<Vec<f64>> = series.matrices()[1..].iter().map(|m| m.iter().cloned().collect()).collect();
        let want = lasso_var_cd(&xs, &ys, lambda);
        assert!((got - &want).amax() < 1e-6);
        assert!(want.iter().any(|&v| v == 0.0) || want.amax() > 0.0);
    }

    #[test]
    fn objective_trace_is_monotone() {
        for seed in 0..3 {
            let truth = stable_params(30 + seed, 5, 4);
            let series = simulate(&truth, 50, 0.5, 40 + seed);
            let pen = Penalties::new(0.05, 0.02, 0.04, 0.03).unwrap();
            let report = fit(&series, &pen, &SolverConfig::default()).unwrap();
            assert!(!report.objective_trace.is_empty());
            for w in report.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            assert!(report.est_density_s1 <= 1.0 && report.est_rank_l1 <= 5);
        }
    }

    #[test]
    fn refit_from_own_solution_is_a_fixed_point() {
        let truth = stable_params(50, 5, 4);
        let series = simulate(&truth, 60, 0.5, 51);
        let pen = Penalties::new(0.05, 0.02, 0.04, 0.03).unwrap();
        let cfg = SolverConfig::default().tightened(100.0);
        let first = fit(&series, &pen, &cfg).unwrap();
        let again = fit(
            &series,
            &pen,
            &SolverConfig {
                init: Init::Provided(first.params.clone()),
                ..cfg.clone()
            },
        )
        .unwrap();
        let change = relative_change(first.final_objective(), again.objective_trace[0]);
        assert!(change < cfg.outer_tol, "change {change}");
    }

    #[test]
    fn scalar_case_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mut y = vec![1.0];
        for _ in 1..200 {
            let prev = *y.last().unwrap();
            y.push(0.6 * prev + rng.random_range(-1.0..1.0));
        }
        let series = MatrixSeries::new(y.iter().map(|&v| Matrix::from_element(1, 1, v)).collect()).unwrap();
        let n = 199.0;
        let sxy: f64 = y.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / n;
        let sxx: f64 = y[..199].iter().map(|v| v * v).sum::<f64>() / n;
        let lambda = 0.05;
        // the cheapest block absorbs the whole coefficient
        let pen = Penalties::new(lambda, 0.2, 0.3, 0.4).unwrap();
        let want = shrink(sxy, lambda) / sxx;
        let cfg = SolverConfig::default().tightened(1e4);
        let report = fit(&series, &pen, &cfg).unwrap();
        let p = &report.params;
        let got = p.l1[(0, 0)] + p.s1[(0, 0)] + p.l2[(0, 0)] + p.s2[(0, 0)];
        assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
    }

    #[test]
    fn multi_start_and_block_order_agree() {
        let truth = stable_params(70, 5, 4);
        let series = simulate(&truth, 80, 0.5, 71);
        let pen = Penalties::new(0.05, 0.02, 0.04, 0.03).unwrap();
        let cfg = SolverConfig::default().tightened(1e3);
        let base = fit(&series, &pen, &cfg).unwrap().final_objective();

        let start = stable_params(72, 5, 4).scaled(3.0);
        let warm = fit(
            &series,
            &pen,
            &SolverConfig {
                init: Init::Provided(start),
                ..cfg.clone()
            },
        )
        .unwrap()
        .final_objective();
        assert!(relative_change(base, warm) < 1e-4);

        let permuted = fit(
            &series,
            &pen,
            &SolverConfig {
                block_order: [Block::L2, Block::S2, Block::L1, Block::S1],
                ..cfg.clone()
            },
        )
        .unwrap()
        .final_objective();
        assert!(relative_change(base, permuted) < 1e-6);
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        let series = MatrixSeries::new(vec![Matrix::zeros(3, 2); 5]).unwrap();
        let err = fit(&series, &Penalties::uniform(0.1).unwrap(), &SolverConfig::default());
        assert!(matches!(err, Err(Error::DegenerateData(_))));
    }

    #[test]
    fn fit_rejects_mismatched_init() {
        let truth = stable_params(80, 3, 2);
        let series = simulate(&truth, 20, 0.5, 81);
        let cfg = SolverConfig {
            init: Init::Provided(AdditiveMarParams::zeros(2, 2)),
            ..Default::default()
        };
        assert!(matches!(
            fit(&series, &Penalties::zero(), &cfg),
            Err(Error::Dimension(_))
        ));
    }
}
