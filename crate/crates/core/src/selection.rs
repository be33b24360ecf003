//! Penalty selection: AIC and grid search with oracle criteria for simulations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::support_metrics;
use crate::model::{grad_col, grad_row, smooth_loss, AdditiveMarParams, Block, MatrixSeries, Penalties};
use crate::solver::{count_nonzero, density_tolerance, estimate_rank, fit, FitReport, SolverConfig};
use crate::Matrix;

/// Value returned in place of `-inf` when the residual sum of squares is zero.
pub const AIC_FLOOR: f64 = -1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aic {
    pub value: f64,
    /// True when `rss == 0` and `value` is [`AIC_FLOOR`].
    pub degenerate: bool,
}

/// `N log(RSS/N) + 2 rank(L1) + 2 rank(L2) + 2 k1 + 2 k2`, with RSS the `1/(2N)`-scaled loss.
pub fn aic_from_parts(n: usize, rss: f64, rank_l1: usize, rank_l2: usize, k1: usize, k2: usize) -> Aic {
    let complexity = 2.0 * (rank_l1 + rank_l2 + k1 + k2) as f64;
    if rss <= 0.0 {
        return Aic {
            value: AIC_FLOOR,
            degenerate: true,
        };
    }
    let n = n as f64;
    Aic {
        value: n * (rss / n).ln() + complexity,
        degenerate: false,
    }
}

/// AIC of a fitted model on the series it was fitted to.
pub fn aic(series: &MatrixSeries, report: &FitReport) -> Result<Aic> {
    let p = &report.params;
    let rss = smooth_loss(series, p)?;
    Ok(aic_from_parts(
        series.n_pairs(),
        rss,
        estimate_rank(&p.l1),
        estimate_rank(&p.l2),
        count_nonzero(&p.s1, density_tolerance(&p.s1)),
        count_nonzero(&p.s2, density_tolerance(&p.s2)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    FullCross,
    /// Two stages: `(lambda_L1, lambda_L2)` crossed with the sparse penalties at
    /// their middle grid values, then `(lambda_S1, lambda_S2)` crossed at the
    /// chosen low-rank pair.
    #[default]
    CoupledPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub l1: Vec<f64>,
    pub s1: Vec<f64>,
    pub l2: Vec<f64>,
    pub s2: Vec<f64>,
    pub mode: GridMode,
}

fn check_list(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::arg(format!("grid list {name} is empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::arg(format!("grid list {name} has negative or non-finite values")));
    }
    if v.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::arg(format!("grid list {name} is not sorted ascending")));
    }
    Ok(())
}

/// `n` values from `max * min_ratio` to `max`, geometrically spaced, ascending.
pub fn geometric_grid(max: f64, min_ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![max];
    }
    (0..n)
        .map(|k| max * min_ratio.powf(1.0 - k as f64 / (n - 1) as f64))
        .collect()
}

/// Smallest penalties that zero every block when fitted alone from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMax {
    pub l1: f64,
    pub s1: f64,
    pub l2: f64,
    pub s2: f64,
}

pub fn lambda_max(series: &MatrixSeries) -> Result<LambdaMax> {
    let zero = AdditiveMarParams::zeros(series.d1(), series.d2());
    let g_row = grad_row(series, &zero)?;
    let g_col = grad_col(series, &zero)?;
    let spectral = |m: &Matrix| m.singular_values().iter().cloned().fold(0.0, f64::max);
    Ok(LambdaMax {
        l1: spectral(&g_row),
        s1: g_row.amax(),
        l2: spectral(&g_col),
        s2: g_col.amax(),
    })
}

impl LambdaGrid {
    pub fn new(l1: Vec<f64>, s1: Vec<f64>, l2: Vec<f64>, s2: Vec<f64>, mode: GridMode) -> Result<Self> {
        let g = Self { l1, s1, l2, s2, mode };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        check_list("lambda_L1", &self.l1)?;
        check_list("lambda_S1", &self.s1)?;
        check_list("lambda_L2", &self.l2)?;
        check_list("lambda_S2", &self.s2)
    }

    pub fn single(p: Penalties) -> Self {
        Self {
            l1: vec![p.lambda_l1],
            s1: vec![p.lambda_s1],
            l2: vec![p.lambda_l2],
            s2: vec![p.lambda_s2],
            mode: GridMode::FullCross,
        }
    }

    /// Geometric grids below each block's `lambda_max`, `n` points spanning `min_ratio`.
    pub fn from_data(series: &MatrixSeries, n: usize, min_ratio: f64, mode: GridMode) -> Result<Self> {
        if n == 0 || !(min_ratio > 0.0 && min_ratio <= 1.0) {
            return Err(Error::arg("grid needs n >= 1 and min_ratio in (0, 1]"));
        }
        let lm = lambda_max(series)?;
        Self::new(
            geometric_grid(lm.l1, min_ratio, n),
            geometric_grid(lm.s1, min_ratio, n),
            geometric_grid(lm.l2, min_ratio, n),
            geometric_grid(lm.s2, min_ratio, n),
            mode,
        )
    }

    /// Full four-way cross product in enumeration order (L1 outermost, S2 innermost).
    pub fn full_cross(&self) -> Vec<Penalties> {
        let mut out = Vec::with_capacity(self.l1.len() * self.s1.len() * self.l2.len() * self.s2.len());
        for &l1 in &self.l1 {
            for &s1 in &self.s1 {
                for &l2 in &self.l2 {
                    for &s2 in &self.s2 {
                        out.push(Penalties {
                            lambda_l1: l1,
                            lambda_s1: s1,
                            lambda_l2: l2,
                            lambda_s2: s2,
                        });
                    }
                }
            }
        }
        out
    }

    fn low_rank_stage(&self) -> Vec<Penalties> {
        let s1 = self.s1[self.s1.len() / 2];
        let s2 = self.s2[self.s2.len() / 2];
        let mut out = Vec::new();
        for &l1 in &self.l1 {
            for &l2 in &self.l2 {
                out.push(Penalties {
                    lambda_l1: l1,
                    lambda_s1: s1,
                    lambda_l2: l2,
                    lambda_s2: s2,
                });
            }
        }
        out
    }

    fn sparse_stage(&self, l1: f64, l2: f64) -> Vec<Penalties> {
        let mut out = Vec::new();
        for &s1 in &self.s1 {
            for &s2 in &self.s2 {
                out.push(Penalties {
                    lambda_l1: l1,
                    lambda_s1: s1,
                    lambda_l2: l2,
                    lambda_s2: s2,
                });
            }
        }
        out
    }
}

/// What the grid search minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Criterion {
    Aic,
    /// Minimize `|rank(L1_hat) - r1| + |rank(L2_hat) - r2|`.
    OracleRank { r1: usize, r2: usize },
    /// Maximize `SN + SP` summed over both sparse blocks.
    OracleSupport { s1: Matrix, s2: Matrix },
}

impl Criterion {
    /// Score of a fitted candidate; lower is better.
    pub fn score(&self, series: &MatrixSeries, report: &FitReport) -> Result<f64> {
        match self {
            Criterion::Aic => Ok(aic(series, report)?.value),
            Criterion::OracleRank { r1, r2 } => {
                let d1 = report.est_rank_l1.abs_diff(*r1);
                let d2 = report.est_rank_l2.abs_diff(*r2);
                Ok((d1 + d2) as f64)
            }
            Criterion::OracleSupport { s1, s2 } => {
                let p = &report.params;
                let m1 = support_metrics(&p.s1, s1, density_tolerance(&p.s1))?;
                let m2 = support_metrics(&p.s2, s2, density_tolerance(&p.s2))?;
                let total = m1.sn.unwrap_or(0.0) + m1.sp.unwrap_or(0.0) + m2.sn.unwrap_or(0.0) + m2.sp.unwrap_or(0.0);
                Ok(-total)
            }
        }
    }
}

/// One evaluated grid candidate.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub penalties: Penalties,
    pub score: f64,
    pub report: FitReport,
}

/// Fits every candidate (in parallel) and scores them in enumeration order.
pub fn evaluate_candidates(
    series: &MatrixSeries,
    candidates: &[Penalties],
    cfg: &SolverConfig,
    criterion: &Criterion,
) -> Result<Vec<Candidate>> {
    candidates
        .par_iter()
        .map(|p| {
            let report = fit(series, p, cfg)?;
            let score = criterion.score(series, &report)?;
            Ok(Candidate {
                penalties: *p,
                score,
                report,
            })
        })
        .collect()
}

fn enumeration_key(p: &Penalties) -> [f64; 4] {
    [p.lambda_l1, p.lambda_s1, p.lambda_l2, p.lambda_s2]
}

/// Index of the best candidate: lowest score, then largest total penalty, then
/// earliest in grid enumeration order (lexicographic in `(L1, S1, L2, S2)`).
/// The result does not depend on the order of `cands`.
pub fn select_best(cands: &[Candidate]) -> Option<usize> {
    (0..cands.len()).min_by(|&a, &b| {
        let (ca, cb) = (&cands[a], &cands[b]);
        ca.score
            .total_cmp(&cb.score)
            .then_with(|| cb.penalties.total().total_cmp(&ca.penalties.total()))
            .then_with(|| {
                let (ka, kb) = (enumeration_key(&ca.penalties), enumeration_key(&cb.penalties));
                ka.iter()
                    .zip(kb.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    })
}

fn best_of(series: &MatrixSeries, cands: &[Penalties], cfg: &SolverConfig, criterion: &Criterion) -> Result<Candidate> {
    let evaluated = evaluate_candidates(series, cands, cfg, criterion)?;
    let i = select_best(&evaluated).ok_or_else(|| Error::arg("empty candidate list"))?;
    Ok(evaluated.into_iter().nth(i).expect("index in range"))
}

fn with_lambda(p: Penalties, block: Block, lambda: f64) -> Penalties {
    let mut out = p;
    match block {
        Block::L1 => out.lambda_l1 = lambda,
        Block::S1 => out.lambda_s1 = lambda,
        Block::L2 => out.lambda_l2 = lambda,
        Block::S2 => out.lambda_s2 = lambda,
    }
    out
}

fn fitted_rank(c: &Candidate, block: Block) -> usize {
    if block == Block::L1 {
        c.report.est_rank_l1
    } else {
        c.report.est_rank_l2
    }
}

const RANK_BRACKET_STEPS: usize = 40;
const RANK_BISECTION_STEPS: usize = 30;
const RANK_ROUNDS: usize = 6;

/// Searches `lambda` of one low-rank block, others fixed, for a fit of rank
/// `target`. The estimated rank is nonincreasing in the block's penalty, so a
/// bracket is grown geometrically and then bisected in log scale. Returns
/// every evaluated candidate.
fn bisect_rank(
    series: &MatrixSeries,
    start: &Candidate,
    block: Block,
    target: usize,
    cfg: &SolverConfig,
    criterion: &Criterion,
) -> Result<Vec<Candidate>> {
    let eval = |lambda: f64| -> Result<Candidate> {
        let penalties = with_lambda(start.penalties, block, lambda);
        let report = fit(series, &penalties, cfg)?;
        let score = criterion.score(series, &report)?;
        Ok(Candidate { penalties, score, report })
    };
    let mut seen = Vec::new();
    let lambda0 = start.penalties.for_block(block).max(f64::MIN_POSITIVE);
    let rank0 = fitted_rank(start, block);
    let (mut lo, mut hi) = (lambda0, lambda0);
    if rank0 > target {
        for _ in 0..RANK_BRACKET_STEPS {
            hi *= 2.0;
            let c = eval(hi)?;
            let r = fitted_rank(&c, block);
            seen.push(c);
            if r <= target {
                break;
            }
            lo = hi;
        }
    } else {
        for _ in 0..RANK_BRACKET_STEPS {
            lo /= 2.0;
            let c = eval(lo)?;
            let r = fitted_rank(&c, block);
            seen.push(c);
            if r >= target {
                break;
            }
            hi = lo;
        }
    }
    if seen.last().is_some_and(|c| fitted_rank(c, block) == target) {
        return Ok(seen);
    }
    for _ in 0..RANK_BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        let c = eval(mid)?;
        let r = fitted_rank(&c, block);
        seen.push(c);
        if r == target {
            break;
        }
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(seen)
}

/// Refines the low-rank penalties of an oracle-rank search beyond the grid,
/// alternating between the two blocks.
fn refine_ranks(
    series: &MatrixSeries,
    start: Candidate,
    (r1, r2): (usize, usize),
    cfg: &SolverConfig,
    criterion: &Criterion,
) -> Result<Candidate> {
    let mut best = start;
    for _ in 0..RANK_ROUNDS {
        for (block, target) in [(Block::L1, r1), (Block::L2, r2)] {
            if best.score == 0.0 {
                return Ok(best);
            }
            if fitted_rank(&best, block) == target {
                continue;
            }
            let mut pool = bisect_rank(series, &best, block, target, cfg, criterion)?;
            // moving to a tied point that fixes this block lets the other block be fixed next
            let hit = pool.last().filter(|c| fitted_rank(c, block) == target && c.score <= best.score);
            if hit.is_some() {
                best = pool.pop().expect("pool is nonempty");
            } else {
                pool.push(best);
                let i = select_best(&pool).expect("pool is nonempty");
                best = pool.swap_remove(i);
            }
        }
    }
    Ok(best)
}

/// Returns the penalties (and their fit) that optimize `criterion` over `grid`.
///
/// With [`GridMode::CoupledPairs`] and [`Criterion::OracleRank`], the chosen
/// low-rank pair is further refined by bisection when no grid point attains
/// the target ranks.
pub fn grid_search(
    series: &MatrixSeries,
    grid: &LambdaGrid,
    cfg: &SolverConfig,
    criterion: &Criterion,
) -> Result<(Penalties, FitReport)> {
    grid.validate()?;
    cfg.validate()?;
    if let Criterion::OracleSupport { s1, s2 } = criterion {
        if s1.shape() != (series.d1(), series.d1()) || s2.shape() != (series.d2(), series.d2()) {
            return Err(Error::dim("oracle support matrices do not match the series dimensions"));
        }
    }
    let best = match grid.mode {
        GridMode::FullCross => best_of(series, &grid.full_cross(), cfg, criterion)?,
        GridMode::CoupledPairs => {
            let mut stage1 = best_of(series, &grid.low_rank_stage(), cfg, criterion)?;
            if let Criterion::OracleRank { r1, r2 } = criterion {
                stage1 = refine_ranks(series, stage1, (*r1, *r2), cfg, criterion)?;
            }
            let p = stage1.penalties;
            best_of(series, &grid.sparse_stage(p.lambda_l1, p.lambda_l2), cfg, criterion)?
        }
    };
    Ok((best.penalties, best.report))
}
