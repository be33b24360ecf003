use std::fmt::Write as _;

use addmar::metrics::{evaluate, BacktestReport, ForecastModel, ReMode};
use addmar::model::MatrixSeries;
use addmar::selection::{GridMode, LambdaGrid};
use addmar::solver::{density_tolerance, FitReport};
use addmar::{AdditiveMarParams, Matrix, Result};

use crate::CriterionArg;

pub enum Selection {
    Fixed,
    Grid { grid: LambdaGrid, criterion: CriterionArg },
}

fn criterion_name(c: CriterionArg) -> &'static str {
    match c {
        CriterionArg::Aic => "aic",
        CriterionArg::OracleRank => "oracle-rank",
        CriterionArg::OracleSupport => "oracle-support",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

/// One line per source node: `i <- j (weight), ...` for the nonzero entries of row `i`.
fn adjacency(out: &mut String, s: &Matrix) {
    let tol = density_tolerance(s);
    let mut any = false;
    for i in 0..s.nrows() {
        let edges: Vec<String> = (0..s.ncols())
            .filter(|&j| s[(i, j)].abs() > tol)
            .map(|j| format!("{j} ({:.6})", s[(i, j)]))
            .collect();
        if !edges.is_empty() {
            any = true;
            writeln!(out, "  {i} <- {}", edges.join(", ")).unwrap();
        }
    }
    if !any {
        out.push_str("  (no edges)\n");
    }
}

pub fn fit_report(
    series: &MatrixSeries,
    r: &FitReport,
    selection: &Selection,
    truth: Option<&AdditiveMarParams>,
) -> Result<String> {
    let mut out = String::new();
    let p = &r.penalties;
    writeln!(out, "data: d1 = {}, d2 = {}, T = {}", series.d1(), series.d2(), series.len()).unwrap();
    match selection {
        Selection::Fixed => out.push_str("selection: fixed penalties\n"),
        Selection::Grid { grid, criterion } => {
            let mode = match grid.mode {
                GridMode::CoupledPairs => "coupled_pairs",
                GridMode::FullCross => "full_cross",
            };
            writeln!(
                out,
                "selection: grid search ({mode}, {}x{}x{}x{} values), criterion {}",
                grid.l1.len(),
                grid.s1.len(),
                grid.l2.len(),
                grid.s2.len(),
                criterion_name(*criterion)
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        "penalties: lambda_L1 = {:e}, lambda_S1 = {:e}, lambda_L2 = {:e}, lambda_S2 = {:e}",
        p.lambda_l1, p.lambda_s1, p.lambda_l2, p.lambda_s2
    )
    .unwrap();
    writeln!(
        out,
        "solver: {} sweeps, {} inner steps, converged = {}",
        r.outer_iters, r.inner_iters, r.converged
    )
    .unwrap();
    out.push_str("objective trace:\n");
    for (k, v) in r.objective_trace.iter().enumerate() {
        writeln!(out, "  {:>4} {v:.12e}", k + 1).unwrap();
    }
    writeln!(out, "final objective: {:.12e}", r.final_objective()).unwrap();
    writeln!(out, "smooth loss: {:.12e}", r.smooth_loss).unwrap();
    writeln!(
        out,
        "The rank of L1_hat turns out to be {} and the rank of L2_hat turns out to be {}.",
        r.est_rank_l1, r.est_rank_l2
    )
    .unwrap();
    writeln!(
        out,
        "edge density: S1_hat {:.4} ({} of {} entries), S2_hat {:.4} ({} of {} entries)",
        r.est_density_s1,
        r.nnz_s1,
        r.params.s1.len(),
        r.est_density_s2,
        r.nnz_s2,
        r.params.s2.len()
    )
    .unwrap();
    if r.aic_degenerate {
        writeln!(out, "AIC: {:e} (zero residuals, sentinel value)", r.aic).unwrap();
    } else {
        writeln!(out, "AIC: {:.6}", r.aic).unwrap();
    }
    if let Some(t) = truth {
        let m = evaluate(&r.params, t, ReMode::Both)?;
        writeln!(out, "relative error vs truth: {:.6}", m.re).unwrap();
        writeln!(
            out,
            "support recovery: S1 SN {} SP {}, S2 SN {} SP {}",
            fmt_opt(m.sn_s1),
            fmt_opt(m.sp_s1),
            fmt_opt(m.sn_s2),
            fmt_opt(m.sp_s2)
        )
        .unwrap();
    }
    out.push_str("row network (S1_hat, target <- source):\n");
    adjacency(&mut out, &r.params.s1);
    out.push_str("column network (S2_hat, target <- source):\n");
    adjacency(&mut out, &r.params.s2);
    Ok(out)
}

pub fn backtest_table(models: &[ForecastModel], rows: &[Vec<BacktestReport>], window: usize) -> String {
    let mut out = format!("# rolling-origin RMSE over the last {window} time points\nhorizon");
    for m in models {
        write!(out, ",{}", m.name()).unwrap();
    }
    out.push('\n');
    for row in rows {
        write!(out, "{}", row[0].horizon).unwrap();
        for cell in row {
            write!(out, ",{:.6}", cell.rmse).unwrap();
        }
        out.push('\n');
    }
    out
}
