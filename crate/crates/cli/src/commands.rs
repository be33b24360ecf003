use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use addmar::datagen::simulate as simulate_series;
use addmar::io::{parse_grid, parse_series, parse_simulation_config, write_matrices, write_series, ModelFile};
use addmar::metrics::{forecast_path, rolling_backtest, BacktestOptions, ForecastModel, SvarTuning, Tuning};
use addmar::model::{MatrixSeries, Penalties};
use addmar::prox::numerical_rank;
use addmar::selection::{grid_search, Criterion, GridMode, LambdaGrid};
use addmar::solver::{fit as fit_model, SolverConfig};
use addmar::{AdditiveMarParams, Error};

use crate::report;
use crate::{CriterionArg, GridArgs, GridModeArg, PenaltyArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_user_error() => 2,
            CliError::Core(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy)]
pub struct PenaltyInput {
    values: [Option<f64>; 4],
}

impl From<PenaltyArgs> for PenaltyInput {
    fn from(a: PenaltyArgs) -> Self {
        Self {
            values: [a.lambda_l1, a.lambda_s1, a.lambda_l2, a.lambda_s2],
        }
    }
}

impl PenaltyInput {
    /// `Some` when all four penalties are given, `None` when none are.
    fn resolve(&self) -> CliResult<Option<Penalties>> {
        match self.values {
            [None, None, None, None] => Ok(None),
            [Some(l1), Some(s1), Some(l2), Some(s2)] => Ok(Some(Penalties::new(l1, s1, l2, s2)?)),
            _ => Err(CliError::Usage(
                "give all four of --lambda-l1, --lambda-s1, --lambda-l2, --lambda-s2, or none".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridInput {
    spec: Option<String>,
    points: usize,
    min_ratio: f64,
    mode: GridMode,
}

impl From<GridArgs> for GridInput {
    fn from(a: GridArgs) -> Self {
        Self {
            spec: a.grid,
            points: a.grid_points,
            min_ratio: a.grid_min_ratio,
            mode: match a.grid_mode {
                GridModeArg::CoupledPairs => GridMode::CoupledPairs,
                GridModeArg::FullCross => GridMode::FullCross,
            },
        }
    }
}

impl GridInput {
    /// `None` for a data-driven grid built on whatever series it is applied to.
    fn resolve(&self) -> CliResult<Option<LambdaGrid>> {
        match self.spec.as_deref() {
            None | Some("auto") => Ok(None),
            Some(path) => Ok(Some(parse_grid(&fs::read_to_string(path)?)?)),
        }
    }

    fn build(&self, series: &MatrixSeries) -> CliResult<LambdaGrid> {
        match self.resolve()? {
            Some(g) => Ok(g),
            None => Ok(LambdaGrid::from_data(series, self.points, self.min_ratio, self.mode)?),
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// `series.csv` -> `series.truth.json`.
pub fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.json"))
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut cfg = parse_simulation_config(&fs::read_to_string(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (series, truth) = simulate_series(&cfg)?;
    write_series(out, &series)?;
    ModelFile::from_params(&truth).write(&truth_path(out))?;
    Ok(())
}

pub struct FitArgs {
    pub data: PathBuf,
    pub penalties: PenaltyInput,
    pub grid: GridInput,
    pub criterion: CriterionArg,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn build_criterion(arg: CriterionArg, truth: Option<&AdditiveMarParams>) -> CliResult<Criterion> {
    let need = || CliError::Usage("oracle criteria need --truth".into());
    Ok(match arg {
        CriterionArg::Aic => Criterion::Aic,
        CriterionArg::OracleRank => {
            let t = truth.ok_or_else(need)?;
            Criterion::OracleRank {
                r1: numerical_rank(&t.l1),
                r2: numerical_rank(&t.l2),
            }
        }
        CriterionArg::OracleSupport => {
            let t = truth.ok_or_else(need)?;
            Criterion::OracleSupport {
                s1: t.s1.clone(),
                s2: t.s2.clone(),
            }
        }
    })
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let series = parse_series(&args.data)?;
    let truth = args
        .truth
        .as_deref()
        .map(|p| ModelFile::read(p).and_then(|m| m.params()))
        .transpose()?;
    let cfg = SolverConfig::default();
    let (fit_report, selection) = match args.penalties.resolve()? {
        Some(p) => {
            if args.grid.spec.is_some() {
                return Err(CliError::Usage("use either fixed penalties or --grid, not both".into()));
            }
            (fit_model(&series, &p, &cfg)?, report::Selection::Fixed)
        }
        None => {
            let grid = args.grid.build(&series)?;
            let criterion = build_criterion(args.criterion, truth.as_ref())?;
            let (_, r) = grid_search(&series, &grid, &cfg, &criterion)?;
            (r, report::Selection::Grid { grid, criterion: args.criterion })
        }
    };
    if let Some(out) = &args.out {
        ModelFile::from_report(&fit_report).write(out)?;
    }
    let text = report::fit_report(&series, &fit_report, &selection, truth.as_ref())?;
    write_output(args.report.as_deref(), &text)
}

pub fn forecast(model: &Path, data: &Path, horizon: usize, out: Option<&Path>) -> CliResult<()> {
    if horizon == 0 {
        return Err(CliError::Usage("--horizon must be >= 1".into()));
    }
    let params = ModelFile::read(model)?.params()?;
    let series = parse_series(data)?;
    if (series.d1(), series.d2()) != (params.d1(), params.d2()) {
        return Err(Error::Dimension(format!(
            "model is for {}x{} matrices but the data are {}x{}",
            params.d1(),
            params.d2(),
            series.d1(),
            series.d2()
        ))
        .into());
    }
    let path = forecast_path(&params, series.last(), horizon)?;
    write_output(out, &write_matrices(&path, series.len()))
}

pub struct BacktestArgs {
    pub data: PathBuf,
    pub horizons: Vec<usize>,
    pub models: Vec<String>,
    pub penalties: PenaltyInput,
    pub grid: GridInput,
    pub lambda_var: Option<f64>,
    pub window: usize,
    pub retune_each_origin: bool,
    pub out: Option<PathBuf>,
}

pub fn backtest(args: &BacktestArgs) -> CliResult<()> {
    let series = parse_series(&args.data)?;
    let models: Vec<ForecastModel> = args
        .models
        .iter()
        .map(|m| ForecastModel::parse(m.trim()))
        .collect::<Result<_, _>>()?;
    if models.is_empty() || args.horizons.is_empty() {
        return Err(CliError::Usage("need at least one model and one horizon".into()));
    }
    let tuning = match args.penalties.resolve()? {
        Some(p) => Tuning::Fixed(p),
        None => Tuning::Search {
            grid: args.grid.resolve()?,
            criterion: Criterion::Aic,
        },
    };
    let opts = BacktestOptions {
        tuning,
        svar_tuning: match args.lambda_var {
            Some(l) => SvarTuning::Fixed(l),
            None => SvarTuning::Aic(None),
        },
        window: args.window,
        retune_each_origin: args.retune_each_origin,
        grid_points: args.grid.points,
        grid_min_ratio: args.grid.min_ratio,
        grid_mode: args.grid.mode,
        ..BacktestOptions::default()
    };
    let cfg = SolverConfig::default();
    let mut rows = Vec::new();
    for &h in &args.horizons {
        let mut row = Vec::new();
        for &m in &models {
            row.push(rolling_backtest(&series, h, &opts, &cfg, m)?);
        }
        rows.push(row);
    }
    write_output(args.out.as_deref(), &report::backtest_table(&models, &rows, args.window))
}
