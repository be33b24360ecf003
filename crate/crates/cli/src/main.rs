mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "addmar", version, about = "Regularized additive matrix autoregression")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a series from a TOML config; also writes `<out stem>.truth.json`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the model with fixed penalties or a penalty grid.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        penalties: PenaltyArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = CriterionArg::Aic)]
        criterion: CriterionArg,
        /// Ground-truth model file; required by oracle criteria, adds error metrics to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Model file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report file (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Forecast `h` steps past the end of the data.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Output series fragment (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rolling-origin RMSE table over horizons and models.
    Backtest {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        horizon: Vec<usize>,
        /// Comma-separated models: additive_mar, sparse_var.
        #[arg(long, value_delimiter = ',', default_value = "additive_mar,sparse_var")]
        models: Vec<String>,
        #[command(flatten)]
        penalties: PenaltyArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Fixed sparse VAR penalty instead of AIC selection.
        #[arg(long)]
        lambda_var: Option<f64>,
        /// Number of trailing time points spanned by the forecast origins.
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Re-select penalties at every origin instead of only the first.
        #[arg(long)]
        retune_each_origin: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct PenaltyArgs {
    #[arg(long)]
    lambda_l1: Option<f64>,
    #[arg(long)]
    lambda_s1: Option<f64>,
    #[arg(long)]
    lambda_l2: Option<f64>,
    #[arg(long)]
    lambda_s2: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// `auto` for a data-driven grid, or a TOML grid file.
    #[arg(long)]
    grid: Option<String>,
    /// Points per penalty for `--grid auto`.
    #[arg(long, default_value_t = 8)]
    grid_points: usize,
    /// Smallest penalty relative to its largest useful value, for `--grid auto`.
    #[arg(long, default_value_t = 0.01)]
    grid_min_ratio: f64,
    #[arg(long, value_enum, default_value_t = GridModeArg::CoupledPairs)]
    grid_mode: GridModeArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CriterionArg {
    Aic,
    OracleRank,
    OracleSupport,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GridModeArg {
    CoupledPairs,
    FullCross,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ADDMAR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("ADDMAR_THREADS must be a non-negative integer, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Cmd::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Cmd::Fit {
            data,
            penalties,
            grid,
            criterion,
            truth,
            out,
            report,
        } => commands::fit(&commands::FitArgs {
            data,
            penalties: penalties.into(),
            grid: grid.into(),
            criterion,
            truth,
            out,
            report,
        }),
        Cmd::Forecast {
            model,
            data,
            horizon,
            out,
        } => commands::forecast(&model, &data, horizon, out.as_deref()),
        Cmd::Backtest {
            data,
            horizon,
            models,
            penalties,
            grid,
            lambda_var,
            window,
            retune_each_origin,
            out,
        } => commands::backtest(&commands::BacktestArgs {
            data,
            horizons: horizon,
            models,
            penalties: penalties.into(),
            grid: grid.into(),
            lambda_var,
            window,
            retune_each_origin,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("addmar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
