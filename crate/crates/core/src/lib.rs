//! Regularized additive matrix autoregression.
//!
//! A matrix time series `Y_t` (`d1 x d2`) follows
//! `Y_t = (L1 + S1) Y_{t-1} + Y_{t-1} (L2 + S2)^T + E_t`, with low-rank `L` and
//! sparse `S` blocks estimated by block coordinate descent on a nuclear-norm
//! plus l1 penalized least-squares objective.

pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod selection;
pub mod solver;
pub mod svar;
pub mod transforms;

pub type Matrix = nalgebra::DMatrix<f64>;

pub use datagen::{simulate, NoiseSpec, SimulationConfig, Structure};
pub use error::{Error, Result};
pub use metrics::{forecast, relative_error, rolling_backtest, support_metrics, BacktestOptions, ForecastModel, ReMode};
pub use model::{AdditiveMarParams, Block, MatrixSeries, Penalties};
pub use selection::{grid_search, Criterion, GridMode, LambdaGrid};
pub use solver::{fit, FitReport, SolverConfig};
pub use svar::{fit_sparse_var, SparseVarModel};
