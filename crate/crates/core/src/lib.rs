//! Covariance forecasting with orthogonal GARCH and a two-state Markov
//! regime-switching GARCH on the principal components, plus the backtesting
//! machinery around it: minimum-variance portfolios, loss functions,
//! Diebold-Mariano tests and synthetic data generators.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data_io;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod ewma;
pub mod garch;
pub mod linalg;
pub mod mrs_garch;
pub mod pca;
pub mod pipeline;
pub mod portfolio;
pub mod simulation;
pub mod special;

pub use data_io::{NormalizationStats, ReturnPanel, Window, WindowSpec};
pub use error::{Error, Result};
pub use estimation::{LrTestResult, Minimum, OptimizerConfig};
pub use ewma::EwmaState;
pub use garch::{GarchFit, GarchParams, HorizonAnchor};
pub use mrs_garch::{MrsFitOptions, MrsForecast, MrsGarchFit, MrsGarchParams, RegimeFilterState};
pub use pca::{CovarianceForecast, ExcludedComponents, PcaBasis};
pub use evaluation::{DmTestResult, LossKind, LossReport};
pub use portfolio::{PerformanceReport, PortfolioWeights};
pub use simulation::{BlockKind, BlockTruth, RegimeBlockDesign, RegimeBlockSpec, SquareWaveSpec};
pub use pipeline::{BacktestConfig, BacktestResult, ModelKind, NormalizationMode};
