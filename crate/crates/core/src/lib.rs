//! Trend detection and backtesting toolkit.
//!
//! The crate is organised as a two-stage pipeline over daily quote series:
//!
//! 1. a *changepoint* classifier flags days where a new tendency window starts,
//!    using ±5-day price and volume ratios;
//! 2. a *trend-or-flat* classifier looks at the growing prefix of the current
//!    window and decides whether it is a trend, whose direction is then read
//!    from the regression slope of the closing prices.
//!
//! Both classifiers are gradient-boosted decision trees ([`gbdt`]). Training
//! targets come from expert-labelled windows ([`labels`]), and because real
//! labelled data is proprietary, [`synth`] generates regime-switching quote
//! series together with simulated, disagreeing experts.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod evaluation;
pub mod features;
pub mod gbdt;
pub mod labels;
pub mod market_data;
pub mod pipeline;
pub mod synth;

pub use evaluation::{class_report, roc_auc, ClassReport};
pub use features::{cp_features, tof_features, CpRow, TofFeatures, TofRow};
pub use gbdt::{FeatureMatrix, GbdtModel, GbdtParams};
pub use labels::{Direction, ExpertWindow};
pub use market_data::{ExpertLabelRow, QuoteBar, QuoteSeries, Tendency};
pub use pipeline::{BacktestReport, PipelineConfig, StockStats};
