//! Detection of sharply increasing trends in noisy multi-stream epidemic
//! surveillance data: rolling local regression, retrospective smoothing for
//! ground truth, p-value fusion across streams and epidemic networks.

// Index loops mirror the banded-matrix formulas, the published quantile
// coefficients are kept verbatim, and `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod calendar;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod ground_truth;
pub mod network;
pub mod regression;
pub mod smoother;
pub mod stats;
pub mod synthetic;
pub mod timeseries;

pub use calendar::Day;
pub use error::{Error, Result};
