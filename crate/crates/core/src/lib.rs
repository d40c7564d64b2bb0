//! Windowed Gaussian-process nowcasting of slow-cadence survey indices from
//! high-frequency covariates.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the CLI and the test-suite use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod frame;
pub mod gpr;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod monitor;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use frame::{ExperimentConfig, Granularity, Prediction, TimeSeriesFrame};
pub use gpr::{GprModel, LmlReport, TrainOptions};
pub use kernel::KernelHyperparams;
pub use linalg::Matrix;
pub use metrics::MetricsRecord;
pub use scalar::Scalar;

pub type Frame = TimeSeriesFrame<f64>;
pub type Model = GprModel<f64>;
pub type Hyperparams = KernelHyperparams<f64>;
pub type Mat = Matrix<f64>;
pub type Pred = Prediction<f64>;
