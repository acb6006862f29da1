//! Std companion to `drrnet-core`: experiment configuration, the text
//! checkpoint format, synthetic teacher tasks, the training regimes,
//! benchmarks, error-map files and the `drrnet` command line.

pub mod bench;
pub mod ckpt;
pub mod cli;
pub mod config;
pub mod errmap;
pub mod error;
pub mod optim;
pub mod task;
pub mod train;

pub use config::TrainConfig;
pub use error::{ExitCode, HarnessError, Result};
pub use train::{MetricsRecord, Regime};
