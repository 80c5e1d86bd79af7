//! Delayed-block LMS (DBLMS) adaptive filtering.
//!
//! - [`filter`]: the block FIR / delayed coefficient-update engine, which
//!   reduces exactly to LMS, DLMS and BLMS.
//! - [`analysis`]: closed-form predictors for the step-size bound,
//!   misadjustment, excess MSE, slope factor, time constant and slope.
//! - [`simulation`]: Monte Carlo system identification used to check the
//!   predictors against the engine.
//! - [`cli`]: config parsing and CSV/JSON writers behind the `dblms` binary.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod filter;
pub mod simulation;

pub use analysis::{ConvergencePrediction, EigenStats};
pub use error::{Error, Result};
pub use filter::{AdaptStatus, AlgorithmKind, FilterSpec, FilterState};
pub use simulation::{EnsembleResult, ExperimentConfig, StabilitySweepResult};
