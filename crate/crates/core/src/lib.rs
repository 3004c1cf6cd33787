//! Memoryless class-incremental learning with transferable bias correction.
//!
//! Reference runs, which may keep a validation memory, fit per-state
//! scale/shift pairs for every class group ([`calib`]). The pairs are averaged
//! over references and applied to target runs that keep no memory at all
//! ([`transfer`]). [`backbones`] produces the logits on synthetic data,
//! [`eval`] measures the results and [`store`] is the file interchange layer.

pub mod backbones;
pub mod calib;
pub mod error;
pub mod eval;
pub mod plot;
pub mod schedule;
pub mod store;
pub mod transfer;

pub use calib::{AffinePair, CalibConfig, CalibrationTable};
pub use error::{Error, Result};
pub use eval::RunMetrics;
pub use schedule::{Provenance, ScoreMatrix, StateLogits, StateSchedule};
