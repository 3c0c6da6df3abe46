//! Falling factorial basis toolkit.
//!
//! * [`grid`]: validated sample locations.
//! * [`transforms`]: in-place `O(nk)` multiplication by `H`, `H^{-1}`, `H^T`, `(H^T)^{-1}`.
//! * [`diffops`]: banded discrete difference operators over arbitrary grids.
//! * [`trendfilter`]: trend filtering with optimality certificates.
//! * [`kstest`]: higher-order two-sample Kolmogorov-Smirnov statistics.
//! * [`experiments`]: Monte Carlo harness.
//! * [`basis_ref`]: dense reference matrices used as test oracles.

pub mod banded;
pub mod basis_ref;
pub mod diffops;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kstest;
pub mod parallel;
pub mod rng;
pub mod transforms;
pub mod trendfilter;

pub use error::{Error, Result};
pub use grid::{GapReport, InputGrid, TiePolicy};
