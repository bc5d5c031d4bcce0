//! Signal processing and evaluation kernels for wrist PPG heart-rate
//! estimation against an ECG reference.
//!
//! The crate is `no_std` (it needs `alloc`) so the same kernels can run on a
//! host service or on a wearable. Everything here is pure: no IO, no clocks,
//! no global state.
//!
//! Stages, in pipeline order:
//!
//! - [`filter`]: zero-phase Butterworth filtering
//! - [`quality`]: segment-wise clean/noisy labelling
//! - [`reconstruct`]: template-based repair of short corrupted runs
//! - [`peaks`]: adaptive-threshold systolic peak detection
//! - [`hr`]: windowed heart rate and the composed PPG pipeline
//! - [`ecg`]: two-moving-average QRS detection for the reference HR
//! - [`metrics`]: pairing, outlier gating, error metrics, Bland-Altman and
//!   regression

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ecg;
pub mod error;
pub mod filter;
pub mod hr;
pub mod metrics;
pub mod peaks;
pub mod quality;
pub mod reconstruct;
pub mod signal;
mod stats;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use hr::{estimate_hr, HrSeries, PipelineConfig};
pub use peaks::PeakList;
pub use quality::{Label, QualityMask};
pub use signal::{Channel, TimeSeries, Window};
