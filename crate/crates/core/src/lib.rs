//! Digitization of single-lead ECG images into calibrated time series.
//!
//! The flow is grid detection, hedged Otsu binarization (or an external trace
//! mask), least-cost trace extraction over per-column run centers, and
//! conversion to millivolts with standard paper scaling. [`synth`] produces
//! ground-truth renderings for testing, and [`metrics`] scores results.
//!
//! With the `parallel` feature (on by default) batch work and independent
//! trace blocks run on rayon; [`par::Execution::Sequential`] forces a single
//! thread either way.

pub mod binarize;
pub mod calibrate;
pub mod grid;
pub mod metrics;
pub mod morphology;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod trace;

pub use calibrate::DigitalSignal;
pub use grid::GridGeometry;
pub use metrics::{AggregateReport, EvalReport};
pub use par::Execution;
pub use pipeline::{digitize, evaluate, DigitizeInput, PipelineConfig, PipelineError};
pub use raster::{BinaryMask, GrayImage, RasterImage};
