//! End-to-end flows: image or mask in, calibrated signal out; and the
//! evaluation protocol that compares a prediction with its reference.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binarize::{adaptive_binarize, denoise, HedgingParams, HedgingTrace};
use crate::calibrate::{
    align_lag, pixels_to_physical, remove_baseline, CalibrationConstants, CalibrationError,
    DigitalSignal, DEFAULT_LAG_WINDOW, DEFAULT_RATE_HZ,
};
use crate::grid::{detect_grid, GridError, GridGeometry};
use crate::metrics::{mse_slices, pearson_slices, EvalReport, MetricsError};
use crate::par::{self, Execution};
use crate::raster::{to_grayscale, BinaryMask, RasterImage};
use crate::trace::{column_nodes, fill_gaps, viterbi_trace, PixelTrace, TraceError, TraceParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Color image; the trace mask comes from hedged binarization.
    #[default]
    Raw,
    /// Externally supplied trace mask.
    Mask,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridFallback {
    /// Fail the sample with a grid error.
    #[default]
    Error,
    /// Use `default_square_px` for both axes and flag the geometry.
    AssumeSquareDefault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: InputMode,
    pub rate: f64,
    pub hedging: HedgingParams,
    pub trace: TraceParams,
    pub lag_window: usize,
    pub denoise: bool,
    /// Explicit geometry; skips detection when set.
    pub grid: Option<GridGeometry>,
    pub grid_fallback: GridFallback,
    pub default_square_px: f64,
    pub constants: CalibrationConstants,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: InputMode::Raw,
            rate: DEFAULT_RATE_HZ,
            hedging: HedgingParams::default(),
            trace: TraceParams::default(),
            lag_window: DEFAULT_LAG_WINDOW,
            denoise: false,
            grid: None,
            grid_fallback: GridFallback::Error,
            default_square_px: 40.0,
            constants: CalibrationConstants::default(),
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad(format!("rate must be positive, got {}", self.rate));
        }
        let h = &self.hedging;
        if !(h.floor > 0.0 && h.floor <= 1.0) {
            return bad(format!("hedge floor must lie in (0, 1], got {}", h.floor));
        }
        if !(h.step > 0.0 && h.step < 1.0) {
            return bad(format!("hedge step must lie in (0, 1), got {}", h.step));
        }
        if !(0.0..=1.0).contains(&self.trace.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.trace.alpha));
        }
        if !(self.trace.angle_scale.is_finite() && self.trace.angle_scale >= 0.0) {
            return bad(format!(
                "angle scale must be non-negative, got {}",
                self.trace.angle_scale
            ));
        }
        if !(self.default_square_px.is_finite() && self.default_square_px > 0.0) {
            return bad(format!(
                "default square must be positive, got {}",
                self.default_square_px
            ));
        }
        let c = &self.constants;
        if !(c.mv_per_large_square > 0.0 && c.sec_per_large_square > 0.0) {
            return bad("calibration constants must be positive".into());
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(PipelineError::Grid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("grid: {0}")]
    Grid(GridError),
    #[error("trace: {0}")]
    Trace(TraceError),
    #[error("calibrate: {0}")]
    Calibrate(CalibrationError),
    #[error("align: {0}")]
    Align(CalibrationError),
    #[error("metrics: {0}")]
    Metrics(MetricsError),
}

impl PipelineError {
    /// Name of the stage that failed.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Grid(_) => "grid",
            Self::Trace(_) => "trace",
            Self::Calibrate(_) => "calibrate",
            Self::Align(_) => "align",
            Self::Metrics(_) => "metrics",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum DigitizeInput<'a> {
    Raw(&'a RasterImage),
    Mask {
        mask: &'a BinaryMask,
        /// Color image used only for grid detection.
        companion: Option<&'a RasterImage>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSource {
    Config,
    Detected,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid: GridGeometry,
    pub grid_source: GridSource,
    /// Absent in mask mode.
    pub hedging: Option<HedgingTrace>,
    pub trace: PixelTrace,
    /// Wall-clock time per stage; varies between runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timings: Vec<StageTiming>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Digitization {
    pub signal: DigitalSignal,
    pub diagnostics: Diagnostics,
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTiming {
            stage: stage.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

fn resolve_grid(
    image: Option<&RasterImage>,
    cfg: &PipelineConfig,
) -> Result<(GridGeometry, GridSource), PipelineError> {
    if let Some(g) = cfg.grid {
        return Ok((g, GridSource::Config));
    }
    let detected = match image {
        Some(img) => detect_grid(img),
        None => Err(GridError::Invalid(
            "no companion image and no grid geometry configured".into(),
        )),
    };
    match (detected, cfg.grid_fallback) {
        (Ok(g), _) => Ok((g, GridSource::Detected)),
        (Err(e), GridFallback::Error) => Err(PipelineError::Grid(e)),
        (Err(_), GridFallback::AssumeSquareDefault) => {
            let mut g = GridGeometry::square(cfg.default_square_px).map_err(PipelineError::Grid)?;
            g.square_assumed = true;
            Ok((g, GridSource::Fallback))
        }
    }
}

/// Turns one lead image (or its trace mask) into a calibrated signal.
pub fn digitize(input: DigitizeInput<'_>, cfg: &PipelineConfig) -> Result<Digitization, PipelineError> {
    cfg.validate()?;
    let mut timer = Timer(Vec::new());
    let grid_image = match input {
        DigitizeInput::Raw(img) => Some(img),
        DigitizeInput::Mask { companion, .. } => companion,
    };
    let (grid, grid_source) = timer.run("grid", || resolve_grid(grid_image, cfg))?;

    let (mask, hedging) = match input {
        DigitizeInput::Raw(img) => timer.run("binarize", || {
            let (m, trace) = adaptive_binarize(&to_grayscale(img), cfg.hedging);
            (m, Some(trace))
        }),
        DigitizeInput::Mask { mask, .. } => (mask.clone(), None),
    };
    let mask = if cfg.denoise {
        timer.run("denoise", || denoise(&mask))
    } else {
        mask
    };

    let trace = timer.run("trace", || {
        let nodes = column_nodes(&mask);
        let raw = viterbi_trace(&nodes, &cfg.trace, cfg.execution)?;
        Ok(fill_gaps(&raw, raw.columns()))
    })
    .map_err(PipelineError::Trace)?;

    let signal = timer
        .run("calibrate", || {
            pixels_to_physical(&trace, &grid, cfg.rate, &cfg.constants).map(|s| remove_baseline(&s))
        })
        .map_err(PipelineError::Calibrate)?;

    Ok(Digitization {
        signal,
        diagnostics: Diagnostics {
            grid,
            grid_source,
            hedging,
            trace,
            timings: timer.0,
        },
    })
}

/// Compares `pred` with `reference` after the shared corrections.
///
/// The lag maximizing correlation within `cfg.lag_window` is removed, then
/// both signals are cut to reference samples `[w, n_ref - w)` that the
/// prediction covers, median-centered on that region, and scored. Using a
/// fixed region keeps the score independent of any shift up to the window.
/// When that region has fewer than two samples the whole overlap is used.
pub fn evaluate(
    pred: &DigitalSignal,
    reference: &DigitalSignal,
    cfg: &PipelineConfig,
) -> Result<EvalReport, PipelineError> {
    let w = cfg.lag_window;
    let lag = align_lag(pred, reference, w).map_err(PipelineError::Align)?.lag;
    let (np, nr) = (pred.len() as i64, reference.len() as i64);
    let overlap = (lag.max(0), nr.min(np + lag));
    let trimmed = (overlap.0.max(w as i64), overlap.1.min(nr - w as i64));
    let (s, e) = if trimmed.1 - trimmed.0 >= 2 {
        trimmed
    } else {
        overlap
    };
    let p = centered(&pred.samples()[(s - lag) as usize..(e - lag) as usize], pred.fs())?;
    let r = centered(&reference.samples()[s as usize..e as usize], reference.fs())?;
    let mse = mse_slices(p.samples(), r.samples()).map_err(PipelineError::Metrics)?;
    let pearson = pearson_slices(p.samples(), r.samples()).map_err(PipelineError::Metrics)?;
    Ok(EvalReport {
        mse,
        pearson,
        lag,
        iou: None,
        n_samples: p.len(),
    })
}

fn centered(values: &[f64], fs: f64) -> Result<DigitalSignal, PipelineError> {
    DigitalSignal::new(fs, values.to_vec())
        .map(|s| remove_baseline(&s))
        .map_err(PipelineError::Align)
}

/// Digitizes many inputs; results keep input order.
pub fn digitize_batch(
    inputs: &[DigitizeInput<'_>],
    cfg: &PipelineConfig,
) -> Vec<Result<Digitization, PipelineError>> {
    par::map(inputs, cfg.execution, |&input| digitize(input, cfg))
}

/// Evaluates `(pred, reference)` pairs; results keep input order.
pub fn evaluate_batch(
    pairs: &[(&DigitalSignal, &DigitalSignal)],
    cfg: &PipelineConfig,
) -> Vec<Result<EvalReport, PipelineError>> {
    par::map(pairs, cfg.execution, |&(p, r)| evaluate(p, r, cfg))
}
