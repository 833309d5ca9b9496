//! Pixel trace to physical units, plus lag and baseline corrections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridGeometry;
use crate::metrics::pearson_slices;
use crate::trace::PixelTrace;

/// Default output sampling rate, Hz.
pub const DEFAULT_RATE_HZ: f64 = 100.0;
/// Default lag search window, samples.
pub const DEFAULT_LAG_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid sampling rate {0}")]
    InvalidRate(f64),
    #[error("trace has unfilled columns")]
    IncompleteTrace,
    #[error("sampling rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),
    #[error("overlap of {0} sample(s) is too short to align")]
    ShortOverlap(usize),
}

/// Uniformly sampled voltage series. JSON form: `{"fs": <Hz>, "mv": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignal", into = "RawSignal")]
pub struct DigitalSignal {
    fs: f64,
    mv: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSignal {
    fs: f64,
    mv: Vec<f64>,
}

impl TryFrom<RawSignal> for DigitalSignal {
    type Error = CalibrationError;

    fn try_from(raw: RawSignal) -> Result<Self, Self::Error> {
        DigitalSignal::new(raw.fs, raw.mv)
    }
}

impl From<DigitalSignal> for RawSignal {
    fn from(s: DigitalSignal) -> Self {
        RawSignal { fs: s.fs, mv: s.mv }
    }
}

impl DigitalSignal {
    pub fn new(fs: f64, mv: Vec<f64>) -> Result<Self, CalibrationError> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(CalibrationError::InvalidRate(fs));
        }
        if mv.is_empty() {
            return Err(CalibrationError::InvalidSignal("no samples".into()));
        }
        if let Some(i) = mv.iter().position(|v| !v.is_finite()) {
            return Err(CalibrationError::InvalidSignal(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self { fs, mv })
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.mv
    }

    pub fn len(&self) -> usize {
        self.mv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mv.is_empty()
    }

    /// Seconds from the first to the last sample.
    pub fn duration(&self) -> f64 {
        (self.mv.len() - 1) as f64 / self.fs
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("signal serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Linear interpolation at time `t` seconds, clamped to the end samples.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.mv, t * self.fs)
    }

    fn with_samples(&self, mv: Vec<f64>) -> Self {
        Self { fs: self.fs, mv }
    }
}

/// Linear interpolation at fractional index `u`, clamped to the ends.
pub fn interpolate(values: &[f64], u: f64) -> f64 {
    let last = values.len() - 1;
    if u <= 0.0 {
        return values[0];
    }
    if u >= last as f64 {
        return values[last];
    }
    let i = u.floor() as usize;
    let frac = u - i as f64;
    values[i] + (values[i + 1] - values[i]) * frac
}

/// Number of uniform samples `0, 1/rate, ...` not exceeding `duration`.
pub fn sample_count(duration: f64, rate: f64) -> usize {
    let product = duration * rate;
    (product + 1e-9 * product.abs().max(1.0)).floor() as usize + 1
}

/// Standard ECG paper scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub mv_per_large_square: f64,
    pub sec_per_large_square: f64,
}

impl Default for CalibrationConstants {
    fn default() -> Self {
        Self {
            mv_per_large_square: 0.5,
            sec_per_large_square: 0.2,
        }
    }
}

/// Converts a complete pixel trace to millivolts at `rate` Hz.
///
/// Column `c` of the trace sits at `c * sec_per_large_square / width_pixels`
/// seconds after the first column; the trace spans `columns * dt` seconds.
/// Voltage grows upward, so row offsets are negated.
pub fn pixels_to_physical(
    trace: &PixelTrace,
    grid: &GridGeometry,
    rate: f64,
    constants: &CalibrationConstants,
) -> Result<DigitalSignal, CalibrationError> {
    grid.validate()
        .map_err(|e| CalibrationError::InvalidGrid(e.to_string()))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(CalibrationError::InvalidRate(rate));
    }
    let rows = trace.values().ok_or(CalibrationError::IncompleteTrace)?;
    if rows.is_empty() {
        return Err(CalibrationError::InvalidSignal("empty trace".into()));
    }
    let columns_per_sec = grid.width_pixels / constants.sec_per_large_square;
    let mv_per_row = constants.mv_per_large_square / grid.height_pixels;
    let duration = rows.len() as f64 / columns_per_sec;
    let n = sample_count(duration, rate);
    let mv = (0..n)
        .map(|k| {
            let column = k as f64 / rate * columns_per_sec;
            -interpolate(&rows, column) * mv_per_row
        })
        .collect();
    DigitalSignal::new(rate, mv)
}

/// Lag estimate plus both signals cut to their common overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// `pred[i - lag]` pairs with `reference[i]`.
    pub lag: i64,
    pub pred: DigitalSignal,
    pub reference: DigitalSignal,
}

/// Reference index range overlapping the prediction at `lag`.
fn overlap(n_pred: usize, n_ref: usize, lag: i64) -> (usize, usize) {
    let start = lag.max(0);
    let end = (n_ref as i64).min(n_pred as i64 + lag);
    (start as usize, end.max(start) as usize)
}

/// Finds the lag in `[-max_lag, max_lag]` maximizing the Pearson correlation
/// over the overlapping samples. Ties prefer smaller `|lag|`, then negative.
pub fn align_lag(
    pred: &DigitalSignal,
    reference: &DigitalSignal,
    max_lag: usize,
) -> Result<Alignment, CalibrationError> {
    if pred.fs != reference.fs {
        return Err(CalibrationError::RateMismatch(pred.fs, reference.fs));
    }
    let (np, nr) = (pred.len(), reference.len());
    let mut best: Option<(i64, f64)> = None;
    let mut longest = 0;
    let candidates = std::iter::once(0)
        .chain((1..=max_lag as i64).flat_map(|k| [-k, k]));
    for lag in candidates {
        let (s, e) = overlap(np, nr, lag);
        longest = longest.max(e - s);
        if e - s < 2 {
            continue;
        }
        let p = &pred.mv[(s as i64 - lag) as usize..(e as i64 - lag) as usize];
        let score = pearson_slices(p, &reference.mv[s..e]).unwrap_or(f64::NEG_INFINITY);
        match best {
            Some((_, b)) if score <= b + 1e-12 => {}
            _ => best = Some((lag, score)),
        }
    }
    let (lag, _) = best.ok_or(CalibrationError::ShortOverlap(longest))?;
    let (s, e) = overlap(np, nr, lag);
    Ok(Alignment {
        lag,
        pred: pred.with_samples(pred.mv[(s as i64 - lag) as usize..(e as i64 - lag) as usize].to_vec()),
        reference: reference.with_samples(reference.mv[s..e].to_vec()),
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Subtracts the median sample.
pub fn remove_baseline(sig: &DigitalSignal) -> DigitalSignal {
    let m = median(&sig.mv);
    sig.with_samples(sig.mv.iter().map(|v| v - m).collect())
}
