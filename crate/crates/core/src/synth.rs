//! Deterministic ground truth: Gaussian-bump ECG signals rendered onto grid
//! paper, with clean masks and optional intrusion from a neighbouring trace.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`, so outputs are
//! reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{interpolate, sample_count, CalibrationConstants, DigitalSignal};
use crate::grid::GridGeometry;
use crate::raster::{luma, BinaryMask, RasterImage};

/// Height of the band an intruding trace is confined to, pixels.
pub const OVERLAY_BAND_PX: usize = 30;
pub const DEFAULT_CANVAS_WIDTH: usize = 960;
pub const DEFAULT_CANVAS_HEIGHT: usize = 96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid signal spec: {0}")]
    InvalidSignal(String),
    #[error("invalid render spec: {0}")]
    InvalidRender(String),
    #[error("signal of {duration} s needs {columns:.1} columns but canvas is {width} wide")]
    SignalTooLong {
        duration: f64,
        columns: f64,
        width: usize,
    },
}

/// One Gaussian bump, placed relative to the R peak of each beat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude_mv: f64,
    /// Standard deviation, seconds.
    pub width_s: f64,
    pub offset_s: f64,
}

impl Wave {
    pub const fn new(amplitude_mv: f64, width_s: f64, offset_s: f64) -> Self {
        Self {
            amplitude_mv,
            width_s,
            offset_s,
        }
    }

    fn eval(&self, dt: f64) -> f64 {
        let z = (dt - self.offset_s) / self.width_s;
        self.amplitude_mv * (-0.5 * z * z).exp()
    }
}

/// P, Q, R, S and T components of one beat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
}

impl Default for Morphology {
    fn default() -> Self {
        Self {
            p: Wave::new(0.12, 0.025, -0.20),
            q: Wave::new(-0.08, 0.010, -0.030),
            r: Wave::new(0.80, 0.012, 0.0),
            s: Wave::new(-0.20, 0.012, 0.030),
            t: Wave::new(0.25, 0.040, 0.30),
        }
    }
}

impl Morphology {
    fn waves(&self) -> [&Wave; 5] {
        [&self.p, &self.q, &self.r, &self.s, &self.t]
    }

    fn waves_mut(&mut self) -> [&mut Wave; 5] {
        [
            &mut self.p,
            &mut self.q,
            &mut self.r,
            &mut self.s,
            &mut self.t,
        ]
    }

    /// All components switched off.
    pub fn silent() -> Self {
        let mut m = Self::default();
        for w in m.waves_mut() {
            w.amplitude_mv = 0.0;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub duration_s: f64,
    pub heart_rate_bpm: f64,
    /// Time of the first R peak, seconds.
    pub first_beat_s: f64,
    pub morphology: Morphology,
    pub noise_mv: f64,
    pub seed: u64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            duration_s: 4.8,
            heart_rate_bpm: 72.0,
            first_beat_s: 0.4,
            morphology: Morphology::default(),
            noise_mv: 0.0,
            seed: 0,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSignal(m.into()));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.heart_rate_bpm.is_finite() && self.heart_rate_bpm > 0.0) {
            return bad("heart rate must be positive");
        }
        if !(self.noise_mv.is_finite() && self.noise_mv >= 0.0) {
            return bad("noise amplitude must be non-negative");
        }
        for w in self.morphology.waves() {
            if !w.amplitude_mv.is_finite() || w.amplitude_mv.abs() > 2.0 {
                return bad("wave amplitudes must lie within +-2 mV");
            }
            if !(w.width_s.is_finite() && w.width_s > 0.0) {
                return bad("wave widths must be positive");
            }
        }
        Ok(())
    }

    /// A seeded variation of the default beat: heart rate 55-95 bpm, random
    /// first-beat phase, and +-20 % amplitude / +-15 % width jitter, scaled so
    /// the noiseless peak-to-peak span stays within `max_span_mv`.
    pub fn randomized(seed: u64, duration_s: f64, max_span_mv: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut morphology = Morphology::default();
        for w in morphology.waves_mut() {
            w.amplitude_mv *= rng.random_range(0.8..1.2);
            w.width_s *= rng.random_range(0.85..1.15);
        }
        let mut spec = Self {
            duration_s,
            heart_rate_bpm: rng.random_range(55.0..95.0),
            first_beat_s: rng.random_range(0.1..0.8),
            morphology,
            noise_mv: 0.0,
            seed,
        };
        let span = spec.beat_span_mv();
        if span > max_span_mv {
            let k = max_span_mv / span;
            for w in spec.morphology.waves_mut() {
                w.amplitude_mv *= k;
            }
        }
        spec
    }

    /// Peak-to-peak span of one noiseless beat, sampled finely.
    pub fn beat_span_mv(&self) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for i in -800..=800 {
            let dt = i as f64 * 0.001;
            let v: f64 = self.morphology.waves().iter().map(|w| w.eval(dt)).sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

/// Samples the spec at `rate` Hz over `[0, duration]` inclusive.
pub fn gen_signal(spec: &SignalSpec, rate: f64) -> Result<DigitalSignal, SynthError> {
    spec.validate()?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(SynthError::InvalidSignal(format!("invalid rate {rate}")));
    }
    let n = sample_count(spec.duration_s, rate);
    let rr = 60.0 / spec.heart_rate_bpm;
    let waves = spec.morphology.waves();
    // Beats whose bumps can reach the window (bumps decay within ~1 s).
    let k_min = ((-1.0 - spec.first_beat_s) / rr).floor() as i64;
    let k_max = ((spec.duration_s + 1.0 - spec.first_beat_s) / rr).ceil() as i64;

    let mut mv: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            (k_min..=k_max)
                .map(|k| {
                    let dt = t - (spec.first_beat_s + k as f64 * rr);
                    waves.iter().map(|w| w.eval(dt)).sum::<f64>()
                })
                .sum()
        })
        .collect();

    if spec.noise_mv > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_mv).expect("finite std");
        for v in &mut mv {
            *v += normal.sample(&mut rng);
        }
    }
    DigitalSignal::new(rate, mv).map_err(|e| SynthError::InvalidSignal(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub trace: [u8; 3],
    pub bold: [u8; 3],
    pub minor: [u8; 3],
    pub background: [u8; 3],
}

impl Default for Palette {
    /// Gray levels 30 / 152 / 203 / 255.
    fn default() -> Self {
        Self {
            trace: [30, 30, 30],
            bold: [240, 115, 115],
            minor: [245, 185, 185],
            background: [255, 255, 255],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// Pixels per large square, horizontally.
    pub spacing_x: f64,
    /// Pixels per large square, vertically.
    pub spacing_y: f64,
    /// Phase of the bold grid, pixels.
    pub offset_x: f64,
    pub offset_y: f64,
    /// Four thin lines inside each large square.
    pub minor_lines: bool,
    pub thickness: usize,
    pub palette: Palette,
    pub width: usize,
    pub height: usize,
    /// Row of 0 mV; `None` centers the signal's range vertically.
    pub baseline_row: Option<f64>,
    pub constants: CalibrationConstants,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            spacing_x: 40.0,
            spacing_y: 40.0,
            offset_x: 0.0,
            offset_y: 0.0,
            minor_lines: false,
            thickness: 2,
            palette: Palette::default(),
            width: DEFAULT_CANVAS_WIDTH,
            height: DEFAULT_CANVAS_HEIGHT,
            baseline_row: None,
            constants: CalibrationConstants::default(),
        }
    }
}

impl RenderSpec {
    pub fn square(spacing: f64) -> Self {
        Self {
            spacing_x: spacing,
            spacing_y: spacing,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidRender(m));
        if !(self.spacing_x >= 8.0 && self.spacing_y >= 8.0) {
            return bad(format!(
                "spacing {}x{} below 8 px",
                self.spacing_x, self.spacing_y
            ));
        }
        if self.thickness == 0 {
            return bad("thickness must be at least 1".into());
        }
        if (self.width as f64) < self.spacing_x || (self.height as f64) < self.spacing_y {
            return bad("canvas smaller than one large square".into());
        }
        let p = &self.palette;
        let levels = [p.trace, p.bold, p.minor, p.background].map(luma);
        for i in 0..4 {
            for j in i + 1..4 {
                if levels[i].abs_diff(levels[j]) < 30 {
                    return bad(format!("palette gray levels {levels:?} closer than 30"));
                }
            }
        }
        Ok(())
    }

    pub fn columns_per_second(&self) -> f64 {
        self.spacing_x / self.constants.sec_per_large_square
    }

    pub fn rows_per_mv(&self) -> f64 {
        self.spacing_y / self.constants.mv_per_large_square
    }

    /// Signal duration that exactly fills the canvas width.
    pub fn canvas_duration(&self) -> f64 {
        self.width as f64 / self.columns_per_second()
    }

    /// Voltage range covered by the canvas height.
    pub fn voltage_span_mv(&self) -> f64 {
        self.height as f64 / self.rows_per_mv()
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            width_pixels: self.spacing_x,
            height_pixels: self.spacing_y,
            square_assumed: false,
            bimodal_gaps: false,
        }
    }
}

/// Output of [`rasterize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub image: RasterImage,
    /// Trace pixels only.
    pub mask: BinaryMask,
    pub grid: GridGeometry,
    pub baseline_row: f64,
    /// Part of the trace fell outside the canvas and was cut.
    pub clipped: bool,
}

/// Integer line positions `round(offset + k * step)` inside `[0, limit)`.
fn line_positions(offset: f64, step: f64, limit: usize) -> Vec<usize> {
    let k0 = (-offset / step).floor() as i64 - 1;
    let mut out = Vec::new();
    let mut k = k0;
    loop {
        let p = (offset + k as f64 * step).round();
        if p >= limit as f64 {
            break;
        }
        if p >= 0.0 && out.last() != Some(&(p as usize)) {
            out.push(p as usize);
        }
        k += 1;
    }
    out
}

/// Rows covered in each column by the polyline through `sig`, before clipping:
/// `(column, first_row, last_row)`.
fn trace_spans(sig: &DigitalSignal, spec: &RenderSpec, baseline: f64) -> Vec<(usize, i64, i64)> {
    let cps = spec.columns_per_second();
    let rpm = spec.rows_per_mv();
    let last_col = (sig.duration() * cps + 1e-9).floor().min((spec.width - 1) as f64);
    let half = (spec.thickness as f64 - 1.0) / 2.0;
    let row_at = |col: f64| {
        let col = col.clamp(0.0, last_col);
        baseline - interpolate(sig.samples(), col / cps * sig.fs()) * rpm
    };
    (0..=last_col as usize)
        .map(|x| {
            let xf = x as f64;
            let ys = [row_at(xf - 0.5), row_at(xf), row_at(xf + 0.5)];
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (x, (lo - half).round() as i64, (hi + half).round() as i64)
        })
        .collect()
}

fn auto_baseline(sig: &DigitalSignal, spec: &RenderSpec) -> f64 {
    let lo = sig.samples().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sig.samples().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (spec.height as f64 - 1.0) / 2.0 + 0.5 * (lo + hi) * spec.rows_per_mv()
}

/// Draws grid paper and the trace of `sig`; returns the image, the clean trace
/// mask and the exact geometry used.
pub fn rasterize(sig: &DigitalSignal, spec: &RenderSpec) -> Result<Rendering, SynthError> {
    spec.validate()?;
    let columns = sig.duration() * spec.columns_per_second();
    if columns > spec.width as f64 + 1e-9 {
        return Err(SynthError::SignalTooLong {
            duration: sig.duration(),
            columns,
            width: spec.width,
        });
    }
    let (w, h) = (spec.width, spec.height);
    let pal = spec.palette;
    let mut image = RasterImage::filled(w, h, pal.background).expect("validated dims");

    let bold_x = line_positions(spec.offset_x, spec.spacing_x, w);
    let bold_y = line_positions(spec.offset_y, spec.spacing_y, h);
    if spec.minor_lines {
        for x in line_positions(spec.offset_x, spec.spacing_x / 5.0, w) {
            (0..h).for_each(|y| image.set(x, y, pal.minor));
        }
        for y in line_positions(spec.offset_y, spec.spacing_y / 5.0, h) {
            (0..w).for_each(|x| image.set(x, y, pal.minor));
        }
    }
    for &x in &bold_x {
        (0..h).for_each(|y| image.set(x, y, pal.bold));
    }
    for &y in &bold_y {
        (0..w).for_each(|x| image.set(x, y, pal.bold));
    }

    let baseline = spec.baseline_row.unwrap_or_else(|| auto_baseline(sig, spec));
    let mut mask = BinaryMask::empty(w, h).expect("validated dims");
    let mut clipped = false;
    for (x, lo, hi) in trace_spans(sig, spec, baseline) {
        clipped |= lo < 0 || hi >= h as i64;
        for y in lo.max(0)..=hi.min(h as i64 - 1) {
            mask.set(x, y as usize, true);
            image.set(x, y as usize, pal.trace);
        }
    }
    Ok(Rendering {
        image,
        mask,
        grid: spec.geometry(),
        baseline_row: baseline,
        clipped,
    })
}

/// Side of the canvas an intruding trace enters from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSide {
    Top,
    Bottom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Overlay {
    pub image: RasterImage,
    /// Union of the original trace and the intruding one.
    pub mask: BinaryMask,
    pub side: BandSide,
}

/// Draws part of `other`'s trace into a 30-px band at the top or bottom of
/// the canvas (seeded choice), the way a neighbouring lead intrudes.
///
/// The intruding trace is shifted so its extreme row lands 0-8 px inside the
/// band edge, then cut to the band. The clean mask passed in is not modified.
pub fn inject_overlap(
    img: &RasterImage,
    mask: &BinaryMask,
    other: &DigitalSignal,
    spec: &RenderSpec,
    seed: u64,
) -> Result<Overlay, SynthError> {
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    if h <= OVERLAY_BAND_PX || (mask.width(), mask.height()) != (w, h) {
        return Err(SynthError::InvalidRender(format!(
            "overlay needs a canvas taller than {OVERLAY_BAND_PX} px matching the mask"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = if rng.random_bool(0.5) {
        BandSide::Top
    } else {
        BandSide::Bottom
    };
    let jitter = rng.random_range(0..=8) as i64;

    let mut other_spec = spec.clone();
    other_spec.width = w;
    other_spec.height = h;
    let spans = trace_spans(other, &other_spec, 0.0);
    let top = spans.iter().map(|s| s.1).min().unwrap_or(0);
    let bottom = spans.iter().map(|s| s.2).max().unwrap_or(0);
    let band = OVERLAY_BAND_PX as i64;
    let (shift, rows) = match side {
        BandSide::Top => (band - 1 - jitter - bottom, 0..band),
        BandSide::Bottom => (h as i64 - band + jitter - top, h as i64 - band..h as i64),
    };

    let mut image = img.clone();
    let mut contaminated = mask.clone();
    for (x, lo, hi) in spans {
        for y in (lo + shift)..=(hi + shift) {
            if rows.contains(&y) {
                image.set(x, y as usize, spec.palette.trace);
                contaminated.set(x, y as usize, true);
            }
        }
    }
    Ok(Overlay {
        image,
        mask: contaminated,
        side,
    })
}

/// SplitMix64 finalizer over `(master, index)`, giving independent per-sample
/// seeds that do not depend on generation order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generated corpus entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub seed: u64,
    pub truth: DigitalSignal,
    pub render_spec: RenderSpec,
    pub rendering: Rendering,
    pub overlay: Option<Overlay>,
}

/// Builds sample `index` of a corpus: a randomized signal filling the canvas,
/// rendered on `base` with a seeded grid phase, plus an intruding neighbour
/// trace when `overlap` is set.
pub fn corpus_sample(
    master_seed: u64,
    index: u64,
    overlap: bool,
    base: &RenderSpec,
    rate: f64,
    noise_mv: f64,
) -> Result<CorpusSample, SynthError> {
    let seed = derive_seed(master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = base.clone();
    spec.offset_x = rng.random_range(0.0..spec.spacing_x);
    spec.offset_y = rng.random_range(0.0..spec.spacing_y);
    let span = 0.8 * spec.voltage_span_mv();
    let duration = spec.canvas_duration();
    let mut signal = SignalSpec::randomized(seed, duration, span);
    signal.noise_mv = noise_mv;
    let truth = gen_signal(&signal, rate)?;
    let rendering = rasterize(&truth, &spec)?;
    let overlay = if overlap {
        let other_seed = rng.random();
        let other = gen_signal(&SignalSpec::randomized(other_seed, duration, span), rate)?;
        Some(inject_overlap(
            &rendering.image,
            &rendering.mask,
            &other,
            &spec,
            rng.random(),
        )?)
    } else {
        None
    };
    Ok(CorpusSample {
        seed,
        truth,
        render_spec: spec,
        rendering,
        overlay,
    })
}
