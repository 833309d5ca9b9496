//! Otsu thresholding and the hedged binarization loop that strips grid lines.
//!
//! The threshold starts at Otsu's value and is scaled down by a hedging
//! factor (multiplicative steps, default 0.95) while grid lines are still
//! detectable in the binarized image, never going below the floor (0.6).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::grid::grid_detectable;
use crate::raster::{binarize_fixed, BinaryMask, GrayImage};

/// Default hedging floor.
pub const HEDGE_FLOOR: f64 = 0.6;
/// Default multiplicative hedging step.
pub const HEDGE_STEP: f64 = 0.95;
/// Components smaller than this (in pixels) are removed by [`denoise`].
pub const MIN_COMPONENT_AREA: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Otsu {
    pub threshold: u8,
    /// The image had a single intensity level.
    pub degenerate: bool,
}

/// `a * b` as a 192-bit value (most significant word first).
fn mul_wide(a: u128, b: u64) -> (u64, u64, u64) {
    let lo = (a as u64 as u128) * b as u128;
    let hi = (a >> 64) * b as u128;
    let w0 = lo as u64;
    let (w1, carry) = ((lo >> 64) as u64).overflowing_add(hi as u64);
    let w2 = ((hi >> 64) as u64) + carry as u64;
    (w2, w1, w0)
}

/// Otsu threshold from a 256-bin histogram.
///
/// Class 0 is `{intensity <= t}`. The between-class variance is compared in
/// exact integer arithmetic, so equal-variance splits tie exactly and the
/// smallest `t` wins.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Otsu {
    let distinct: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    match distinct.len() {
        0 => {
            return Otsu {
                threshold: 0,
                degenerate: true,
            }
        }
        1 => {
            return Otsu {
                threshold: distinct[0] as u8,
                degenerate: true,
            }
        }
        _ => {}
    }
    let n: u64 = hist.iter().sum();
    let sum: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    if n >= 1 << 28 {
        return otsu_float(hist, n, sum as f64);
    }

    // Between-class score for split t is D^2 / (n0 * n1) with
    // D = N * S0 - n0 * S, which stays below 2^64 for N < 2^28.
    let mut best_t = 0usize;
    let mut best: Option<(u128, u64)> = None;
    let (mut n0, mut s0) = (0u64, 0u128);
    for (t, &count) in hist.iter().enumerate() {
        n0 += count;
        s0 += t as u128 * count as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (n as i128 * s0 as i128 - n0 as i128 * sum as i128).unsigned_abs();
        let num = d * d;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((bn, bd)) => mul_wide(num, bd) > mul_wide(bn, den),
        };
        if better {
            best = Some((num, den));
            best_t = t;
        }
    }
    Otsu {
        threshold: best_t as u8,
        degenerate: false,
    }
}

/// Floating-point fallback for very large images.
fn otsu_float(hist: &[u64; 256], n: u64, sum: f64) -> Otsu {
    let n = n as f64;
    let (mut w0, mut s0) = (0.0, 0.0);
    let (mut best_t, mut best) = (0usize, f64::NEG_INFINITY);
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as f64;
        s0 += t as f64 * count as f64;
        let w1 = n - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = n * s0 - w0 * sum;
        let score = d * d / (w0 * w1);
        if score > best {
            best = score;
            best_t = t;
        }
    }
    Otsu {
        threshold: best_t as u8,
        degenerate: false,
    }
}

pub fn otsu_threshold(img: &GrayImage) -> Otsu {
    otsu_from_histogram(&img.histogram())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GridGone,
    FloorReached,
    NoGridInitially,
}

/// Record of one hedged binarization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgingTrace {
    pub otsu_threshold: u8,
    pub otsu_degenerate: bool,
    pub factors: Vec<f64>,
    pub final_factor: f64,
    pub stop_reason: StopReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgingParams {
    pub floor: f64,
    pub step: f64,
}

impl Default for HedgingParams {
    fn default() -> Self {
        Self {
            floor: HEDGE_FLOOR,
            step: HEDGE_STEP,
        }
    }
}

/// Binarizes keeping the Otsu dark class scaled by `factor`:
/// a pixel is signal iff `intensity <= otsu * factor`.
pub fn binarize_hedged(img: &GrayImage, otsu: u8, factor: f64) -> BinaryMask {
    binarize_fixed(img, (otsu as f64 * factor).floor() + 1.0)
}

/// Lowers the threshold until the grid disappears or the floor is reached.
pub fn adaptive_binarize(img: &GrayImage, params: HedgingParams) -> (BinaryMask, HedgingTrace) {
    let otsu = otsu_threshold(img);
    let mut factor = 1.0;
    let mut factors = vec![factor];
    let mut mask = binarize_hedged(img, otsu.threshold, factor);

    let stop_reason = if !grid_detectable(&mask) {
        StopReason::NoGridInitially
    } else {
        loop {
            if factor <= params.floor {
                break StopReason::FloorReached;
            }
            factor = (factor * params.step).max(params.floor);
            factors.push(factor);
            mask = binarize_hedged(img, otsu.threshold, factor);
            if !grid_detectable(&mask) {
                break StopReason::GridGone;
            }
        }
    };

    let trace = HedgingTrace {
        otsu_threshold: otsu.threshold,
        otsu_degenerate: otsu.degenerate,
        factors,
        final_factor: factor,
        stop_reason,
    };
    (mask, trace)
}

/// Labels 4-connected signal components; returns (label per pixel, areas).
/// Background pixels get `usize::MAX`.
pub fn label_components(mask: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let px = mask.pixels();
    let mut labels = vec![usize::MAX; w * h];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !px[start] || labels[start] != usize::MAX {
            continue;
        }
        let label = areas.len();
        labels[start] = label;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if px[j] && labels[j] == usize::MAX {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Removes 4-connected components with fewer than [`MIN_COMPONENT_AREA`] pixels.
pub fn denoise(mask: &BinaryMask) -> BinaryMask {
    let (labels, areas) = label_components(mask);
    let pixels = labels
        .iter()
        .map(|&l| l != usize::MAX && areas[l] >= MIN_COMPONENT_AREA)
        .collect();
    BinaryMask::new(mask.width(), mask.height(), pixels).expect("dimensions preserved")
}
