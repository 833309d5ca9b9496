//! ECG paper grid detection.
//!
//! Grid pixels are isolated as the middle of three intensity clusters, cleaned
//! up morphologically, and fed to a Hough transform restricted to near-axis
//! angles. Consecutive line gaps then give the size of one large square.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{self, Rect};
use crate::raster::{to_grayscale, BinaryMask, GrayImage, RasterImage};

/// Half-width of the angle window around each canonical orientation, degrees.
pub const ANGLE_WINDOW_DEG: i32 = 2;
/// Minimum accumulator votes, as a fraction of the image extent along the line.
pub const VOTE_FRACTION: f64 = 0.5;
/// Lines closer than this many pixels are merged.
pub const MERGE_RADIUS: f64 = 4.0;

const KMEANS_SEEDS: [f64; 3] = [0.0, 128.0, 255.0];
const KMEANS_MAX_ITER: usize = 50;
const KMEANS_TOL: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("image has a single intensity level; no grid to isolate")]
    EmptyGrid,
    #[error("grid undetected: found {verticals} vertical line(s), need at least 2")]
    Undetected { verticals: usize },
    #[error("invalid grid geometry: {0}")]
    Invalid(String),
}

/// One detected line: its coordinate (column for verticals, row for
/// horizontals) measured at the image center, and its peak vote count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub position: f64,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineSet {
    pub horizontals: Vec<Line>,
    pub verticals: Vec<Line>,
}

impl LineSet {
    pub fn len(&self) -> usize {
        self.horizontals.len() + self.verticals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertical_positions(&self) -> Vec<f64> {
        self.verticals.iter().map(|l| l.position).collect()
    }

    pub fn horizontal_positions(&self) -> Vec<f64> {
        self.horizontals.iter().map(|l| l.position).collect()
    }
}

/// Pixels per large grid square along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width_pixels: f64,
    pub height_pixels: f64,
    /// Height copied from width because too few horizontal lines were found.
    pub square_assumed: bool,
    /// Line gaps fell into a small/large pair of clusters and the large one was used.
    #[serde(default)]
    pub bimodal_gaps: bool,
}

impl GridGeometry {
    pub fn new(width_pixels: f64, height_pixels: f64) -> Result<Self, GridError> {
        let g = Self {
            width_pixels,
            height_pixels,
            square_assumed: false,
            bimodal_gaps: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn square(pixels: f64) -> Result<Self, GridError> {
        let mut g = Self::new(pixels, pixels)?;
        g.square_assumed = true;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.width_pixels) || !ok(self.height_pixels) {
            return Err(GridError::Invalid(format!(
                "non-positive spacing {}x{}",
                self.width_pixels, self.height_pixels
            )));
        }
        if self.square_assumed && self.width_pixels != self.height_pixels {
            return Err(GridError::Invalid(
                "square grid with unequal sides".into(),
            ));
        }
        Ok(())
    }
}

fn nearest_center(level: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate().skip(1) {
        if (level - c).abs() < (level - centers[best]).abs() {
            best = i;
        }
    }
    best
}

/// 1-D k-means over a 256-bin histogram. Empty clusters keep their center.
fn kmeans_levels(hist: &[u64; 256], seeds: &[f64]) -> Vec<f64> {
    let mut centers = seeds.to_vec();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sum = vec![0.0; centers.len()];
        let mut weight = vec![0.0; centers.len()];
        for (level, &count) in hist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let c = nearest_center(level as f64, &centers);
            sum[c] += level as f64 * count as f64;
            weight[c] += count as f64;
        }
        let mut shift = 0.0f64;
        for i in 0..centers.len() {
            if weight[i] > 0.0 {
                let next = sum[i] / weight[i];
                shift = shift.max((next - centers[i]).abs());
                centers[i] = next;
            }
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    centers
}

/// Pixels belonging to the middle intensity cluster, before morphology.
///
/// Images with exactly two levels have no middle cluster and give an empty mask.
pub fn grid_cluster_mask(gray: &GrayImage) -> Result<BinaryMask, GridError> {
    let hist = gray.histogram();
    let distinct = hist.iter().filter(|&&c| c > 0).count();
    if distinct <= 1 {
        return Err(GridError::EmptyGrid);
    }
    let (w, h) = (gray.width(), gray.height());
    if distinct == 2 {
        return Ok(BinaryMask::empty(w, h).expect("valid dims"));
    }
    let centers = kmeans_levels(&hist, &KMEANS_SEEDS);
    let mut in_middle = [false; 256];
    for (level, flag) in in_middle.iter_mut().enumerate() {
        *flag = hist[level] > 0 && nearest_center(level as f64, &centers) == 1;
    }
    let pixels = gray.pixels().iter().map(|&p| in_middle[p as usize]).collect();
    Ok(BinaryMask::new(w, h, pixels).expect("valid dims"))
}

/// Keeps pixels on a horizontal or vertical run of at least three, then
/// closes small holes.
pub fn refine_grid_mask(mask: &BinaryMask) -> BinaryMask {
    let horizontal = morphology::open(mask, Rect::new(1, 3));
    let vertical = morphology::open(mask, Rect::new(3, 1));
    morphology::close(&horizontal.union(&vertical), Rect::new(3, 3))
}

pub fn isolate_grid_pixels(img: &RasterImage) -> Result<BinaryMask, GridError> {
    let gray = to_grayscale(img);
    Ok(refine_grid_mask(&grid_cluster_mask(&gray)?))
}

#[derive(Clone, Copy)]
enum Family {
    Vertical,
    Horizontal,
}

/// Hough votes for one orientation family; returns (position at image center, votes)
/// for every bin reaching the vote threshold.
fn hough_candidates(mask: &BinaryMask, family: Family) -> Vec<(f64, f64)> {
    let (w, h) = (mask.width(), mask.height());
    let (base_deg, extent) = match family {
        Family::Vertical => (0, h),
        Family::Horizontal => (90, w),
    };
    let threshold = VOTE_FRACTION * extent as f64;
    let offset = (w + h) as i64;
    let bins = 2 * offset as usize + 1;
    let (xc, yc) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);

    let signal: Vec<(f64, f64)> = mask
        .pixels()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| ((i % w) as f64, (i / w) as f64))
        .collect();

    let mut out = Vec::new();
    for deg in (base_deg - ANGLE_WINDOW_DEG)..=(base_deg + ANGLE_WINDOW_DEG) {
        let (sin, cos) = (deg as f64).to_radians().sin_cos();
        let mut acc = vec![0u32; bins];
        for &(x, y) in &signal {
            let rho = x * cos + y * sin;
            acc[(rho.round() as i64 + offset) as usize] += 1;
        }
        for (bin, &votes) in acc.iter().enumerate() {
            if votes == 0 || (votes as f64) < threshold {
                continue;
            }
            let rho = bin as f64 - offset as f64;
            let position = match family {
                Family::Vertical => (rho - yc * sin) / cos,
                Family::Horizontal => (rho - xc * cos) / sin,
            };
            out.push((position, votes as f64));
        }
    }
    out
}

fn weighted_mean(members: &[(f64, f64)]) -> Line {
    let total: f64 = members.iter().map(|m| m.1).sum();
    let position = members.iter().map(|m| m.0 * m.1).sum::<f64>() / total;
    let score = members.iter().map(|m| m.1).fold(0.0, f64::max);
    Line { position, score }
}

/// Greedy score-ordered clustering. A cluster sits at the weighted mean of its
/// peak-score members; weaker members (tilted bins of the same line) are
/// absorbed without moving it. Surviving lines closer than the merge radius
/// are then merged by score-weighted averaging.
fn merge_candidates(mut candidates: Vec<(f64, f64)>, upper: f64) -> Vec<Line> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let mut taken = vec![false; candidates.len()];
    let mut lines = Vec::new();
    for i in 0..candidates.len() {
        if taken[i] {
            continue;
        }
        let (seed, peak) = candidates[i];
        let mut top = Vec::new();
        for j in i..candidates.len() {
            if !taken[j] && (candidates[j].0 - seed).abs() <= MERGE_RADIUS {
                taken[j] = true;
                if candidates[j].1 == peak {
                    top.push(candidates[j]);
                }
            }
        }
        lines.push(weighted_mean(&top));
    }
    lines.sort_by(|a, b| a.position.total_cmp(&b.position));

    let mut merged: Vec<(Line, Vec<(f64, f64)>)> = Vec::new();
    for line in lines {
        match merged.last_mut() {
            Some((prev, members)) if line.position - prev.position <= MERGE_RADIUS => {
                members.push((line.position, line.score));
                *prev = weighted_mean(members);
            }
            _ => merged.push((line, vec![(line.position, line.score)])),
        }
    }
    merged
        .into_iter()
        .map(|(mut l, _)| {
            l.position = l.position.clamp(0.0, upper);
            l
        })
        .collect()
}

/// Finds dominant horizontal and vertical lines in a grid mask.
pub fn detect_lines(grid_mask: &BinaryMask) -> LineSet {
    let (w, h) = (grid_mask.width(), grid_mask.height());
    LineSet {
        verticals: merge_candidates(hough_candidates(grid_mask, Family::Vertical), (w - 1) as f64),
        horizontals: merge_candidates(
            hough_candidates(grid_mask, Family::Horizontal),
            (h - 1) as f64,
        ),
    }
}

pub fn grid_detectable(mask: &BinaryMask) -> bool {
    detect_lines(mask).len() >= 3
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Large-square spacing from sorted line positions. Returns the spacing and
/// whether a small/large gap split was resolved.
fn spacing(positions: &[f64]) -> Option<(f64, bool)> {
    if positions.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = positions.windows(2).map(|p| p[1] - p[0]).collect();
    gaps.sort_by(f64::total_cmp);

    // Largest multiplicative jump between consecutive sorted gaps.
    let split = gaps
        .windows(2)
        .enumerate()
        .map(|(i, g)| (i + 1, g[1] / g[0]))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    if let Some((at, jump)) = split {
        if jump >= 2.0 {
            let (small, large) = gaps.split_at(at);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let ratio = mean(large) / mean(small);
            if (4.0..=6.0).contains(&ratio) {
                return Some((median_of_sorted(large), true));
            }
        }
    }
    Some((median_of_sorted(&gaps), false))
}

/// Pixels per large square from detected lines; falls back to a square grid
/// when fewer than two horizontal lines exist.
pub fn estimate_grid(lines: &LineSet) -> Result<GridGeometry, GridError> {
    let (width_pixels, w_bimodal) = spacing(&lines.vertical_positions()).ok_or(
        GridError::Undetected {
            verticals: lines.verticals.len(),
        },
    )?;
    let geometry = match spacing(&lines.horizontal_positions()) {
        Some((height_pixels, h_bimodal)) => GridGeometry {
            width_pixels,
            height_pixels,
            square_assumed: false,
            bimodal_gaps: w_bimodal || h_bimodal,
        },
        None => GridGeometry {
            width_pixels,
            height_pixels: width_pixels,
            square_assumed: true,
            bimodal_gaps: w_bimodal,
        },
    };
    geometry.validate()?;
    Ok(geometry)
}

/// Full grid detection on a color image.
pub fn detect_grid(img: &RasterImage) -> Result<GridGeometry, GridError> {
    estimate_grid(&detect_lines(&isolate_grid_pixels(img)?))
}
