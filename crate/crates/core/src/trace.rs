//! Single-trace extraction from a binary mask.
//!
//! Every maximal vertical run of signal pixels in a column becomes a candidate
//! node at the run's mean row. The trace is the left-to-right path through one
//! node per column that minimizes
//!
//! ```text
//! sum_i  alpha * |n_i - n_{i+1}|  +  (1 - alpha) * angle_scale * |theta_{i+1} - theta_i|
//! ```
//!
//! where `theta` is the direction of each one-column segment. Because the
//! cost couples three consecutive nodes, the dynamic program runs over edge
//! states (pairs of nodes in adjacent columns), which keeps the optimum exact.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::raster::BinaryMask;

/// Relative tolerance under which two path costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("mask has no signal pixels; nothing to trace")]
    EmptyTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub alpha: f64,
    pub angle_scale: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            angle_scale: 1.0,
        }
    }
}

/// Candidate nodes (run centers) per column, ascending within each column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnNodes {
    pub height: usize,
    pub columns: Vec<Vec<f64>>,
}

impl ColumnNodes {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpan {
    pub start: usize,
    pub end: usize,
}

/// One row coordinate per column starting at `start`; `None` marks a column
/// without a value (only before [`fill_gaps`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelTrace {
    pub start: usize,
    pub y: Vec<Option<f64>>,
    pub gaps_filled: Vec<ColumnSpan>,
}

impl PixelTrace {
    pub fn columns(&self) -> Range<usize> {
        self.start..self.start + self.y.len()
    }

    pub fn is_complete(&self) -> bool {
        self.y.iter().all(Option::is_some)
    }

    /// Row values, if every column has one.
    pub fn values(&self) -> Option<Vec<f64>> {
        self.y.iter().copied().collect()
    }
}

pub fn column_nodes(mask: &BinaryMask) -> ColumnNodes {
    let (w, h) = (mask.width(), mask.height());
    let columns = (0..w)
        .map(|x| {
            let mut centers = Vec::new();
            let mut run_start = None;
            for y in 0..=h {
                let on = y < h && mask.get(x, y);
                match (on, run_start) {
                    (true, None) => run_start = Some(y),
                    (false, Some(s)) => {
                        centers.push((s + y - 1) as f64 / 2.0);
                        run_start = None;
                    }
                    _ => {}
                }
            }
            centers
        })
        .collect();
    ColumnNodes { height: h, columns }
}

#[inline]
fn segment(a: f64, b: f64) -> (f64, f64) {
    let dy = b - a;
    ((1.0 + dy * dy).sqrt(), dy.atan2(1.0))
}

/// Cost of stepping from `a` to `b`, given the previous segment's angle.
#[inline]
fn step_cost(params: &TraceParams, prev_angle: Option<f64>, a: f64, b: f64) -> (f64, f64) {
    let (dist, angle) = segment(a, b);
    let turn = prev_angle.map_or(0.0, |p| (angle - p).abs());
    (
        params.alpha * dist + (1.0 - params.alpha) * params.angle_scale * turn,
        angle,
    )
}

/// Total cost of a path with one row value per consecutive column.
pub fn path_cost(rows: &[f64], params: &TraceParams) -> f64 {
    let mut total = 0.0;
    let mut prev_angle = None;
    for w in rows.windows(2) {
        let (c, angle) = step_cost(params, prev_angle, w[0], w[1]);
        total += c;
        prev_angle = Some(angle);
    }
    total
}

#[inline]
fn within_tie(value: f64, best: f64) -> bool {
    value <= best + TIE_TOLERANCE * best.abs().max(1.0)
}

/// Index of the first entry tied with the minimum.
fn first_min(values: impl Iterator<Item = f64> + Clone) -> usize {
    let best = values.clone().fold(f64::INFINITY, f64::min);
    values
        .enumerate()
        .find(|&(_, v)| within_tie(v, best))
        .map(|(i, _)| i)
        .expect("non-empty")
}

/// Exact least-cost path through `columns` (each non-empty, ascending).
///
/// Among paths tied within [`TIE_TOLERANCE`], the lexicographically smallest
/// row sequence is returned. Returns the chosen rows and their cost.
pub fn least_cost_path(columns: &[Vec<f64>], params: &TraceParams) -> (Vec<f64>, f64) {
    assert!(columns.iter().all(|c| !c.is_empty()), "empty column in block");
    let m = columns.len();
    if m == 0 {
        return (Vec::new(), 0.0);
    }
    if m == 1 {
        return (vec![columns[0][0]], 0.0);
    }

    // angles[i][j][k]: direction of segment from node j in column i to node k in column i+1.
    let angles: Vec<Vec<Vec<f64>>> = (0..m - 1)
        .map(|i| {
            columns[i]
                .iter()
                .map(|&a| columns[i + 1].iter().map(|&b| segment(a, b).1).collect())
                .collect()
        })
        .collect();

    // to_go[i][j][k]: cheapest completion after taking edge (j in col i) -> (k in col i+1).
    let mut to_go: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m - 1];
    to_go[m - 2] = vec![vec![0.0; columns[m - 1].len()]; columns[m - 2].len()];
    for i in (0..m - 2).rev() {
        let table = columns[i]
            .iter()
            .enumerate()
            .map(|(j, _)| {
                columns[i + 1]
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| {
                        let prev = angles[i][j][k];
                        columns[i + 2]
                            .iter()
                            .enumerate()
                            .map(|(l, &c)| {
                                step_cost(params, Some(prev), b, c).0 + to_go[i + 1][k][l]
                            })
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect();
        to_go[i] = table;
    }

    // Forward reconstruction: first column pair, then one node at a time.
    let first: Vec<(usize, usize, f64)> = columns[0]
        .iter()
        .enumerate()
        .flat_map(|(j, &a)| {
            let to_go = &to_go;
            columns[1].iter().enumerate().map(move |(k, &b)| {
                (j, k, step_cost(params, None, a, b).0 + to_go[0][j][k])
            })
        })
        .collect();
    let pick = first_min(first.iter().map(|t| t.2));
    let (mut j, mut k) = (first[pick].0, first[pick].1);
    let mut chosen = vec![j, k];
    for i in 0..m - 2 {
        let prev = angles[i][j][k];
        let b = columns[i + 1][k];
        let l = first_min(
            columns[i + 2]
                .iter()
                .enumerate()
                .map(|(l, &c)| step_cost(params, Some(prev), b, c).0 + to_go[i + 1][k][l]),
        );
        chosen.push(l);
        j = k;
        k = l;
    }
    let rows: Vec<f64> = chosen
        .iter()
        .enumerate()
        .map(|(i, &n)| columns[i][n])
        .collect();
    let cost = path_cost(&rows, params);
    (rows, cost)
}

/// Maximal runs of consecutive non-empty columns.
fn blocks(nodes: &ColumnNodes) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (x, col) in nodes.columns.iter().enumerate() {
        match (col.is_empty(), start) {
            (false, None) => start = Some(x),
            (true, Some(s)) => {
                out.push(s..x);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..nodes.columns.len());
    }
    out
}

/// Least-cost trace over every block of non-empty columns. Columns between
/// blocks are left as `None`.
pub fn viterbi_trace(
    nodes: &ColumnNodes,
    params: &TraceParams,
    exec: Execution,
) -> Result<PixelTrace, TraceError> {
    let blocks = blocks(nodes);
    let (first, last) = match (blocks.first(), blocks.last()) {
        (Some(f), Some(l)) => (f.start, l.end),
        _ => return Err(TraceError::EmptyTrace),
    };
    let solved = par::map(&blocks, exec, |b| {
        least_cost_path(&nodes.columns[b.clone()], params).0
    });
    let mut y = vec![None; last - first];
    for (block, rows) in blocks.iter().zip(solved) {
        for (x, r) in block.clone().zip(rows) {
            y[x - first] = Some(r);
        }
    }
    Ok(PixelTrace {
        start: first,
        y,
        gaps_filled: Vec::new(),
    })
}

/// Fills every column of `full_range`: interior gaps by linear interpolation
/// between the flanking values, leading/trailing gaps by constant extension.
///
/// Panics if `trace` holds no value inside `full_range`.
pub fn fill_gaps(trace: &PixelTrace, full_range: Range<usize>) -> PixelTrace {
    let known: Vec<Option<f64>> = full_range
        .clone()
        .map(|x| {
            if trace.columns().contains(&x) {
                trace.y[x - trace.start]
            } else {
                None
            }
        })
        .collect();
    let defined: Vec<usize> = (0..known.len()).filter(|&i| known[i].is_some()).collect();
    assert!(!defined.is_empty(), "fill_gaps needs at least one value");

    let mut y: Vec<f64> = Vec::with_capacity(known.len());
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < known.len() {
        if let Some(v) = known[i] {
            y.push(v);
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < known.len() && known[i].is_none() {
            i += 1;
        }
        let left = gap_start.checked_sub(1).map(|p| known[p].unwrap());
        let right = known.get(i).copied().flatten();
        for g in gap_start..i {
            let v = match (left, right) {
                (Some(a), Some(b)) => {
                    let span = (i - gap_start + 1) as f64;
                    let t = (g - gap_start + 1) as f64 / span;
                    a + (b - a) * t
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("at least one defined value"),
            };
            y.push(v);
        }
        gaps.push(ColumnSpan {
            start: full_range.start + gap_start,
            end: full_range.start + i,
        });
    }
    PixelTrace {
        start: full_range.start,
        y: y.into_iter().map(Some).collect(),
        gaps_filled: gaps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(h: usize, cols: &[&[usize]]) -> BinaryMask {
        let mut m = BinaryMask::empty(cols.len(), h).unwrap();
        for (x, rows) in cols.iter().enumerate() {
            for &y in *rows {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn run_centers() {
        let m = mask_from_rows(10, &[&[3, 4, 5], &[1, 2, 7], &[], &[9]]);
        let n = column_nodes(&m);
        assert_eq!(n.columns, vec![vec![4.0], vec![1.5, 7.0], vec![], vec![9.0]]);
    }

    #[test]
    fn unique_path_is_returned() {
        let cols = vec![vec![3.0], vec![9.0], vec![1.0], vec![4.5]];
        for alpha in [0.0, 0.3, 1.0] {
            let params = TraceParams {
                alpha,
                angle_scale: 2.0,
            };
            assert_eq!(least_cost_path(&cols, &params).0, vec![3.0, 9.0, 1.0, 4.5]);
        }
    }

    #[test]
    fn flat_path_beats_detours() {
        let cols = vec![vec![10.0], vec![8.0, 10.0, 12.0], vec![8.0, 10.0, 12.0], vec![10.0]];
        let (rows, cost) = least_cost_path(&cols, &TraceParams::default());
        assert_eq!(rows, vec![10.0; 4]);
        assert_eq!(cost, 1.5);
    }

    #[test]
    fn straight_slope_beats_equal_length_zigzag() {
        // Both candidates take three steps of length sqrt(5); only the
        // zigzag pays for turning.
        let cols = vec![vec![10.0], vec![12.0], vec![10.0, 14.0], vec![12.0, 16.0]];
        let (rows, cost) = least_cost_path(&cols, &TraceParams::default());
        assert_eq!(rows, vec![10.0, 12.0, 14.0, 16.0]);
        assert!((cost - 1.5 * 5f64.sqrt()).abs() < 1e-12);
        assert!(path_cost(&[10.0, 12.0, 10.0, 12.0], &TraceParams::default()) > cost);
    }

    #[test]
    fn ties_go_to_smaller_rows() {
        let cols = vec![vec![2.0, 6.0], vec![2.0, 6.0]];
        assert_eq!(least_cost_path(&cols, &TraceParams::default()).0, vec![2.0, 2.0]);
        let single = vec![vec![1.0, 5.0, 9.0]];
        assert_eq!(least_cost_path(&single, &TraceParams::default()).0, vec![1.0]);
    }

    #[test]
    fn empty_nodes_is_an_error() {
        let nodes = ColumnNodes {
            height: 4,
            columns: vec![vec![]; 5],
        };
        assert_eq!(
            viterbi_trace(&nodes, &TraceParams::default(), Execution::Sequential),
            Err(TraceError::EmptyTrace)
        );
    }

    #[test]
    fn disconnected_blocks_leave_gaps() {
        let nodes = ColumnNodes {
            height: 20,
            columns: vec![vec![], vec![10.0], vec![], vec![], vec![18.0], vec![]],
        };
        let t = viterbi_trace(&nodes, &TraceParams::default(), Execution::Sequential).unwrap();
        assert_eq!(t.start, 1);
        assert_eq!(t.y, vec![Some(10.0), None, None, Some(18.0)]);
        let filled = fill_gaps(&t, 0..6);
        let expected = [10.0, 10.0, 10.0 + 8.0 / 3.0, 10.0 + 16.0 / 3.0, 18.0, 18.0];
        for (v, e) in filled.values().unwrap().iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(filled.gaps_filled.len(), 3);
    }

    #[test]
    fn fill_interior_gap_linearly() {
        let t = PixelTrace {
            start: 0,
            y: vec![Some(10.0), None, None, None, Some(18.0)],
            gaps_filled: vec![],
        };
        let f = fill_gaps(&t, 0..5);
        assert_eq!(f.values().unwrap(), vec![10.0, 12.0, 14.0, 16.0, 18.0]);
        assert_eq!(f.gaps_filled, vec![ColumnSpan { start: 1, end: 4 }]);
    }

    #[test]
    fn fill_without_gaps_is_identity() {
        let t = PixelTrace {
            start: 0,
            y: vec![Some(1.0), Some(2.0)],
            gaps_filled: vec![],
        };
        assert_eq!(fill_gaps(&t, 0..2), t);
    }

    #[test]
    fn trailing_gap_extends_constant() {
        let t = PixelTrace {
            start: 0,
            y: vec![Some(3.0), Some(7.0)],
            gaps_filled: vec![],
        };
        let f = fill_gaps(&t, 0..5);
        assert_eq!(f.values().unwrap(), vec![3.0, 7.0, 7.0, 7.0, 7.0]);
        assert_eq!(f.gaps_filled, vec![ColumnSpan { start: 2, end: 5 }]);
    }
}
