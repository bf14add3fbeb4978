//! Losses for control-point and reference-interval regression.
//!
//! The combined objective is
//!
//! ```text
//! L = L_smoothL1 + alpha * L_c + beta * L_r
//! ```
//!
//! * `L_smoothL1`: smooth-L1 residual per coordinate, summed over the two
//!   coordinates of each point and averaged over the points.
//! * `L_c`: mean squared difference of *differential coordinates* (the sum of
//!   offsets from a vertex to its lattice neighbours), which ties each vertex to
//!   the shape of its neighbourhood rather than its absolute position.
//! * `L_r`: mean absolute error of the two reference intervals.
//!
//! Every term has an analytic gradient with respect to the predicted points and
//! intervals; see [`total_loss_gradient`].

use cpdewarp_core::{ControlGrid, Error, Point2, Result};
use serde::{Deserialize, Serialize};

/// A predicted or ground-truth lattice of control points.
pub type PointSet = ControlGrid;

/// Vertical and horizontal spacing of the reference lattice.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalPair {
    pub v: f64,
    pub h: f64,
}

impl IntervalPair {
    pub const fn new(v: f64, h: f64) -> Self {
        Self { v, h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.01 }
    }
}

/// How far along each lattice direction the differential coordinates reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorrelationRadius {
    /// One neighbour per direction (5 vertices with the center).
    Adjacent,
    /// Four neighbours per direction (17 vertices with the center).
    #[default]
    Wide,
}

impl CorrelationRadius {
    pub fn reach(self) -> usize {
        match self {
            CorrelationRadius::Adjacent => 1,
            CorrelationRadius::Wide => 4,
        }
    }

    pub fn from_reach(reach: usize) -> Option<Self> {
        match reach {
            1 => Some(CorrelationRadius::Adjacent),
            4 => Some(CorrelationRadius::Wide),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    /// Up and down neighbours.
    Vertical,
    /// Left and right neighbours.
    Horizontal,
    /// Both axes; the form used by [`correlation_loss`].
    Full,
}

fn check_shapes(pred: &PointSet, gt: &PointSet) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    Ok(())
}

fn smooth_l1_scalar(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

// Derivative of the smooth-L1 term; at |d| = 1 both branches give sign(d).
fn smooth_l1_slope(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

pub fn smooth_l1(pred: &PointSet, gt: &PointSet) -> Result<f64> {
    check_shapes(pred, gt)?;
    let sum: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| smooth_l1_scalar(g.x - p.x) + smooth_l1_scalar(g.y - p.y))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Lattice neighbours of `(row, col)` within `reach` steps along the chosen axes.
/// Neighbours past the lattice boundary are omitted.
fn neighbours(rows: usize, cols: usize, row: usize, col: usize, mode: DeltaMode, reach: usize) -> impl Iterator<Item = (usize, usize)> {
    let vertical = matches!(mode, DeltaMode::Vertical | DeltaMode::Full);
    let horizontal = matches!(mode, DeltaMode::Horizontal | DeltaMode::Full);
    let up = if vertical { row.min(reach) } else { 0 };
    let down = if vertical { (rows - 1 - row).min(reach) } else { 0 };
    let left = if horizontal { col.min(reach) } else { 0 };
    let right = if horizontal { (cols - 1 - col).min(reach) } else { 0 };
    (1..=up)
        .map(move |k| (row - k, col))
        .chain((1..=down).map(move |k| (row + k, col)))
        .chain((1..=left).map(move |k| (row, col - k)))
        .chain((1..=right).map(move |k| (row, col + k)))
}

fn delta_at(grid: &PointSet, row: usize, col: usize, mode: DeltaMode, reach: usize) -> Point2 {
    let center = grid.get(row, col);
    neighbours(grid.rows(), grid.cols(), row, col, mode, reach)
        .fold(Point2::default(), |acc, (r, c)| acc + (grid.get(r, c) - center))
}

/// Sum of offsets from vertex `index` to its lattice neighbours.
pub fn differential_coords(
    grid: &PointSet,
    index: (usize, usize),
    mode: DeltaMode,
    radius: CorrelationRadius,
) -> Result<Point2> {
    grid.check_index(index.0, index.1)?;
    Ok(delta_at(grid, index.0, index.1, mode, radius.reach()))
}

fn all_deltas(grid: &PointSet, reach: usize) -> Vec<Point2> {
    let mut out = Vec::with_capacity(grid.len());
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            out.push(delta_at(grid, r, c, DeltaMode::Full, reach));
        }
    }
    out
}

/// Per-vertex `delta_pred - delta_gt`.
fn delta_residuals(pred: &PointSet, gt: &PointSet, reach: usize) -> Vec<Point2> {
    all_deltas(pred, reach)
        .into_iter()
        .zip(all_deltas(gt, reach))
        .map(|(p, g)| p - g)
        .collect()
}

pub fn correlation_loss(pred: &PointSet, gt: &PointSet, radius: CorrelationRadius) -> Result<f64> {
    check_shapes(pred, gt)?;
    let sum: f64 = delta_residuals(pred, gt, radius.reach())
        .iter()
        .map(|e| e.dot(*e))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn interval_loss(pred: IntervalPair, gt: IntervalPair) -> f64 {
    ((gt.v - pred.v).abs() + (gt.h - pred.h).abs()) / 2.0
}

/// Individual terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub smooth_l1: f64,
    pub l_c: f64,
    pub l_r: f64,
    pub total: f64,
}

pub fn loss_breakdown(
    pred_pts: &PointSet,
    gt_pts: &PointSet,
    pred_int: IntervalPair,
    gt_int: IntervalPair,
    weights: LossWeights,
    radius: CorrelationRadius,
) -> Result<LossBreakdown> {
    let smooth = smooth_l1(pred_pts, gt_pts)?;
    let l_c = correlation_loss(pred_pts, gt_pts, radius)?;
    let l_r = interval_loss(pred_int, gt_int);
    Ok(LossBreakdown {
        smooth_l1: smooth,
        l_c,
        l_r,
        total: combine(smooth, l_c, l_r, weights),
    })
}

fn combine(smooth: f64, l_c: f64, l_r: f64, weights: LossWeights) -> f64 {
    smooth + weights.alpha * l_c + weights.beta * l_r
}

pub fn total_loss(
    pred_pts: &PointSet,
    gt_pts: &PointSet,
    pred_int: IntervalPair,
    gt_int: IntervalPair,
    weights: LossWeights,
    radius: CorrelationRadius,
) -> Result<f64> {
    Ok(loss_breakdown(pred_pts, gt_pts, pred_int, gt_int, weights, radius)?.total)
}

/// Partial derivatives of the total loss with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    /// `dL/dx, dL/dy` for every predicted point, row-major.
    pub points: Vec<Point2>,
    pub intervals: IntervalPair,
}

pub fn total_loss_gradient(
    pred_pts: &PointSet,
    gt_pts: &PointSet,
    pred_int: IntervalPair,
    gt_int: IntervalPair,
    weights: LossWeights,
    radius: CorrelationRadius,
) -> Result<LossGradient> {
    check_shapes(pred_pts, gt_pts)?;
    let n = pred_pts.len() as f64;
    let reach = radius.reach();
    let (rows, cols) = (pred_pts.rows(), pred_pts.cols());

    let mut points: Vec<Point2> = pred_pts
        .points()
        .iter()
        .zip(gt_pts.points())
        .map(|(p, g)| Point2::new(smooth_l1_slope(p.x - g.x), smooth_l1_slope(p.y - g.y)) * (1.0 / n))
        .collect();

    if weights.alpha != 0.0 {
        // delta_i = sum_{j in N(i)} p_j - |N(i)| p_i, and j in N(i) iff i in N(j), so
        // dL_c/dp_m = 2/N * (sum_{i in N(m)} e_i - |N(m)| e_m).
        let residuals = delta_residuals(pred_pts, gt_pts, reach);
        let scale = weights.alpha * 2.0 / n;
        for r in 0..rows {
            for c in 0..cols {
                let m = r * cols + c;
                let mut acc = Point2::default();
                let mut count = 0.0;
                for (nr, nc) in neighbours(rows, cols, r, c, DeltaMode::Full, reach) {
                    acc = acc + residuals[nr * cols + nc];
                    count += 1.0;
                }
                let g = (acc - residuals[m] * count) * scale;
                points[m] = points[m] + g;
            }
        }
    }

    let intervals = IntervalPair::new(
        weights.beta * 0.5 * sign_or_zero(pred_int.v - gt_int.v),
        weights.beta * 0.5 * sign_or_zero(pred_int.h - gt_int.h),
    );
    Ok(LossGradient { points, intervals })
}

fn sign_or_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}
