//! Control and reference lattices, vertex selection, resolution rescaling and
//! vertex dragging.

use serde::{Deserialize, Serialize};

use crate::{Error, Point2, Result};

/// A `rows x cols` lattice of points stored row-major.
///
/// Used both for the control points placed on a distorted image and for
/// materialized reference lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    rows: usize,
    cols: usize,
    points: Vec<Point2>,
}

impl ControlGrid {
    pub fn new(rows: usize, cols: usize, points: Vec<Point2>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::GridTooSmall { rows, cols });
        }
        let expected = rows * cols;
        if points.len() != expected {
            return Err(Error::PointCount {
                rows,
                cols,
                expected,
                actual: points.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, points })
    }

    /// Builds a grid by evaluating `f(row, col)` at every lattice index.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Point2) -> Result<Self> {
        let mut points = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                points.push(f(r, c));
            }
        }
        Self::new(rows, cols, points)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn get(&self, row: usize, col: usize) -> Point2 {
        self.points[row * self.cols + col]
    }

    pub fn check_index(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Applies `f` to every point, keeping the lattice shape.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<Self> {
        Self::new(self.rows, self.cols, self.points.iter().map(|&p| f(p)).collect())
    }

    pub fn same_shape(&self, other: &ControlGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len() as f64;
        let sum = self.points.iter().fold(Point2::default(), |acc, &p| acc + p);
        sum * (1.0 / n)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

/// A regular lattice: node `(r, c)` sits at `origin + (c * h_interval, r * v_interval)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub v_interval: f64,
    pub h_interval: f64,
    pub origin: Point2,
    pub rows: usize,
    pub cols: usize,
}

impl ReferenceSpec {
    pub fn new(v_interval: f64, h_interval: f64, origin: Point2, rows: usize, cols: usize) -> Result<Self> {
        let spec = Self {
            v_interval,
            h_interval,
            origin,
            rows,
            cols,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::GridTooSmall {
                rows: self.rows,
                cols: self.cols,
            });
        }
        if !(self.v_interval.is_finite() && self.v_interval > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "vertical interval must be positive, got {}",
                self.v_interval
            )));
        }
        if !(self.h_interval.is_finite() && self.h_interval > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "horizontal interval must be positive, got {}",
                self.h_interval
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidSpec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn node(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.h_interval,
            self.origin.y + row as f64 * self.v_interval,
        )
    }

    /// Lattice extent `(width, height)` in pixels.
    pub fn span(&self) -> (f64, f64) {
        (
            (self.cols - 1) as f64 * self.h_interval,
            (self.rows - 1) as f64 * self.v_interval,
        )
    }

    /// The rectified image size implied by the lattice span, rounded to whole pixels.
    pub fn output_size(&self) -> (u32, u32) {
        let (w, h) = self.span();
        ((w.round() as u32).max(1), (h.round() as u32).max(1))
    }

    /// Same lattice with the origin moved to `(0, 0)`.
    pub fn at_origin(&self) -> Self {
        Self {
            origin: Point2::default(),
            ..*self
        }
    }

    /// Scales intervals and origin componentwise.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            v_interval: self.v_interval * sy,
            h_interval: self.h_interval * sx,
            origin: Point2::new(self.origin.x * sx, self.origin.y * sy),
            ..*self
        }
    }

    /// Keeps every `row_step`-th row and `col_step`-th column of the lattice.
    pub fn subsample(&self, row_step: usize, col_step: usize) -> Result<Self> {
        check_step(self.rows, row_step)?;
        check_step(self.cols, col_step)?;
        Ok(Self {
            v_interval: self.v_interval * row_step as f64,
            h_interval: self.h_interval * col_step as f64,
            origin: self.origin,
            rows: (self.rows - 1) / row_step + 1,
            cols: (self.cols - 1) / col_step + 1,
        })
    }
}

/// Materializes the reference lattice described by `spec`.
pub fn build_reference_grid(spec: &ReferenceSpec) -> Result<ControlGrid> {
    spec.validate()?;
    ControlGrid::from_fn(spec.rows, spec.cols, |r, c| spec.node(r, c))
}

/// Steps that select a sub-lattice including both boundaries of a side with
/// `side` vertices: the divisors of `side - 1`.
pub fn valid_steps(side: usize) -> Vec<usize> {
    if side < 2 {
        return Vec::new();
    }
    let n = side - 1;
    (1..=n).filter(|s| n % s == 0).collect()
}

/// Steps valid for both sides of a `rows x cols` lattice.
pub fn common_valid_steps(rows: usize, cols: usize) -> Vec<usize> {
    let cols_ok = valid_steps(cols);
    valid_steps(rows).into_iter().filter(|s| cols_ok.contains(s)).collect()
}

fn check_step(side: usize, step: usize) -> Result<()> {
    if step == 0 || (side - 1) % step != 0 {
        return Err(Error::InvalidStep {
            step,
            side,
            valid: valid_steps(side),
        });
    }
    Ok(())
}

/// Keeps every `step`-th row and column, boundaries included.
pub fn subsample_grid(grid: &ControlGrid, step: usize) -> Result<ControlGrid> {
    subsample_grid_rc(grid, step, step)
}

/// Like [`subsample_grid`] with independent row and column steps.
pub fn subsample_grid_rc(grid: &ControlGrid, row_step: usize, col_step: usize) -> Result<ControlGrid> {
    check_step(grid.rows, row_step)?;
    check_step(grid.cols, col_step)?;
    let rows = (grid.rows - 1) / row_step + 1;
    let cols = (grid.cols - 1) / col_step + 1;
    ControlGrid::from_fn(rows, cols, |r, c| grid.get(r * row_step, c * col_step))
}

/// Perimeter of a lattice, walked clockwise from the top-left vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    /// Lattice index `(row, col)` of each perimeter vertex.
    pub indices: Vec<(usize, usize)>,
    pub points: Vec<Point2>,
}

impl Boundary {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ring adjacency: vertex `i` connects to `(i + 1) % len`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.points.len();
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    }
}

pub fn boundary_only(grid: &ControlGrid) -> Boundary {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut indices = Vec::with_capacity(2 * rows + 2 * cols - 4);
    indices.extend((0..cols).map(|c| (0, c)));
    indices.extend((1..rows).map(|r| (r, cols - 1)));
    indices.extend((0..cols - 1).rev().map(|c| (rows - 1, c)));
    indices.extend((1..rows - 1).rev().map(|r| (r, 0)));
    let points = indices.iter().map(|&(r, c)| grid.get(r, c)).collect();
    Boundary { indices, points }
}

/// Moves control points from an image of `old_res` to one of `new_res`,
/// scaling x by the width ratio and y by the height ratio.
pub fn rescale_points(grid: &ControlGrid, old_res: (u32, u32), new_res: (u32, u32)) -> Result<ControlGrid> {
    for (w, h) in [old_res, new_res] {
        if w == 0 || h == 0 {
            return Err(Error::InvalidResolution {
                width: w as f64,
                height: h as f64,
            });
        }
    }
    let sx = new_res.0 as f64 / old_res.0 as f64;
    let sy = new_res.1 as f64 / old_res.1 as f64;
    grid.map_points(|p| Point2::new(p.x * sx, p.y * sy))
}

/// Drags vertex `index` to `new_pos`, pulling lattice neighbours along.
///
/// A neighbour at Chebyshev lattice distance `d <= falloff_radius` moves by
/// `delta * exp(-d^2 / (2 (falloff_radius / 2)^2))`.
pub fn propagate_drag(
    grid: &ControlGrid,
    index: (usize, usize),
    new_pos: Point2,
    falloff_radius: f64,
) -> Result<ControlGrid> {
    let (row, col) = index;
    grid.check_index(row, col)?;
    if !(falloff_radius.is_finite() && falloff_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "falloff radius must be >= 0, got {falloff_radius}"
        )));
    }
    if !new_pos.is_finite() {
        return Err(Error::NonFinite(row * grid.cols + col));
    }
    let delta = new_pos - grid.get(row, col);
    let sigma = falloff_radius / 2.0;
    let mut points = grid.points.clone();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let d = r.abs_diff(row).max(c.abs_diff(col));
            if d == 0 || d as f64 > falloff_radius {
                continue;
            }
            let d = d as f64;
            let weight = (-d * d / (2.0 * sigma * sigma)).exp();
            points[r * grid.cols + c] = points[r * grid.cols + c] + delta * weight;
        }
    }
    points[row * grid.cols + col] = new_pos;
    ControlGrid::new(grid.rows, grid.cols, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice(rows: usize, cols: usize, spacing: f64) -> ControlGrid {
        build_reference_grid(&ReferenceSpec::new(spacing, spacing, Point2::default(), rows, cols).unwrap()).unwrap()
    }

    #[test]
    fn reference_grid_2x2() {
        let spec = ReferenceSpec::new(10.0, 10.0, Point2::default(), 2, 2).unwrap();
        let g = build_reference_grid(&spec).unwrap();
        let expected = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        for (p, (x, y)) in g.points().iter().zip(expected) {
            assert_eq!(*p, Point2::new(x, y));
        }
    }

    #[test]
    fn reference_grid_rejects_single_row() {
        let err = ReferenceSpec::new(1.0, 1.0, Point2::new(5.0, 5.0), 1, 1).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { rows: 1, cols: 1 }));
    }

    #[test]
    fn reference_grid_31_spans_960_in_992_canvas() {
        let spec = ReferenceSpec::new(32.0, 32.0, Point2::new(16.0, 16.0), 31, 31).unwrap();
        let g = build_reference_grid(&spec).unwrap();
        assert_eq!(spec.span(), (960.0, 960.0));
        let (lo, hi) = g.bounds();
        assert_eq!((lo.x, lo.y, hi.x, hi.y), (16.0, 16.0, 976.0, 976.0));
        assert!(hi.x < 992.0 && hi.y < 992.0);
    }

    #[test]
    fn rejects_bad_intervals() {
        assert!(matches!(
            ReferenceSpec::new(0.0, 1.0, Point2::default(), 2, 2),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            ReferenceSpec::new(1.0, -3.0, Point2::default(), 2, 2),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn grid_rejects_nan_and_bad_length() {
        let mut pts = lattice(2, 2, 1.0).into_points();
        pts[3].y = f64::NAN;
        assert!(matches!(ControlGrid::new(2, 2, pts.clone()), Err(Error::NonFinite(3))));
        pts.pop();
        assert!(matches!(ControlGrid::new(2, 2, pts), Err(Error::PointCount { .. })));
    }

    #[test]
    fn step_tables() {
        assert_eq!(valid_steps(31), vec![1, 2, 3, 5, 6, 10, 15, 30]);
        assert_eq!(valid_steps(61), vec![1, 2, 3, 4, 5, 6, 10, 12, 15, 20, 30, 60]);
        let g = lattice(61, 61, 1.0);
        let counts: Vec<usize> = valid_steps(61)
            .into_iter()
            .map(|s| subsample_grid(&g, s).unwrap().rows())
            .collect();
        assert_eq!(counts, vec![61, 31, 21, 16, 13, 11, 7, 6, 5, 4, 3, 2]);
    }

    #[test]
    fn subsample_examples() {
        let g61 = lattice(61, 61, 1.0);
        let g = subsample_grid(&g61, 2).unwrap();
        assert_eq!((g.rows(), g.cols()), (31, 31));
        let g2 = subsample_grid(&g, 30).unwrap();
        assert_eq!((g2.rows(), g2.cols()), (2, 2));
        assert_eq!(g2.get(1, 1), g61.get(60, 60));
        assert_eq!(subsample_grid(&g, 1).unwrap(), g);
    }

    #[test]
    fn subsample_rejects_non_divisor() {
        let g = lattice(31, 31, 1.0);
        match subsample_grid(&g, 7).unwrap_err() {
            Error::InvalidStep { step, valid, .. } => {
                assert_eq!(step, 7);
                assert_eq!(valid, vec![1, 2, 3, 5, 6, 10, 15, 30]);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(subsample_grid(&g, 0).is_err());
    }

    #[test]
    fn independent_steps() {
        let g = lattice(31, 31, 1.0);
        let s = subsample_grid_rc(&g, 3, 2).unwrap();
        assert_eq!((s.rows(), s.cols()), (11, 16));
        let spec = ReferenceSpec::new(1.0, 1.0, Point2::default(), 31, 31).unwrap();
        let sub = spec.subsample(3, 2).unwrap();
        assert_eq!(build_reference_grid(&sub).unwrap(), s);
    }

    #[test]
    fn boundary_counts() {
        assert_eq!(boundary_only(&lattice(4, 4, 1.0)).len(), 12);
        assert_eq!(boundary_only(&lattice(3, 5, 1.0)).len(), 12);
        let b = boundary_only(&lattice(2, 2, 1.0));
        assert_eq!(b.indices, vec![(0, 0), (0, 1), (1, 1), (1, 0)]);
        assert_eq!(b.edges().last(), Some(&(3, 0)));
    }

    #[test]
    fn boundary_has_no_duplicates_and_no_interior() {
        let b = boundary_only(&lattice(5, 7, 1.0));
        let mut idx = b.indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 2 * 5 + 2 * 7 - 4);
        assert!(idx.iter().all(|&(r, c)| r == 0 || c == 0 || r == 4 || c == 6));
    }

    #[test]
    fn rescale_half() {
        let g = ControlGrid::new(2, 2, vec![Point2::new(496.0, 496.0); 4]).unwrap();
        let s = rescale_points(&g, (992, 992), (496, 496)).unwrap();
        assert_eq!(s.get(0, 0), Point2::new(248.0, 248.0));
        assert_eq!(rescale_points(&g, (992, 992), (992, 992)).unwrap(), g);
        assert!(matches!(
            rescale_points(&g, (0, 992), (496, 496)),
            Err(Error::InvalidResolution { .. })
        ));
    }

    #[test]
    fn drag_radius_zero_moves_one_vertex() {
        let g = lattice(5, 5, 10.0);
        let d = propagate_drag(&g, (2, 2), Point2::new(24.0, 20.0), 0.0).unwrap();
        let moved: Vec<usize> = (0..25).filter(|&i| d.points()[i] != g.points()[i]).collect();
        assert_eq!(moved, vec![12]);
        assert_eq!(d.get(2, 2), Point2::new(24.0, 20.0));
    }

    #[test]
    fn drag_zero_delta_is_identity() {
        let g = lattice(5, 5, 10.0);
        assert_eq!(propagate_drag(&g, (1, 3), g.get(1, 3), 3.0).unwrap(), g);
    }

    #[test]
    fn drag_falloff_kernel() {
        let g = lattice(5, 5, 10.0);
        let d = propagate_drag(&g, (2, 2), Point2::new(24.0, 20.0), 2.0).unwrap();
        // exp(-1 / (2 * 1^2)) * 4
        let expected = 4.0 * (-0.5f64).exp();
        assert!((expected - 2.426_122_638_850_534).abs() < 1e-12);
        assert!((d.get(2, 3).x - 30.0 - expected).abs() < 1e-12);
        assert!((d.get(1, 1).x - 10.0 - expected).abs() < 1e-12);
        // d = 2: exp(-4 / 2) * 4
        assert!((d.get(0, 4).x - 40.0 - 4.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(d.get(2, 3).y, 20.0);
    }

    #[test]
    fn drag_out_of_range() {
        let g = lattice(3, 3, 1.0);
        assert!(matches!(
            propagate_drag(&g, (3, 0), Point2::default(), 1.0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn subsample_composes(a in prop::sample::select(vec![1usize, 2, 3, 4, 5]), b in prop::sample::select(vec![1usize, 2, 3])) {
            let side = a * b * 2 + 1;
            let g = lattice(side, side, 1.5);
            let twice = subsample_grid(&subsample_grid(&g, a).unwrap(), b).unwrap();
            prop_assert_eq!(twice, subsample_grid(&g, a * b).unwrap());
        }

        #[test]
        fn rescale_round_trip(w0 in 1u32..4000, h0 in 1u32..4000, w1 in 1u32..4000, h1 in 1u32..4000,
                              x in -500.0f64..2000.0, y in -500.0f64..2000.0) {
            let g = ControlGrid::new(2, 2, vec![Point2::new(x, y); 4]).unwrap();
            let back = rescale_points(&rescale_points(&g, (w0, h0), (w1, h1)).unwrap(), (w1, h1), (w0, h0)).unwrap();
            for (p, q) in g.points().iter().zip(back.points()) {
                prop_assert!((p.x - q.x).abs() <= 1e-9 * (1.0 + p.x.abs()));
                prop_assert!((p.y - q.y).abs() <= 1e-9 * (1.0 + p.y.abs()));
            }
        }
    }
}
