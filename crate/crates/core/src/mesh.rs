//! Piecewise-bilinear backward map over the reference lattice.

use rayon::prelude::*;

use crate::{BackwardMap, ControlGrid, Error, Point2, ReferenceSpec, Result};

/// Builds a `width x height` backward map whose output pixel `(j, i)` stands for
/// the reference position `origin + (j, i)`.
///
/// Each pixel is located in its reference cell and the cell's four control points
/// are blended with bilinear weights. Pixels beyond the lattice span use the
/// nearest edge cell, extrapolating its bilinear patch.
pub fn bilinear_mesh_map(
    reference: &ReferenceSpec,
    control: &ControlGrid,
    width: u32,
    height: u32,
) -> Result<BackwardMap> {
    reference.validate()?;
    if reference.rows != control.rows() || reference.cols != control.cols() {
        return Err(Error::ShapeMismatch(format!(
            "reference lattice {}x{} vs control grid {}x{}",
            reference.rows,
            reference.cols,
            control.rows(),
            control.cols()
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidResolution {
            width: width as f64,
            height: height as f64,
        });
    }

    let cols: Vec<(usize, f64)> = (0..width)
        .map(|j| locate(j as f64, reference.h_interval, reference.cols))
        .collect();
    let w = width as usize;
    let ncols = control.cols();
    let pts = control.points();
    let mut data = vec![Point2::default(); w * height as usize];
    data.par_chunks_mut(w).enumerate().for_each(|(i, row)| {
        let (r0, fy) = locate(i as f64, reference.v_interval, reference.rows);
        let top = &pts[r0 * ncols..(r0 + 1) * ncols];
        let bottom = &pts[(r0 + 1) * ncols..(r0 + 2) * ncols];
        for (out, &(c0, fx)) in row.iter_mut().zip(&cols) {
            let (p00, p01, p10, p11) = (top[c0], top[c0 + 1], bottom[c0], bottom[c0 + 1]);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            *out = Point2::new(
                w00 * p00.x + w01 * p01.x + w10 * p10.x + w11 * p11.x,
                w00 * p00.y + w01 * p01.y + w10 * p10.y + w11 * p11.y,
            );
        }
    });
    Ok(BackwardMap::from_raw(width, height, data))
}

/// Cell index along one axis and the fractional position inside that cell.
fn locate(offset: f64, interval: f64, nodes: usize) -> (usize, f64) {
    let u = offset / interval;
    let cell = (u.floor().max(0.0) as usize).min(nodes - 2);
    (cell, u - cell as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build_reference_grid;

    #[test]
    fn identity_on_lattice() {
        let spec = ReferenceSpec::new(7.0, 9.0, Point2::default(), 4, 5).unwrap();
        let control = build_reference_grid(&spec).unwrap();
        let map = bilinear_mesh_map(&spec, &control, 36, 21).unwrap();
        for (a, b) in map.data().iter().zip(BackwardMap::identity(36, 21).data()) {
            assert!(a.distance(*b) < 1e-9);
        }
    }

    #[test]
    fn origin_offset_reads_cropped_region() {
        let spec = ReferenceSpec::new(10.0, 10.0, Point2::new(5.0, 3.0), 3, 3).unwrap();
        let control = build_reference_grid(&spec).unwrap();
        let map = bilinear_mesh_map(&spec, &control, 20, 20).unwrap();
        assert_eq!(map.get(0, 0), Point2::new(5.0, 3.0));
        assert!(map.get(12, 7).distance(Point2::new(17.0, 10.0)) < 1e-12);
    }

    #[test]
    fn single_cell_center_blend() {
        let spec = ReferenceSpec::new(10.0, 10.0, Point2::default(), 2, 2).unwrap();
        let control = ControlGrid::new(
            2,
            2,
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 0.0),
                Point2::new(0.0, 10.0),
                Point2::new(20.0, 20.0),
            ],
        )
        .unwrap();
        let map = bilinear_mesh_map(&spec, &control, 11, 11).unwrap();
        let expected = Point2::new(0.25 * (0.0 + 10.0 + 0.0 + 20.0), 0.25 * (0.0 + 0.0 + 10.0 + 20.0));
        assert_eq!(map.get(5, 5), expected);
        assert_eq!(expected, Point2::new(7.5, 7.5));
    }

    #[test]
    fn shape_mismatch() {
        let spec = ReferenceSpec::new(10.0, 10.0, Point2::default(), 3, 3).unwrap();
        let control = build_reference_grid(&ReferenceSpec::new(10.0, 10.0, Point2::default(), 2, 3).unwrap()).unwrap();
        assert!(matches!(bilinear_mesh_map(&spec, &control, 5, 5), Err(Error::ShapeMismatch(_))));
    }
}
