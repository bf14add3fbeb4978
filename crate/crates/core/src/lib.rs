//! Geometry for control-point document dewarping.
//!
//! A distorted page is described by a sparse lattice of *control points* placed on
//! the distorted image, paired one-to-one with a regular lattice of *reference
//! points* describing the flat page. Interpolating between the two lattices
//! (thin-plate spline or piecewise bilinear) yields a dense backward map, and
//! remapping the distorted image through that map produces the rectified page.
//!
//! ```text
//! control grid ──┐
//!                ├─ subsample ─ (TPS fit + evaluate | bilinear mesh) ─ BackwardMap ─ remap ─ rectified
//! reference spec ┘
//! ```
//!
//! Coordinates are pixels with `x` = column and `y` = row, origin top-left, and pixel
//! centers at integer positions.

pub mod annotation;
pub mod dewarp;
mod error;
pub mod grid;
pub mod image;
pub mod map;
pub mod mesh;
mod point;
pub mod remap;
pub mod tps;

pub use annotation::{AnnotationRecord, GridShape, Provenance, ReferenceRecord};
pub use dewarp::{backward_map, dewarp, Dewarped, DewarpOptions, Method, Steps, Timings};
pub use error::{Error, Result};
pub use grid::{
    boundary_only, build_reference_grid, common_valid_steps, propagate_drag, rescale_points, subsample_grid,
    subsample_grid_rc, valid_steps, Boundary, ControlGrid, ReferenceSpec,
};
pub use image::ImageBuffer;
pub use map::BackwardMap;
pub use mesh::bilinear_mesh_map;
pub use point::Point2;
pub use remap::{remap, sample_bilinear, WHITE};
pub use tps::TpsModel;
