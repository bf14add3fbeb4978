//! The full rectification pipeline: vertex selection, sparse-to-dense
//! interpolation and remapping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{
    bilinear_mesh_map, boundary_only, build_reference_grid, remap, subsample_grid_rc, BackwardMap, ControlGrid,
    Error, ImageBuffer, ReferenceSpec, Result, TpsModel, WHITE,
};

/// Sparse-to-dense interpolation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tps,
    #[default]
    Linear,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Tps => "tps",
            Method::Linear => "linear",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tps" => Ok(Method::Tps),
            "linear" | "bilinear" => Ok(Method::Linear),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}, expected tps or linear"))),
        }
    }
}

/// Vertex selection steps along rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Steps {
    pub rows: usize,
    pub cols: usize,
}

impl Steps {
    pub const fn uniform(step: usize) -> Self {
        Self { rows: step, cols: step }
    }
}

impl Default for Steps {
    fn default() -> Self {
        Self::uniform(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DewarpOptions {
    pub method: Method,
    pub steps: Steps,
    /// Rectified size; defaults to the reference lattice span.
    pub out_size: Option<(u32, u32)>,
    pub fill: [u8; 3],
    /// Thin-plate smoothing; 0 interpolates exactly.
    pub regularization: f64,
    /// Fit the spline to the lattice perimeter only (TPS method).
    pub boundary_only: bool,
}

impl Default for DewarpOptions {
    fn default() -> Self {
        Self {
            method: Method::default(),
            steps: Steps::default(),
            out_size: None,
            fill: WHITE,
            regularization: 0.0,
            boundary_only: false,
        }
    }
}

impl DewarpOptions {
    pub fn new(method: Method, step: usize) -> Self {
        Self {
            method,
            steps: Steps::uniform(step),
            ..Self::default()
        }
    }
}

/// Wall-clock breakdown in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fit_ms: f64,
    pub eval_ms: f64,
    pub remap_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Dewarped {
    pub image: ImageBuffer,
    pub map: BackwardMap,
    pub timings: Timings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Builds the dense backward map for `control` against `reference`.
///
/// Output pixel `(j, i)` corresponds to the reference position `origin + (j, i)`,
/// scaled when `out_size` differs from the lattice span.
pub fn backward_map(
    control: &ControlGrid,
    reference: &ReferenceSpec,
    opts: &DewarpOptions,
) -> Result<(BackwardMap, Timings)> {
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
    let span_size = reference.output_size();
    let (width, height) = opts.out_size.unwrap_or(span_size);
    if width == 0 || height == 0 {
        return Err(Error::InvalidResolution {
            width: width as f64,
            height: height as f64,
        });
    }
    let lattice = reference.at_origin().scaled(
        width as f64 / span_size.0 as f64,
        height as f64 / span_size.1 as f64,
    );
    let lattice = lattice.subsample(opts.steps.rows, opts.steps.cols)?;
    let control = subsample_grid_rc(control, opts.steps.rows, opts.steps.cols)?;

    let mut timings = Timings::default();
    let map = match opts.method {
        Method::Linear => {
            if opts.boundary_only {
                return Err(Error::InvalidArgument(
                    "boundary-only selection needs the tps method".into(),
                ));
            }
            let t = Instant::now();
            let map = bilinear_mesh_map(&lattice, &control, width, height)?;
            timings.eval_ms = ms_since(t);
            map
        }
        Method::Tps => {
            let t = Instant::now();
            let sites = build_reference_grid(&lattice)?;
            let (sites, targets) = if opts.boundary_only {
                (boundary_only(&sites).points, boundary_only(&control).points)
            } else {
                (sites.into_points(), control.into_points())
            };
            let model = TpsModel::fit(&sites, &targets, opts.regularization)?;
            timings.fit_ms = ms_since(t);
            let t = Instant::now();
            let map = model.dense_map(width, height)?;
            timings.eval_ms = ms_since(t);
            map
        }
    };
    timings.total_ms = timings.fit_ms + timings.eval_ms;
    Ok((map, timings))
}

/// Rectifies `image` given its control points and reference lattice.
pub fn dewarp(
    image: &ImageBuffer,
    control: &ControlGrid,
    reference: &ReferenceSpec,
    opts: &DewarpOptions,
) -> Result<Dewarped> {
    let start = Instant::now();
    let (map, mut timings) = backward_map(control, reference, opts)?;
    let t = Instant::now();
    let image = remap(image, &map, opts.fill);
    timings.remap_ms = ms_since(t);
    timings.total_ms = ms_since(start);
    Ok(Dewarped { image, map, timings })
}
