//! Grid perturbations and the analytic forward warp built from them.

use cpdewarp_core::{ControlGrid, ImageBuffer, Point2, ReferenceSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::DistortionConfig;
use crate::{Result, SynthError};

/// Evenly spaced lattice with corners on the scan corners, and its reference spec.
pub fn make_base_grid(scan_w: u32, scan_h: u32, rows: usize, cols: usize) -> Result<(ControlGrid, ReferenceSpec)> {
    if scan_w == 0 || scan_h == 0 {
        return Err(SynthError::Config(format!("scan size {scan_w}x{scan_h} is empty")));
    }
    if rows < 2 || cols < 2 {
        return Err(cpdewarp_core::Error::GridTooSmall { rows, cols }.into());
    }
    let spec = ReferenceSpec::new(
        scan_h as f64 / (rows - 1) as f64,
        scan_w as f64 / (cols - 1) as f64,
        Point2::default(),
        rows,
        cols,
    )?;
    Ok((cpdewarp_core::build_reference_grid(&spec)?, spec))
}

/// One displacement field applied to every point of the page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Perturbation {
    /// Moves `p` by `direction * strength * alpha / (d + alpha)`.
    Fold {
        center: Point2,
        direction: Point2,
        strength: f64,
        alpha: f64,
    },
    /// Moves `p` by `direction * strength * (1 - min(d / d_max, 1)^exponent)`.
    Curve {
        center: Point2,
        direction: Point2,
        strength: f64,
        exponent: f64,
        d_max: f64,
    },
}

impl Perturbation {
    /// `d` is the distance from `p` to the line through `center` orthogonal to `direction`.
    pub fn displacement(&self, p: Point2) -> Point2 {
        match *self {
            Perturbation::Fold {
                center,
                direction,
                strength,
                alpha,
            } => {
                let d = (p - center).dot(direction).abs();
                direction * (strength * alpha / (d + alpha))
            }
            Perturbation::Curve {
                center,
                direction,
                strength,
                exponent,
                d_max,
            } => {
                let d = (p - center).dot(direction).abs();
                let u = if d_max > 0.0 { (d / d_max).min(1.0) } else { 0.0 };
                direction * (strength * (1.0 - u.powf(exponent)))
            }
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        p + self.displacement(p)
    }

    pub fn strength(&self) -> f64 {
        match *self {
            Perturbation::Fold { strength, .. } | Perturbation::Curve { strength, .. } => strength,
        }
    }
}

fn unit(direction: Point2) -> Result<Point2> {
    let n = direction.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(SynthError::Config("direction must be a non-zero vector".into()));
    }
    Ok(direction * (1.0 / n))
}

pub fn perturb_fold(grid: &ControlGrid, center: Point2, direction: Point2, strength: f64, alpha: f64) -> Result<ControlGrid> {
    if !(alpha > 0.0) {
        return Err(SynthError::Config(format!("fold alpha must be positive, got {alpha}")));
    }
    let fold = Perturbation::Fold {
        center,
        direction: unit(direction)?,
        strength,
        alpha,
    };
    Ok(grid.map_points(|p| fold.apply(p))?)
}

/// Curve whose `d_max` is the largest `d` over `grid`, so the farthest vertex stays fixed.
pub fn curve_for(grid: &ControlGrid, center: Point2, direction: Point2, strength: f64, exponent: f64) -> Result<Perturbation> {
    if !(exponent > 0.0) {
        return Err(SynthError::Config(format!("curve exponent must be positive, got {exponent}")));
    }
    let direction = unit(direction)?;
    let d_max = grid
        .points()
        .iter()
        .map(|&p| (p - center).dot(direction).abs())
        .fold(0.0, f64::max);
    Ok(Perturbation::Curve {
        center,
        direction,
        strength,
        exponent,
        d_max,
    })
}

pub fn perturb_curve(grid: &ControlGrid, center: Point2, direction: Point2, strength: f64, exponent: f64) -> Result<ControlGrid> {
    let curve = curve_for(grid, center, direction, strength, exponent)?;
    Ok(grid.map_points(|p| curve.apply(p))?)
}

/// Rotation (degrees, clockwise on screen) and uniform scale about `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub center: Point2,
    pub rotation_deg: f64,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let d = p - self.center;
        self.center + Point2::new(c * d.x - s * d.y, s * d.x + c * d.y) * self.scale
    }
}

/// Rotation and scale about the grid centroid followed by a translation.
pub fn apply_affine(grid: &ControlGrid, rotation_deg: f64, scale: f64, translation: Point2) -> Result<ControlGrid> {
    if !(scale > 0.0) {
        return Err(SynthError::Config(format!("scale must be positive, got {scale}")));
    }
    let sim = Similarity {
        center: grid.centroid(),
        rotation_deg,
        scale,
    };
    Ok(grid.map_points(|p| sim.apply(p) + translation)?)
}

/// Maps scan coordinates onto the output canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warp {
    pub scan_size: (u32, u32),
    pub canvas: (u32, u32),
    pub perturbations: Vec<Perturbation>,
    pub similarity: Similarity,
    pub canvas_scale: f64,
    pub canvas_offset: Point2,
}

impl Warp {
    /// Pure scale-and-center placement of the scan on the canvas, matching
    /// [`Warp::reference_spec`].
    pub fn flat(scan_size: (u32, u32), canvas: (u32, u32), margin: f64) -> Self {
        let (sw, sh) = (scan_size.0 as f64, scan_size.1 as f64);
        let scale = fit_scale(sw, sh, canvas, margin);
        Self {
            scan_size,
            canvas,
            perturbations: Vec::new(),
            similarity: Similarity {
                center: Point2::default(),
                rotation_deg: 0.0,
                scale: 1.0,
            },
            canvas_scale: scale,
            canvas_offset: Point2::new(canvas.0 as f64 - sw * scale, canvas.1 as f64 - sh * scale) * 0.5,
        }
    }

    /// Draws a random warp for a scan of `scan_size` under `cfg`.
    pub fn sample(
        scan_size: (u32, u32),
        canvas: (u32, u32),
        rows: usize,
        cols: usize,
        cfg: &DistortionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (base, _) = make_base_grid(scan_size.0, scan_size.1, rows, cols)?;
        let (sw, sh) = (scan_size.0 as f64, scan_size.1 as f64);
        // canvas pixels per scan pixel before any distortion
        let unit_scale = fit_scale(sw, sh, canvas, cfg.margin);

        let mut kinds: Vec<bool> = std::iter::repeat_n(true, cfg.folds.sample(rng))
            .chain(std::iter::repeat_n(false, cfg.curves.sample(rng)))
            .collect();
        kinds.shuffle(rng);

        let mut grid = base;
        let mut perturbations = Vec::with_capacity(kinds.len());
        for is_fold in kinds {
            let center = Point2::new(rng.random_range(0.1..0.9) * sw, rng.random_range(0.1..0.9) * sh);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let direction = Point2::new(angle.cos(), angle.sin());
            let p = if is_fold {
                let strength = cfg.fold_strength.sample(rng);
                let alpha = cfg.fold_alpha.sample(rng).max(1.5 * strength);
                Perturbation::Fold {
                    center,
                    direction,
                    strength: strength / unit_scale,
                    alpha: alpha / unit_scale,
                }
            } else {
                let strength = cfg.curve_strength.sample(rng) / unit_scale;
                let exponent = cfg.curve_exponent.sample(rng);
                curve_for(&grid, center, direction, strength, exponent)?
            };
            grid = grid.map_points(|q| p.apply(q))?;
            perturbations.push(p);
        }

        let similarity = Similarity {
            center: grid.centroid(),
            rotation_deg: cfg.rotation_deg.sample(rng),
            scale: cfg.scale.sample(rng),
        };
        let (lo, hi) = grid.bounds();
        let mut canvas_scale = fit_scale(hi.x - lo.x, hi.y - lo.y, canvas, cfg.margin);

        let turned = grid.map_points(|q| similarity.apply(q))?;
        let (lo, hi) = turned.bounds();
        let (avail_w, avail_h) = ((canvas.0 - 1) as f64, (canvas.1 - 1) as f64);
        let size = (hi - lo) * canvas_scale;
        let shrink = (avail_w / size.x).min(avail_h / size.y).min(1.0);
        canvas_scale *= shrink;
        let size = size * shrink;
        let mut canvas_offset = center_offset(size, lo * canvas_scale, canvas);
        let tx = cfg.translation_px.sample(rng);
        let ty = cfg.translation_px.sample(rng);
        let slack = Point2::new((avail_w - size.x).max(0.0) / 2.0, (avail_h - size.y).max(0.0) / 2.0);
        canvas_offset = canvas_offset + Point2::new(tx.clamp(-slack.x, slack.x), ty.clamp(-slack.y, slack.y));

        Ok(Self {
            scan_size,
            canvas,
            perturbations,
            similarity,
            canvas_scale,
            canvas_offset,
        })
    }

    /// Scan position to canvas position.
    pub fn apply(&self, p: Point2) -> Point2 {
        let q = self.perturbations.iter().fold(p, |q, pert| pert.apply(q));
        self.similarity.apply(q) * self.canvas_scale + self.canvas_offset
    }

    /// Canvas pixels per scan pixel of the rectified reference.
    pub fn reference_scale(&self) -> f64 {
        self.canvas_scale * self.similarity.scale
    }

    /// Reference lattice for a `rows x cols` grid: the scan scaled by
    /// [`Warp::reference_scale`] and centered on the canvas.
    pub fn reference_spec(&self, rows: usize, cols: usize) -> Result<ReferenceSpec> {
        let k = self.reference_scale();
        let (sw, sh) = (self.scan_size.0 as f64 * k, self.scan_size.1 as f64 * k);
        let origin = Point2::new((self.canvas.0 as f64 - sw) / 2.0, (self.canvas.1 as f64 - sh) / 2.0);
        Ok(ReferenceSpec::new(sh / (rows - 1) as f64, sw / (cols - 1) as f64, origin, rows, cols)?)
    }
}

fn fit_scale(w: f64, h: f64, canvas: (u32, u32), margin: f64) -> f64 {
    let avail = 1.0 - 2.0 * margin;
    (canvas.0 as f64 * avail / w).min(canvas.1 as f64 * avail / h)
}

/// Offset that centers a box of `size` whose top-left lands at `top_left` before offsetting.
fn center_offset(size: Point2, top_left: Point2, canvas: (u32, u32)) -> Point2 {
    let center = Point2::new((canvas.0 - 1) as f64 / 2.0, (canvas.1 - 1) as f64 / 2.0);
    center - size * 0.5 - top_left
}

/// Scale and offset taking an image onto a `target x target` canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Padding {
    pub size: (u32, u32),
    pub offset: (u32, u32),
    pub scale: (f64, f64),
}

impl Padding {
    pub fn fit(width: u32, height: u32, target: u32) -> Result<Self> {
        if target == 0 || width == 0 || height == 0 {
            return Err(SynthError::Config(format!("cannot pad {width}x{height} into {target}")));
        }
        let s = target as f64 / width.max(height) as f64;
        let w = ((width as f64 * s).round() as u32).clamp(1, target);
        let h = ((height as f64 * s).round() as u32).clamp(1, target);
        Ok(Self {
            size: (w, h),
            offset: ((target - w) / 2, (target - h) / 2),
            scale: (w as f64 / width as f64, h as f64 / height as f64),
        })
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x * self.scale.0 + self.offset.0 as f64,
            p.y * self.scale.1 + self.offset.1 as f64,
        )
    }
}

/// Scales the longest side to `target`, pads the rest with zeros (centered) and
/// moves `grid` along.
pub fn resize_with_padding(image: &ImageBuffer, grid: &ControlGrid, target: u32) -> Result<(ImageBuffer, ControlGrid)> {
    let pad = Padding::fit(image.width(), image.height(), target)?;
    let resized = if pad.size == image.dimensions() {
        image.clone()
    } else {
        image.resized(pad.size.0, pad.size.1)?
    };
    let c = image.channels() as usize;
    let mut out = ImageBuffer::filled(target, target, image.channels(), 0)?;
    let row_len = pad.size.0 as usize * c;
    let stride = target as usize * c;
    let data = out.data_mut();
    for (y, src) in resized.data().chunks_exact(row_len).enumerate() {
        let start = (y + pad.offset.1 as usize) * stride + pad.offset.0 as usize * c;
        data[start..start + row_len].copy_from_slice(src);
    }
    Ok((out, grid.map_points(|p| pad.apply(p))?))
}
