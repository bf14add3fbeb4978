//! Rendering a scan through a [`Warp`] and deriving the ground truth.

use cpdewarp_core::{
    remap, sample_bilinear, valid_steps, BackwardMap, ControlGrid, ImageBuffer, Point2, ReferenceSpec, TpsModel, WHITE,
};
use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;

use crate::config::PhotometricConfig;
use crate::warp::{make_base_grid, Warp};
use crate::{Result, SynthError};

/// Spacing of the coarse lattice on which the initial inverse guess is evaluated.
const GUESS_SPACING: usize = 8;
const NEWTON_TOL: f64 = 1e-4;
const NEWTON_ITERS: usize = 12;
/// Unconverged page pixels tolerated before the warp is rejected, as a fraction.
const MAX_UNCONVERGED: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Rendered {
    /// Final distorted image, photometric augmentation included.
    pub image: ImageBuffer,
    /// Distorted image before photometric augmentation.
    pub clean: ImageBuffer,
    pub control: ControlGrid,
    pub reference: ReferenceSpec,
    /// Rectified output pixel to distorted canvas position.
    pub map: BackwardMap,
    /// The flat scan at the reference resolution: the ideal rectification.
    pub flat: ImageBuffer,
}

/// Bilinear access to the scan in scan coordinates, through a pre-shrunk copy
/// when the page is drawn smaller than the scan.
struct ScanSampler {
    image: ImageBuffer,
    ratio: (f64, f64),
}

impl ScanSampler {
    fn new(scan: &ImageBuffer, scale: f64) -> Result<Self> {
        let scan = scan.to_rgb();
        if scale >= 1.0 {
            return Ok(Self { image: scan, ratio: (1.0, 1.0) });
        }
        let w = ((scan.width() as f64 * scale).round() as u32).max(1);
        let h = ((scan.height() as f64 * scale).round() as u32).max(1);
        let ratio = (w as f64 / scan.width() as f64, h as f64 / scan.height() as f64);
        Ok(Self {
            image: scan.resized(w, h)?,
            ratio,
        })
    }

    fn sample(&self, q: Point2, out: &mut [u8]) -> bool {
        let p = Point2::new((q.x + 0.5) * self.ratio.0 - 0.5, (q.y + 0.5) * self.ratio.1 - 0.5);
        sample_bilinear(&self.image, p, out)
    }
}

/// Rejects grids whose cells turn over: every cell corner must keep the
/// orientation of the undistorted lattice.
pub fn check_fold_over(grid: &ControlGrid) -> Result<()> {
    for r in 0..grid.rows() - 1 {
        for c in 0..grid.cols() - 1 {
            let quad = [grid.get(r, c), grid.get(r, c + 1), grid.get(r + 1, c + 1), grid.get(r + 1, c)];
            for k in 0..4 {
                let a = quad[(k + 3) % 4] - quad[k];
                let b = quad[(k + 1) % 4] - quad[k];
                // image axes point right and down, so an intact cell has b x a > 0
                if b.x * a.y - b.y * a.x <= 0.0 {
                    return Err(SynthError::Degenerate(format!("cell ({r}, {c}) folds over")));
                }
            }
        }
    }
    Ok(())
}

fn guess_step(side: usize) -> usize {
    valid_steps(side)
        .into_iter()
        .rev()
        .find(|&s| (side - 1) / s + 1 >= side.min(11))
        .unwrap_or(1)
}

/// Inverse of `warp` near `q`, found by Newton iteration with a finite-difference Jacobian.
fn invert(warp: &Warp, target: Point2, mut q: Point2) -> Option<Point2> {
    let jac_inv = |q: Point2| -> Option<[f64; 4]> {
        let h = 0.25;
        let dx = (warp.apply(q + Point2::new(h, 0.0)) - warp.apply(q - Point2::new(h, 0.0))) * (0.5 / h);
        let dy = (warp.apply(q + Point2::new(0.0, h)) - warp.apply(q - Point2::new(0.0, h))) * (0.5 / h);
        let det = dx.x * dy.y - dy.x * dx.y;
        if det.abs() < 1e-12 {
            return None;
        }
        Some([dy.y / det, -dy.x / det, -dx.y / det, dx.x / det])
    };
    let mut j = jac_inv(q)?;
    for it in 0..NEWTON_ITERS {
        let r = warp.apply(q) - target;
        if r.norm() < NEWTON_TOL {
            return Some(q);
        }
        if it > 0 && it % 4 == 0 {
            j = jac_inv(q)?;
        }
        q = q - Point2::new(j[0] * r.x + j[1] * r.y, j[2] * r.x + j[3] * r.y);
    }
    (warp.apply(q).distance(target) < NEWTON_TOL).then_some(q)
}

/// Renders `scan` warped onto `background` (which must match the canvas size),
/// then applies photometric augmentation drawn from `rng`.
pub fn render_distorted(
    scan: &ImageBuffer,
    warp: &Warp,
    rows: usize,
    cols: usize,
    background: &ImageBuffer,
    photometric: &PhotometricConfig,
    rng: &mut impl Rng,
) -> Result<Rendered> {
    let (sw, sh) = scan.dimensions();
    if (sw, sh) != warp.scan_size {
        return Err(SynthError::Config(format!(
            "scan is {sw}x{sh} but the warp expects {}x{}",
            warp.scan_size.0, warp.scan_size.1
        )));
    }
    let (cw, ch) = warp.canvas;
    if background.dimensions() != (cw, ch) {
        return Err(SynthError::Config("background does not match the canvas".into()));
    }
    let (base, base_spec) = make_base_grid(sw, sh, rows, cols)?;
    let control = base.map_points(|p| warp.apply(p))?;
    check_fold_over(&control)?;

    let sampler = ScanSampler::new(scan, warp.reference_scale())?;
    let (rs, cs) = (guess_step(rows), guess_step(cols));
    let sites = cpdewarp_core::subsample_grid_rc(&control, rs, cs)?.into_points();
    let targets = cpdewarp_core::subsample_grid_rc(&base, rs, cs)?.into_points();
    let guess = TpsModel::fit(&sites, &targets, 0.0).map_err(|e| SynthError::Degenerate(e.to_string()))?;

    let gw = (cw as usize - 1).div_ceil(GUESS_SPACING) + 1;
    let gh = (ch as usize - 1).div_ceil(GUESS_SPACING) + 1;
    let coarse: Vec<Point2> = (0..gw * gh)
        .map(|k| {
            let p = Point2::new(((k % gw) * GUESS_SPACING) as f64, ((k / gw) * GUESS_SPACING) as f64);
            guess.evaluate(p)
        })
        .collect();

    let reach = 4.0 * base_spec.h_interval.max(base_spec.v_interval);
    let (swf, shf) = (sw as f64, sh as f64);
    let bg = background.to_rgb();
    let w = cw as usize;
    let mut pixels = bg.into_data();
    let unconverged: usize = pixels
        .par_chunks_mut(w * 3)
        .enumerate()
        .map(|(y, row)| {
            let gy = y / GUESS_SPACING;
            let fy = (y % GUESS_SPACING) as f64 / GUESS_SPACING as f64;
            let mut failures = 0;
            for (x, px) in row.chunks_exact_mut(3).enumerate() {
                let gx = x / GUESS_SPACING;
                let fx = (x % GUESS_SPACING) as f64 / GUESS_SPACING as f64;
                let at = |i: usize, j: usize| coarse[j * gw + i];
                let q0 = (at(gx, gy) * (1.0 - fx) + at(gx + 1, gy) * fx) * (1.0 - fy)
                    + (at(gx, gy + 1) * (1.0 - fx) + at(gx + 1, gy + 1) * fx) * fy;
                if q0.x < -reach || q0.y < -reach || q0.x > swf + reach || q0.y > shf + reach {
                    continue;
                }
                match invert(warp, Point2::new(x as f64, y as f64), q0) {
                    Some(q) => {
                        sampler.sample(q, px);
                    }
                    None => {
                        if q0.x >= 0.0 && q0.y >= 0.0 && q0.x <= swf && q0.y <= shf {
                            failures += 1;
                        }
                    }
                }
            }
            failures
        })
        .sum();
    let page_area = (warp.reference_scale() * swf) * (warp.reference_scale() * shf);
    if unconverged as f64 > MAX_UNCONVERGED * page_area {
        return Err(SynthError::Degenerate(format!("{unconverged} canvas pixels have no preimage")));
    }
    let clean = ImageBuffer::new(cw, ch, 3, pixels)?;

    let reference = warp.reference_spec(rows, cols)?;
    let (ow, oh) = reference.output_size();
    let to_scan = |j: u32, i: u32| Point2::new(j as f64 * swf / ow as f64, i as f64 * shf / oh as f64);
    let map = BackwardMap::from_fn(ow, oh, |j, i| warp.apply(to_scan(j, i)));
    let scan_map = BackwardMap::from_fn(ow, oh, |j, i| {
        let q = to_scan(j, i);
        Point2::new(
            (q.x + 0.5) * sampler.ratio.0 - 0.5,
            (q.y + 0.5) * sampler.ratio.1 - 0.5,
        )
    });
    let flat = remap(&sampler.image, &scan_map, WHITE);

    let image = if photometric.enabled {
        augment(&clean, photometric, rng)?
    } else {
        clean.clone()
    };
    Ok(Rendered {
        image,
        clean,
        control,
        reference,
        map,
        flat,
    })
}

/// HSV jitter, a linear brightness-gradient shadow and Gaussian blur, in that order.
pub fn augment(image: &ImageBuffer, cfg: &PhotometricConfig, rng: &mut impl Rng) -> Result<ImageBuffer> {
    let hue = cfg.hue_shift_deg.sample(rng);
    let sat = cfg.saturation_scale.sample(rng);
    let val = cfg.value_scale.sample(rng);
    let shadow_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let shadow = if cfg.shadow { cfg.shadow_strength.sample(rng) } else { 0.0 };
    let sigma = cfg.blur_sigma.sample(rng);

    let rgb = image.to_rgb();
    let (w, h) = rgb.dimensions();
    let dir = Point2::new(shadow_angle.cos(), shadow_angle.sin());
    let center = Point2::new(w as f64 / 2.0, h as f64 / 2.0);
    let half_extent = 0.5 * (w as f64 * dir.x.abs() + h as f64 * dir.y.abs());
    let mut data = rgb.into_data();
    data.par_chunks_mut(w as usize * 3).enumerate().for_each(|(y, row)| {
        for (x, px) in row.chunks_exact_mut(3).enumerate() {
            let (hh, ss, vv) = rgb_to_hsv(px[0], px[1], px[2]);
            let t = 0.5 + (Point2::new(x as f64, y as f64) - center).dot(dir) / (2.0 * half_extent);
            let shade = 1.0 - shadow * t.clamp(0.0, 1.0);
            let rgb = hsv_to_rgb(
                (hh + hue).rem_euclid(360.0),
                (ss * sat).min(1.0),
                (vv * val * shade).clamp(0.0, 1.0),
            );
            px.copy_from_slice(&rgb);
        }
    });
    let out = ImageBuffer::new(w, h, 3, data)?;
    if sigma <= 0.05 {
        return Ok(out);
    }
    let buf = RgbImage::from_raw(w, h, out.into_data()).expect("buffer size matches");
    let blurred = image::imageops::blur(&buf, sigma as f32);
    Ok(ImageBuffer::new(w, h, 3, blurred.into_raw())?)
}

fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}
