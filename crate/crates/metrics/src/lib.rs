//! Image and map quality metrics.
//!
//! * [`ssim`] / [`ms_ssim`]: structural similarity on BT.601 luma with an 11-tap
//!   Gaussian window, valid-region statistics and the five standard scale weights.
//!   Downsampling between scales pads odd sides by repeating the last row/column
//!   and averages 2x2 blocks. Negative per-scale terms are clamped to zero before
//!   the weighted product.
//! * [`map_endpoint_error`]: mean and max Euclidean distance between two dense
//!   backward maps.

use cpdewarp_core::{BackwardMap, Error, ImageBuffer, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// One weight per scale, finest first.
    pub weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("ssim params: {msg}")));
        if self.window == 0 || self.window % 2 == 0 {
            return bad("window must be odd");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.k1.is_finite() && self.k1 > 0.0 && self.k2.is_finite() && self.k2 > 0.0) {
            return bad("stabilizers must be positive");
        }
        if !(self.dynamic_range.is_finite() && self.dynamic_range > 0.0) {
            return bad("dynamic range must be positive");
        }
        if self.weights.is_empty() || self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("scale weights must be positive and finite");
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    /// Smallest side accepted by [`ms_ssim`].
    pub fn min_side(&self) -> usize {
        (1usize << (self.scales() - 1)) * self.window
    }

    fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// A single-channel floating point image.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(image: &ImageBuffer) -> Self {
        Self {
            width: image.width() as usize,
            height: image.height() as usize,
            data: image.luma_f64(),
        }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable convolution keeping only fully covered positions.
    fn filter_valid(&self, kernel: &[f64]) -> Plane {
        let k = kernel.len();
        let (w, h) = (self.width, self.height);
        let ow = w + 1 - k;
        let oh = h + 1 - k;
        let mut horizontal = vec![0.0; ow * h];
        for y in 0..h {
            let src = &self.data[y * w..(y + 1) * w];
            let dst = &mut horizontal[y * ow..(y + 1) * ow];
            for (x, out) in dst.iter_mut().enumerate() {
                *out = kernel.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut data = vec![0.0; ow * oh];
        for y in 0..oh {
            let dst = &mut data[y * ow..(y + 1) * ow];
            for (t, &kv) in kernel.iter().enumerate() {
                let src = &horizontal[(y + t) * ow..(y + t + 1) * ow];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += kv * s;
                }
            }
        }
        Plane { width: ow, height: oh, data }
    }

    /// Halves each side (rounding up); an odd trailing row/column is paired with itself.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.width, self.height);
        let nw = w.div_ceil(2);
        let nh = h.div_ceil(2);
        let at = |x: usize, y: usize| self.data[y.min(h - 1) * w + x.min(w - 1)];
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                let (x0, y0) = (2 * x, 2 * y);
                data.push((at(x0, y0) + at(x0 + 1, y0) + at(x0, y0 + 1) + at(x0 + 1, y0 + 1)) / 4.0);
            }
        }
        Plane { width: nw, height: nh, data }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_cs(a: &Plane, b: &Plane, params: &SsimParams, kernel: &[f64]) -> (f64, f64) {
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mu_a = a.filter_valid(kernel);
    let mu_b = b.filter_valid(kernel);
    let aa = a.zip(a, |x, y| x * y).filter_valid(kernel);
    let bb = b.zip(b, |x, y| x * y).filter_valid(kernel);
    let ab = a.zip(b, |x, y| x * y).filter_valid(kernel);
    let n = mu_a.data.len();
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..n {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = aa.data[i] - ma * ma;
        let var_b = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n as f64, cs_sum / n as f64)
}

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::ShapeMismatch(format!(
            "images are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn too_small(a: &ImageBuffer, min: usize, what: &str) -> Error {
    Error::InvalidArgument(format!(
        "image {}x{} is smaller than {min} px needed for {what}",
        a.width(),
        a.height()
    ))
}

/// Mean single-scale SSIM over the valid window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    check_pair(a, b)?;
    if (a.width().min(a.height()) as usize) < params.window {
        return Err(too_small(a, params.window, "the ssim window"));
    }
    Ok(ssim_cs(&Plane::luma(a), &Plane::luma(b), params, &params.kernel()).0)
}

/// Multi-scale SSIM: contrast-structure terms at every scale but the coarsest,
/// full SSIM at the coarsest, combined as a weighted product.
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    check_pair(a, b)?;
    let min = params.min_side();
    if (a.width().min(a.height()) as usize) < min {
        return Err(too_small(a, min, &format!("{} scales", params.scales())));
    }
    let kernel = params.kernel();
    let mut pa = Plane::luma(a);
    let mut pb = Plane::luma(b);
    let mut score = 1.0;
    for (scale, &weight) in params.weights.iter().enumerate() {
        let (s, cs) = ssim_cs(&pa, &pb, params, &kernel);
        let last = scale + 1 == params.scales();
        let term = if last { s } else { cs };
        score *= term.max(0.0).powf(weight);
        if !last {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointError {
    pub mean_px: f64,
    pub max_px: f64,
}

pub fn map_endpoint_error(pred: &BackwardMap, gt: &BackwardMap) -> Result<EndpointError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::ShapeMismatch(format!(
            "maps are {}x{} and {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (mut sum, mut max) = (0.0f64, 0.0f64);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let d = p.distance(*g);
        sum += d;
        max = max.max(d);
    }
    Ok(EndpointError {
        mean_px: sum / pred.data().len() as f64,
        max_px: max,
    })
}
