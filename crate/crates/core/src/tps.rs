//! Thin-plate spline fitting and dense evaluation.
//!
//! The spline maps the plane to the plane:
//!
//! ```text
//! f(p) = a0 + A p + sum_k w_k U(|p - s_k|),    U(r) = r^2 ln r,  U(0) = 0
//! ```
//!
//! subject to `sum_k w_k = 0` and `sum_k w_k s_k = 0`. Coefficients come from the
//! `(N + 3) x (N + 3)` system
//!
//! ```text
//! [ K + lambda I   P ] [ w ]   [ v ]
//! [ P^T            0 ] [ a ] = [ 0 ]
//! ```
//!
//! solved in a normalized frame (sites and targets centered and scaled to a unit
//! box) and converted back to pixel units, so the stored model evaluates directly
//! in pixels. `lambda` acts in the normalized frame.

use nalgebra::{DMatrix, LU};
use rayon::prelude::*;

use crate::{BackwardMap, Error, Point2, Result};

/// Minimum pairwise site distance, in pixels.
const DUPLICATE_EPS: f64 = 1e-9;
/// Ratio of the smallest to largest principal variance below which sites count as collinear.
const COLLINEAR_EPS: f64 = 1e-12;
/// Largest tolerated relative residual of the solved system.
const RESIDUAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TpsModel {
    sites: Vec<Point2>,
    /// Radial coefficient per site, `[x, y]` output components.
    weights: Vec<[f64; 2]>,
    /// Row `k` holds `[constant, coeff_x, coeff_y]` for output component `k`.
    affine: [[f64; 3]; 2],
    regularization: f64,
}

impl TpsModel {
    /// Fits a spline taking each `sites[i]` to `targets[i]`.
    ///
    /// With `regularization == 0` the spline interpolates the targets exactly.
    pub fn fit(sites: &[Point2], targets: &[Point2], regularization: f64) -> Result<Self> {
        let n = sites.len();
        if n != targets.len() {
            return Err(Error::ShapeMismatch(format!("{n} sites but {} targets", targets.len())));
        }
        if n < 3 {
            return Err(Error::DegenerateConfiguration(format!("need at least 3 sites, got {n}")));
        }
        if !(regularization.is_finite() && regularization >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization must be >= 0, got {regularization}"
            )));
        }
        if let Some(i) = sites.iter().chain(targets).position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i % n));
        }
        check_duplicates(sites)?;

        let src = Normalization::of(sites);
        let dst = Normalization::of(targets);
        let unit: Vec<Point2> = sites.iter().map(|&p| src.forward(p)).collect();
        check_collinear(&unit)?;

        let dim = n + 3;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = unit[i] - unit[j];
                let u = kernel(d.dot(d));
                a[(i, j)] = u;
                a[(j, i)] = u;
            }
            a[(i, i)] = regularization;
            let p = unit[i];
            for (k, v) in [1.0, p.x, p.y].into_iter().enumerate() {
                a[(i, n + k)] = v;
                a[(n + k, i)] = v;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(dim, 2);
        for (i, &t) in targets.iter().enumerate() {
            let t = dst.forward(t);
            rhs[(i, 0)] = t.x;
            rhs[(i, 1)] = t.y;
        }

        let lu = LU::new(a.clone());
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateConfiguration("singular thin-plate system".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateConfiguration("non-finite thin-plate solution".into()));
        }
        let residual = (&a * &sol - &rhs).amax();
        if residual > RESIDUAL_EPS * (1.0 + rhs.amax()) {
            return Err(Error::DegenerateConfiguration(format!(
                "ill-conditioned thin-plate system (residual {residual:e})"
            )));
        }

        Ok(Self::denormalize(sites, &sol, &src, &dst, regularization))
    }

    // f_px(x) = c_t + s_t * f_unit((x - c) / s). Expanding U(r / s) and using the side
    // conditions gives pixel-space weights w s_t / s^2 and a constant shift of
    // -s_t ln(s) / s^2 * sum_k w_k |x_k|^2.
    fn denormalize(sites: &[Point2], sol: &DMatrix<f64>, src: &Normalization, dst: &Normalization, regularization: f64) -> Self {
        let n = sites.len();
        let (c, s) = (src.center, src.scale);
        let (ct, st) = (dst.center, dst.scale);
        let wscale = st / (s * s);
        let ln_s = s.ln();
        let mut weights = Vec::with_capacity(n);
        let mut affine = [[0.0; 3]; 2];
        for k in 0..2 {
            let mut quad = 0.0;
            for (i, p) in sites.iter().enumerate() {
                quad += sol[(i, k)] * p.dot(*p);
            }
            let (a0, ax, ay) = (sol[(n, k)], sol[(n + 1, k)], sol[(n + 2, k)]);
            let center_k = if k == 0 { ct.x } else { ct.y };
            affine[k] = [
                center_k + st * (a0 - (ax * c.x + ay * c.y) / s - ln_s * quad / (s * s)),
                st * ax / s,
                st * ay / s,
            ];
        }
        for i in 0..n {
            weights.push([sol[(i, 0)] * wscale, sol[(i, 1)] * wscale]);
        }
        Self {
            sites: sites.to_vec(),
            weights,
            affine,
            regularization,
        }
    }

    pub fn sites(&self) -> &[Point2] {
        &self.sites
    }

    pub fn weights(&self) -> &[[f64; 2]] {
        &self.weights
    }

    pub fn affine(&self) -> [[f64; 3]; 2] {
        self.affine
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Largest violation of the side conditions, relative to the weight magnitude
    /// (and site extent for the first-moment sums).
    pub fn side_condition_residual(&self) -> f64 {
        let extent = self
            .sites
            .iter()
            .map(|p| p.x.abs().max(p.y.abs()))
            .fold(1.0, f64::max);
        // One shared scale: a component whose weights are pure round-off must not
        // be judged against its own vanishing magnitude.
        let mag: f64 = self.weights.iter().map(|w| w[0].abs() + w[1].abs()).sum();
        if mag == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for k in 0..2 {
            let (mut s0, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for (w, p) in self.weights.iter().zip(&self.sites) {
                s0 += w[k];
                sx += w[k] * p.x;
                sy += w[k] * p.y;
            }
            worst = worst
                .max(s0.abs() / mag)
                .max(sx.abs() / (mag * extent))
                .max(sy.abs() / (mag * extent));
        }
        worst
    }

    pub fn evaluate(&self, p: Point2) -> Point2 {
        let [ax, ay] = self.affine;
        let mut x = ax[0] + ax[1] * p.x + ax[2] * p.y;
        let mut y = ay[0] + ay[1] * p.x + ay[2] * p.y;
        for (s, w) in self.sites.iter().zip(&self.weights) {
            let d = p - *s;
            let u = kernel(d.dot(d));
            x += w[0] * u;
            y += w[1] * u;
        }
        Point2::new(x, y)
    }

    /// Evaluates the spline at every integer pixel `(j, i)` of a `width x height` grid.
    ///
    /// Rows are evaluated in parallel; every pixel is computed independently, so
    /// the result does not depend on the thread count.
    pub fn dense_map(&self, width: u32, height: u32) -> Result<BackwardMap> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidResolution {
                width: width as f64,
                height: height as f64,
            });
        }
        let w = width as usize;
        let sites = SoaSites::new(self);
        let mut data = vec![Point2::default(); w * height as usize];
        data.par_chunks_mut(w).enumerate().for_each_init(
            || (vec![0.0; w], vec![0.0; w]),
            |(acc_x, acc_y), (i, row)| {
                accumulate_row(&sites, i as f64, acc_x, acc_y);
                let [ax, ay] = self.affine;
                let y = i as f64;
                for (j, out) in row.iter_mut().enumerate() {
                    let x = j as f64;
                    *out = Point2::new(
                        ax[0] + ax[1] * x + ax[2] * y + acc_x[j],
                        ay[0] + ay[1] * x + ay[2] * y + acc_y[j],
                    );
                }
            },
        );
        if let Some(i) = data.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(BackwardMap::from_raw(width, height, data))
    }
}

/// `U(r) = r^2 ln r` written in terms of `r^2`.
fn kernel(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

struct Normalization {
    center: Point2,
    scale: f64,
}

impl Normalization {
    fn of(points: &[Point2]) -> Self {
        let n = points.len() as f64;
        let center = points.iter().fold(Point2::default(), |a, &p| a + p) * (1.0 / n);
        let scale = points
            .iter()
            .map(|p| (p.x - center.x).abs().max((p.y - center.y).abs()))
            .fold(0.0, f64::max);
        Self {
            center,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    fn forward(&self, p: Point2) -> Point2 {
        (p - self.center) * (1.0 / self.scale)
    }
}

fn check_duplicates(sites: &[Point2]) -> Result<()> {
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].x.total_cmp(&sites[b].x));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if sites[j].x - sites[i].x > DUPLICATE_EPS {
                break;
            }
            if sites[i].distance(sites[j]) <= DUPLICATE_EPS {
                return Err(Error::DegenerateConfiguration(format!(
                    "sites {i} and {j} coincide"
                )));
            }
        }
    }
    Ok(())
}

fn check_collinear(unit: &[Point2]) -> Result<()> {
    let n = unit.len() as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in unit {
        sxx += p.x * p.x;
        syy += p.y * p.y;
        sxy += p.x * p.y;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if hi <= 0.0 || lo / hi < COLLINEAR_EPS {
        return Err(Error::DegenerateConfiguration("sites are collinear".into()));
    }
    Ok(())
}

struct SoaSites {
    x: Vec<f64>,
    y: Vec<f64>,
    // Weights carry the 1/2 of U(r) = 1/2 r^2 ln r^2.
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl SoaSites {
    fn new(model: &TpsModel) -> Self {
        Self {
            x: model.sites.iter().map(|p| p.x).collect(),
            y: model.sites.iter().map(|p| p.y).collect(),
            wx: model.weights.iter().map(|w| 0.5 * w[0]).collect(),
            wy: model.weights.iter().map(|w| 0.5 * w[1]).collect(),
        }
    }
}

fn accumulate_row(sites: &SoaSites, y: f64, acc_x: &mut [f64], acc_y: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { accumulate_row_avx512(sites, y, acc_x, acc_y) };
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { accumulate_row_avx2(sites, y, acc_x, acc_y) };
        }
    }
    accumulate_row_generic(sites, y, acc_x, acc_y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn accumulate_row_avx512(sites: &SoaSites, y: f64, acc_x: &mut [f64], acc_y: &mut [f64]) {
    accumulate_row_generic(sites, y, acc_x, acc_y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn accumulate_row_avx2(sites: &SoaSites, y: f64, acc_x: &mut [f64], acc_y: &mut [f64]) {
    accumulate_row_generic(sites, y, acc_x, acc_y)
}

/// Pixels per register block; the accumulators of one block stay in registers
/// while the sites stream past.
const BLOCK: usize = 16;

#[inline(always)]
fn accumulate_row_generic(sites: &SoaSites, y: f64, acc_x: &mut [f64], acc_y: &mut [f64]) {
    let dy2: Vec<f64> = sites.y.iter().map(|&sy| (y - sy) * (y - sy)).collect();
    let w = acc_x.len();
    let mut j0 = 0;
    while j0 < w {
        let n = BLOCK.min(w - j0);
        let mut xs = [0.0f64; BLOCK];
        for (k, x) in xs.iter_mut().enumerate() {
            *x = (j0 + k) as f64;
        }
        let mut bx = [0.0f64; BLOCK];
        let mut by = [0.0f64; BLOCK];
        for k in 0..sites.x.len() {
            let (sx, wx, wy, d2) = (sites.x[k], sites.wx[k], sites.wy[k], dy2[k]);
            for l in 0..BLOCK {
                let dx = xs[l] - sx;
                // Clamping keeps ln finite at a site; r2 * ln(r2) underflows to ~0 there.
                let r2 = (dx * dx + d2).max(1e-300);
                let u = r2 * ln_positive(r2);
                bx[l] += wx * u;
                by[l] += wy * u;
            }
        }
        acc_x[j0..j0 + n].copy_from_slice(&bx[..n]);
        acc_y[j0..j0 + n].copy_from_slice(&by[..n]);
        j0 += n;
    }
}

/// Natural log for positive normal `x`, branch-free so it vectorizes.
///
/// Splits `x = 2^e m` with `m` in `[sqrt(2)/2, sqrt(2))` and evaluates
/// `ln m = 2 atanh((m - 1) / (m + 1))` by its odd series. Relative error stays
/// within a few ulp of `f64::ln`.
#[inline(always)]
fn ln_positive(x: f64) -> f64 {
    const SQRT_HALF_BITS: u64 = 0x3fe6_a09e_667f_3bcd;
    const ONE_BITS: u64 = 0x3ff0_0000_0000_0000;
    const MANTISSA: u64 = 0x000f_ffff_ffff_ffff;
    const TWO_52: f64 = 4_503_599_627_370_496.0;
    let ix = x.to_bits().wrapping_add(ONE_BITS - SQRT_HALF_BITS);
    let e = f64::from_bits(0x4330_0000_0000_0000 | (ix >> 52)) - (TWO_52 + 1023.0);
    let m = f64::from_bits((ix & MANTISSA).wrapping_add(SQRT_HALF_BITS));
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    let series = 1.0
        + s2 * (1.0 / 3.0
            + s2 * (1.0 / 5.0
                + s2 * (1.0 / 7.0
                    + s2 * (1.0 / 9.0
                        + s2 * (1.0 / 11.0
                            + s2 * (1.0 / 13.0
                                + s2 * (1.0 / 15.0
                                    + s2 * (1.0 / 17.0 + s2 * (1.0 / 19.0 + s2 * (1.0 / 21.0 + s2 / 23.0))))))))));
    e * std::f64::consts::LN_2 + 2.0 * s * series
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{build_reference_grid, ReferenceSpec};

    fn lattice(rows: usize, cols: usize, spacing: f64) -> Vec<Point2> {
        build_reference_grid(&ReferenceSpec::new(spacing, spacing, Point2::default(), rows, cols).unwrap())
            .unwrap()
            .into_points()
    }

    #[test]
    fn ln_positive_matches_std() {
        let mut worst = 0.0f64;
        let mut x = 1e-300;
        while x < 1e300 {
            for m in [1.0, 1.1, 1.41, 1.42, 1.7, 1.999] {
                let v = x * m;
                let err = (ln_positive(v) - v.ln()).abs() / v.ln().abs().max(1.0);
                worst = worst.max(err);
            }
            x *= 3.7;
        }
        for k in 1..200_000 {
            let v = k as f64 * 0.37;
            worst = worst.max((ln_positive(v) - v.ln()).abs() / v.ln().abs().max(1.0));
        }
        assert!(worst < 1e-15, "worst relative error {worst:e}");
    }

    #[test]
    fn kernel_at_zero_and_one() {
        assert_eq!(kernel(0.0), 0.0);
        assert_eq!(kernel(1.0), 0.0);
        // r = 2: 4 ln 2
        assert!((kernel(4.0) - 4.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_fit() {
        let sites = lattice(3, 4, 10.0);
        let m = TpsModel::fit(&sites, &sites, 0.0).unwrap();
        for w in m.weights() {
            assert!(w[0].abs() < 1e-9 && w[1].abs() < 1e-9);
        }
        for p in [Point2::new(3.3, 17.1), Point2::new(-5.0, 40.0), Point2::new(29.9, 0.1)] {
            assert!(m.evaluate(p).distance(p) < 1e-6);
        }
    }

    #[test]
    fn translation_map() {
        let sites = lattice(3, 3, 8.0);
        let targets: Vec<Point2> = sites.iter().map(|&p| p + Point2::new(3.0, 4.0)).collect();
        let map = TpsModel::fit(&sites, &targets, 0.0).unwrap().dense_map(20, 17).unwrap();
        for y in 0..17 {
            for x in 0..20 {
                let v = map.get(x, y);
                assert!((v.x - x as f64 - 3.0).abs() < 1e-6 && (v.y - y as f64 - 4.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dense_identity_map() {
        let sites = lattice(2, 2, 31.0);
        let map = TpsModel::fit(&sites, &sites, 0.0).unwrap().dense_map(32, 32).unwrap();
        let identity = BackwardMap::identity(32, 32);
        for (a, b) in map.data().iter().zip(identity.data()) {
            assert!(a.distance(*b) < 1e-6);
        }
    }

    // Reference values from a direct (unnormalized) numpy solve of the same 3x3 system.
    #[test]
    fn displaced_center_matches_numpy() {
        let sites = lattice(3, 3, 15.0);
        let mut targets = sites.clone();
        targets[4].x += 5.0;
        let m = TpsModel::fit(&sites, &targets, 0.0).unwrap();
        let expected = [
            ((7.5, 7.5), (9.39304660468201, 7.5)),
            ((22.3, 4.1), (23.44528699775359, 4.1)),
            ((15.0, 15.0), (20.0, 15.0)),
            ((10.0, 20.0), (13.075339674341524, 20.0)),
            ((31.0, 31.0), (30.831574748392654, 31.0)),
            ((0.0, 31.0), (-0.09136965306877798, 31.0)),
            ((16.0, 15.0), (20.91123554005842, 15.0)),
            ((3.0, 27.0), (3.498039856822876, 27.0)),
        ];
        let map = m.dense_map(32, 32).unwrap();
        for ((x, y), (ex, ey)) in expected {
            let v = m.evaluate(Point2::new(x, y));
            assert!((v.x - ex).abs() < 1e-6 && (v.y - ey).abs() < 1e-6, "({x},{y}) -> {v:?}");
            if x.fract() == 0.0 && y.fract() == 0.0 && x < 32.0 && y < 32.0 {
                let d = map.get(x as u32, y as u32);
                assert!((d.x - ex).abs() < 1e-5 && (d.y - ey).abs() < 1e-5);
            }
        }
        assert!(m.side_condition_residual() < 1e-8, "{}", m.side_condition_residual());
    }

    #[test]
    fn regularized_fit_smooths() {
        let sites = lattice(3, 3, 15.0);
        let mut targets = sites.clone();
        targets[4].x += 5.0;
        let exact = TpsModel::fit(&sites, &targets, 0.0).unwrap();
        let smooth = TpsModel::fit(&sites, &targets, 1.0).unwrap();
        let c = Point2::new(15.0, 15.0);
        assert!((exact.evaluate(c).x - 20.0).abs() < 1e-9);
        let moved = smooth.evaluate(c).x - 15.0;
        assert!(moved > 0.0 && moved < 5.0);
        assert!(smooth.side_condition_residual() < 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(TpsModel::fit(&line, &line, 0.0), Err(Error::DegenerateConfiguration(_))));
        let mut dup = lattice(2, 2, 5.0);
        dup.push(dup[1]);
        assert!(matches!(TpsModel::fit(&dup, &dup, 0.0), Err(Error::DegenerateConfiguration(_))));
        let two = &lattice(2, 2, 5.0)[..2];
        assert!(TpsModel::fit(two, two, 0.0).is_err());
        let sites = lattice(2, 2, 5.0);
        assert!(TpsModel::fit(&sites, &sites[..3], 0.0).is_err());
        assert!(TpsModel::fit(&sites, &sites, -1.0).is_err());
    }
}
