use cpdewarp_core::{
    backward_map, bilinear_mesh_map, build_reference_grid, ControlGrid, DewarpOptions, Method, Point2, ReferenceSpec,
    TpsModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook TPS: solve [K P; P^T 0][w; a] = [v; 0] in raw coordinates by Gaussian
/// elimination with partial pivoting, one right-hand side per output coordinate.
struct OracleTps {
    sites: Vec<(f64, f64)>,
    coef: [Vec<f64>; 2],
}

fn u(dx: f64, dy: f64) -> f64 {
    let r2 = dx * dx + dy * dy;
    if r2 == 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

impl OracleTps {
    fn fit(sites: &[(f64, f64)], targets: &[(f64, f64)]) -> Self {
        let n = sites.len();
        let m = n + 3;
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = u(sites[i].0 - sites[j].0, sites[i].1 - sites[j].1);
            }
            let p = [1.0, sites[i].0, sites[i].1];
            for k in 0..3 {
                a[i][n + k] = p[k];
                a[n + k][i] = p[k];
            }
        }
        let rhs = |f: fn(&(f64, f64)) -> f64| {
            let mut b: Vec<f64> = targets.iter().map(f).collect();
            b.extend([0.0; 3]);
            b
        };
        Self {
            sites: sites.to_vec(),
            coef: [solve(a.clone(), rhs(|t| t.0)), solve(a, rhs(|t| t.1))],
        }
    }

    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.sites.len();
        let mut out = [0.0; 2];
        for (k, c) in self.coef.iter().enumerate() {
            let mut v = c[n] + c[n + 1] * x + c[n + 2] * y;
            for (s, w) in self.sites.iter().zip(c) {
                v += w * u(x - s.0, y - s.1);
            }
            out[k] = v;
        }
        (out[0], out[1])
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Point2>, Vec<Point2>, u32, u32) {
    let rows = rng.random_range(2..=6);
    let cols = rng.random_range(2..=6);
    let spacing = rng.random_range(8.0..24.0);
    let jitter = spacing * 0.2;
    let mut sites = Vec::new();
    let mut targets = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let s = Point2::new(
                c as f64 * spacing + rng.random_range(-jitter..jitter),
                r as f64 * spacing + rng.random_range(-jitter..jitter),
            );
            sites.push(s);
            targets.push(Point2::new(
                s.x + rng.random_range(-6.0..6.0) + 3.0,
                s.y + rng.random_range(-6.0..6.0) - 2.0,
            ));
        }
    }
    let w = ((cols - 1) as f64 * spacing) as u32 + 8;
    let h = ((rows - 1) as f64 * spacing) as u32 + 8;
    (sites, targets, w, h)
}

#[test]
fn dense_map_matches_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..24 {
        let (sites, targets, w, h) = random_case(&mut rng);
        let model = TpsModel::fit(&sites, &targets, 0.0).unwrap();
        let oracle = OracleTps::fit(
            &sites.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>(),
            &targets.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>(),
        );
        let map = model.dense_map(w, h).unwrap();
        for i in 0..h {
            for j in 0..w {
                let (ox, oy) = oracle.eval(j as f64, i as f64);
                let d = map.get(j, i);
                worst = worst.max((d.x - ox).abs()).max((d.y - oy).abs());
            }
        }
        assert!(worst <= 1e-5, "case {case}: max abs diff {worst}");
        for (s, t) in sites.iter().zip(&targets) {
            assert!(model.evaluate(*s).distance(*t) <= 1e-6);
        }
        assert!(model.side_condition_residual() < 1e-8);
    }
    eprintln!("tps oracle: max abs diff {worst:.3e} over 24 grids");
}

#[test]
fn affine_targets_reproduced_densely() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let (sites, _, w, h) = random_case(&mut rng);
        let a = [
            [rng.random_range(-10.0..10.0), rng.random_range(0.8..1.2), rng.random_range(-0.2..0.2)],
            [rng.random_range(-10.0..10.0), rng.random_range(-0.2..0.2), rng.random_range(0.8..1.2)],
        ];
        let f = |p: Point2| Point2::new(a[0][0] + a[0][1] * p.x + a[0][2] * p.y, a[1][0] + a[1][1] * p.x + a[1][2] * p.y);
        let targets: Vec<Point2> = sites.iter().map(|&p| f(p)).collect();
        let model = TpsModel::fit(&sites, &targets, 0.0).unwrap();
        let map = model.dense_map(w, h).unwrap();
        for i in 0..h {
            for j in 0..w {
                let e = f(Point2::new(j as f64, i as f64));
                assert!(map.get(j, i).distance(e) <= 1e-6, "({j},{i})");
            }
        }
        let bend: f64 = model.weights().iter().map(|w| w[0].abs() + w[1].abs()).sum();
        assert!(bend < 1e-8, "radial weights {bend}");
    }
}

fn affine_grid(spec: &ReferenceSpec, rot_deg: f64, scale: f64, t: Point2) -> ControlGrid {
    let (s, c) = rot_deg.to_radians().sin_cos();
    build_reference_grid(spec)
        .unwrap()
        .map_points(|p| Point2::new(scale * (c * p.x - s * p.y) + t.x, scale * (s * p.x + c * p.y) + t.y))
        .unwrap()
}

#[test]
fn linear_agrees_with_tps_on_affine_grids() {
    let spec = ReferenceSpec::new(16.0, 16.0, Point2::new(20.0, 20.0), 31, 31).unwrap();
    for (rot, scale, t) in [(0.0, 1.0, (0.0, 0.0)), (3.5, 0.9, (12.0, -4.0)), (-7.0, 1.1, (-5.0, 30.0))] {
        let control = affine_grid(&spec, rot, scale, Point2::new(t.0, t.1));
        let (lin, _) = backward_map(&control, &spec, &DewarpOptions::new(Method::Linear, 1)).unwrap();
        let (tps, _) = backward_map(&control, &spec, &DewarpOptions::new(Method::Tps, 2)).unwrap();
        let n = lin.data().len() as f64;
        let mean: f64 = lin.data().iter().zip(tps.data()).map(|(a, b)| a.distance(*b)).sum::<f64>() / n;
        assert!(mean <= 0.5, "rot {rot}: mean disagreement {mean}");
    }
}

#[test]
fn mesh_is_bilinear_inside_cells() {
    let spec = ReferenceSpec::new(10.0, 8.0, Point2::new(0.0, 0.0), 4, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = build_reference_grid(&spec).unwrap();
    let control = ControlGrid::from_fn(4, 5, |r, c| {
        let p = base.get(r, c);
        Point2::new(p.x * 1.3 + rng.random_range(-2.0..2.0), p.y + rng.random_range(-2.0..2.0))
    })
    .unwrap();
    let (w, h) = spec.output_size();
    let map = bilinear_mesh_map(&spec, &control, w + 1, h + 1).unwrap();
    for r in 0..4 {
        for c in 0..5 {
            let node = map.get(c as u32 * 8, r as u32 * 10);
            assert!(node.distance(control.get(r, c)) <= 1e-9);
        }
    }
    for i in 0..h {
        for j in 0..w {
            let (r, fy) = ((i / 10) as usize, (i % 10) as f64 / 10.0);
            let (c, fx) = ((j / 8) as usize, (j % 8) as f64 / 8.0);
            let lerp = |a: Point2, b: Point2, t: f64| Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
            let top = lerp(control.get(r, c), control.get(r, c + 1), fx);
            let bottom = lerp(control.get(r + 1, c), control.get(r + 1, c + 1), fx);
            assert!(map.get(j, i).distance(lerp(top, bottom, fy)) <= 1e-9, "({j},{i})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn tps_interpolates_its_sites(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sites, targets, _, _) = random_case(&mut rng);
        let model = TpsModel::fit(&sites, &targets, 0.0).unwrap();
        for (s, t) in sites.iter().zip(&targets) {
            prop_assert!(model.evaluate(*s).distance(*t) <= 1e-6);
        }
        prop_assert!(model.side_condition_residual() < 1e-8);
    }

    #[test]
    fn mesh_hits_every_node(seed in any::<u64>(), rows in 2usize..7, cols in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ReferenceSpec::new(6.0, 5.0, Point2::new(3.0, 2.0), rows, cols).unwrap();
        let base = build_reference_grid(&spec).unwrap();
        let control = ControlGrid::from_fn(rows, cols, |r, c| {
            let p = base.get(r, c);
            Point2::new(p.x + rng.random_range(-1.5..1.5), p.y + rng.random_range(-1.5..1.5))
        })
        .unwrap();
        let (w, h) = spec.output_size();
        let map = bilinear_mesh_map(&spec.at_origin(), &control, w + 1, h + 1).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert!(map.get(c as u32 * 5, r as u32 * 6).distance(control.get(r, c)) <= 1e-9);
            }
        }
    }
}
