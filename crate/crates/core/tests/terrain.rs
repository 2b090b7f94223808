use nptrack::terrain::{
    build_grid_from_catalog, build_grid_from_points, orientation_of, roll_pitch_from_normal,
    slope_of, Bounds, OrientedPoint, TerrainGrid, TerrainProfile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M3 = [[f64; 3]; 3];

fn rot_x(a: f64) -> M3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> M3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn mul(a: &M3, b: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn apply(m: &M3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| m[i][k] * v[k]).sum())
}

/// Grid of the affine field `h = c0 + cx x + cy y` with its exact normal.
fn affine_grid(c0: f64, cx: f64, cy: f64) -> TerrainGrid {
    let (nx, ny, sp) = (9, 7, [0.5, 0.75]);
    let mut height = Vec::new();
    let mut normal = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let (x, y) = (-1.0 + i as f64 * sp[0], 2.0 + j as f64 * sp[1]);
            height.push(c0 + cx * x + cy * y);
            normal.push([-cx, -cy, 1.0]);
        }
    }
    TerrainGrid::from_fields([-1.0, 2.0], sp, [nx, ny], height, normal, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bilinear_is_exact_on_affine_fields(
        c0 in -5.0..5.0f64, cx in -1.0..1.0f64, cy in -1.0..1.0f64,
        fx in 0.0..1.0f64, fy in 0.0..1.0f64,
    ) {
        let g = affine_grid(c0, cx, cy);
        let (x, y) = (-1.0 + fx * 4.0, 2.0 + fy * 4.5);
        let s = g.query(x, y).unwrap();
        prop_assert!((s.height - (c0 + cx * x + cy * y)).abs() <= 1e-12);
        let norm = (cx * cx + cy * cy + 1.0).sqrt();
        let n = [-cx / norm, -cy / norm, 1.0 / norm];
        for k in 0..3 {
            prop_assert!((s.normal[k] - n[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn queries_return_unit_upward_normals_with_consistent_angles(
        x in -4.9..4.9f64, y in -4.9..4.9f64, amp in 0.0..2.0f64, k in 0.1..1.5f64,
    ) {
        let profile = TerrainProfile::SinusoidalHills { amplitude: amp, kx: k, ky: 0.7 * k };
        let g = build_grid_from_catalog(&profile, &Bounds::new(-5.0, 5.0, -5.0, 5.0), 0.25).unwrap();
        let s = g.query(x, y).unwrap();
        let n = s.normal;
        prop_assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-9);
        prop_assert!(n[2] >= 0.0);
        prop_assert_eq!(s.slope, n[2].abs().min(1.0).acos());
        prop_assert_eq!(s.slope, slope_of(&n));
        let phi = if n[0] == 0.0 && n[1] == 0.0 { 0.0 } else { n[1].atan2(n[0]) };
        prop_assert!((s.orientation - phi).abs() < 1e-15 || (s.orientation - phi).abs() > 6.28);
        prop_assert_eq!(s.orientation, orientation_of(&n));
    }
}

#[test]
fn roll_pitch_inverts_the_rotation_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let theta = rng.random_range(0.0..80f64.to_radians());
        let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let n = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
        let rp = roll_pitch_from_normal(&n).unwrap();
        // Roll about x, then pitch about y, takes the normal onto the vertical.
        let up = apply(&mul(&rot_y(rp.pitch), &rot_x(rp.roll)), &n);
        let back = apply(&mul(&rot_x(-rp.roll), &rot_y(-rp.pitch)), &[0.0, 0.0, 1.0]);
        for k in 0..3 {
            worst = worst.max((up[k] - [0.0, 0.0, 1.0][k]).abs());
            worst = worst.max((back[k] - n[k]).abs());
        }
    }
    assert!(worst <= 1e-9, "worst deviation {worst:e}");
}

#[test]
fn tilted_plane_slope_and_orientation_match_their_definitions() {
    for (slope_deg, dir_deg) in [(10.0, 0.0), (25.0, 135.0), (5.0, -60.0)] {
        let g = build_grid_from_catalog(
            &TerrainProfile::TiltedPlane {
                slope_deg,
                direction_deg: dir_deg,
            },
            &Bounds::new(-2.0, 2.0, -2.0, 2.0),
            0.25,
        )
        .unwrap();
        let s = g.query(0.37, -1.11).unwrap();
        assert!((s.slope.to_degrees() - slope_deg).abs() < 1e-9);
        // The normal leans away from the rising direction.
        let lean = s.normal[1].atan2(s.normal[0]).to_degrees();
        let expected = dir_deg + 180.0;
        let diff = ((lean - expected + 540.0) % 360.0) - 180.0;
        assert!(diff.abs() < 1e-9, "{lean} vs {expected}");
    }
}

fn circumcircle_is_empty(tri: [usize; 3], pts: &[[f64; 2]]) -> bool {
    let [a, b, c] = tri.map(|i| pts[i]);
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-14 {
        return false;
    }
    let sq = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    let r2 = (a[0] - ux).powi(2) + (a[1] - uy).powi(2);
    pts.iter().enumerate().all(|(i, p)| {
        tri.contains(&i) || (p[0] - ux).powi(2) + (p[1] - uy).powi(2) >= r2 * (1.0 - 1e-12)
    })
}

fn barycentric(p: [f64; 2], tri: [[f64; 2]; 3]) -> [f64; 3] {
    let [a, b, c] = tri;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l0, l1, 1.0 - l0 - l1]
}

/// Barycentric interpolation over the Delaunay triangle containing `p`,
/// found by brute force among triangles of nearby points.
fn delaunay_oracle(p: [f64; 2], pts: &[[f64; 2]], values: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&i, &j| {
        let di = (pts[i][0] - p[0]).powi(2) + (pts[i][1] - p[1]).powi(2);
        let dj = (pts[j][0] - p[0]).powi(2) + (pts[j][1] - p[1]).powi(2);
        di.total_cmp(&dj)
    });
    let near = &order[..14];
    for (ia, &a) in near.iter().enumerate() {
        for (ib, &b) in near.iter().enumerate().skip(ia + 1) {
            for &c in near.iter().skip(ib + 1) {
                let l = barycentric(p, [pts[a], pts[b], pts[c]]);
                if l.iter().all(|&w| w >= -1e-12) && circumcircle_is_empty([a, b, c], pts) {
                    return Some(l[0] * values[a] + l[1] * values[b] + l[2] * values[c]);
                }
            }
        }
    }
    None
}

#[test]
fn scattered_cloud_matches_a_brute_force_triangulation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tau = std::f64::consts::TAU;
    let mut cloud = Vec::new();
    let mut planar = Vec::new();
    let mut heights = Vec::new();
    for _ in 0..500 {
        let (x, y): (f64, f64) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
        let h = x.sin() * y.cos();
        let n = [-x.cos() * y.cos(), x.sin() * y.sin(), 1.0];
        let norm = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
        cloud.push(OrientedPoint::new([x, y, h], n.map(|c| c / norm)).unwrap());
        planar.push([x, y]);
        heights.push(h);
    }
    let grid = build_grid_from_points(&cloud, [0.25, 0.25]).unwrap();
    let [nx, ny] = grid.dims();
    let (mut checked, mut worst_oracle, mut worst_analytic) = (0, 0.0f64, 0.0f64);
    for i in 0..nx {
        for j in 0..ny {
            if grid.extrapolated_mask()[i * ny + j] {
                continue;
            }
            let p = grid.node_position(i, j);
            let h = grid.node(i, j).height;
            let Some(want) = delaunay_oracle(p, &planar, &heights) else {
                continue;
            };
            checked += 1;
            worst_oracle = worst_oracle.max((h - want).abs());
            worst_analytic = worst_analytic.max((h - p[0].sin() * p[1].cos()).abs());
        }
    }
    println!("scatter: {checked} nodes, max |grid - oracle| {worst_oracle:e}, max |grid - analytic| {worst_analytic:.4}");
    assert!(checked > 400);
    assert!(worst_oracle < 1e-9);
    assert!(worst_analytic < 0.25);
}

#[test]
fn sinusoidal_hills_peak_slope_matches_the_analytic_crest() {
    let profile = TerrainProfile::SinusoidalHills {
        amplitude: 1.0,
        kx: 0.5,
        ky: 0.0,
    };
    let g = build_grid_from_catalog(&profile, &Bounds::new(-8.0, 8.0, -1.0, 1.0), 0.05).unwrap();
    let max = g.slopes().iter().copied().fold(0.0, f64::max);
    let scan = (0..100_000)
        .map(|k| {
            let x = -8.0 + 16.0 * k as f64 / 99_999.0;
            (0.5 * (0.5 * x).cos()).abs().atan()
        })
        .fold(0.0, f64::max);
    assert!((scan - 0.5f64.atan()).abs() < 1e-9);
    assert!((max - 0.5f64.atan()).abs() < 1e-3, "{max}");
}
