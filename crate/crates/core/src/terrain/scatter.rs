use delaunator::{triangulate, Point};

use super::catalog::node_count;
use super::{OrientedPoint, TerrainError, TerrainGrid};

/// Values carried per scattered point: height and the three normal components.
type Carried = [f64; 4];

fn carried(p: &OrientedPoint) -> Carried {
    [p.position[2], p.normal[0], p.normal[1], p.normal[2]]
}

/// Interpolates an oriented point cloud onto a regular grid.
///
/// Height and each normal component are interpolated linearly over a Delaunay
/// triangulation of the planar positions. Nodes outside the convex hull take
/// the value at the nearest point of the hull boundary and are flagged as
/// extrapolated.
pub fn build_grid_from_points(
    points: &[OrientedPoint],
    spacing: [f64; 2],
) -> Result<TerrainGrid, TerrainError> {
    if !(spacing[0] > 0.0 && spacing[1] > 0.0) || spacing.iter().any(|s| !s.is_finite()) {
        return Err(TerrainError::InvalidBounds);
    }
    if points
        .iter()
        .any(|p| p.position.iter().chain(p.normal.iter()).any(|v| !v.is_finite()))
    {
        return Err(TerrainError::NonFiniteInput);
    }
    if points.len() < 3 {
        return Err(TerrainError::DegenerateCloud);
    }
    let planar: Vec<Point> = points
        .iter()
        .map(|p| Point {
            x: p.position[0],
            y: p.position[1],
        })
        .collect();
    let tri = triangulate(&planar);
    if tri.triangles.is_empty() {
        return Err(TerrainError::DegenerateCloud);
    }

    let (mut x_min, mut x_max, mut y_min, mut y_max) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &planar {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    let nx = node_count(x_max - x_min, spacing[0]);
    let ny = node_count(y_max - y_min, spacing[1]);
    let node = |i: usize, j: usize| {
        [
            x_min + i as f64 * spacing[0],
            y_min + j as f64 * spacing[1],
        ]
    };

    let mut values: Vec<Option<Carried>> = vec![None; nx * ny];
    for t in tri.triangles.chunks_exact(3) {
        let (a, b, c) = (&planar[t[0]], &planar[t[1]], &planar[t[2]]);
        let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
        if det == 0.0 {
            continue;
        }
        let va = carried(&points[t[0]]);
        let vb = carried(&points[t[1]]);
        let vc = carried(&points[t[2]]);
        let lo_x = a.x.min(b.x).min(c.x);
        let hi_x = a.x.max(b.x).max(c.x);
        let lo_y = a.y.min(b.y).min(c.y);
        let hi_y = a.y.max(b.y).max(c.y);
        let i0 = ((lo_x - x_min) / spacing[0]).floor().max(0.0) as usize;
        let i1 = (((hi_x - x_min) / spacing[0]).ceil() as usize).min(nx - 1);
        let j0 = ((lo_y - y_min) / spacing[1]).floor().max(0.0) as usize;
        let j1 = (((hi_y - y_min) / spacing[1]).ceil() as usize).min(ny - 1);
        for i in i0..=i1 {
            for j in j0..=j1 {
                let slot = &mut values[i * ny + j];
                if slot.is_some() {
                    continue;
                }
                let [x, y] = node(i, j);
                let wa = ((b.y - c.y) * (x - c.x) + (c.x - b.x) * (y - c.y)) / det;
                let wb = ((c.y - a.y) * (x - c.x) + (a.x - c.x) * (y - c.y)) / det;
                let wc = 1.0 - wa - wb;
                const EPS: f64 = -1e-12;
                if wa >= EPS && wb >= EPS && wc >= EPS {
                    *slot = Some(std::array::from_fn(|k| wa * va[k] + wb * vb[k] + wc * vc[k]));
                }
            }
        }
    }

    let hull = &tri.hull;
    let mut extrapolated = vec![false; nx * ny];
    let mut height = Vec::with_capacity(nx * ny);
    let mut normal = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let k = i * ny + j;
            let v = match values[k] {
                Some(v) => v,
                None => {
                    extrapolated[k] = true;
                    nearest_on_hull(node(i, j), hull, &planar, points)
                }
            };
            height.push(v[0]);
            normal.push([v[1], v[2], v[3]]);
        }
    }
    TerrainGrid::from_fields(
        [x_min, y_min],
        spacing,
        [nx, ny],
        height,
        normal,
        Some(extrapolated),
    )
}

/// Linear interpolation of the carried values at the hull point closest to `q`.
fn nearest_on_hull(
    q: [f64; 2],
    hull: &[usize],
    planar: &[Point],
    points: &[OrientedPoint],
) -> Carried {
    let mut best = (f64::INFINITY, carried(&points[hull[0]]));
    for e in 0..hull.len() {
        let (ia, ib) = (hull[e], hull[(e + 1) % hull.len()]);
        let (a, b) = (&planar[ia], &planar[ib]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((q[0] - a.x) * dx + (q[1] - a.y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (a.x + t * dx, a.y + t * dy);
        let d2 = (q[0] - px).powi(2) + (q[1] - py).powi(2);
        if d2 < best.0 {
            let (va, vb) = (carried(&points[ia]), carried(&points[ib]));
            best = (d2, std::array::from_fn(|k| va[k] + t * (vb[k] - va[k])));
        }
    }
    best.1
}
