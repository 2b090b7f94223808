use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleParams, GRAVITY};
use crate::mppi::{MppiError, Path};
use crate::terrain::{
    build_grid_from_catalog, Bounds, MapStats, TerrainError, TerrainGrid, TerrainProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackShape {
    Kidney,
    LShape,
    Oval,
}

impl TrackShape {
    pub const NAMES: [&'static str; 3] = ["kidney", "l_shape", "oval"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Kidney => "kidney",
            Self::LShape => "l_shape",
            Self::Oval => "oval",
        }
    }
}

impl std::str::FromStr for TrackShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kidney" => Ok(Self::Kidney),
            "l_shape" => Ok(Self::LShape),
            "oval" => Ok(Self::Oval),
            other => Err(format!(
                "unknown shape '{other}', expected one of: {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub shape: TrackShape,
    /// Geometric scale factor on the base layout.
    #[serde(default = "one")]
    pub scale: f64,
    /// Terrain profile name from the analytic catalog.
    pub profile: String,
    /// Profile parameters; omitted geometric parameters of `banked_ring` are
    /// fitted to the track.
    #[serde(default)]
    pub profile_params: BTreeMap<String, f64>,
    /// Speed cap of the reference profile, m/s.
    #[serde(default = "default_speed")]
    pub target_speed: f64,
    /// Fraction of `mu g` allowed as nominal lateral acceleration.
    #[serde(default = "default_lateral_fraction")]
    pub lateral_accel_fraction: f64,
    /// Longitudinal acceleration limit of the speed profile, m/s^2.
    #[serde(default = "default_long_accel")]
    pub longitudinal_accel: f64,
    /// Free terrain around the track, m.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_grid_spacing")]
    pub grid_spacing: f64,
    /// Polyline resolution, m.
    #[serde(default = "default_point_spacing")]
    pub point_spacing: f64,
}

fn one() -> f64 {
    1.0
}
fn default_speed() -> f64 {
    3.5
}
fn default_lateral_fraction() -> f64 {
    0.6
}
fn default_long_accel() -> f64 {
    2.0
}
fn default_margin() -> f64 {
    3.0
}
fn default_grid_spacing() -> f64 {
    crate::terrain::DEFAULT_SPACING
}
fn default_point_spacing() -> f64 {
    0.05
}

impl TrackConfig {
    pub fn new(shape: TrackShape, profile: &str) -> Self {
        Self {
            shape,
            scale: 1.0,
            profile: profile.to_string(),
            profile_params: BTreeMap::new(),
            target_speed: default_speed(),
            lateral_accel_fraction: default_lateral_fraction(),
            longitudinal_accel: default_long_accel(),
            margin: default_margin(),
            grid_spacing: default_grid_spacing(),
            point_spacing: default_point_spacing(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Path(#[from] MppiError),
}

/// Reference path, its terrain and the map statistics.
#[derive(Debug, Clone)]
pub struct Track {
    pub shape: TrackShape,
    pub path: Path,
    pub grid: TerrainGrid,
    pub profile: TerrainProfile,
    pub stats: MapStats,
}

/// Rounds the corners of a closed polygon with circular arcs of `radius` and
/// samples the outline at roughly `ds`. The first point is repeated at the end.
fn rounded_polygon(vertices: &[[f64; 2]], radius: f64, ds: f64) -> Vec<[f64; 2]> {
    let n = vertices.len();
    let mut arcs = Vec::with_capacity(n);
    for k in 0..n {
        let prev = vertices[(k + n - 1) % n];
        let v = vertices[k];
        let next = vertices[(k + 1) % n];
        let d1 = unit([v[0] - prev[0], v[1] - prev[1]]);
        let d2 = unit([next[0] - v[0], next[1] - v[1]]);
        let turn = (d1[0] * d2[1] - d1[1] * d2[0]).atan2(d1[0] * d2[0] + d1[1] * d2[1]);
        let t = radius * (turn.abs() / 2.0).tan();
        let start = [v[0] - d1[0] * t, v[1] - d1[1] * t];
        let end = [v[0] + d2[0] * t, v[1] + d2[1] * t];
        let side = turn.signum();
        let center = [start[0] - side * d1[1] * radius, start[1] + side * d1[0] * radius];
        arcs.push((start, end, center, turn));
    }
    let mut out: Vec<[f64; 2]> = Vec::new();
    for k in 0..n {
        let (start, end, center, turn) = arcs[k];
        let a0 = (start[1] - center[1]).atan2(start[0] - center[0]);
        let steps = ((radius * turn.abs()) / ds).ceil().max(1.0) as usize;
        for i in 0..steps {
            let a = a0 + turn * i as f64 / steps as f64;
            out.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        }
        let next_start = arcs[(k + 1) % n].0;
        let len = (next_start[0] - end[0]).hypot(next_start[1] - end[1]);
        if len < 1e-9 {
            continue;
        }
        let steps = (len / ds).ceil().max(1.0) as usize;
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            out.push([end[0] + t * (next_start[0] - end[0]), end[1] + t * (next_start[1] - end[1])]);
        }
    }
    out.push(out[0]);
    out
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn kidney(scale: f64, ds: f64) -> Vec<[f64; 2]> {
    // Dimpled limacon r = b + a cos(t), counter-clockwise.
    let (b, a) = (4.0 * scale, 2.2 * scale);
    let r = |t: f64| b + a * t.cos();
    let fine = 20_000;
    let pts: Vec<[f64; 2]> = (0..fine)
        .map(|i| {
            let t = TAU * i as f64 / fine as f64;
            [r(t) * t.cos(), r(t) * t.sin()]
        })
        .collect();
    resample_closed(&pts, ds)
}

/// Even arc-length resampling of a densely sampled closed curve.
fn resample_closed(pts: &[[f64; 2]], ds: f64) -> Vec<[f64; 2]> {
    let mut arc = vec![0.0];
    for k in 0..pts.len() {
        let (p, q) = (pts[k], pts[(k + 1) % pts.len()]);
        arc.push(arc[k] + (q[0] - p[0]).hypot(q[1] - p[1]));
    }
    let total = arc[pts.len()];
    let n = (total / ds).round().max(3.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / n as f64;
        while arc[seg + 1] < s {
            seg += 1;
        }
        let (p, q) = (pts[seg], pts[(seg + 1) % pts.len()]);
        let len = arc[seg + 1] - arc[seg];
        let t = if len > 0.0 { (s - arc[seg]) / len } else { 0.0 };
        out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
    }
    out.push(out[0]);
    out
}

/// Moving-average smoothing of a closed polyline over an arc-length window;
/// ramps the curvature where arcs meet straights. Returns an evenly resampled
/// closed polyline.
fn smooth_closed(closed: &[[f64; 2]], window: f64, ds: f64) -> Vec<[f64; 2]> {
    let fine_ds = 0.01;
    let mut fine = resample_closed(&closed[..closed.len() - 1], fine_ds);
    fine.pop();
    let n = fine.len();
    let half = ((window / fine_ds) / 2.0).round() as usize;
    let width = (2 * half + 1) as f64;
    let avg: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let mut acc = [0.0, 0.0];
            for j in 0..=2 * half {
                let q = fine[(i + n + j - half) % n];
                acc[0] += q[0];
                acc[1] += q[1];
            }
            [acc[0] / width, acc[1] / width]
        })
        .collect();
    resample_closed(&avg, ds)
}

/// Arc-length window of the corner smoothing, m.
const CORNER_SMOOTHING: f64 = 1.5;

/// Base oval layout: straight half length and turn radius.
fn oval_geometry(scale: f64) -> (f64, f64) {
    (3.0 * scale, 3.0 * scale)
}

fn centerline(shape: TrackShape, scale: f64, ds: f64) -> Vec<[f64; 2]> {
    match shape {
        TrackShape::Oval => {
            let (half, radius) = oval_geometry(scale);
            let w = half + radius;
            let rect = [[-w, -radius], [w, -radius], [w, radius], [-w, radius]];
            let mut pts = smooth_closed(&rounded_polygon(&rect, radius, ds), CORNER_SMOOTHING * scale, ds);
            // Start mid-way along the lower straight.
            let start = pts
                .iter()
                .position(|p| p[0] >= 0.0 && p[1] < 0.0)
                .unwrap_or(0);
            pts.pop();
            pts.rotate_left(start);
            pts.push(pts[0]);
            pts
        }
        TrackShape::Kidney => kidney(scale, ds),
        TrackShape::LShape => {
            let s = scale;
            let poly = [
                [0.0, 0.0],
                [11.0 * s, 0.0],
                [11.0 * s, 4.5 * s],
                [5.0 * s, 4.5 * s],
                [5.0 * s, 10.0 * s],
                [0.0, 10.0 * s],
            ]
            .map(|[x, y]| [x - 5.5 * s, y - 5.0 * s]);
            let mut pts = smooth_closed(&rounded_polygon(&poly, 2.0 * s, ds), CORNER_SMOOTHING * s, ds);
            let start = pts
                .iter()
                .position(|p| p[0] >= 0.0 && p[1] < -3.0 * s)
                .unwrap_or(0);
            pts.pop();
            pts.rotate_left(start);
            pts.push(pts[0]);
            pts
        }
    }
}

/// Unsigned curvature at each vertex of a closed polyline from the circle
/// through its neighbours.
fn curvature_closed(pts: &[[f64; 2]]) -> Vec<f64> {
    let n = pts.len() - 1;
    (0..=n)
        .map(|k| {
            let k = k % n;
            let (a, b, c) = (pts[(k + n - 1) % n], pts[k], pts[(k + 1) % n]);
            let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
            let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
            let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
            let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            let denom = ab * bc * ca;
            if denom > 0.0 {
                2.0 * cross.abs() / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Curvature-capped speed with forward and backward acceleration limits.
fn speed_profile(pts: &[[f64; 2]], cfg: &TrackConfig, friction: f64) -> Vec<f64> {
    let kappa = curvature_closed(pts);
    let a_lat = cfg.lateral_accel_fraction * friction * GRAVITY;
    let mut v: Vec<f64> = kappa
        .iter()
        .map(|&k| {
            if k > 1e-9 {
                cfg.target_speed.min((a_lat / k).sqrt())
            } else {
                cfg.target_speed
            }
        })
        .collect();
    let n = v.len();
    let seg = |k: usize| (pts[k + 1][0] - pts[k][0]).hypot(pts[k + 1][1] - pts[k][1]);
    // Two sweeps each way cover the wrap-around of the closed loop.
    for _ in 0..2 {
        for k in 0..n - 1 {
            let lim = (v[k] * v[k] + 2.0 * cfg.longitudinal_accel * seg(k)).sqrt();
            v[k + 1] = v[k + 1].min(lim);
        }
        v[0] = v[0].min(v[n - 1]);
        for k in (0..n - 1).rev() {
            let lim = (v[k + 1] * v[k + 1] + 2.0 * cfg.longitudinal_accel * seg(k)).sqrt();
            v[k] = v[k].min(lim);
        }
        v[n - 1] = v[n - 1].min(v[0]);
    }
    v
}

fn fitted_profile(cfg: &TrackConfig, pts: &[[f64; 2]]) -> Result<TerrainProfile, TrackError> {
    let mut params = cfg.profile_params.clone();
    if cfg.profile == "banked_ring" {
        let (half, radius) = match cfg.shape {
            TrackShape::Oval => oval_geometry(cfg.scale),
            _ => {
                let mean_r = pts.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / pts.len() as f64;
                (0.0, mean_r)
            }
        };
        params.entry("radius".into()).or_insert(radius);
        params.entry("half_length".into()).or_insert(half);
    }
    Ok(TerrainProfile::from_name(&cfg.profile, &params)?)
}

/// Builds the closed centerline with its speed profile and the terrain grid
/// covering it plus a margin.
pub fn generate_track(cfg: &TrackConfig, vehicle: &VehicleParams) -> Result<Track, TrackError> {
    let positive = [
        ("scale", cfg.scale),
        ("target_speed", cfg.target_speed),
        ("lateral_accel_fraction", cfg.lateral_accel_fraction),
        ("longitudinal_accel", cfg.longitudinal_accel),
        ("grid_spacing", cfg.grid_spacing),
        ("point_spacing", cfg.point_spacing),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(TrackError::InvalidConfig(format!("track.{name} must be positive")));
        }
    }
    if !(cfg.margin >= 0.0 && cfg.margin.is_finite()) {
        return Err(TrackError::InvalidConfig("track.margin must be non-negative".into()));
    }
    let pts = centerline(cfg.shape, cfg.scale, cfg.point_spacing);
    let speed = speed_profile(&pts, cfg, vehicle.friction);
    let profile = fitted_profile(cfg, &pts)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let m = cfg.margin;
    let grid = build_grid_from_catalog(
        &profile,
        &Bounds::new(x0 - m, x1 + m, y0 - m, y1 + m),
        cfg.grid_spacing,
    )?;
    let stats = MapStats::from_grid(&grid);
    let path = Path::new(pts, speed, true)?;
    Ok(Track {
        shape: cfg.shape,
        path,
        grid,
        profile,
        stats,
    })
}

/// Heading of the first segment, used as the start pose.
pub(crate) fn start_heading(path: &Path) -> f64 {
    let p = path.points();
    (p[1][1] - p[0][1]).atan2(p[1][0] - p[0][0])
}

pub const REFERENCE_CSV_HEADER: &str = "s,px,py,v";

/// Writes the reference polyline, one vertex per row, in shortest round-trip
/// float form.
pub fn write_reference_csv<W: std::io::Write>(path: &Path, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REFERENCE_CSV_HEADER}")?;
    let mut s = 0.0;
    let pts = path.points();
    for (k, (p, v)) in pts.iter().zip(path.speeds()).enumerate() {
        if k > 0 {
            s += (p[0] - pts[k - 1][0]).hypot(p[1] - pts[k - 1][1]);
        }
        writeln!(out, "{s},{},{},{v}", p[0], p[1])?;
    }
    Ok(())
}

/// Reads a reference polyline written by [`write_reference_csv`]; it is
/// closed when its last vertex repeats the first.
pub fn read_reference_csv<R: std::io::BufRead>(input: R) -> Result<Path, TrackError> {
    let mut points = Vec::new();
    let mut speeds = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TrackError::InvalidConfig(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == REFERENCE_CSV_HEADER) {
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match fields {
            Ok(f) if f.len() == 4 => {
                points.push([f[1], f[2]]);
                speeds.push(f[3]);
            }
            _ => {
                return Err(TrackError::InvalidConfig(format!(
                    "reference line {}: expected four numbers",
                    n + 1
                )))
            }
        }
    }
    let closed = points.len() > 2 && points.first() == points.last();
    Ok(Path::new(points, speeds, closed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vehicle() -> VehicleParams {
        VehicleParams::small_scale_racer()
    }

    #[test]
    fn all_shapes_are_closed_and_counter_clockwise() {
        for shape in [TrackShape::Kidney, TrackShape::LShape, TrackShape::Oval] {
            let t = generate_track(&TrackConfig::new(shape, "flat"), &vehicle()).unwrap();
            let p = t.path.points();
            let (a, b) = (p[0], p[p.len() - 1]);
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            let area: f64 = p.windows(2).map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1]).sum();
            assert!(area > 0.0, "{shape:?}");
            assert!(t.path.length() > 20.0 && t.path.length() < 45.0, "{}", t.path.length());
            for q in p {
                assert!(t.grid.contains(q[0], q[1]));
            }
        }
    }

    #[test]
    fn flat_oval_has_zero_relief() {
        let t = generate_track(&TrackConfig::new(TrackShape::Oval, "flat"), &vehicle()).unwrap();
        assert_eq!(t.stats.max_slope_deg, 0.0);
        assert_eq!(t.stats.elevation_range, 0.0);
    }

    #[test]
    fn banked_oval_reports_the_bank_angle() {
        let mut cfg = TrackConfig::new(TrackShape::Oval, "banked_ring");
        cfg.profile_params.insert("bank_deg".into(), 15.0);
        let t = generate_track(&cfg, &vehicle()).unwrap();
        assert!((t.stats.max_slope_deg - 15.0).abs() <= 0.5);
        // The centerline runs at the foot of the bank, height zero.
        for p in t.path.points().iter().step_by(17) {
            let h = t.grid.query(p[0], p[1]).unwrap().height;
            assert!(h.abs() < 1e-2, "{h}");
        }
    }

    #[test]
    fn speed_profile_respects_lateral_limit() {
        let cfg = TrackConfig::new(TrackShape::LShape, "flat");
        let t = generate_track(&cfg, &vehicle()).unwrap();
        let kappa = curvature_closed(t.path.points());
        let a_lat = 0.6 * vehicle().friction * GRAVITY;
        for (k, v) in kappa.iter().zip(t.path.speeds()) {
            assert!(v * v * k <= a_lat * (1.0 + 1e-9));
            assert!(*v <= cfg.target_speed);
        }
    }

    #[test]
    fn unknown_shape_lists_the_valid_set() {
        let err = "figure_eight".parse::<TrackShape>().unwrap_err();
        assert!(err.contains("kidney") && err.contains("l_shape") && err.contains("oval"));
    }

    #[test]
    fn reference_csv_round_trip_is_exact() {
        let t = generate_track(&TrackConfig::new(TrackShape::Kidney, "flat"), &vehicle()).unwrap();
        let mut buf = Vec::new();
        write_reference_csv(&t.path, &mut buf).unwrap();
        let back = read_reference_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t.path);
        assert!(read_reference_csv("s,px,py,v\n1,2\n".as_bytes()).is_err());
    }
}
