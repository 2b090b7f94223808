//! Terrain fields on a regular planar grid.
//!
//! A [`TerrainGrid`] stores the height `h`, the upward unit normal `n`, the
//! slope angle `theta = acos(|n_z|)` and the orientation angle
//! `phi = atan2(n_y, n_x)` at every node. Queries interpolate height and the
//! normal components bilinearly, renormalize the normal, and recompute both
//! angles from it so that no angle is ever interpolated across a wrap.

mod catalog;
mod io;
mod scatter;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use catalog::{build_grid_from_catalog, Bounds, TerrainProfile};
pub use io::{read_point_cloud, read_terrain, write_terrain, TERRAIN_MAGIC, TERRAIN_VERSION};
pub use scatter::build_grid_from_points;

/// Default node spacing in metres.
pub const DEFAULT_SPACING: f64 = 0.25;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("point cloud is degenerate: planar positions are collinear or fewer than three")]
    DegenerateCloud,
    #[error("non-finite value in terrain input")]
    NonFiniteInput,
    #[error("unknown terrain profile `{0}` (valid: flat, tilted_plane, sinusoidal_hills, banked_ring, crater)")]
    UnknownProfile(String),
    #[error("unknown parameter `{param}` for profile `{profile}`")]
    UnknownParameter { profile: String, param: String },
    #[error("invalid bounds or spacing")]
    InvalidBounds,
    #[error("query point ({0}, {1}) is outside the grid")]
    OutOfBounds(f64, f64),
    #[error("normal is not unit length (norm {0})")]
    NonUnitNormal(f64),
    #[error("malformed terrain data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sampled surface point with its upward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: [f64; 3],
    pub normal: [f64; 3],
}

impl OrientedPoint {
    /// Normalizes the normal and flips it so that `n_z >= 0`.
    pub fn new(position: [f64; 3], normal: [f64; 3]) -> Result<Self, TerrainError> {
        if position.iter().chain(normal.iter()).any(|v| !v.is_finite()) {
            return Err(TerrainError::NonFiniteInput);
        }
        let norm = norm3(&normal);
        if norm == 0.0 {
            return Err(TerrainError::NonUnitNormal(0.0));
        }
        let sign = if normal[2] < 0.0 { -1.0 } else { 1.0 };
        let normal = normal.map(|c| sign * c / norm);
        Ok(Self { position, normal })
    }
}

/// Roll and pitch taking the global frame onto the local tangent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RollPitch {
    pub roll: f64,
    pub pitch: f64,
}

/// Interpolated terrain fields at a planar location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainSample {
    pub height: f64,
    pub normal: [f64; 3],
    pub slope: f64,
    pub orientation: f64,
}

#[derive(Debug)]
pub struct TerrainGrid {
    origin: [f64; 2],
    spacing: [f64; 2],
    dims: [usize; 2],
    height: Vec<f64>,
    normal: Vec<[f64; 3]>,
    slope: Vec<f64>,
    orientation: Vec<f64>,
    extrapolated: Vec<bool>,
    fringe_queries: AtomicU64,
}

impl Clone for TerrainGrid {
    fn clone(&self) -> Self {
        Self {
            origin: self.origin,
            spacing: self.spacing,
            dims: self.dims,
            height: self.height.clone(),
            normal: self.normal.clone(),
            slope: self.slope.clone(),
            orientation: self.orientation.clone(),
            extrapolated: self.extrapolated.clone(),
            fringe_queries: AtomicU64::new(self.fringe_queries.load(Ordering::Relaxed)),
        }
    }
}

impl TerrainGrid {
    /// Assembles a grid from node arrays laid out row-major with the x index
    /// as the row: node `(i, j)` lives at `i * dims[1] + j`.
    ///
    /// Normals are renormalized and flipped upward; slope and orientation are
    /// derived from them.
    pub fn from_fields(
        origin: [f64; 2],
        spacing: [f64; 2],
        dims: [usize; 2],
        height: Vec<f64>,
        normal: Vec<[f64; 3]>,
        extrapolated: Option<Vec<bool>>,
    ) -> Result<Self, TerrainError> {
        let count = dims[0] * dims[1];
        if dims[0] < 2 || dims[1] < 2 || !(spacing[0] > 0.0 && spacing[1] > 0.0) {
            return Err(TerrainError::InvalidBounds);
        }
        if origin.iter().chain(spacing.iter()).any(|v| !v.is_finite()) {
            return Err(TerrainError::NonFiniteInput);
        }
        if height.len() != count || normal.len() != count {
            return Err(TerrainError::Format(format!(
                "expected {count} nodes, got {} heights and {} normals",
                height.len(),
                normal.len()
            )));
        }
        if height.iter().any(|h| !h.is_finite())
            || normal.iter().flatten().any(|c| !c.is_finite())
        {
            return Err(TerrainError::NonFiniteInput);
        }
        let normal: Vec<[f64; 3]> = normal.into_iter().map(upward_unit).collect();
        let slope = normal.iter().map(slope_of).collect();
        let orientation = normal.iter().map(orientation_of).collect();
        let extrapolated = extrapolated.unwrap_or_else(|| vec![false; count]);
        if extrapolated.len() != count {
            return Err(TerrainError::Format("extrapolation mask has the wrong size".into()));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            height,
            normal,
            slope,
            orientation,
            extrapolated,
            fringe_queries: AtomicU64::new(0),
        })
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    /// Upper corner of the covered box.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.origin[0] + (self.dims[0] - 1) as f64 * self.spacing[0],
            self.origin[1] + (self.dims[1] - 1) as f64 * self.spacing[1],
        ]
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
        ]
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        i * self.dims[1] + j
    }

    pub fn heights(&self) -> &[f64] {
        &self.height
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normal
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    pub fn orientations(&self) -> &[f64] {
        &self.orientation
    }

    pub fn extrapolated_mask(&self) -> &[bool] {
        &self.extrapolated
    }

    /// Stored values at node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> TerrainSample {
        let k = self.index(i, j);
        TerrainSample {
            height: self.height[k],
            normal: self.normal[k],
            slope: self.slope[k],
            orientation: self.orientation[k],
        }
    }

    /// Number of queries that landed in a cell touching an extrapolated node.
    pub fn fringe_query_count(&self) -> u64 {
        self.fringe_queries.load(Ordering::Relaxed)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let ext = self.extent();
        x >= self.origin[0] && x <= ext[0] && y >= self.origin[1] && y <= ext[1]
    }

    /// Locates the cell holding `(x, y)` and the fractional offsets inside it.
    #[inline]
    fn locate(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64), TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds(x, y));
        }
        let fx = (x - self.origin[0]) / self.spacing[0];
        let fy = (y - self.origin[1]) / self.spacing[1];
        let i = (fx.floor() as usize).min(self.dims[0] - 2);
        let j = (fy.floor() as usize).min(self.dims[1] - 2);
        let k = [
            self.index(i, j),
            self.index(i + 1, j),
            self.index(i, j + 1),
            self.index(i + 1, j + 1),
        ];
        if k.iter().any(|&k| self.extrapolated[k]) {
            self.fringe_queries.fetch_add(1, Ordering::Relaxed);
        }
        Ok((i, j, fx - i as f64, fy - j as f64))
    }

    #[inline]
    fn blend_normal(&self, i: usize, j: usize, tx: f64, ty: f64) -> [f64; 3] {
        let n00 = self.normal[self.index(i, j)];
        let n10 = self.normal[self.index(i + 1, j)];
        let n01 = self.normal[self.index(i, j + 1)];
        let n11 = self.normal[self.index(i + 1, j + 1)];
        let raw = std::array::from_fn(|c| bilerp(n00[c], n10[c], n01[c], n11[c], tx, ty));
        upward_unit(raw)
    }

    /// Interpolated unit normal only; the hot path for rollouts.
    #[inline]
    pub fn query_normal(&self, x: f64, y: f64) -> Result<[f64; 3], TerrainError> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        Ok(self.blend_normal(i, j, tx, ty))
    }

    /// Height, normal, slope and orientation at `(x, y)`.
    pub fn query(&self, x: f64, y: f64) -> Result<TerrainSample, TerrainError> {
        let (i, j, tx, ty) = self.locate(x, y)?;
        let height = bilerp(
            self.height[self.index(i, j)],
            self.height[self.index(i + 1, j)],
            self.height[self.index(i, j + 1)],
            self.height[self.index(i + 1, j + 1)],
            tx,
            ty,
        );
        let normal = self.blend_normal(i, j, tx, ty);
        Ok(TerrainSample {
            height,
            normal,
            slope: slope_of(&normal),
            orientation: orientation_of(&normal),
        })
    }

    /// Roll and pitch of the tangent frame at `(x, y)`.
    #[inline]
    pub fn roll_pitch(&self, x: f64, y: f64) -> Result<RollPitch, TerrainError> {
        let n = self.query_normal(x, y)?;
        Ok(roll_pitch_unchecked(&n))
    }
}

#[inline]
fn bilerp(v00: f64, v10: f64, v01: f64, v11: f64, tx: f64, ty: f64) -> f64 {
    let lo = v00 + (v10 - v00) * tx;
    let hi = v01 + (v11 - v01) * tx;
    lo + (hi - lo) * ty
}

#[inline]
pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Unit vector with non-negative z; a zero vector maps to `+e_z`.
#[inline]
pub(crate) fn upward_unit(v: [f64; 3]) -> [f64; 3] {
    let norm = norm3(&v);
    if norm == 0.0 || !norm.is_finite() {
        return [0.0, 0.0, 1.0];
    }
    // Already-unit vectors are kept as is so that storing and reloading a
    // grid is bit-exact.
    let scale = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        1.0
    } else {
        1.0 / norm
    };
    let s = if v[2] < 0.0 { -scale } else { scale };
    [v[0] * s, v[1] * s, v[2] * s]
}

/// `acos(|n_z|)`, the inclination of the surface against the vertical.
#[inline]
pub fn slope_of(n: &[f64; 3]) -> f64 {
    n[2].abs().min(1.0).acos()
}

/// `atan2(n_y, n_x)` in `(-pi, pi]`, with `0` on perfectly flat normals.
#[inline]
pub fn orientation_of(n: &[f64; 3]) -> f64 {
    if n[0] == 0.0 && n[1] == 0.0 {
        return 0.0;
    }
    let phi = n[1].atan2(n[0]);
    if phi <= -std::f64::consts::PI {
        phi + 2.0 * std::f64::consts::PI
    } else {
        phi
    }
}

/// Roll `alpha = atan2(n_y, n_z)` and pitch `gamma = atan2(-n_x, sqrt(n_y^2 + n_z^2))`.
pub fn roll_pitch_from_normal(n: &[f64; 3]) -> Result<RollPitch, TerrainError> {
    let norm = norm3(n);
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(TerrainError::NonUnitNormal(norm));
    }
    if n[2] < 0.0 {
        return Err(TerrainError::NonUnitNormal(norm));
    }
    Ok(roll_pitch_unchecked(n))
}

#[inline]
fn roll_pitch_unchecked(n: &[f64; 3]) -> RollPitch {
    RollPitch {
        roll: n[1].atan2(n[2]),
        pitch: (-n[0]).atan2((n[1] * n[1] + n[2] * n[2]).sqrt()),
    }
}

/// Summary statistics of a grid in the style of a map report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapStats {
    pub min_elevation: f64,
    pub max_elevation: f64,
    pub elevation_range: f64,
    pub max_slope_deg: f64,
    pub median_slope_deg: f64,
}

impl MapStats {
    pub fn from_grid(grid: &TerrainGrid) -> Self {
        let min = grid.height.iter().copied().fold(f64::INFINITY, f64::min);
        let max = grid.height.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut slopes: Vec<f64> = grid.slope.iter().map(|s| s.to_degrees()).collect();
        slopes.sort_by(f64::total_cmp);
        let n = slopes.len();
        let median = if n % 2 == 1 {
            slopes[n / 2]
        } else {
            0.5 * (slopes[n / 2 - 1] + slopes[n / 2])
        };
        Self {
            min_elevation: min,
            max_elevation: max,
            elevation_range: max - min,
            max_slope_deg: slopes[n - 1],
            median_slope_deg: median,
        }
    }

    /// Key-value report, one metric per line.
    pub fn to_report(&self) -> String {
        format!(
            "Min elevation (m) = {:.3}\nMax elevation (m) = {:.3}\nElevation range (m) = {:.3}\nMax slope (degrees) = {:.3}\nMedian slope (degrees) = {:.3}\n",
            self.min_elevation,
            self.max_elevation,
            self.elevation_range,
            self.max_slope_deg,
            self.median_slope_deg
        )
    }
}
