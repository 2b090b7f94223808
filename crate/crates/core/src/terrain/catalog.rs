use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{TerrainError, TerrainGrid};

/// Axis-aligned planar box `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

/// Analytic height fields used to build simulation maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainProfile {
    Flat,
    /// Plane rising at `slope_deg` towards the azimuth `direction_deg`.
    TiltedPlane { slope_deg: f64, direction_deg: f64 },
    /// `h = amplitude * sin(kx * x) * cos(ky * y)`.
    SinusoidalHills { amplitude: f64, kx: f64, ky: f64 },
    /// Surface rising at `bank_deg` away from a centre segment of half length
    /// `half_length` along x; zero height at distance `radius` from it.
    BankedRing {
        bank_deg: f64,
        radius: f64,
        half_length: f64,
        center: [f64; 2],
    },
    /// Gaussian bowl of the given depth and width.
    Crater {
        depth: f64,
        width: f64,
        center: [f64; 2],
    },
}

impl TerrainProfile {
    /// Looks a profile up by name, filling unspecified parameters with defaults.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self, TerrainError> {
        let allowed: &[&str] = match name {
            "flat" => &[],
            "tilted_plane" => &["slope_deg", "direction_deg"],
            "sinusoidal_hills" => &["amplitude", "kx", "ky"],
            "banked_ring" => &["bank_deg", "radius", "half_length", "cx", "cy"],
            "crater" => &["depth", "width", "cx", "cy"],
            other => return Err(TerrainError::UnknownProfile(other.to_string())),
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(TerrainError::UnknownParameter {
                profile: name.to_string(),
                param: bad.clone(),
            });
        }
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        Ok(match name {
            "flat" => Self::Flat,
            "tilted_plane" => Self::TiltedPlane {
                slope_deg: get("slope_deg", 10.0),
                direction_deg: get("direction_deg", 0.0),
            },
            "sinusoidal_hills" => Self::SinusoidalHills {
                amplitude: get("amplitude", 1.0),
                kx: get("kx", 0.5),
                ky: get("ky", 0.0),
            },
            "banked_ring" => Self::BankedRing {
                bank_deg: get("bank_deg", 15.0),
                radius: get("radius", 3.0),
                half_length: get("half_length", 0.0),
                center: [get("cx", 0.0), get("cy", 0.0)],
            },
            _ => Self::Crater {
                depth: get("depth", 1.0),
                width: get("width", 2.0),
                center: [get("cx", 0.0), get("cy", 0.0)],
            },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::TiltedPlane { .. } => "tilted_plane",
            Self::SinusoidalHills { .. } => "sinusoidal_hills",
            Self::BankedRing { .. } => "banked_ring",
            Self::Crater { .. } => "crater",
        }
    }

    /// Height and its gradient `(dh/dx, dh/dy)` at `(x, y)`.
    pub fn height_and_gradient(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        match *self {
            Self::Flat => (0.0, [0.0, 0.0]),
            Self::TiltedPlane {
                slope_deg,
                direction_deg,
            } => {
                let g = slope_deg.to_radians().tan();
                let (s, c) = direction_deg.to_radians().sin_cos();
                (g * (c * x + s * y), [g * c, g * s])
            }
            Self::SinusoidalHills { amplitude, kx, ky } => {
                let (sx, cx) = (kx * x).sin_cos();
                let (sy, cy) = (ky * y).sin_cos();
                (
                    amplitude * sx * cy,
                    [amplitude * kx * cx * cy, -amplitude * ky * sx * sy],
                )
            }
            Self::BankedRing {
                bank_deg,
                radius,
                half_length,
                center,
            } => {
                let g = bank_deg.to_radians().tan();
                let (lx, ly) = (x - center[0], y - center[1]);
                let dx = (lx.abs() - half_length).max(0.0) * lx.signum();
                let d = dx.hypot(ly);
                let grad = if d > 0.0 {
                    [g * dx / d, g * ly / d]
                } else {
                    [0.0, 0.0]
                };
                (g * (d - radius), grad)
            }
            Self::Crater {
                depth,
                width,
                center,
            } => {
                let (lx, ly) = (x - center[0], y - center[1]);
                let w2 = width * width;
                let h = -depth * (-(lx * lx + ly * ly) / (2.0 * w2)).exp();
                (h, [-h * lx / w2, -h * ly / w2])
            }
        }
    }
}

/// Samples an analytic profile on a regular grid covering `bounds`.
///
/// The grid starts at the lower corner; the node count per axis is the
/// smallest that reaches the upper bound.
pub fn build_grid_from_catalog(
    profile: &TerrainProfile,
    bounds: &Bounds,
    spacing: f64,
) -> Result<TerrainGrid, TerrainError> {
    if !bounds.is_valid() || !(spacing > 0.0) || !spacing.is_finite() {
        return Err(TerrainError::InvalidBounds);
    }
    let nx = node_count(bounds.x_max - bounds.x_min, spacing);
    let ny = node_count(bounds.y_max - bounds.y_min, spacing);
    let mut height = Vec::with_capacity(nx * ny);
    let mut normal = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        let x = bounds.x_min + i as f64 * spacing;
        for j in 0..ny {
            let y = bounds.y_min + j as f64 * spacing;
            let (h, [gx, gy]) = profile.height_and_gradient(x, y);
            height.push(h);
            normal.push([-gx, -gy, 1.0]);
        }
    }
    TerrainGrid::from_fields(
        [bounds.x_min, bounds.y_min],
        [spacing, spacing],
        [nx, ny],
        height,
        normal,
        None,
    )
}

pub(crate) fn node_count(span: f64, spacing: f64) -> usize {
    ((span / spacing - 1e-9).ceil().max(1.0) as usize) + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_profile_names_the_valid_set() {
        let err = TerrainProfile::from_name("volcano", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, TerrainError::UnknownProfile(_)));
        assert!(err.to_string().contains("banked_ring"));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let params = BTreeMap::from([("amp".to_string(), 1.0)]);
        assert!(matches!(
            TerrainProfile::from_name("sinusoidal_hills", &params),
            Err(TerrainError::UnknownParameter { .. })
        ));
    }

    #[test]
    fn invalid_bounds() {
        let b = Bounds::new(1.0, 1.0, 0.0, 2.0);
        assert!(matches!(
            build_grid_from_catalog(&TerrainProfile::Flat, &b, 0.25),
            Err(TerrainError::InvalidBounds)
        ));
        let b = Bounds::new(0.0, 1.0, 0.0, 2.0);
        assert!(build_grid_from_catalog(&TerrainProfile::Flat, &b, 0.0).is_err());
    }

    #[test]
    fn flat_catalog_grid() {
        let grid = build_grid_from_catalog(
            &TerrainProfile::Flat,
            &Bounds::new(-1.0, 1.0, -1.0, 1.0),
            0.25,
        )
        .unwrap();
        assert_eq!(grid.dims(), [9, 9]);
        assert!(grid.heights().iter().all(|&h| h == 0.0));
        assert!(grid.normals().iter().all(|n| *n == [0.0, 0.0, 1.0]));
        assert!(grid.slopes().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn tilted_plane_has_constant_slope_and_orientation() {
        let grid = build_grid_from_catalog(
            &TerrainProfile::TiltedPlane {
                slope_deg: 10.0,
                direction_deg: 0.0,
            },
            &Bounds::new(0.0, 5.0, 0.0, 5.0),
            0.25,
        )
        .unwrap();
        let expected = 10f64.to_radians();
        assert!(grid.slopes().iter().all(|s| (s - expected).abs() < 1e-12));
        assert!(grid
            .orientations()
            .iter()
            .all(|p| (p - std::f64::consts::PI).abs() < 1e-12));
    }

    #[test]
    fn sinusoidal_hills_peak_slope_matches_dense_scan() {
        let (a, k) = (1.0, 0.5);
        // Independent dense scan of the slope of h = A sin(kx).
        let oracle = (0..200_001)
            .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
            .map(|x: f64| (a * k * (k * x).cos()).abs().atan())
            .fold(0.0, f64::max);
        assert!((oracle - 0.4636476090008061).abs() < 1e-9);

        let grid = build_grid_from_catalog(
            &TerrainProfile::SinusoidalHills {
                amplitude: a,
                kx: k,
                ky: 0.0,
            },
            &Bounds::new(-10.0, 10.0, -1.0, 1.0),
            0.25,
        )
        .unwrap();
        let max = grid.slopes().iter().copied().fold(0.0, f64::max);
        assert!((max - oracle).abs() < 1e-9, "{max} vs {oracle}");
    }

    #[test]
    fn banked_ring_slope_is_the_bank_angle_away_from_the_spine() {
        let profile = TerrainProfile::BankedRing {
            bank_deg: 15.0,
            radius: 3.0,
            half_length: 2.0,
            center: [0.0, 0.0],
        };
        for &(x, y) in &[(0.0, 3.0), (4.0, 1.0), (-5.0, -0.5), (1.0, -2.0)] {
            let (_, g) = profile.height_and_gradient(x, y);
            let slope = g[0].hypot(g[1]).atan();
            assert!((slope - 15f64.to_radians()).abs() < 1e-12);
        }
        let (h, _) = profile.height_and_gradient(0.0, 3.0);
        assert!(h.abs() < 1e-12);
    }
}
