use super::MppiError;

/// Reference sample used by the tracking cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefPoint {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub psi: f64,
}

/// Nearest point of a path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed distance, positive when the query lies left of the path.
    pub offset: f64,
}

/// Polyline with arc-length parameterization and a per-vertex speed profile.
///
/// A closed path repeats its first vertex at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
    speed: Vec<f64>,
    closed: bool,
}

impl Path {
    pub fn new(points: Vec<[f64; 2]>, speed: Vec<f64>, closed: bool) -> Result<Self, MppiError> {
        if points.len() < 2 || speed.len() != points.len() {
            return Err(MppiError::DegeneratePath(
                "need at least two points and one speed per point".into(),
            ));
        }
        if points.iter().flatten().chain(&speed).any(|v| !v.is_finite()) {
            return Err(MppiError::DegeneratePath("non-finite path data".into()));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            arc.push(arc.last().unwrap() + d);
        }
        if *arc.last().unwrap() <= 0.0 {
            return Err(MppiError::DegeneratePath("zero-length path".into()));
        }
        if closed {
            let (a, b) = (points[0], points[points.len() - 1]);
            if (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-9 {
                return Err(MppiError::DegeneratePath(
                    "closed path must end at its first point".into(),
                ));
            }
        }
        Ok(Self {
            points,
            arc,
            speed,
            closed,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speed
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    fn normalize(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.length())
        } else {
            s.clamp(0.0, self.length())
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        let k = self.arc.partition_point(|&a| a <= s);
        k.clamp(1, self.points.len() - 1) - 1
    }

    fn segment_heading(&self, k: usize) -> f64 {
        let (a, b) = (self.points[k], self.points[k + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Position, heading and target speed at arc length `s` (wrapped on
    /// closed paths, clamped on open ones).
    pub fn sample(&self, s: f64) -> RefPoint {
        let s = self.normalize(s);
        let k = self.segment_at(s);
        let len = self.arc[k + 1] - self.arc[k];
        let t = if len > 0.0 {
            ((s - self.arc[k]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (self.points[k], self.points[k + 1]);
        RefPoint {
            px: a[0] + t * (b[0] - a[0]),
            py: a[1] + t * (b[1] - a[1]),
            v: self.speed[k] + t * (self.speed[k + 1] - self.speed[k]),
            psi: self.segment_heading(k),
        }
    }

    fn project_segment(&self, k: usize, q: [f64; 2]) -> (f64, Projection) {
        let (a, b) = (self.points[k], self.points[k + 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (fx, fy) = (a[0] + t * dx, a[1] + t * dy);
        let (ex, ey) = (q[0] - fx, q[1] - fy);
        let dist = ex.hypot(ey);
        let cross = dx * ey - dy * ex;
        let offset = if cross < 0.0 { -dist } else { dist };
        (
            dist,
            Projection {
                s: self.arc[k] + t * (self.arc[k + 1] - self.arc[k]),
                offset,
            },
        )
    }

    /// Global nearest-point projection.
    pub fn project(&self, q: [f64; 2]) -> Projection {
        self.project_segments(q, 0..self.points.len() - 1)
    }

    /// Nearest-point projection restricted to arc lengths within `window` of
    /// `s_hint`; keeps progress tracking from jumping between nearby parts of
    /// the track.
    pub fn project_near(&self, q: [f64; 2], s_hint: f64, window: f64) -> Projection {
        if window * 2.0 >= self.length() {
            return self.project(q);
        }
        let segments = self.points.len() - 1;
        let lo = self.segment_at(self.normalize(s_hint - window));
        let hi = self.segment_at(self.normalize(s_hint + window));
        if lo <= hi {
            self.project_segments(q, lo..hi + 1)
        } else if self.closed {
            self.project_segments(q, (lo..segments).chain(0..hi + 1))
        } else {
            self.project_segments(q, 0..segments)
        }
    }

    fn project_segments(&self, q: [f64; 2], segments: impl Iterator<Item = usize>) -> Projection {
        let mut best: Option<(f64, Projection)> = None;
        for k in segments {
            let cand = self.project_segment(k, q);
            if best.as_ref().is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        }
        best.expect("path has at least one segment").1
    }
}

/// Reference states for a horizon: the path is advanced from `s0` at the
/// current speed, one sample per control interval.
pub fn reference_slice(path: &Path, s0: f64, speed: f64, horizon: usize, dt: f64) -> Vec<RefPoint> {
    let speed = speed.max(0.0);
    (0..=horizon)
        .map(|t| path.sample(s0 + speed * dt * t as f64))
        .collect()
}
