//! Synthetic nonplanar ground-truth plant, track generation and the closed
//! loop used for evaluation.
//!
//! The plant is the nominal single-track model with terrain couplings added to
//! the derivative:
//!
//! ```text
//! v_dot    += -k_a g sin(gamma_h)
//! beta_dot +=  k_beta g / max(v, v_floor) sin(alpha_h)
//! r_dot    +=  k_r r (sec(theta) - 1)
//! ```
//!
//! where `gamma_h = gamma cos(psi) - alpha sin(psi)` is the slope angle along
//! the heading and `alpha_h = alpha cos(psi) + gamma sin(psi)` the lateral one.

mod closed_loop;
mod track;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    clamp_state, ode_step, rk4, st_derivative, ControlInput, DynamicsError, StepError,
    VehicleParams, VehicleState, STATE_DIM,
};
use crate::terrain::TerrainGrid;

pub use closed_loop::{
    collect_dataset, cross_track_error, histogram, run_closed_loop, summarize, write_diagnostics_csv,
    write_histogram_csv, write_run_csv, CollectConfig, CollectOutcome, ControllerMode, LoopConfig,
    RunError, RunLog, RunRecord, RunSummary, Termination, RUN_CSV_HEADER,
};
pub use track::{
    generate_track, read_reference_csv, write_reference_csv, Track, TrackConfig, TrackError,
    TrackShape, REFERENCE_CSV_HEADER,
};

/// Every field is mandatory in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub gravity: f64,
    /// Longitudinal slope gain `k_a`.
    pub k_a: f64,
    /// Lateral slope gain `k_beta`.
    pub k_beta: f64,
    /// Yaw scaling gain `k_r`.
    pub k_r: f64,
    /// Speed floor in the side-slip coupling, m/s.
    pub v_floor: f64,
    /// Process noise standard deviations on `(v, beta, r)` per control step.
    pub noise_std: [f64; 3],
    /// RK4 sub-steps per control interval.
    pub substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            k_a: 1.0,
            k_beta: 1.0,
            k_r: 0.3,
            v_floor: 1.0,
            noise_std: [0.02, 0.005, 0.01],
            substeps: 10,
        }
    }
}

impl PlantConfig {
    /// Couplings and noise switched off.
    pub fn nominal() -> Self {
        Self {
            k_a: 0.0,
            k_beta: 0.0,
            k_r: 0.0,
            noise_std: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.gravity, self.k_a, self.k_beta, self.k_r, self.v_floor];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("plant gains must be finite".into());
        }
        if !(self.v_floor > 0.0) {
            return Err("plant.v_floor must be positive".into());
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err("plant.noise_std entries must be non-negative".into());
        }
        if self.substeps == 0 {
            return Err("plant.substeps must be at least 1".into());
        }
        Ok(())
    }
}

/// Terrain-induced additions to `(v_dot, beta_dot, r_dot)`.
pub fn terrain_coupling(
    x: &VehicleState,
    roll: f64,
    pitch: f64,
    slope: f64,
    cfg: &PlantConfig,
) -> [f64; 3] {
    let (s, c) = x.psi.sin_cos();
    let gamma_h = pitch * c - roll * s;
    let alpha_h = roll * c + pitch * s;
    [
        -cfg.k_a * cfg.gravity * gamma_h.sin(),
        cfg.k_beta * cfg.gravity / x.v.max(cfg.v_floor) * alpha_h.sin(),
        cfg.k_r * x.r * (1.0 / slope.cos() - 1.0),
    ]
}

/// Advances the plant over one control interval.
///
/// The nominal model is stepped exactly as [`ode_step`] does; the terrain
/// effect is added as the difference between a finely sub-stepped flow with
/// couplings (frozen at the start of each sub-step) and the same flow without
/// them. Integration error therefore never shows up as residual. Process noise
/// on `(v, beta, r)` is added once per call.
pub fn plant_step<R: Rng + ?Sized>(
    x: &VehicleState,
    u: &ControlInput,
    grid: &TerrainGrid,
    cfg: &PlantConfig,
    p: &VehicleParams,
    dt: f64,
    rng: &mut R,
) -> Result<VehicleState, StepError> {
    grid.query(x.px, x.py)?;
    let nominal = ode_step(x, u, p, dt)?;
    let h = dt / cfg.substeps as f64;
    let (mut coupled, mut free) = (*x, *x);
    for _ in 0..cfg.substeps {
        let sample = grid.query(coupled.px, coupled.py)?;
        let rp = crate::terrain::roll_pitch_from_normal(&sample.normal)?;
        coupled = clamp_state(
            rk4(&coupled, h, |s| {
                let mut d = st_derivative(s, u, p).unwrap_or([f64::NAN; STATE_DIM]);
                let extra = terrain_coupling(s, rp.roll, rp.pitch, sample.slope, cfg);
                d[4] += extra[0];
                d[5] += extra[1];
                d[6] += extra[2];
                d
            }),
            p,
        );
        free = clamp_state(
            rk4(&free, h, |s| st_derivative(s, u, p).unwrap_or([f64::NAN; STATE_DIM])),
            p,
        );
    }
    let (n, c, f) = (nominal.to_array(), coupled.to_array(), free.to_array());
    let mut state = VehicleState::from_array(std::array::from_fn(|i| n[i] + (c[i] - f[i])));
    for (k, sd) in cfg.noise_std.iter().enumerate() {
        if *sd > 0.0 {
            let e = Normal::new(0.0, *sd).expect("validated std").sample(rng);
            match k {
                0 => state.v += e,
                1 => state.beta += e,
                _ => state.r += e,
            }
        }
    }
    let state = clamp_state(state, p);
    if !state.is_finite() {
        return Err(DynamicsError::NonFiniteState.into());
    }
    Ok(state)
}
