//! Nominal single-track vehicle model and the terrain-aware composed step.
//!
//! The dynamic branch uses linear tire forces with longitudinal load transfer
//! through the CoG height. Below `V_SWITCH` the side-slip and yaw-rate
//! derivatives blend along a smoothstep into the kinematic single-track derivatives,
//! reaching the pure kinematic model at `V_KINEMATIC`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::{RollPitch, TerrainError, TerrainGrid};

pub const STATE_DIM: usize = 7;
pub const GP_INPUT_DIM: usize = 9;
pub const GRAVITY: f64 = 9.81;

/// Upper end of the kinematic/dynamic blend, m/s.
pub const V_SWITCH: f64 = 0.5;
/// Below this speed the derivative is purely kinematic, m/s.
pub const V_KINEMATIC: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite state or input")]
    NonFiniteState,
}

/// Failure of a terrain-aware step.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// `[p_x, p_y, psi, delta, v, beta, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub psi: f64,
    pub delta: f64,
    pub v: f64,
    pub beta: f64,
    pub r: f64,
}

impl VehicleState {
    #[inline]
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.px, self.py, self.psi, self.delta, self.v, self.beta, self.r]
    }

    #[inline]
    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            psi: a[2],
            delta: a[3],
            v: a[4],
            beta: a[5],
            r: a[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `[a, v_delta]`: longitudinal acceleration and steering rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer_rate: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer_rate: f64) -> Self {
        Self { accel, steer_rate }
    }

    pub fn to_array(&self) -> [f64; 2] {
        [self.accel, self.steer_rate]
    }
}

/// Physical vehicle parameters. Every field is mandatory in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub yaw_inertia: f64,
    /// CoG to front axle, m
    pub lf: f64,
    /// CoG to rear axle, m
    pub lr: f64,
    /// m
    pub cog_height: f64,
    /// Front cornering stiffness normalized by axle load, 1/rad.
    pub cornering_stiffness_front: f64,
    /// Rear cornering stiffness normalized by axle load, 1/rad.
    pub cornering_stiffness_rear: f64,
    pub friction: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub steer_rate_min: f64,
    pub steer_rate_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl VehicleParams {
    /// 1:10 scale racing car (F1TENTH-class) parameters.
    pub fn small_scale_racer() -> Self {
        Self {
            mass: 3.74,
            yaw_inertia: 0.04712,
            lf: 0.15875,
            lr: 0.17145,
            cog_height: 0.074,
            cornering_stiffness_front: 4.718,
            cornering_stiffness_rear: 5.4562,
            friction: 1.0489,
            steer_min: -0.4189,
            steer_max: 0.4189,
            steer_rate_min: -3.2,
            steer_rate_max: 3.2,
            v_min: 0.0,
            v_max: 8.0,
            accel_min: -5.0,
            accel_max: 5.0,
        }
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cog_height", self.cog_height),
            ("cornering_stiffness_front", self.cornering_stiffness_front),
            ("cornering_stiffness_rear", self.cornering_stiffness_rear),
            ("friction", self.friction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("vehicle.{name} must be positive and finite"));
            }
        }
        let ranges = [
            ("steer", self.steer_min, self.steer_max),
            ("steer_rate", self.steer_rate_min, self.steer_rate_max),
            ("v", self.v_min, self.v_max),
            ("accel", self.accel_min, self.accel_max),
        ];
        for (name, lo, hi) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(format!("vehicle.{name}_min must be below vehicle.{name}_max"));
            }
        }
        Ok(())
    }
}

/// Residual correction on `(v, beta, r)` as a function of the GP input.
pub trait ResidualPredictor: Sync {
    fn predict_mean(&self, xi: &GpInput) -> [f64; 3];
}

/// Predictor that always returns zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroResidual;

impl ResidualPredictor for ZeroResidual {
    fn predict_mean(&self, _xi: &GpInput) -> [f64; 3] {
        [0.0; 3]
    }
}

/// `xi = [psi, delta, v, beta, r, a, v_delta, alpha, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GpInput(pub [f64; GP_INPUT_DIM]);

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[inline]
pub fn assemble_gp_input(x: &VehicleState, u: &ControlInput, rp: &RollPitch) -> GpInput {
    GpInput([
        wrap_angle(x.psi),
        x.delta,
        x.v,
        x.beta,
        x.r,
        u.accel,
        u.steer_rate,
        rp.roll,
        rp.pitch,
    ])
}

/// Time derivative of the state under the nominal single-track model.
pub fn st_derivative(
    x: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> Result<[f64; STATE_DIM], DynamicsError> {
    if !x.is_finite() || !u.accel.is_finite() || !u.steer_rate.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(derivative(x, u, p))
}

#[inline]
fn derivative(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> [f64; STATE_DIM] {
    let (sin_c, cos_c) = (x.psi + x.beta).sin_cos();
    let w = ((x.v - V_KINEMATIC) / (V_SWITCH - V_KINEMATIC)).clamp(0.0, 1.0);
    // Smoothstep keeps the derivative free of kinks at both ends of the blend.
    let w = w * w * (3.0 - 2.0 * w);
    let (beta_dot, r_dot) = if w >= 1.0 {
        dynamic_slip_yaw(x, u, p)
    } else if w <= 0.0 {
        kinematic_slip_yaw(x, u, p)
    } else {
        let (bd, rd) = dynamic_slip_yaw(x, u, p);
        let (bk, rk) = kinematic_slip_yaw(x, u, p);
        (w * bd + (1.0 - w) * bk, w * rd + (1.0 - w) * rk)
    };
    [
        x.v * cos_c,
        x.v * sin_c,
        x.r,
        u.steer_rate,
        u.accel,
        beta_dot,
        r_dot,
    ]
}

#[inline]
fn dynamic_slip_yaw(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> (f64, f64) {
    let lwb = p.wheelbase();
    let front = p.cornering_stiffness_front * (GRAVITY * p.lr - u.accel * p.cog_height);
    let rear = p.cornering_stiffness_rear * (GRAVITY * p.lf + u.accel * p.cog_height);
    let mu = p.friction;
    let v = x.v;
    let beta_dot = mu / (v * lwb)
        * (front * x.delta - (rear + front) * x.beta + (rear * p.lr - front * p.lf) * x.r / v)
        - x.r;
    let r_dot = mu * p.mass / (p.yaw_inertia * lwb)
        * (p.lf * front * x.delta + (p.lr * rear - p.lf * front) * x.beta
            - (p.lf * p.lf * front + p.lr * p.lr * rear) * x.r / v);
    (beta_dot, r_dot)
}

#[inline]
fn kinematic_slip_yaw(x: &VehicleState, u: &ControlInput, p: &VehicleParams) -> (f64, f64) {
    let lwb = p.wheelbase();
    let tan_d = x.delta.tan();
    let cos_d = x.delta.cos();
    let ratio = p.lr / lwb;
    let beta = (ratio * tan_d).atan();
    let beta_dot = ratio * u.steer_rate / (cos_d * cos_d * (1.0 + (ratio * tan_d).powi(2)));
    let (sin_b, cos_b) = beta.sin_cos();
    let r_dot = (u.accel * cos_b * tan_d - x.v * sin_b * beta_dot * tan_d
        + x.v * cos_b * u.steer_rate / (cos_d * cos_d))
        / lwb;
    (beta_dot, r_dot)
}

/// RK4 over one interval with the input held constant; steering angle and
/// speed are clamped to their bounds after each sub-step.
///
/// At low speed the slip and yaw-rate modes of the dynamic branch get stiff
/// (their rates grow like `1/v`), so the interval is split into as many equal
/// sub-steps as [`rk4_substeps`] requires. At driving speed this is one.
pub fn ode_step(
    x: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, DynamicsError> {
    if !x.is_finite() || !u.accel.is_finite() || !u.steer_rate.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    let n = rk4_substeps(x, u, p, dt);
    let h = dt / n as f64;
    let mut next = *x;
    for _ in 0..n {
        next = clamp_state(rk4(&next, h, |s| derivative(s, u, p)), p);
    }
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}

/// Largest `|lambda| h` kept inside the real-axis RK4 stability interval.
const RK4_STABLE_STEP: f64 = 2.5;

/// Number of RK4 sub-steps over `dt` that keeps the linearized slip/yaw
/// dynamics stable. The eigenvalues are those of the dynamic branch at the
/// lowest speed reached during the interval.
pub fn rk4_substeps(x: &VehicleState, u: &ControlInput, p: &VehicleParams, dt: f64) -> usize {
    let (v0, v1) = (x.v, x.v + u.accel * dt);
    if v0.max(v1) <= V_KINEMATIC {
        return 1;
    }
    let v = v0.min(v1).max(V_KINEMATIC);
    let lwb = p.wheelbase();
    let load = u.accel.abs() * p.cog_height;
    let front = p.cornering_stiffness_front * (GRAVITY * p.lr + load);
    let rear = p.cornering_stiffness_rear * (GRAVITY * p.lf + load);
    let mu = p.friction;
    let yaw = mu * p.mass / (p.yaw_inertia * lwb);
    let moment = rear * p.lr - front * p.lf;
    // d(beta_dot, r_dot) / d(beta, r)
    let j = [
        [-mu * (front + rear) / (v * lwb), mu * moment / (v * v * lwb) - 1.0],
        [yaw * moment, -yaw * (p.lf * p.lf * front + p.lr * p.lr * rear) / v],
    ];
    let (tr, det) = (j[0][0] + j[1][1], j[0][0] * j[1][1] - j[0][1] * j[1][0]);
    let disc = 0.25 * tr * tr - det;
    let rate = if disc >= 0.0 {
        0.5 * tr.abs() + disc.sqrt()
    } else {
        det.sqrt()
    };
    ((rate * dt / RK4_STABLE_STEP).ceil() as usize).max(1)
}

#[inline]
pub(crate) fn clamp_state(mut x: VehicleState, p: &VehicleParams) -> VehicleState {
    x.delta = x.delta.clamp(p.steer_min, p.steer_max);
    x.v = x.v.clamp(p.v_min, p.v_max);
    x
}

/// Classical fourth-order Runge-Kutta step.
#[inline]
pub(crate) fn rk4<F>(x: &VehicleState, dt: f64, f: F) -> VehicleState
where
    F: Fn(&VehicleState) -> [f64; STATE_DIM],
{
    let y = x.to_array();
    let shifted = |k: &[f64; STATE_DIM], h: f64| {
        VehicleState::from_array(std::array::from_fn(|i| y[i] + h * k[i]))
    };
    let k1 = f(x);
    let k2 = f(&shifted(&k1, 0.5 * dt));
    let k3 = f(&shifted(&k2, 0.5 * dt));
    let k4 = f(&shifted(&k3, dt));
    VehicleState::from_array(std::array::from_fn(|i| {
        y[i] + dt * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
    }))
}

/// Nominal step plus the residual prediction on `(v, beta, r)`.
///
/// Roll and pitch are read from the grid at the current position.
pub fn composed_step(
    x: &VehicleState,
    u: &ControlInput,
    grid: &TerrainGrid,
    gp: &dyn ResidualPredictor,
    p: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, StepError> {
    let rp = grid.roll_pitch(x.px, x.py)?;
    composed_step_at(x, u, &rp, gp, p, dt)
}

/// [`composed_step`] with roll and pitch already known.
#[inline]
pub fn composed_step_at(
    x: &VehicleState,
    u: &ControlInput,
    rp: &RollPitch,
    gp: &dyn ResidualPredictor,
    p: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, StepError> {
    let mut next = ode_step(x, u, p, dt)?;
    let residual = gp.predict_mean(&assemble_gp_input(x, u, rp));
    next.v += residual[0];
    next.beta += residual[1];
    next.r += residual[2];
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState.into());
    }
    Ok(next)
}
