//! Model predictive path integral control with truncated-normal sampling and
//! terrain-aware rollouts.

mod path;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

use crate::dynamics::{
    composed_step_at, ode_step, wrap_angle, ControlInput, ResidualPredictor, VehicleParams,
    VehicleState,
};
use crate::terrain::TerrainGrid;

pub use path::{reference_slice, Path, Projection, RefPoint};

#[derive(Debug, Error)]
pub enum MppiError {
    #[error("every rollout left the map")]
    AllRolloutsFailed,
    #[error("invalid MPPI configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate reference path: {0}")]
    DegeneratePath(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub horizon: usize,
    pub samples: usize,
    pub temperature: f64,
    /// Sampling standard deviations of `(a, v_delta)`.
    pub sigma: [f64; 2],
    /// Running state weights on `(p_x, p_y, v, psi)`.
    pub q: [f64; 4],
    /// Input weights on `(a, v_delta)`.
    pub r: [f64; 2],
    /// Input-rate weights on consecutive `(a, v_delta)` differences.
    pub r_d: [f64; 2],
    /// Terminal state weights on `(p_x, p_y, v, psi)`.
    pub q_terminal: [f64; 4],
    pub dt: f64,
    pub seed: u64,
    pub failure_cost: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        let q = [20.0, 20.0, 2.0, 5.0];
        Self {
            horizon: 20,
            samples: 1024,
            temperature: 0.01,
            sigma: [0.5, 0.5],
            q,
            r: [0.1, 0.1],
            r_d: [1.0, 1.0],
            q_terminal: q.map(|w| 5.0 * w),
            dt: 0.02,
            seed: 0,
            failure_cost: 1e6,
        }
    }
}

impl MppiConfig {
    /// Settings used for closed-loop evaluation: a softer temperature keeps
    /// the effective sample size in the hundreds, and a light heading weight
    /// lets the vehicle hold the side-slip a corner needs.
    pub fn evaluation() -> Self {
        let q = [20.0, 20.0, 2.0, 1.0];
        Self {
            temperature: 3.0,
            q,
            q_terminal: q.map(|w| 5.0 * w),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MppiError> {
        let bad = |m: &str| Err(MppiError::InvalidConfig(m.into()));
        if self.horizon == 0 || self.samples == 0 {
            return bad("horizon and samples must be at least 1");
        }
        if !(self.temperature > 0.0) || self.temperature.is_nan() {
            return bad("temperature must be positive");
        }
        if !self.sigma.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return bad("sigma entries must be positive and finite");
        }
        let weights = self.q.iter().chain(&self.r).chain(&self.r_d).chain(&self.q_terminal);
        if !weights.clone().all(|w| *w >= 0.0 && w.is_finite()) {
            return bad("cost weights must be non-negative and finite");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.failure_cost >= 0.0 && self.failure_cost.is_finite()) {
            return bad("failure_cost must be non-negative and finite");
        }
        Ok(())
    }
}

/// Admissible input box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl InputBounds {
    pub fn from_params(p: &VehicleParams) -> Self {
        Self {
            lo: [p.accel_min, p.steer_rate_min],
            hi: [p.accel_max, p.steer_rate_max],
        }
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.accel.clamp(self.lo[0], self.hi[0]),
            u.steer_rate.clamp(self.lo[1], self.hi[1]),
        )
    }

    pub fn contains(&self, u: &ControlInput) -> bool {
        (self.lo[0]..=self.hi[0]).contains(&u.accel)
            && (self.lo[1]..=self.hi[1]).contains(&u.steer_rate)
    }
}

/// Model used to propagate rollouts.
#[derive(Clone, Copy)]
pub enum RolloutModel<'a> {
    /// Nominal single-track model only.
    Nominal,
    /// Nominal model plus a residual mean.
    Composed(&'a dyn ResidualPredictor),
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[inline]
fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse-CDF draw from `N(mean, sd^2)` truncated to `[lo, hi]`, with `u` in
/// the open unit interval.
pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if !(sd > 0.0) {
        return mean.clamp(lo, hi);
    }
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    // Work in the lower tail, where the CDF keeps its relative precision.
    let (a, b, sign) = if a > 0.0 { (-b, -a, -1.0) } else { (a, b, 1.0) };
    let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
    if !(pb > pa) {
        return mean.clamp(lo, hi);
    }
    let z = std_normal_quantile(pa + u * (pb - pa)).clamp(a, b);
    (mean + sign * sd * z).clamp(lo, hi)
}

/// Uniform draw in the open interval `(0, 1)`.
#[inline]
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Independent stream for one sample of one control step.
pub fn sample_rng(seed: u64, step: u64, sample: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(sample);
    rng
}

fn sample_sequence(
    mean_seq: &[ControlInput],
    cfg: &MppiConfig,
    bounds: &InputBounds,
    rng: &mut ChaCha8Rng,
) -> Vec<ControlInput> {
    mean_seq
        .iter()
        .map(|m| {
            let m = bounds.clamp(*m);
            let a = truncated_normal(m.accel, cfg.sigma[0], bounds.lo[0], bounds.hi[0], open_unit(rng));
            let d = truncated_normal(
                m.steer_rate,
                cfg.sigma[1],
                bounds.lo[1],
                bounds.hi[1],
                open_unit(rng),
            );
            ControlInput::new(a, d)
        })
        .collect()
}

/// Draws `cfg.samples` control sequences around `mean_seq`, one counter-based
/// stream per sample.
pub fn sample_controls(
    mean_seq: &[ControlInput],
    cfg: &MppiConfig,
    bounds: &InputBounds,
    step: u64,
) -> Vec<Vec<ControlInput>> {
    (0..cfg.samples as u64)
        .into_par_iter()
        .map(|s| sample_sequence(mean_seq, cfg, bounds, &mut sample_rng(cfg.seed, step, s)))
        .collect()
}

/// Propagates `x0` through `u_seq`. On leaving the map the remaining states
/// are frozen and the failure flag is set.
pub fn rollout(
    x0: &VehicleState,
    u_seq: &[ControlInput],
    grid: &TerrainGrid,
    model: RolloutModel,
    p: &VehicleParams,
    dt: f64,
) -> (Vec<VehicleState>, bool) {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    let mut failed = false;
    for u in u_seq {
        if !failed {
            let next = match model {
                RolloutModel::Nominal => {
                    if grid.contains(x.px, x.py) {
                        ode_step(&x, u, p, dt).ok()
                    } else {
                        None
                    }
                }
                RolloutModel::Composed(gp) => grid
                    .roll_pitch(x.px, x.py)
                    .ok()
                    .and_then(|rp| composed_step_at(&x, u, &rp, gp, p, dt).ok()),
            };
            match next {
                Some(n) => x = n,
                None => failed = true,
            }
        }
        states.push(x);
    }
    if !failed && !grid.contains(x.px, x.py) {
        failed = true;
    }
    (states, failed)
}

#[inline]
fn state_error(x: &VehicleState, r: &RefPoint, w: &[f64; 4]) -> f64 {
    let dpsi = wrap_angle(x.psi - r.psi);
    w[0] * (x.px - r.px).powi(2)
        + w[1] * (x.py - r.py).powi(2)
        + w[2] * (x.v - r.v).powi(2)
        + w[3] * dpsi * dpsi
}

/// Running tracking and input cost over `t = 0..H-1`, input-rate cost and
/// terminal cost at `t = H`, plus the failure cost when `failed`.
pub fn trajectory_cost(
    states: &[VehicleState],
    u_seq: &[ControlInput],
    reference: &[RefPoint],
    cfg: &MppiConfig,
    failed: bool,
) -> f64 {
    let h = u_seq.len();
    debug_assert!(states.len() == h + 1 && reference.len() >= h + 1);
    let mut j = 0.0;
    for t in 0..h {
        let u = &u_seq[t];
        j += state_error(&states[t], &reference[t], &cfg.q)
            + cfg.r[0] * u.accel * u.accel
            + cfg.r[1] * u.steer_rate * u.steer_rate;
    }
    for w in u_seq.windows(2) {
        j += cfg.r_d[0] * (w[0].accel - w[1].accel).powi(2)
            + cfg.r_d[1] * (w[0].steer_rate - w[1].steer_rate).powi(2);
    }
    j += state_error(&states[h], &reference[h], &cfg.q_terminal);
    if failed {
        j += cfg.failure_cost;
    }
    j
}

/// `w_s = exp(-(J_s - min J) / tau)`, normalized. Infinite costs get weight 0.
pub fn importance_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>, MppiError> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(MppiError::AllRolloutsFailed);
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Weighted average of the sampled sequences, clamped to the input box.
pub fn optimal_sequence(
    samples: &[Vec<ControlInput>],
    weights: &[f64],
    bounds: &InputBounds,
) -> Vec<ControlInput> {
    let h = samples.first().map_or(0, Vec::len);
    (0..h)
        .map(|t| {
            let (mut a, mut d) = (0.0, 0.0);
            for (seq, &w) in samples.iter().zip(weights) {
                if w != 0.0 {
                    a += w * seq[t].accel;
                    d += w * seq[t].steer_rate;
                }
            }
            bounds.clamp(ControlInput::new(a, d))
        })
        .collect()
}

/// Drops the first entry and repeats the last one.
pub fn shift_warm_start(opt: &[ControlInput]) -> Vec<ControlInput> {
    match opt.len() {
        0 => Vec::new(),
        n => opt[1..].iter().chain(std::iter::once(&opt[n - 1])).copied().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    pub effective_sample_size: f64,
    pub solve_ms: f64,
    pub failures: usize,
    /// Set when every rollout failed and a braking command was issued.
    pub all_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppiOutput {
    pub u_apply: ControlInput,
    pub sequence: Vec<ControlInput>,
    pub diagnostics: StepDiagnostics,
}

/// All rollouts of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub controls: Vec<Vec<ControlInput>>,
    pub states: Vec<Vec<VehicleState>>,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    pub failed: Vec<bool>,
}

/// Samples, rolls out and weights one batch. Weights are empty when every
/// rollout failed.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    x: &VehicleState,
    reference: &[RefPoint],
    mean_seq: &[ControlInput],
    grid: &TerrainGrid,
    model: RolloutModel,
    p: &VehicleParams,
    cfg: &MppiConfig,
    step: u64,
) -> RolloutBatch {
    let bounds = InputBounds::from_params(p);
    let results: Vec<_> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|s| {
            let u = sample_sequence(mean_seq, cfg, &bounds, &mut sample_rng(cfg.seed, step, s));
            let (states, failed) = rollout(x, &u, grid, model, p, cfg.dt);
            let cost = trajectory_cost(&states, &u, reference, cfg, failed);
            (u, states, cost, failed)
        })
        .collect();
    let mut batch = RolloutBatch {
        controls: Vec::with_capacity(results.len()),
        states: Vec::with_capacity(results.len()),
        costs: Vec::with_capacity(results.len()),
        weights: Vec::new(),
        failed: Vec::with_capacity(results.len()),
    };
    for (u, states, cost, failed) in results {
        batch.controls.push(u);
        batch.states.push(states);
        batch.costs.push(cost);
        batch.failed.push(failed);
    }
    let masked: Vec<f64> = batch
        .costs
        .iter()
        .zip(&batch.failed)
        .map(|(&c, &f)| if f { f64::INFINITY } else { c })
        .collect();
    batch.weights = importance_weights(&masked, cfg.temperature).unwrap_or_default();
    batch
}

/// One receding-horizon solve around the warm start `prev_opt`.
///
/// `step` indexes the random streams; the same `(seed, step)` and inputs give
/// bit-identical output for any number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn mppi_step(
    x: &VehicleState,
    reference: &[RefPoint],
    prev_opt: &[ControlInput],
    grid: &TerrainGrid,
    model: RolloutModel,
    p: &VehicleParams,
    cfg: &MppiConfig,
    step: u64,
) -> Result<MppiOutput, MppiError> {
    cfg.validate()?;
    if prev_opt.len() != cfg.horizon || reference.len() < cfg.horizon + 1 {
        return Err(MppiError::InvalidConfig(format!(
            "warm start of length {} and {} reference points for horizon {}",
            prev_opt.len(),
            reference.len(),
            cfg.horizon
        )));
    }
    let start = Instant::now();
    let bounds = InputBounds::from_params(p);
    let evaluated: Vec<(Vec<ControlInput>, f64, bool)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|s| {
            let u = sample_sequence(prev_opt, cfg, &bounds, &mut sample_rng(cfg.seed, step, s));
            let (states, failed) = rollout(x, &u, grid, model, p, cfg.dt);
            let cost = trajectory_cost(&states, &u, reference, cfg, failed);
            (u, cost, failed)
        })
        .collect();

    let failures = evaluated.iter().filter(|e| e.2).count();
    let masked: Vec<f64> = evaluated
        .iter()
        .map(|(_, c, f)| if *f { f64::INFINITY } else { *c })
        .collect();
    let finite: Vec<f64> = masked.iter().copied().filter(|c| c.is_finite()).collect();
    let mut diagnostics = StepDiagnostics {
        failures,
        ..Default::default()
    };
    let output = match importance_weights(&masked, cfg.temperature) {
        Ok(weights) => {
            let samples: Vec<Vec<ControlInput>> = evaluated.into_iter().map(|e| e.0).collect();
            let sequence = optimal_sequence(&samples, &weights, &bounds);
            diagnostics.min_cost = finite.iter().copied().fold(f64::INFINITY, f64::min);
            diagnostics.mean_cost = finite.iter().sum::<f64>() / finite.len() as f64;
            diagnostics.effective_sample_size = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
            MppiOutput {
                u_apply: sequence[0],
                sequence,
                diagnostics,
            }
        }
        Err(MppiError::AllRolloutsFailed) => {
            let mut sequence: Vec<ControlInput> = prev_opt[1..].to_vec();
            sequence.push(ControlInput::default());
            diagnostics.min_cost = f64::INFINITY;
            diagnostics.mean_cost = f64::INFINITY;
            diagnostics.all_failed = true;
            MppiOutput {
                u_apply: ControlInput::new(p.accel_min, 0.0),
                sequence,
                diagnostics,
            }
        }
        Err(e) => return Err(e),
    };
    let mut output = output;
    output.diagnostics.solve_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(output)
}

/// Receding-horizon wrapper that owns the warm start and the step counter.
#[derive(Debug, Clone)]
pub struct MppiController {
    cfg: MppiConfig,
    warm: Vec<ControlInput>,
    step: u64,
}

impl MppiController {
    pub fn new(cfg: MppiConfig) -> Result<Self, MppiError> {
        cfg.validate()?;
        let warm = vec![ControlInput::default(); cfg.horizon];
        Ok(Self { cfg, warm, step: 0 })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn warm_start(&self) -> &[ControlInput] {
        &self.warm
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        x: &VehicleState,
        reference: &[RefPoint],
        grid: &TerrainGrid,
        model: RolloutModel,
        p: &VehicleParams,
    ) -> Result<MppiOutput, MppiError> {
        let out = mppi_step(x, reference, &self.warm, grid, model, p, &self.cfg, self.step)?;
        self.warm = if out.diagnostics.all_failed {
            out.sequence.clone()
        } else {
            shift_warm_start(&out.sequence)
        };
        self.step += 1;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ZeroResidual;
    use crate::terrain::{build_grid_from_catalog, Bounds, TerrainProfile};

    fn flat_grid() -> TerrainGrid {
        build_grid_from_catalog(&TerrainProfile::Flat, &Bounds::new(-20.0, 20.0, -20.0, 20.0), 0.5)
            .unwrap()
    }

    fn small_cfg() -> MppiConfig {
        MppiConfig {
            horizon: 8,
            samples: 64,
            seed: 5,
            ..MppiConfig::default()
        }
    }

    fn straight_reference(h: usize) -> Vec<RefPoint> {
        (0..=h)
            .map(|t| RefPoint {
                px: 0.04 * t as f64,
                py: 0.0,
                v: 2.0,
                psi: 0.0,
            })
            .collect()
    }

    #[test]
    fn truncated_normal_limits() {
        assert_eq!(truncated_normal(0.3, 0.0, -1.0, 1.0, 0.5), 0.3);
        assert!((truncated_normal(0.3, 1e-12, -1.0, 1.0, 0.999) - 0.3).abs() < 1e-9);
        assert!((truncated_normal(0.0, 0.5, -1.0, 1.0, 0.5)).abs() < 1e-15);
        // Far upper-tail interval still lands inside it.
        let v = truncated_normal(0.0, 0.1, 2.0, 2.1, 0.5);
        assert!((2.0..=2.1).contains(&v));
        assert!(truncated_normal(5.0, 1.0, -1.0, 1.0, 0.5) <= 1.0);
    }

    #[test]
    fn counter_streams_are_distinct_and_reproducible() {
        let a: u64 = sample_rng(1, 2, 3).random();
        assert_eq!(a, sample_rng(1, 2, 3).random::<u64>());
        assert_ne!(a, sample_rng(1, 2, 4).random::<u64>());
        assert_ne!(a, sample_rng(1, 3, 3).random::<u64>());
        assert_ne!(a, sample_rng(2, 2, 3).random::<u64>());
    }

    #[test]
    fn hand_computed_costs() {
        let cfg = MppiConfig {
            q: [1.0, 1.0, 0.0, 0.0],
            r: [0.0, 0.0],
            q_terminal: [0.0; 4],
            ..MppiConfig::default()
        };
        let states = [
            VehicleState {
                px: 3.0,
                py: 4.0,
                ..Default::default()
            },
            VehicleState::default(),
        ];
        let refs = [RefPoint::default(); 2];
        let u = [ControlInput::default()];
        assert_eq!(trajectory_cost(&states, &u, &refs, &cfg, false), 25.0);
        assert_eq!(trajectory_cost(&states, &u, &refs, &cfg, true), 25.0 + 1e6);

        let cfg = MppiConfig {
            r: [0.1, 0.0],
            ..MppiConfig::default()
        };
        let states = vec![VehicleState::default(); 21];
        let refs = vec![RefPoint::default(); 21];
        let u = vec![ControlInput::new(1.0, 0.0); 20];
        assert!((trajectory_cost(&states, &u, &refs, &cfg, false) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heading_error_is_wrapped() {
        let cfg = MppiConfig {
            q: [0.0, 0.0, 0.0, 1.0],
            q_terminal: [0.0; 4],
            ..MppiConfig::default()
        };
        let x = VehicleState {
            psi: 2.0 * std::f64::consts::PI + 0.1,
            ..Default::default()
        };
        let j = trajectory_cost(&[x, x], &[ControlInput::default()], &[RefPoint::default(); 2], &cfg, false);
        assert!((j - 0.01).abs() < 1e-12);
    }

    #[test]
    fn weights_examples() {
        assert_eq!(importance_weights(&[3.0; 4], 0.01).unwrap(), vec![0.25; 4]);
        let w = importance_weights(&[0.0, 10.0], 0.01).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w[1] < 1e-300);
        // Offsets that shift every cost exactly leave the weights bit-identical.
        let base = [1.0, 1.5, 0.75, 3.0];
        let shifted: Vec<f64> = base.iter().map(|c| c + 1234.5).collect();
        assert_eq!(
            importance_weights(&base, 0.3).unwrap(),
            importance_weights(&shifted, 0.3).unwrap()
        );
        assert!(matches!(
            importance_weights(&[f64::INFINITY; 3], 1.0),
            Err(MppiError::AllRolloutsFailed)
        ));
    }

    #[test]
    fn weighted_average_examples() {
        let p = VehicleParams::small_scale_racer();
        let b = InputBounds::from_params(&p);
        let s1 = vec![ControlInput::new(1.0, 0.5), ControlInput::new(-2.0, 0.1)];
        let s2 = vec![ControlInput::new(3.0, -0.5), ControlInput::new(0.0, 0.3)];
        assert_eq!(optimal_sequence(std::slice::from_ref(&s1), &[1.0], &b), s1);
        let mid = optimal_sequence(&[s1.clone(), s2.clone()], &[0.5, 0.5], &b);
        assert_eq!(mid, vec![ControlInput::new(2.0, 0.0), ControlInput::new(-1.0, 0.2)]);
        assert_eq!(optimal_sequence(&[s1, s2.clone()], &[0.0, 1.0], &b), s2);
    }

    #[test]
    fn warm_start_shift_examples() {
        let u = |a: f64| ControlInput::new(a, 0.0);
        assert_eq!(shift_warm_start(&[u(0.0), u(1.0), u(2.0)]), vec![u(1.0), u(2.0), u(2.0)]);
        assert_eq!(shift_warm_start(&[u(4.0); 3]), vec![u(4.0); 3]);
        assert_eq!(shift_warm_start(&[u(7.0)]), vec![u(7.0)]);
    }

    #[test]
    fn zero_controls_from_rest_stay_put() {
        let grid = flat_grid();
        let p = VehicleParams::small_scale_racer();
        let x0 = VehicleState {
            px: 1.0,
            py: -2.0,
            psi: 0.3,
            ..Default::default()
        };
        let (states, failed) = rollout(&x0, &[ControlInput::default(); 10], &grid, RolloutModel::Nominal, &p, 0.02);
        assert!(!failed);
        assert!(states.iter().all(|s| *s == x0));
    }

    #[test]
    fn nominal_and_zero_residual_rollouts_agree() {
        let grid = flat_grid();
        let p = VehicleParams::small_scale_racer();
        let x0 = VehicleState {
            v: 2.0,
            ..Default::default()
        };
        let u: Vec<_> = (0..15).map(|t| ControlInput::new(0.5, 0.2 * (t as f64).sin())).collect();
        let a = rollout(&x0, &u, &grid, RolloutModel::Nominal, &p, 0.02);
        let b = rollout(&x0, &u, &grid, RolloutModel::Composed(&ZeroResidual), &p, 0.02);
        assert_eq!(a, b);
    }

    #[test]
    fn leaving_the_map_freezes_and_flags() {
        let grid = build_grid_from_catalog(&TerrainProfile::Flat, &Bounds::new(0.0, 1.0, -1.0, 1.0), 0.25)
            .unwrap();
        let p = VehicleParams::small_scale_racer();
        let x0 = VehicleState {
            px: 0.9,
            v: 5.0,
            ..Default::default()
        };
        let (states, failed) = rollout(&x0, &[ControlInput::default(); 10], &grid, RolloutModel::Nominal, &p, 0.02);
        assert!(failed);
        assert_eq!(states.len(), 11);
        assert_eq!(states[9], states[10]);
    }

    #[test]
    fn step_is_deterministic_and_within_bounds() {
        let grid = flat_grid();
        let p = VehicleParams::small_scale_racer();
        let cfg = small_cfg();
        let x = VehicleState {
            v: 1.0,
            ..Default::default()
        };
        let refs = straight_reference(cfg.horizon);
        let warm = vec![ControlInput::default(); cfg.horizon];
        let run = || mppi_step(&x, &refs, &warm, &grid, RolloutModel::Nominal, &p, &cfg, 3).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.sequence, b.sequence);
        let bounds = InputBounds::from_params(&p);
        assert!(a.sequence.iter().all(|u| bounds.contains(u)));
        assert!(a.diagnostics.effective_sample_size >= 1.0);
        // Speed reference above current speed: the solver accelerates.
        assert!(a.u_apply.accel > 0.0);
    }

    #[test]
    fn all_failed_step_brakes() {
        let grid = build_grid_from_catalog(&TerrainProfile::Flat, &Bounds::new(0.0, 1.0, 0.0, 1.0), 0.25)
            .unwrap();
        let p = VehicleParams::small_scale_racer();
        let cfg = small_cfg();
        let x = VehicleState {
            px: 5.0,
            ..Default::default()
        };
        let warm: Vec<_> = (0..cfg.horizon).map(|t| ControlInput::new(t as f64 * 0.1, 0.0)).collect();
        let out = mppi_step(&x, &straight_reference(cfg.horizon), &warm, &grid, RolloutModel::Nominal, &p, &cfg, 0)
            .unwrap();
        assert!(out.diagnostics.all_failed);
        assert_eq!(out.u_apply, ControlInput::new(p.accel_min, 0.0));
        assert_eq!(out.sequence[..cfg.horizon - 1], warm[1..]);
        assert_eq!(out.sequence[cfg.horizon - 1], ControlInput::default());
    }
}
