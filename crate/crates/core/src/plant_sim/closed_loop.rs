use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::track::start_heading;
use super::{plant_step, PlantConfig};
use crate::dynamics::{
    assemble_gp_input, wrap_angle, ControlInput, ResidualPredictor, VehicleParams, VehicleState,
};
use crate::mppi::{
    reference_slice, InputBounds, MppiConfig, MppiController, MppiError, Path, RefPoint,
    RolloutModel,
};
use crate::sparse_gp::training::Sample;
use crate::terrain::TerrainGrid;
use crate::sparse_gp::{residual_target, OutlierGate, ResidualModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Baseline,
    Gp,
    GpRecursive,
}

impl ControllerMode {
    pub const NAMES: [&'static str; 3] = ["baseline", "gp", "gp_recursive"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Gp => "gp",
            Self::GpRecursive => "gp_recursive",
        }
    }

    pub fn uses_gp(&self) -> bool {
        !matches!(self, Self::Baseline)
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "gp" => Ok(Self::Gp),
            "gp_recursive" => Ok(Self::GpRecursive),
            other => Err(format!(
                "unknown mode '{other}', expected one of: {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Control-step budget per episode.
    pub max_steps: usize,
    /// Departure threshold on |cross-track error|, m.
    pub corridor_half_width: f64,
    /// Speed at the start pose, m/s; the reference speed there when unset.
    pub initial_speed: Option<f64>,
    /// Lap completion radius around the start point, m.
    pub lap_radius: f64,
    /// Arc-length half window for progress tracking, m.
    pub projection_window: f64,
    /// Residual target gate on `(|dv|, |dbeta|, |dr|)`.
    pub outlier_gate: [f64; 3],
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_steps: 1500,
            corridor_half_width: 1.0,
            initial_speed: None,
            lap_radius: 1.0,
            projection_window: 2.0,
            outlier_gate: crate::sparse_gp::DEFAULT_OUTLIER_GATE.0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("corridor_half_width", self.corridor_half_width),
            ("lap_radius", self.lap_radius),
            ("projection_window", self.projection_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("loop.{name} must be positive"));
            }
        }
        if self
            .initial_speed
            .is_some_and(|v| !(v >= 0.0 && v.is_finite()))
        {
            return Err("loop.initial_speed must be non-negative".into());
        }
        if self.outlier_gate.iter().any(|g| !(*g > 0.0)) {
            return Err("loop.outlier_gate entries must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mppi(#[from] MppiError),
    #[error("mode {0} needs a residual model")]
    MissingModel(&'static str),
    #[error("vehicle left the track at the first step")]
    ImmediateDeparture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    LapCompleted,
    Departed,
    StepBudget,
}

/// One control step of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub time: f64,
    pub state: VehicleState,
    pub input: ControlInput,
    /// Foot point of the vehicle on the reference path.
    pub reference: RefPoint,
    pub cross_track_error: f64,
    pub heading_error: f64,
    /// Unwrapped arc-length progress, m.
    pub progress: f64,
    /// Residual mean the controller used at this state and input.
    pub gp_prediction: [f64; 3],
    /// Measured-minus-nominal over this step; `None` when gated out or when
    /// the step ended the episode off the map.
    pub measured_residual: Option<[f64; 3]>,
    pub min_cost: f64,
    pub mean_cost: f64,
    pub effective_sample_size: f64,
    pub rollout_failures: usize,
    /// Wall-clock solve time; excluded from the deterministic log.
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: ControllerMode,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// State after the last logged step.
    pub final_state: Option<VehicleState>,
    pub termination: Termination,
    pub outliers_rejected: usize,
    pub head_resets: usize,
    pub path_length: f64,
}

/// Signed distance to the nearest point of `path`, positive on its left.
pub fn cross_track_error(position: [f64; 2], path: &Path) -> f64 {
    path.project(position).offset
}

struct Progress {
    s: f64,
    total: f64,
}

impl Progress {
    fn advance(&mut self, path: &Path, q: [f64; 2], window: f64) -> crate::mppi::Projection {
        let proj = path.project_near(q, self.s, window);
        let len = path.length();
        let mut ds = proj.s - self.s;
        if ds > 0.5 * len {
            ds -= len;
        } else if ds < -0.5 * len {
            ds += len;
        }
        self.total += ds;
        self.s = proj.s;
        proj
    }
}

fn start_state(path: &Path, speed: Option<f64>) -> VehicleState {
    let p0 = path.points()[0];
    let speed = speed.unwrap_or(path.speeds()[0]);
    VehicleState {
        px: p0[0],
        py: p0[1],
        psi: start_heading(path),
        v: speed,
        ..Default::default()
    }
}

/// Runs one episode until lap completion, departure or the step budget.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    path: &Path,
    grid: &TerrainGrid,
    mode: ControllerMode,
    model: Option<&ResidualModel>,
    vehicle: &VehicleParams,
    mppi_cfg: &MppiConfig,
    plant_cfg: &PlantConfig,
    loop_cfg: &LoopConfig,
    seed: u64,
) -> Result<RunLog, RunError> {
    loop_cfg.validate().map_err(RunError::Config)?;
    plant_cfg.validate().map_err(RunError::Config)?;
    vehicle.validate().map_err(RunError::Config)?;
    let mut model: Option<ResidualModel> = match (mode.uses_gp(), model) {
        (false, _) => None,
        (true, Some(m)) => Some(m.clone()),
        (true, None) => return Err(RunError::MissingModel(mode.name())),
    };
    let mut snapshot = model.as_ref().map(ResidualModel::snapshot);
    let cfg = MppiConfig {
        seed,
        ..mppi_cfg.clone()
    };
    let dt = cfg.dt;
    let mut controller = MppiController::new(cfg)?;
    let gate = OutlierGate(loop_cfg.outlier_gate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut x = start_state(path, loop_cfg.initial_speed);
    let mut progress = Progress { s: 0.0, total: 0.0 };
    let mut log = RunLog {
        mode,
        seed,
        records: Vec::new(),
        final_state: None,
        termination: Termination::StepBudget,
        outliers_rejected: 0,
        head_resets: 0,
        path_length: path.length(),
    };
    let mut foot = path.project_near([x.px, x.py], 0.0, loop_cfg.projection_window);

    for step in 0..loop_cfg.max_steps {
        let refs = reference_slice(path, foot.s, x.v, controller.config().horizon, dt);
        let rollout_model = match &snapshot {
            Some(s) => RolloutModel::Composed(s),
            None => RolloutModel::Nominal,
        };
        let out = controller.step(&x, &refs, &grid, rollout_model, vehicle)?;
        let u = out.u_apply;
        let xi = grid
            .roll_pitch(x.px, x.py)
            .map(|rp| assemble_gp_input(&x, &u, &rp))
            .ok();
        let gp_prediction = match (&snapshot, &xi) {
            (Some(s), Some(xi)) => s.predict_mean(xi),
            _ => [0.0; 3],
        };
        let reference = path.sample(foot.s);
        let mut record = RunRecord {
            step,
            time: step as f64 * dt,
            state: x,
            input: u,
            reference,
            cross_track_error: foot.offset,
            heading_error: wrap_angle(x.psi - reference.psi),
            progress: progress.total,
            gp_prediction,
            measured_residual: None,
            min_cost: out.diagnostics.min_cost,
            mean_cost: out.diagnostics.mean_cost,
            effective_sample_size: out.diagnostics.effective_sample_size,
            rollout_failures: out.diagnostics.failures,
            solve_ms: out.diagnostics.solve_ms,
        };

        let next = match plant_step(&x, &u, &grid, plant_cfg, vehicle, dt, &mut rng) {
            Ok(n) => n,
            Err(_) => {
                log.records.push(record);
                log.termination = Termination::Departed;
                break;
            }
        };
        match residual_target(&x, &u, &next, vehicle, dt, &gate) {
            Ok(y) => {
                record.measured_residual = Some(y);
                if mode == ControllerMode::GpRecursive {
                    if let (Some(m), Some(xi)) = (model.as_mut(), xi) {
                        log.head_resets += m.update(&xi.0, &y);
                        snapshot = Some(m.snapshot());
                    }
                }
            }
            Err(_) => log.outliers_rejected += 1,
        }
        log.records.push(record);
        x = next;
        log.final_state = Some(x);
        foot = progress.advance(path, [x.px, x.py], loop_cfg.projection_window);

        if foot.offset.abs() > loop_cfg.corridor_half_width {
            log.termination = Termination::Departed;
            break;
        }
        let start = path.points()[0];
        if progress.total >= path.length()
            && (x.px - start[0]).hypot(x.py - start[1]) <= loop_cfg.lap_radius
        {
            log.termination = Termination::LapCompleted;
            break;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    /// Simulated driving time, s.
    pub duration: f64,
    /// Excitation half-width as a fraction of each input bound.
    pub excitation_fraction: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            duration: 30.0,
            excitation_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOutcome {
    pub samples: Vec<Sample>,
    pub steps_completed: usize,
    pub rejected: usize,
    pub departed: bool,
}

/// Drives the plant with the baseline controller plus uniform input
/// excitation and records `(xi, y)` pairs that pass the outlier gate. The
/// vehicle keeps lapping until the duration is used up or it departs.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset(
    path: &Path,
    grid: &TerrainGrid,
    vehicle: &VehicleParams,
    mppi_cfg: &MppiConfig,
    plant_cfg: &PlantConfig,
    loop_cfg: &LoopConfig,
    collect_cfg: &CollectConfig,
    seed: u64,
) -> Result<CollectOutcome, RunError> {
    loop_cfg.validate().map_err(RunError::Config)?;
    plant_cfg.validate().map_err(RunError::Config)?;
    vehicle.validate().map_err(RunError::Config)?;
    if !(collect_cfg.duration >= 0.0 && collect_cfg.duration.is_finite()) {
        return Err(RunError::Config("collect.duration must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&collect_cfg.excitation_fraction) {
        return Err(RunError::Config("collect.excitation_fraction must lie in [0, 1]".into()));
    }
    let cfg = MppiConfig {
        seed,
        ..mppi_cfg.clone()
    };
    let dt = cfg.dt;
    let steps = (collect_cfg.duration / dt).round() as usize;
    let mut controller = MppiController::new(cfg)?;
    let bounds = InputBounds::from_params(vehicle);
    let gate = OutlierGate(loop_cfg.outlier_gate);
    let mut plant_rng = ChaCha8Rng::seed_from_u64(seed);
    plant_rng.set_stream(1);
    let mut excite_rng = ChaCha8Rng::seed_from_u64(seed);
    excite_rng.set_stream(2);

    let mut x = start_state(path, loop_cfg.initial_speed);
    let mut progress = Progress { s: 0.0, total: 0.0 };
    let mut foot = path.project_near([x.px, x.py], 0.0, loop_cfg.projection_window);
    let mut out = CollectOutcome {
        samples: Vec::new(),
        steps_completed: 0,
        rejected: 0,
        departed: false,
    };
    let f = collect_cfg.excitation_fraction;
    for step in 0..steps {
        let refs = reference_slice(path, foot.s, x.v, controller.config().horizon, dt);
        let sol = controller.step(&x, &refs, &grid, RolloutModel::Nominal, vehicle)?;
        let noise = [
            excite_rng.random_range(f * bounds.lo[0]..=f * bounds.hi[0]),
            excite_rng.random_range(f * bounds.lo[1]..=f * bounds.hi[1]),
        ];
        let u = bounds.clamp(ControlInput::new(
            sol.u_apply.accel + noise[0],
            sol.u_apply.steer_rate + noise[1],
        ));
        let Ok(rp) = grid.roll_pitch(x.px, x.py) else {
            out.departed = true;
            break;
        };
        let next = match plant_step(&x, &u, &grid, plant_cfg, vehicle, dt, &mut plant_rng) {
            Ok(n) => n,
            Err(_) => {
                out.departed = true;
                break;
            }
        };
        out.steps_completed += 1;
        match residual_target(&x, &u, &next, vehicle, dt, &gate) {
            Ok(y) => out.samples.push((assemble_gp_input(&x, &u, &rp).0, y)),
            Err(_) => out.rejected += 1,
        }
        x = next;
        foot = progress.advance(path, [x.px, x.py], loop_cfg.projection_window);
        if foot.offset.abs() > loop_cfg.corridor_half_width {
            out.departed = true;
            break;
        }
        let _ = step;
    }
    if out.departed && out.steps_completed <= 1 {
        return Err(RunError::ImmediateDeparture);
    }
    Ok(out)
}

/// Per-run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: ControllerMode,
    pub seed: u64,
    pub steps: usize,
    pub mean_abs_cte: f64,
    pub median_abs_cte: f64,
    pub max_abs_cte: f64,
    pub lap_completed: bool,
    pub departed: bool,
    pub median_solve_ms: f64,
    /// `1000 / median_solve_ms`.
    pub frequency_hz: f64,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(log: &RunLog) -> RunSummary {
    let mut abs: Vec<f64> = log.records.iter().map(|r| r.cross_track_error.abs()).collect();
    let n = abs.len();
    let mean = if n > 0 {
        abs.iter().sum::<f64>() / n as f64
    } else {
        f64::NAN
    };
    let max = abs.iter().copied().fold(f64::NAN, f64::max);
    let med = median(&mut abs);
    let mut solve: Vec<f64> = log.records.iter().map(|r| r.solve_ms).collect();
    let median_solve_ms = median(&mut solve);
    RunSummary {
        mode: log.mode,
        seed: log.seed,
        steps: n,
        mean_abs_cte: mean,
        median_abs_cte: med,
        max_abs_cte: max,
        lap_completed: log.termination == Termination::LapCompleted,
        departed: log.termination == Termination::Departed,
        median_solve_ms,
        frequency_hz: 1000.0 / median_solve_ms,
    }
}

pub const RUN_CSV_HEADER: &str = "step,time,px,py,psi,delta,v,beta,r,accel,steer_rate,ref_px,ref_py,ref_v,ref_psi,cte,heading_error,progress,gp_dv,gp_dbeta,gp_dr,res_dv,res_dbeta,res_dr,min_cost,ess,rollout_failures";

/// Deterministic per-step log. Floats use the shortest round-trip form; gated
/// residuals are written as `nan`.
pub fn write_run_csv<W: Write>(log: &RunLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RUN_CSV_HEADER}")?;
    for r in &log.records {
        let s = r.state;
        let res = r.measured_residual.unwrap_or([f64::NAN; 3]);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.time,
            s.px,
            s.py,
            s.psi,
            s.delta,
            s.v,
            s.beta,
            s.r,
            r.input.accel,
            r.input.steer_rate,
            r.reference.px,
            r.reference.py,
            r.reference.v,
            r.reference.psi,
            r.cross_track_error,
            r.heading_error,
            r.progress,
            r.gp_prediction[0],
            r.gp_prediction[1],
            r.gp_prediction[2],
            res[0],
            res[1],
            res[2],
            r.min_cost,
            r.effective_sample_size,
            r.rollout_failures
        )?;
    }
    Ok(())
}

/// Wall-clock and cost diagnostics, one row per control step.
pub fn write_diagnostics_csv<W: Write>(log: &RunLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,time,min_cost,mean_cost,ess,solve_ms,failures")?;
    for r in &log.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.time,
            r.min_cost,
            r.mean_cost,
            r.effective_sample_size,
            r.solve_ms,
            r.rollout_failures
        )?;
    }
    Ok(())
}

/// Histogram of `values` over `[0, upper]` with `bins` equal bins; values
/// above `upper` land in the last bin.
pub fn histogram(values: &[f64], bins: usize, upper: f64) -> Vec<(f64, f64, usize)> {
    let width = upper / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v.is_finite() && bins > 0 {
            let k = ((v / width).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * width, (k + 1) as f64 * width, c))
        .collect()
}

pub fn write_histogram_csv<W: Write>(
    values: &[f64],
    bins: usize,
    upper: f64,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "bin_lo,bin_hi,count")?;
    for (lo, hi, c) in histogram(values, bins, upper) {
        writeln!(out, "{lo},{hi},{c}")?;
    }
    Ok(())
}
