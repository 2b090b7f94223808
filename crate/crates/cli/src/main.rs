mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nptrack::config::RunConfig;
use nptrack::plant_sim::{ControllerMode, TrackShape};

#[derive(Parser, Debug)]
#[command(name = "nptrack", version, about = "Nonplanar tracking: terrain, residual GP and MPPI harness")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for collection, fitting and runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate terrain, reference path and map statistics.
    GenTrack(GenTrackArgs),
    /// Drive the plant with an excited baseline controller and log residuals.
    Collect(CollectArgs),
    /// Fit the sparse GP residual model to a collected dataset.
    FitGp(FitGpArgs),
    /// Run closed-loop episodes per controller mode and seed.
    Run(RunArgs),
    /// Render trajectory, error and solve-frequency figures from run logs.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenTrackArgs {
    #[arg(long)]
    shape: Option<TrackShape>,
    /// Terrain profile name; clears profile parameters from the config.
    #[arg(long)]
    profile: Option<String>,
    /// Shorthand for `--param amplitude=<AMP>`.
    #[arg(long)]
    amp: Option<f64>,
    /// Profile parameter as `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Simulated driving time, s.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitGpArgs {
    /// Number of inducing points.
    #[arg(long)]
    num_inducing: Option<usize>,
    /// Search kernel hyperparameters on a log grid.
    #[arg(long)]
    grid_search: bool,
    /// Dataset file; `<out-dir>/dataset.txt` by default.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Controller mode; repeatable.
    #[arg(long = "mode")]
    modes: Vec<ControllerMode>,
    /// Number of seeds per mode.
    #[arg(long)]
    seeds: Option<u64>,
    /// Control-step budget per episode.
    #[arg(long)]
    max_steps: Option<usize>,
    /// MPPI sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Bins of the cross-track error histograms.
    #[arg(long, default_value_t = 30)]
    bins: usize,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Histogram bin count.
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Directory holding run logs; `<out-dir>/runs` by default.
    #[arg(long)]
    logs: Option<PathBuf>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v.parse().map_err(|e| format!("parameter '{k}': {e}"))?;
    Ok((k.to_string(), v))
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    match &cli.command {
        Some(Command::GenTrack(a)) => {
            if let Some(shape) = a.shape {
                cfg.track.shape = shape;
            }
            if let Some(profile) = &a.profile {
                cfg.track.profile = profile.clone();
                cfg.track.profile_params.clear();
            }
            if let Some(amp) = a.amp {
                cfg.track.profile_params.insert("amplitude".into(), amp);
            }
            for (k, v) in &a.params {
                cfg.track.profile_params.insert(k.clone(), *v);
            }
            if let Some(scale) = a.scale {
                cfg.track.scale = scale;
            }
        }
        Some(Command::Collect(a)) => {
            if let Some(d) = a.duration {
                cfg.collect.duration = d;
            }
        }
        Some(Command::FitGp(a)) => {
            if let Some(m) = a.num_inducing {
                cfg.gp.num_inducing = m;
            }
            if a.grid_search {
                cfg.gp.grid_search = true;
            }
        }
        Some(Command::Run(a)) => {
            if !a.modes.is_empty() {
                cfg.modes = a.modes.clone();
            }
            if let Some(n) = a.seeds {
                cfg.seeds = n;
            }
            if let Some(n) = a.max_steps {
                cfg.loop_cfg.max_steps = n;
            }
            if let Some(n) = a.samples {
                cfg.mppi.samples = n;
            }
        }
        Some(Command::Plot(_)) | None => {}
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let is_run = matches!(cli.command, Some(Command::Run(_)));
    let config_error = |e: nptrack::config::ConfigError| match e {
        nptrack::config::ConfigError::Io { .. } => Failure::usage(e.to_string()),
        _ if is_run => Failure::runtime(e.to_string()),
        _ => Failure::usage(e.to_string()),
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(config_error)?,
        None => RunConfig::default(),
    };
    apply_overrides(&cli, &mut cfg);
    cfg.validate().map_err(config_error)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Some(Command::GenTrack(_)) => commands::gen_track(&cfg),
        Some(Command::Collect(_)) => commands::collect(&cfg),
        Some(Command::FitGp(a)) => commands::fit_gp(&cfg, a.dataset.as_deref()),
        Some(Command::Run(a)) => commands::run(&cfg, a.bins),
        Some(Command::Plot(a)) => plot::plot(&cfg, a.logs.as_deref(), a.bins),
        None => Err(Failure::usage(
            "no command given; expected one of: gen-track, collect, fit-gp, run, plot",
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
