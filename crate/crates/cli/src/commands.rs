use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nptrack::config::RunConfig;
use nptrack::mppi::Path as RefPath;
use nptrack::plant_sim::{
    collect_dataset, generate_track, read_reference_csv, run_closed_loop, summarize,
    write_diagnostics_csv, write_histogram_csv, write_reference_csv, write_run_csv, RunError,
    RunSummary,
};
use nptrack::sparse_gp::{read_dataset, read_model, write_dataset, write_model, ResidualModel};
use nptrack::sparse_gp::training::fit_residual_model;
use nptrack::terrain::{read_terrain, write_terrain, TerrainGrid};

use crate::Failure;

pub const TERRAIN_FILE: &str = "terrain.nptg";
pub const REFERENCE_FILE: &str = "reference.csv";
pub const STATS_FILE: &str = "map_stats.txt";
pub const DATASET_FILE: &str = "dataset.txt";
pub const MODEL_FILE: &str = "model.npgp";
pub const RUNS_DIR: &str = "runs";
pub const DIAGNOSTICS_DIR: &str = "diagnostics";
pub const HISTOGRAM_DIR: &str = "histograms";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const SUMMARY_HEADER: &str = "mode,seed,steps,mean_abs_cte,median_abs_cte,max_abs_cte,lap_completed,departed,median_solve_ms,frequency_hz";

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("cannot write {}: {e}", path.display()))
}

fn load_track(out: &Path) -> Result<(RefPath, TerrainGrid), Failure> {
    let terrain_path = out.join(TERRAIN_FILE);
    let grid = read_terrain(open(&terrain_path)?)
        .map_err(|e| Failure::runtime(format!("{}: {e}", terrain_path.display())))?;
    let reference_path = out.join(REFERENCE_FILE);
    let path = read_reference_csv(open(&reference_path)?)
        .map_err(|e| Failure::runtime(format!("{}: {e}", reference_path.display())))?;
    Ok((path, grid))
}

pub fn gen_track(cfg: &RunConfig) -> Result<(), Failure> {
    let track = generate_track(&cfg.track, &cfg.vehicle).map_err(|e| Failure::usage(e.to_string()))?;
    let out = &cfg.out_dir;
    let terrain_path = out.join(TERRAIN_FILE);
    let mut w = create(&terrain_path)?;
    write_terrain(&track.grid, &mut w).map_err(|e| Failure::runtime(e.to_string()))?;
    w.flush().map_err(io_failure(&terrain_path))?;
    let reference_path = out.join(REFERENCE_FILE);
    let mut w = create(&reference_path)?;
    write_reference_csv(&track.path, &mut w)
        .and_then(|_| w.flush())
        .map_err(io_failure(&reference_path))?;
    let stats_path = out.join(STATS_FILE);
    let report = format!(
        "Track = {}\nProfile = {}\nPath length (m) = {:.3}\n{}",
        track.shape.name(),
        track.profile.name(),
        track.path.length(),
        track.stats.to_report()
    );
    fs::write(&stats_path, &report).map_err(io_failure(&stats_path))?;
    print!("{report}");
    Ok(())
}

pub fn collect(cfg: &RunConfig) -> Result<(), Failure> {
    let out = &cfg.out_dir;
    let (path, grid) = load_track(out)?;
    let outcome = collect_dataset(
        &path,
        &grid,
        &cfg.vehicle,
        &cfg.mppi,
        &cfg.plant,
        &cfg.loop_cfg,
        &cfg.collect,
        cfg.seed,
    )
    .map_err(|e| Failure::runtime(e.to_string()))?;
    let dataset_path = out.join(DATASET_FILE);
    let mut w = create(&dataset_path)?;
    write_dataset(&outcome.samples, &mut w).map_err(|e| Failure::runtime(e.to_string()))?;
    w.flush().map_err(io_failure(&dataset_path))?;
    println!(
        "collected {} samples from {} steps ({} rejected{})",
        outcome.samples.len(),
        outcome.steps_completed,
        outcome.rejected,
        if outcome.departed { ", departed" } else { "" }
    );
    Ok(())
}

pub fn fit_gp(cfg: &RunConfig, dataset: Option<&Path>) -> Result<(), Failure> {
    let out = &cfg.out_dir;
    let dataset_path = dataset.map(Path::to_path_buf).unwrap_or_else(|| out.join(DATASET_FILE));
    let samples = read_dataset(open(&dataset_path)?)
        .map_err(|e| Failure::runtime(format!("{}: {e}", dataset_path.display())))?;
    let (model, report) = fit_residual_model(&samples, &cfg.gp, cfg.seed)
        .map_err(|e| Failure::runtime(format!("degenerate dataset: {e}")))?;
    let model_path = out.join(MODEL_FILE);
    let mut w = create(&model_path)?;
    write_model(&model, &mut w).map_err(|e| Failure::runtime(e.to_string()))?;
    w.flush().map_err(io_failure(&model_path))?;
    println!(
        "fitted {} inducing points on {} samples ({} train, {} held out)",
        cfg.gp.num_inducing.min(samples.len()),
        samples.len(),
        report.num_train,
        report.num_test
    );
    match report.holdout_rmse {
        Some(rmse) => {
            for (name, e) in ["v", "beta", "r"].iter().zip(rmse) {
                println!("held-out RMSE {name} = {e:.6e}");
            }
        }
        None => println!("held-out RMSE unavailable: empty test split"),
    }
    Ok(())
}

pub fn run_log_path(out: &Path, mode: &str, seed: u64) -> PathBuf {
    out.join(RUNS_DIR).join(format!("{mode}_seed{seed}.csv"))
}

fn summary_row(s: &RunSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        s.mode.name(),
        s.seed,
        s.steps,
        s.mean_abs_cte,
        s.median_abs_cte,
        s.max_abs_cte,
        s.lap_completed,
        s.departed,
        s.median_solve_ms,
        s.frequency_hz
    )
}

pub fn run(cfg: &RunConfig, bins: usize) -> Result<(), Failure> {
    if bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    let out = &cfg.out_dir;
    let (path, grid) = load_track(out)?;
    let model: Option<ResidualModel> = if cfg.modes.iter().any(|m| m.uses_gp()) {
        let model_path = out.join(MODEL_FILE);
        Some(
            read_model(open(&model_path)?)
                .map_err(|e| Failure::runtime(format!("{}: {e}", model_path.display())))?,
        )
    } else {
        None
    };
    let mut summaries = Vec::new();
    let mut errors: Vec<(String, Vec<f64>)> = Vec::new();
    for &mode in &cfg.modes {
        let mut abs = Vec::new();
        for seed in cfg.seed..cfg.seed + cfg.seeds {
            let log = run_closed_loop(
                &path,
                &grid,
                mode,
                model.as_ref(),
                &cfg.vehicle,
                &cfg.mppi,
                &cfg.plant,
                &cfg.loop_cfg,
                seed,
            )
            .map_err(|e: RunError| Failure::runtime(e.to_string()))?;
            let log_path = run_log_path(out, mode.name(), seed);
            let mut w = create(&log_path)?;
            write_run_csv(&log, &mut w)
                .and_then(|_| w.flush())
                .map_err(io_failure(&log_path))?;
            let diag_path = out
                .join(DIAGNOSTICS_DIR)
                .join(format!("{}_seed{seed}.csv", mode.name()));
            let mut w = create(&diag_path)?;
            write_diagnostics_csv(&log, &mut w)
                .and_then(|_| w.flush())
                .map_err(io_failure(&diag_path))?;
            abs.extend(log.records.iter().map(|r| r.cross_track_error.abs()));
            let s = summarize(&log);
            println!(
                "{:>13} seed {seed}: mean |cte| {:.4} m, max {:.4} m, {:?}, {:.1} Hz",
                mode.name(),
                s.mean_abs_cte,
                s.max_abs_cte,
                log.termination,
                s.frequency_hz
            );
            summaries.push(s);
        }
        errors.push((mode.name().to_string(), abs));
    }
    let summary_path = out.join(SUMMARY_FILE);
    let mut w = create(&summary_path)?;
    writeln!(w, "{SUMMARY_HEADER}").map_err(io_failure(&summary_path))?;
    for s in &summaries {
        writeln!(w, "{}", summary_row(s)).map_err(io_failure(&summary_path))?;
    }
    w.flush().map_err(io_failure(&summary_path))?;

    let upper = errors
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max);
    let upper = if upper > 0.0 { upper } else { 1.0 };
    for (mode, abs) in &errors {
        let hist_path = out.join(HISTOGRAM_DIR).join(format!("cte_{mode}.csv"));
        let mut w = create(&hist_path)?;
        write_histogram_csv(abs, bins, upper, &mut w)
            .and_then(|_| w.flush())
            .map_err(io_failure(&hist_path))?;
    }
    Ok(())
}
