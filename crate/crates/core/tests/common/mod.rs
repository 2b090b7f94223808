#![allow(dead_code)]

use nptrack::config::evaluation_track;
use nptrack::dynamics::VehicleParams;
use nptrack::mppi::MppiConfig;
use nptrack::plant_sim::{
    collect_dataset, generate_track, run_closed_loop, summarize, CollectConfig, ControllerMode,
    LoopConfig, PlantConfig, RunLog, RunSummary, Track, TrackConfig, TrackShape,
};
use nptrack::sparse_gp::training::{fit_residual_model, GpConfig};
use nptrack::sparse_gp::ResidualModel;

pub fn vehicle() -> VehicleParams {
    VehicleParams::small_scale_racer()
}

pub fn track(cfg: &TrackConfig) -> Track {
    generate_track(cfg, &vehicle()).unwrap()
}

pub fn evaluation(shape: TrackShape) -> Track {
    track(&evaluation_track(shape))
}

/// Collects a dataset with the baseline controller and fits a residual model
/// with the default GP settings.
pub fn learn(
    track: &Track,
    mppi: &MppiConfig,
    plant: &PlantConfig,
    duration: f64,
    seed: u64,
) -> ResidualModel {
    let collect = CollectConfig {
        duration,
        ..CollectConfig::default()
    };
    let outcome = collect_dataset(
        &track.path,
        &track.grid,
        &vehicle(),
        mppi,
        plant,
        &LoopConfig::default(),
        &collect,
        seed,
    )
    .unwrap();
    assert!(!outcome.departed, "data collection left the track");
    fit_residual_model(&outcome.samples, &GpConfig::default(), 0).unwrap().0
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    track: &Track,
    mode: ControllerMode,
    model: Option<&ResidualModel>,
    mppi: &MppiConfig,
    plant: &PlantConfig,
    loop_cfg: &LoopConfig,
    seed: u64,
) -> RunLog {
    run_closed_loop(&track.path, &track.grid, mode, model, &vehicle(), mppi, plant, loop_cfg, seed)
        .unwrap()
}

pub fn summary(
    track: &Track,
    mode: ControllerMode,
    model: Option<&ResidualModel>,
    mppi: &MppiConfig,
    plant: &PlantConfig,
    loop_cfg: &LoopConfig,
    seed: u64,
) -> RunSummary {
    summarize(&run(track, mode, model, mppi, plant, loop_cfg, seed))
}

/// Two-sided exact Wilcoxon rank-sum p-value for samples without ties.
pub fn rank_sum_p_value(a: &[f64], b: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = pooled.len();
    let m = a.len();
    let observed: usize = pooled.iter().enumerate().filter(|(_, p)| p.1).map(|(i, _)| i + 1).sum();
    // counts[k][s]: subsets of size k of the ranks seen so far with rank sum s.
    let max_sum = n * (n + 1) / 2;
    let mut counts = vec![vec![0f64; max_sum + 1]; m + 1];
    counts[0][0] = 1.0;
    for rank in 1..=n {
        for k in (1..=m.min(rank)).rev() {
            for s in (rank..=max_sum).rev() {
                counts[k][s] += counts[k - 1][s - rank];
            }
        }
    }
    let total: f64 = counts[m].iter().sum();
    let mean = (m * (n + 1)) as f64 / 2.0;
    let dev = (observed as f64 - mean).abs();
    let tail: f64 = counts[m]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - mean).abs() >= dev - 1e-9)
        .map(|(_, c)| c)
        .sum();
    tail / total
}
