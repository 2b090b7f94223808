//! Run configuration shared by the command-line tools and the evaluation
//! suite. Vehicle, plant and track sections are mandatory; the others fall
//! back to the evaluation defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleParams;
use crate::mppi::MppiConfig;
use crate::plant_sim::{CollectConfig, ControllerMode, LoopConfig, PlantConfig, TrackConfig, TrackShape};
use crate::sparse_gp::training::GpConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config schema: {0}")]
    Schema(String),
    #[error("config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: VehicleParams,
    pub plant: PlantConfig,
    pub track: TrackConfig,
    #[serde(default = "MppiConfig::evaluation")]
    pub mppi: MppiConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    /// Controller modes evaluated by `run`.
    #[serde(default = "default_modes")]
    pub modes: Vec<ControllerMode>,
    /// First seed; runs use `seed..seed + seeds`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_modes() -> Vec<ControllerMode> {
    vec![ControllerMode::Baseline, ControllerMode::GpRecursive]
}

fn default_seeds() -> u64 {
    5
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::small_scale_racer(),
            plant: PlantConfig::default(),
            track: evaluation_track(TrackShape::Kidney),
            mppi: MppiConfig::evaluation(),
            gp: GpConfig::default(),
            loop_cfg: LoopConfig::default(),
            collect: CollectConfig::default(),
            modes: default_modes(),
            seed: 0,
            seeds: default_seeds(),
            out_dir: default_out_dir(),
        }
    }
}

/// Terrain used for each evaluation track: rolling hills under the kidney and
/// L layouts, a 15 degree banked ring under the oval.
pub fn evaluation_track(shape: TrackShape) -> TrackConfig {
    let mut cfg = match shape {
        TrackShape::Oval => TrackConfig::new(shape, "banked_ring"),
        _ => TrackConfig::new(shape, "sinusoidal_hills"),
    };
    let params: &[(&str, f64)] = match shape {
        TrackShape::Oval => &[("bank_deg", 15.0)],
        _ => &[("amplitude", 0.5), ("kx", 0.5), ("ky", 0.5)],
    };
    for (k, v) in params {
        cfg.profile_params.insert(k.to_string(), *v);
    }
    cfg
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.vehicle.validate().map_err(invalid)?;
        self.plant.validate().map_err(invalid)?;
        self.mppi.validate().map_err(|e| invalid(e.to_string()))?;
        self.gp.validate().map_err(|e| invalid(e.to_string()))?;
        self.loop_cfg.validate().map_err(invalid)?;
        if !(self.track.scale > 0.0 && self.track.scale.is_finite()) {
            return Err(invalid("track.scale must be positive".into()));
        }
        if !(self.collect.duration >= 0.0 && self.collect.duration.is_finite()) {
            return Err(invalid("collect.duration must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.collect.excitation_fraction) {
            return Err(invalid("collect.excitation_fraction must lie in [0, 1]".into()));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes must name at least one controller".into()));
        }
        Ok(())
    }
}
