//! Experiment configuration and the on-disk layout of a run directory.

use crate::dataset::CollectConfig;
use crate::geometry::CameraModel;
use crate::model::{ModelConfig, TrainConfig, Variant};
use crate::planner::NavConfig;
use crate::sim::{TerrainSpec, VehicleParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Table1Config {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for Table1Config {
    fn default() -> Self {
        Table1Config {
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavSuiteConfig {
    pub variants: Vec<Variant>,
    /// Training seed whose checkpoints drive the planner.
    pub checkpoint_seed: u64,
    /// Base seed of the evaluation terrains; none of them is a training terrain.
    pub terrain_seed: u64,
    /// Goal arc length as a fraction of the path length.
    pub short_fraction: f64,
    pub long_fraction: f64,
    pub short_trials: usize,
    pub long_trials: usize,
    pub short_duration: f64,
    pub long_duration: f64,
    pub planner: NavConfig,
}

impl Default for NavSuiteConfig {
    fn default() -> Self {
        let mut planner = NavConfig::default();
        planner.cost.weights = [10.0, 1.0, 1.0, 1.0];
        NavSuiteConfig {
            variants: vec![Variant::CropFeature, Variant::BadgrModified],
            checkpoint_seed: 0,
            terrain_seed: 0x4e41_5649,
            short_fraction: 0.6,
            long_fraction: 1.0,
            short_trials: 10,
            long_trials: 5,
            short_duration: 60.0,
            long_duration: 90.0,
            planner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleConfig {
    pub variant: Variant,
    pub terrain_seed: u64,
    /// Seeds per scenario kind.
    pub seeds: usize,
    /// Arc length of the obstacle line from the path start, meters.
    pub obstacle_at: f64,
    /// Goal arc length beyond the obstacle line, meters.
    pub goal_after: f64,
    pub one_side_radius: f64,
    /// Lateral center of the one-side obstacle from the centerline.
    pub one_side_offset: f64,
    pub gap: f64,
    pub gap_radius: f64,
    pub block_half_width: f64,
    /// Distance behind the path start of the irrelevant obstacle, meters.
    pub far_distance: f64,
    pub duration: f64,
    /// Allowed divergence between the far-obstacle and obstacle-free runs, meters.
    pub far_tolerance: f64,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        ObstacleConfig {
            variant: Variant::CropFeature,
            terrain_seed: 0x4f42_5354,
            seeds: 4,
            obstacle_at: 8.0,
            goal_after: 7.0,
            one_side_radius: 0.45,
            one_side_offset: 0.4,
            gap: 1.0,
            gap_radius: 0.4,
            block_half_width: 2.5,
            far_distance: 6.0,
            duration: 40.0,
            far_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub terrain: TerrainSpec,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub collect: CollectConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub table1: Table1Config,
    pub navigation: NavSuiteConfig,
    pub obstacles: ObstacleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            terrain: TerrainSpec::default(),
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
            collect: CollectConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            table1: Table1Config::default(),
            navigation: NavSuiteConfig::default(),
            obstacles: ObstacleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate().map_err(Error::Config)?;
        self.model_config(Variant::CropFeature, 0).validate()?;
        self.navigation.planner.validate()?;
        if self.terrain.obstacle_count != 0 {
            return Err(Error::Config("training terrains must not contain obstacles".into()));
        }
        let n = &self.navigation;
        for f in [n.short_fraction, n.long_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("goal fraction {f} must be in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Model settings for one training run: the shared camera, the variant
    /// and a per-run initialization seed.
    pub fn model_config(&self, variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            variant,
            camera: self.camera,
            init_seed: seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

/// File names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoint(&self, variant: Variant, seed: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("{variant}_s{seed}.ckpt"))
    }

    pub fn train_log(&self, variant: Variant, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("train_{variant}_s{seed}.csv"))
    }

    pub fn divergence_log(&self, variant: Variant, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("train_{variant}_s{seed}.diverged"))
    }

    pub fn nav_dir(&self) -> PathBuf {
        self.root.join("navigation")
    }

    pub fn obstacle_dir(&self) -> PathBuf {
        self.root.join("obstacles")
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.root.join("checkpoints"), self.root.join("logs"), self.nav_dir(), self.obstacle_dir()] {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[collect]\nepisodes = 12\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.collect.episodes, 12);
        assert_eq!(cfg.collect.duration, 100.0);
        assert_eq!(cfg.navigation.short_trials, 10);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("[navigation]\nshort_fraction = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[terrain]\nobstacle_count = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\ncrop = 4\n").is_err());
        assert!(ExperimentConfig::from_toml("[table1]\nvariants = [\"nope\"]\n").is_err());
    }

    #[test]
    fn checked_in_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }
}
