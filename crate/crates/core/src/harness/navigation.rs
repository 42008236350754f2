//! Point-goal navigation trials at two goal distances per variant.

use super::config::{ExperimentConfig, Layout};
use super::tables::{mean, num, TextTable};
use crate::dataset::terrain_seed;
use crate::model::{Network, Variant};
use crate::planner::{navigate, render_episodes, EpisodeResult, NavConfig};
use crate::sim::noise::mix64;
use crate::sim::{generate_terrain, write_ppm, Simulator};
use crate::{Error, Result};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalDistance {
    Short,
    Long,
}

impl GoalDistance {
    pub const ALL: [GoalDistance; 2] = [GoalDistance::Short, GoalDistance::Long];

    pub fn name(self) -> &'static str {
        match self {
            GoalDistance::Short => "short",
            GoalDistance::Long => "long",
        }
    }

    /// Terrain index offset, so the two distances use disjoint terrains.
    fn terrain_offset(self) -> usize {
        match self {
            GoalDistance::Short => 0,
            GoalDistance::Long => 1 << 16,
        }
    }
}

/// One trial of the suite: which terrain, which goal, which budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub distance: GoalDistance,
    pub index: usize,
    pub terrain_seed: u64,
    pub fraction: f64,
    pub max_duration: f64,
}

impl Trial {
    pub fn id(&self, variant: Variant) -> String {
        format!("{variant}_{}_{:02}", self.distance.name(), self.index)
    }
}

pub fn trials(cfg: &ExperimentConfig) -> Vec<Trial> {
    let n = &cfg.navigation;
    let mut out = Vec::new();
    for d in GoalDistance::ALL {
        let (count, fraction, max_duration) = match d {
            GoalDistance::Short => (n.short_trials, n.short_fraction, n.short_duration),
            GoalDistance::Long => (n.long_trials, n.long_fraction, n.long_duration),
        };
        for index in 0..count {
            out.push(Trial {
                distance: d,
                index,
                terrain_seed: terrain_seed(n.terrain_seed, d.terrain_offset() + index),
                fraction,
                max_duration,
            });
        }
    }
    out
}

/// Run one trial: goal on the path centerline at `fraction` of its length.
pub fn run_trial(cfg: &ExperimentConfig, net: &Network, trial: &Trial, planner: &NavConfig) -> Result<EpisodeResult> {
    let terrain = Arc::new(generate_terrain(trial.terrain_seed, &cfg.terrain)?);
    let (g, _) = terrain.path_point(trial.fraction * terrain.path_length());
    let goal = Vector3::new(g[0], g[1], terrain.surface_at(g[0], g[1]));
    let mut sim = Simulator::at_path_start(terrain, cfg.vehicle.clone(), mix64(trial.terrain_seed ^ 0x51));
    let nav = NavConfig { max_duration: trial.max_duration, ..planner.clone() };
    navigate(&mut sim, net, goal, &nav, mix64(trial.terrain_seed ^ 0x9a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub id: String,
    pub variant: Variant,
    pub distance: GoalDistance,
    pub success: bool,
    pub mean_bumpiness: f64,
    pub distance_driven: f64,
}

impl TrialRecord {
    pub fn from_result(id: String, distance: GoalDistance, r: &EpisodeResult) -> Result<Self> {
        Ok(TrialRecord {
            id,
            variant: r.variant.parse()?,
            distance,
            success: r.success(),
            mean_bumpiness: r.mean_bumpiness,
            distance_driven: r.distance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NavTable {
    pub trials: Vec<TrialRecord>,
}

impl NavTable {
    fn of(&self, v: Variant) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(move |t| t.variant == v)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = Vec::new();
        for t in &self.trials {
            if !v.contains(&t.variant) {
                v.push(t.variant);
            }
        }
        v
    }

    /// `(successes, trials)` at one goal distance.
    pub fn successes(&self, v: Variant, d: GoalDistance) -> (usize, usize) {
        let at: Vec<_> = self.of(v).filter(|t| t.distance == d).collect();
        (at.iter().filter(|t| t.success).count(), at.len())
    }

    /// Mean realized bumpiness over every trial of the variant.
    pub fn mean_bumpiness(&self, v: Variant) -> f64 {
        mean(&self.of(v).map(|t| t.mean_bumpiness).collect::<Vec<_>>())
    }

    pub fn mean_distance(&self, v: Variant) -> f64 {
        mean(&self.of(v).map(|t| t.distance_driven).collect::<Vec<_>>())
    }

    pub fn summary(&self) -> TextTable {
        let mut t = TextTable::new(&[
            "variant",
            "short_success",
            "short_trials",
            "long_success",
            "long_trials",
            "mean_bumpiness",
            "mean_distance",
        ]);
        for v in self.variants() {
            let (ss, sn) = self.successes(v, GoalDistance::Short);
            let (ls, ln) = self.successes(v, GoalDistance::Long);
            t.push(vec![
                v.to_string(),
                ss.to_string(),
                sn.to_string(),
                ls.to_string(),
                ln.to_string(),
                num(self.mean_bumpiness(v)),
                num(self.mean_distance(v)),
            ]);
        }
        t
    }

    pub fn per_trial(&self) -> TextTable {
        let mut t = TextTable::new(&["run", "variant", "goal", "success", "mean_bumpiness", "distance"]);
        for r in &self.trials {
            t.push(vec![
                r.id.clone(),
                r.variant.to_string(),
                r.distance.name().into(),
                r.success.to_string(),
                num(r.mean_bumpiness),
                num(r.distance_driven),
            ]);
        }
        t
    }

    pub fn save(&self, layout: &Layout) -> Result<()> {
        self.summary().save_csv(&layout.table("navigation.csv"))?;
        self.per_trial().save_csv(&layout.table("navigation_trials.csv"))
    }
}

/// Drive every configured variant through the trial set with its
/// checkpoint from `layout`, writing one JSON log and render per trial.
pub fn run_navigation_suite(cfg: &ExperimentConfig, layout: &Layout) -> Result<NavTable> {
    layout.create()?;
    let n = &cfg.navigation;
    let set = trials(cfg);
    for v in &n.variants {
        let net = Network::load(&layout.checkpoint(*v, n.checkpoint_seed), Some(*v))?;
        set.par_iter()
            .map(|t| {
                let r = run_trial(cfg, &net, t, &n.planner)?;
                let id = t.id(*v);
                r.save_json(&layout.nav_dir().join(format!("{id}.json")))?;
                let terrain = generate_terrain(t.terrain_seed, &cfg.terrain)?;
                let (w, h, rgb) = render_episodes(&terrain, &[&r], 2);
                write_ppm(&layout.nav_dir().join(format!("{id}.ppm")), w, h, &rgb)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
    }
    let table = nav_table_from_logs(cfg, layout)?;
    table.save(layout)?;
    Ok(table)
}

pub fn load_episode(path: &Path) -> Result<EpisodeResult> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Rebuild the navigation table from the per-trial JSON logs.
pub fn nav_table_from_logs(cfg: &ExperimentConfig, layout: &Layout) -> Result<NavTable> {
    let mut table = NavTable::default();
    for v in &cfg.navigation.variants {
        for t in trials(cfg) {
            let id = t.id(*v);
            let path = layout.nav_dir().join(format!("{id}.json"));
            if !path.exists() {
                return Err(Error::Format(format!("no log for trial {id}")));
            }
            table.trials.push(TrialRecord::from_result(id, t.distance, &load_episode(&path)?)?);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(v: Variant, d: GoalDistance, success: bool, b: f64, dist: f64) -> TrialRecord {
        TrialRecord { id: "x".into(), variant: v, distance: d, success, mean_bumpiness: b, distance_driven: dist }
    }

    #[test]
    fn trial_set_is_fixed_and_disjoint() {
        let cfg = ExperimentConfig::default();
        let t = trials(&cfg);
        assert_eq!(t.len(), 15);
        assert_eq!(t.iter().filter(|x| x.distance == GoalDistance::Short).count(), 10);
        let mut seeds: Vec<u64> = t.iter().map(|x| x.terrain_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 15);
        assert_eq!(t, trials(&cfg));
    }

    #[test]
    fn zero_trials_give_an_empty_table() {
        let mut cfg = ExperimentConfig::default();
        cfg.navigation.short_trials = 0;
        cfg.navigation.long_trials = 0;
        let dir = tempfile::tempdir().unwrap();
        let t = nav_table_from_logs(&cfg, &Layout::new(dir.path())).unwrap();
        assert!(t.trials.is_empty());
        assert!(t.summary().rows.is_empty());
    }

    #[test]
    fn aggregates() {
        let v = Variant::CropFeature;
        let t = NavTable {
            trials: vec![
                record(v, GoalDistance::Short, true, 0.2, 10.0),
                record(v, GoalDistance::Short, false, 0.4, 4.0),
                record(v, GoalDistance::Long, true, 0.3, 19.0),
            ],
        };
        assert_eq!(t.successes(v, GoalDistance::Short), (1, 2));
        assert_eq!(t.successes(v, GoalDistance::Long), (1, 1));
        assert!((t.mean_bumpiness(v) - 0.3).abs() < 1e-15);
        assert_eq!(t.mean_distance(v), 11.0);
        assert_eq!(t.summary().rows[0][..5], ["crop_feature", "1", "2", "1", "1"]);
    }
}
