//! Unseen static obstacles placed on or beside the path.

use super::config::{ExperimentConfig, Layout};
use super::tables::{num, TextTable};
use crate::dataset::terrain_seed;
use crate::model::Network;
use crate::planner::{navigate, render_episodes, EpisodeResult, NavConfig, Outcome};
use crate::sim::noise::mix64;
use crate::sim::{generate_terrain, write_ppm, Simulator, Terrain};
use crate::Result;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One obstacle covering the centerline and the left half of the path.
    LeftSide,
    RightSide,
    /// Obstacles on both sides leaving a centered gap.
    Gap,
    /// A wall of obstacles across the path and beyond its edges.
    Block,
    /// One obstacle far off the path.
    Far,
    /// No obstacle; the reference for `Far`.
    Clear,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::LeftSide => "left_side",
            Scenario::RightSide => "right_side",
            Scenario::Gap => "gap",
            Scenario::Block => "block",
            Scenario::Far => "far",
            Scenario::Clear => "clear",
        }
    }

    /// Side of the path the obstacle occupies (+ = left).
    pub fn side(self) -> Option<f64> {
        match self {
            Scenario::LeftSide => Some(1.0),
            Scenario::RightSide => Some(-1.0),
            _ => None,
        }
    }

    /// Scenarios run for seed index `i`; the one-side scenario alternates sides.
    pub fn for_seed(i: usize) -> [Scenario; 5] {
        let one = if i % 2 == 0 { Scenario::LeftSide } else { Scenario::RightSide };
        [one, Scenario::Gap, Scenario::Block, Scenario::Far, Scenario::Clear]
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn offset_point(terrain: &Terrain, s: f64, lateral: f64) -> [f64; 2] {
    let (p, heading) = terrain.path_point(s);
    [p[0] - heading.sin() * lateral, p[1] + heading.cos() * lateral]
}

/// Terrain of seed index `i` with the scenario's obstacles added.
pub fn build_terrain(cfg: &ExperimentConfig, scenario: Scenario, i: usize) -> Result<Terrain> {
    let o = &cfg.obstacles;
    let mut terrain = generate_terrain(terrain_seed(o.terrain_seed, i), &cfg.terrain)?;
    let s = o.obstacle_at;
    match scenario {
        Scenario::LeftSide | Scenario::RightSide => {
            let side = scenario.side().unwrap_or(1.0);
            terrain.add_obstacle(offset_point(&terrain, s, side * o.one_side_offset), o.one_side_radius);
        }
        Scenario::Gap => {
            let c = o.gap / 2.0 + o.gap_radius;
            for side in [1.0, -1.0] {
                terrain.add_obstacle(offset_point(&terrain, s, side * c), o.gap_radius);
            }
        }
        Scenario::Block => {
            let r = o.gap_radius;
            let count = (2.0 * o.block_half_width / r).ceil() as usize + 1;
            for k in 0..count {
                let lateral = -o.block_half_width + 2.0 * o.block_half_width * k as f64 / (count - 1) as f64;
                terrain.add_obstacle(offset_point(&terrain, s, lateral), r);
            }
        }
        Scenario::Far => {
            let (p, heading) = terrain.start();
            let back = [p[0] - heading.cos() * o.far_distance, p[1] - heading.sin() * o.far_distance];
            terrain.add_obstacle(back, o.one_side_radius);
        }
        Scenario::Clear => {}
    }
    Ok(terrain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub seed: usize,
    pub outcome: Outcome,
    /// Mean signed offset from the centerline (+ = left) while passing the
    /// obstacle line; `None` if the vehicle never got there.
    pub offset: Option<f64>,
    pub result: EpisodeResult,
}

impl ScenarioResult {
    pub fn id(&self) -> String {
        format!("{}_{:02}", self.scenario, self.seed)
    }

    /// One-side: reached the goal passing on the side away from the obstacle.
    /// Gap: reached the goal passing inside the gap.
    pub fn passed(&self, cfg: &ExperimentConfig) -> Option<bool> {
        let reached = self.outcome == Outcome::Success;
        match self.scenario {
            Scenario::LeftSide | Scenario::RightSide => {
                let side = self.scenario.side()?;
                Some(reached && self.offset.is_some_and(|o| o * side < 0.0))
            }
            Scenario::Gap => Some(reached && self.offset.is_some_and(|o| o.abs() < cfg.obstacles.gap / 2.0)),
            _ => None,
        }
    }
}

/// Mean signed lateral offset of the executed path within `window` meters
/// of arc length around `s`.
pub fn offset_near(terrain: &Terrain, r: &EpisodeResult, s: f64, window: f64) -> Option<f64> {
    let near: Vec<f64> = r
        .ticks
        .iter()
        .filter_map(|t| {
            let (d, at, side) = terrain.nearest_on_path(t.position[0], t.position[1]);
            ((at - s).abs() <= window).then_some(d * side)
        })
        .collect();
    (!near.is_empty()).then(|| near.iter().sum::<f64>() / near.len() as f64)
}

/// Largest planar distance between time-aligned positions of two runs.
pub fn max_deviation(a: &EpisodeResult, b: &EpisodeResult) -> f64 {
    a.ticks
        .iter()
        .zip(&b.ticks)
        .map(|(p, q)| (p.position[0] - q.position[0]).hypot(p.position[1] - q.position[1]))
        .fold(0.0, f64::max)
}

pub fn run_scenario(cfg: &ExperimentConfig, net: &Network, scenario: Scenario, i: usize) -> Result<ScenarioResult> {
    let o = &cfg.obstacles;
    let terrain = Arc::new(build_terrain(cfg, scenario, i)?);
    let (g, _) = terrain.path_point(o.obstacle_at + o.goal_after);
    let goal = Vector3::new(g[0], g[1], terrain.surface_at(g[0], g[1]));
    let seed = terrain_seed(o.terrain_seed, i);
    let mut sim = Simulator::at_path_start(terrain.clone(), cfg.vehicle.clone(), mix64(seed ^ 0x51));
    let nav = NavConfig { max_duration: o.duration, ..cfg.navigation.planner.clone() };
    let result = navigate(&mut sim, net, goal, &nav, mix64(seed ^ 0x9a))?;
    Ok(ScenarioResult {
        scenario,
        seed: i,
        outcome: result.outcome,
        offset: offset_near(&terrain, &result, o.obstacle_at, 0.3),
        result,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleReport {
    pub runs: Vec<ScenarioResult>,
    /// Per seed: largest deviation between the far-obstacle and clear runs,
    /// and whether their outcomes agree.
    pub far: Vec<(usize, f64, bool)>,
}

impl ObstacleReport {
    /// `(passed, total)` over one-side scenarios.
    pub fn one_side(&self, cfg: &ExperimentConfig) -> (usize, usize) {
        self.count(cfg, |s| s.side().is_some())
    }

    pub fn gap(&self, cfg: &ExperimentConfig) -> (usize, usize) {
        self.count(cfg, |s| s == Scenario::Gap)
    }

    fn count(&self, cfg: &ExperimentConfig, pick: impl Fn(Scenario) -> bool) -> (usize, usize) {
        let sel: Vec<_> = self.runs.iter().filter(|r| pick(r.scenario)).collect();
        (sel.iter().filter(|r| r.passed(cfg) == Some(true)).count(), sel.len())
    }

    pub fn table(&self, cfg: &ExperimentConfig) -> TextTable {
        let mut t = TextTable::new(&["run", "scenario", "seed", "outcome", "offset", "passed", "duration", "distance"]);
        for r in &self.runs {
            t.push(vec![
                r.id(),
                r.scenario.to_string(),
                r.seed.to_string(),
                r.outcome.to_string(),
                num(r.offset.unwrap_or(f64::NAN)),
                r.passed(cfg).map(|p| p.to_string()).unwrap_or_else(|| "NA".into()),
                num(r.result.duration),
                num(r.result.distance),
            ]);
        }
        t
    }

    pub fn far_table(&self) -> TextTable {
        let mut t = TextTable::new(&["seed", "max_deviation", "same_outcome"]);
        for (i, d, same) in &self.far {
            t.push(vec![i.to_string(), num(*d), same.to_string()]);
        }
        t
    }
}

/// Run every scenario over the configured seeds with the obstacle
/// variant's checkpoint, writing a JSON log and render per run.
pub fn run_obstacle_scenarios(cfg: &ExperimentConfig, layout: &Layout) -> Result<ObstacleReport> {
    layout.create()?;
    let o = &cfg.obstacles;
    let net = Network::load(&layout.checkpoint(o.variant, cfg.navigation.checkpoint_seed), Some(o.variant))?;
    let jobs: Vec<(Scenario, usize)> = (0..o.seeds).flat_map(|i| Scenario::for_seed(i).map(|s| (s, i))).collect();
    let runs: Vec<ScenarioResult> = jobs
        .par_iter()
        .map(|(s, i)| {
            let r = run_scenario(cfg, &net, *s, *i)?;
            let dir = layout.obstacle_dir();
            r.result.save_json(&dir.join(format!("{}.json", r.id())))?;
            let terrain = build_terrain(cfg, *s, *i)?;
            let (w, h, rgb) = render_episodes(&terrain, &[&r.result], 2);
            write_ppm(&dir.join(format!("{}.ppm", r.id())), w, h, &rgb)?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let far = (0..o.seeds)
        .filter_map(|i| {
            let find = |s| runs.iter().find(|r| r.scenario == s && r.seed == i);
            let (a, b) = (find(Scenario::Far)?, find(Scenario::Clear)?);
            Some((i, max_deviation(&a.result, &b.result), a.outcome == b.outcome))
        })
        .collect();
    let report = ObstacleReport { runs, far };
    report.table(cfg).save_csv(&layout.table("obstacles.csv"))?;
    report.far_table().save_csv(&layout.table("obstacles_far.csv"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::CellClass;

    fn blocked(t: &Terrain, p: [f64; 2]) -> bool {
        t.class_at(p[0], p[1]) == CellClass::Obstacle
    }

    #[test]
    fn one_side_leaves_the_other_half_open() {
        let cfg = ExperimentConfig::default();
        let s = cfg.obstacles.obstacle_at;
        let t = build_terrain(&cfg, Scenario::LeftSide, 0).unwrap();
        assert!(blocked(&t, offset_point(&t, s, 0.0)));
        assert!(blocked(&t, offset_point(&t, s, 0.6)));
        assert!(!blocked(&t, offset_point(&t, s, -0.3)));
        assert!(!blocked(&t, offset_point(&t, s, -0.6)));
        let t = build_terrain(&cfg, Scenario::RightSide, 0).unwrap();
        assert!(blocked(&t, offset_point(&t, s, -0.6)));
        assert!(!blocked(&t, offset_point(&t, s, 0.3)));
    }

    #[test]
    fn gap_is_open_and_flanked() {
        let cfg = ExperimentConfig::default();
        let s = cfg.obstacles.obstacle_at;
        let t = build_terrain(&cfg, Scenario::Gap, 1).unwrap();
        for l in [-0.4, 0.0, 0.4] {
            assert!(!blocked(&t, offset_point(&t, s, l)), "{l}");
        }
        for l in [-0.9, 0.9] {
            assert!(blocked(&t, offset_point(&t, s, l)), "{l}");
        }
    }

    #[test]
    fn block_spans_the_path() {
        let cfg = ExperimentConfig::default();
        let s = cfg.obstacles.obstacle_at;
        let t = build_terrain(&cfg, Scenario::Block, 2).unwrap();
        for k in -20..=20 {
            let l = k as f64 * 0.1;
            assert!(blocked(&t, offset_point(&t, s, l)), "{l}");
        }
    }

    #[test]
    fn far_obstacle_is_off_the_path_and_clear_has_none() {
        let cfg = ExperimentConfig::default();
        let t = build_terrain(&cfg, Scenario::Far, 0).unwrap();
        let c = t.obstacles[0].center;
        let (d, _, _) = t.nearest_on_path(c[0], c[1]);
        assert!(d > 4.0, "{d}");
        assert!(build_terrain(&cfg, Scenario::Clear, 0).unwrap().obstacles.is_empty());
    }

    #[test]
    fn side_rules() {
        assert_eq!(Scenario::for_seed(0)[0], Scenario::LeftSide);
        assert_eq!(Scenario::for_seed(1)[0], Scenario::RightSide);
        assert_eq!(Scenario::Gap.side(), None);
    }
}
