//! Receding-horizon point-goal navigation with a learned dynamics model.

use super::cost::{evaluate, select, CostBreakdown, CostConfig};
use super::sampler::{sample_actions, shift_plan, ActionBounds, SamplerConfig};
use crate::dataset::{label_bumpiness, RobotState, STEP_TICKS};
use crate::geometry::matrix_to_euler;
use crate::model::Network;
use crate::sim::noise::mix64;
use crate::sim::{render_pose, terrain_image, Command, Simulator, Terrain, Z_WINDOW, DT};
use crate::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub candidates: usize,
    /// Ticks executed per plan (0.5 s at 10 Hz).
    pub replan_ticks: usize,
    pub max_duration: f64,
    pub warm_start: bool,
    pub bounds: ActionBounds,
    pub sampler: SamplerConfig,
    pub cost: CostConfig,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            candidates: 64,
            replan_ticks: 5,
            max_duration: 60.0,
            warm_start: true,
            bounds: ActionBounds::default(),
            sampler: SamplerConfig::default(),
            cost: CostConfig::default(),
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.replan_ticks == 0 {
            return Err(Error::Config("candidates and replan_ticks must be positive".into()));
        }
        if !(self.max_duration >= 0.0) {
            return Err(Error::Config("max_duration must be ≥ 0".into()));
        }
        self.bounds.validate()?;
        self.sampler.validate()?;
        self.cost.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    OutOfBounds,
    Timeout,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::OutOfBounds => "out_of_bounds",
            Outcome::Timeout => "timeout",
        })
    }
}

/// Vehicle state after each executed tick; entry 0 is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: u64,
    pub position: [f64; 3],
    /// `(roll, pitch, yaw)` of the body in the world frame.
    pub orientation: [f64; 3],
    pub speed: f64,
    /// Command that produced this state; zero for the start entry.
    pub command: [f64; 2],
    pub z_accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLog {
    pub tick: u64,
    pub chosen: usize,
    pub actions: Vec<[f64; 2]>,
    pub cost: CostBreakdown,
    /// Predicted positions of the chosen rollout, world frame.
    pub predicted: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub variant: String,
    pub goal: [f64; 3],
    pub outcome: Outcome,
    pub duration: f64,
    pub distance: f64,
    /// Bumpiness label at every tick with a full window of logged z-accel.
    pub bumpiness: Vec<f64>,
    pub mean_bumpiness: f64,
    pub ticks: Vec<TickLog>,
    pub plans: Vec<PlanLog>,
}

impl EpisodeResult {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    /// Lateral offsets of the executed path from the line `a → b` (left is
    /// positive).
    pub fn lateral_offsets(&self, a: [f64; 2], b: [f64; 2]) -> Vec<f64> {
        let d = [b[0] - a[0], b[1] - a[1]];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-12);
        self.ticks
            .iter()
            .map(|t| (d[0] * (t.position[1] - a[1]) - d[1] * (t.position[0] - a[0])) / n)
            .collect()
    }
}

/// Realized bumpiness labels over a z-acceleration log.
pub fn realized_bumpiness(z: &[f64]) -> Vec<f64> {
    z.windows(Z_WINDOW)
        .map(|w| label_bumpiness(w.try_into().expect("window length")))
        .collect()
}

fn tick_log(sim: &Simulator, command: Command) -> TickLog {
    let s = &sim.state;
    TickLog {
        tick: sim.tick,
        position: s.pose.position.into(),
        orientation: matrix_to_euler(&s.pose.rotation.transpose()),
        speed: s.speed,
        command: [command.v, command.steer],
        z_accel: s.z_accel,
    }
}

fn terminal(sim: &Simulator, goal: &Vector3<f64>, cfg: &NavConfig) -> Option<Outcome> {
    let s = &sim.state;
    if (goal - s.pose.position).norm() <= cfg.cost.success_radius {
        Some(Outcome::Success)
    } else if s.collided {
        Some(Outcome::Collision)
    } else if s.out_of_bounds {
        Some(Outcome::OutOfBounds)
    } else if sim.time() >= cfg.max_duration - 1e-9 {
        Some(Outcome::Timeout)
    } else {
        None
    }
}

/// Drive `sim` toward the world-frame `goal`: every `replan_ticks` render a
/// frame, score `candidates` sampled sequences with the model and hold the
/// best one's actions until the next plan.
pub fn navigate(
    sim: &mut Simulator,
    net: &Network,
    goal: Vector3<f64>,
    cfg: &NavConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let horizon = net.config.horizon;
    let camera = net.config.camera;
    let render_seed = mix64(seed ^ 0x7e4d);
    let mut ticks = vec![tick_log(sim, Command::default())];
    let mut plans = Vec::new();
    let mut z_log = Vec::new();
    let mut last = Command::default();
    let mut warm: Option<Vec<[f64; 2]>> = None;

    let outcome = 'run: loop {
        if let Some(o) = terminal(sim, &goal, cfg) {
            break o;
        }
        let pose = sim.state.pose;
        let frame = render_pose(&sim.terrain, &pose, &camera, mix64(render_seed ^ sim.tick));
        let state = RobotState {
            speed: sim.state.speed,
            yaw_rate: sim.state.yaw_rate,
            bumpiness: sim.state.z_window().map(|w| label_bumpiness(&w)).unwrap_or(0.0),
            prev_v: last.v,
            prev_steer: last.steer,
        };
        let goal_body = pose.world_to_body(&goal);
        let warm_seq = if cfg.warm_start { warm.as_deref() } else { None };
        let candidates = sample_actions(
            cfg.candidates,
            horizon,
            last,
            &cfg.bounds,
            &cfg.sampler,
            warm_seq,
            mix64(seed ^ sim.tick.wrapping_mul(0x9e37)),
        )?;
        let rollouts = net.predict_batch(&frame, &state, &candidates)?;
        let costs = rollouts
            .iter()
            .map(|r| evaluate(r, &cfg.cost, &goal_body))
            .collect::<Result<Vec<_>>>()?;
        let totals: Vec<f64> = costs.iter().map(|c| c.total).collect();
        let best = select(&totals).ok_or_else(|| Error::Episode("every candidate cost is NaN".into()))?;
        let plan = candidates[best].clone();
        plans.push(PlanLog {
            tick: sim.tick,
            chosen: best,
            actions: plan.clone(),
            cost: costs[best].clone(),
            predicted: rollouts[best]
                .steps
                .iter()
                .map(|s| pose.body_to_world(&s.pose.position).into())
                .collect(),
        });

        for k in 0..cfg.replan_ticks {
            let a = plan[(k / STEP_TICKS).min(horizon - 1)];
            let cmd = Command::new(a[0], a[1]);
            sim.step(cmd);
            last = cmd;
            z_log.push(sim.state.z_accel);
            ticks.push(tick_log(sim, cmd));
            if let Some(o) = terminal(sim, &goal, cfg) {
                break 'run o;
            }
        }
        warm = Some(shift_plan(&plan, cfg.replan_ticks, STEP_TICKS));
    };

    let distance = ticks
        .windows(2)
        .map(|w| {
            let a = Vector3::from(w[0].position);
            let b = Vector3::from(w[1].position);
            (b - a).norm()
        })
        .sum();
    let bumpiness = realized_bumpiness(&z_log);
    let mean_bumpiness = if bumpiness.is_empty() {
        0.0
    } else {
        bumpiness.iter().sum::<f64>() / bumpiness.len() as f64
    };
    Ok(EpisodeResult {
        variant: net.variant().to_string(),
        goal: goal.into(),
        outcome,
        duration: (ticks.len() - 1) as f64 * DT,
        distance,
        bumpiness,
        mean_bumpiness,
        ticks,
        plans,
    })
}

fn plot(rgb: &mut [u8], w: usize, h: usize, px: [f64; 2], color: [u8; 3], radius: i64) {
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let r = px[1].floor() as i64 + dr;
            let c = px[0].floor() as i64 + dc;
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                let i = (r as usize * w + c as usize) * 3;
                rgb[i..i + 3].copy_from_slice(&color);
            }
        }
    }
}

/// Top-down render of one or more episodes over the terrain: executed
/// paths in red, planned trajectories in blue, goals in white.
pub fn render_episodes(terrain: &Terrain, results: &[&EpisodeResult], stride: usize) -> (usize, usize, Vec<u8>) {
    let (w, h, mut rgb) = terrain_image(terrain, stride);
    let scale = terrain.resolution() * stride as f64;
    let top = terrain.ny as f64 * terrain.resolution();
    let to_px = |p: [f64; 3]| [p[0] / scale, (top - p[1]) / scale];
    for r in results {
        for plan in &r.plans {
            for p in &plan.predicted {
                plot(&mut rgb, w, h, to_px(*p), [60, 110, 230], 0);
            }
        }
        for t in &r.ticks {
            plot(&mut rgb, w, h, to_px(t.position), [220, 30, 30], 0);
        }
        plot(&mut rgb, w, h, to_px(r.goal), [255, 255, 255], 2);
    }
    (w, h, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use crate::model::ModelConfig;
    use crate::sim::{generate_terrain, CellClass, TerrainSpec, VehicleParams};
    use std::sync::Arc;

    fn tiny_net() -> Network {
        let config = ModelConfig {
            camera: CameraModel::from_fov(32, 24, 90f64.to_radians(), [0.3, 0.0, 0.4], 15f64.to_radians()),
            conv_channels: [2, 2, 4],
            state_embed: 4,
            context_hidden: 8,
            action_embed: 4,
            lstm_hidden: 8,
            head_hidden: 4,
            ..Default::default()
        };
        Network::new(config).unwrap()
    }

    fn flat_sim() -> Simulator {
        let terrain = Arc::new(Terrain::flat([30.0, 20.0], 0.1, CellClass::Path, 0.0));
        let params = VehicleParams::default();
        let start = crate::sim::VehicleState::at_rest(&terrain, &params, 3.0, 10.0, 0.0);
        Simulator::new(terrain, params, start, 1)
    }

    fn short_cfg() -> NavConfig {
        NavConfig { candidates: 8, max_duration: 3.0, ..Default::default() }
    }

    #[test]
    fn goal_within_radius_is_immediate_success() {
        let mut sim = flat_sim();
        let goal = sim.state.pose.position + Vector3::new(0.5, 0.0, 0.0);
        let r = navigate(&mut sim, &tiny_net(), goal, &short_cfg(), 0).unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert_eq!(r.distance, 0.0);
        assert!(r.plans.is_empty());
    }

    #[test]
    fn zero_velocity_bounds_time_out_in_place() {
        let mut sim = flat_sim();
        let goal = sim.state.pose.position + Vector3::new(10.0, 0.0, 0.0);
        let cfg = NavConfig {
            bounds: ActionBounds { v: [0.0, 0.0], ..Default::default() },
            ..short_cfg()
        };
        let r = navigate(&mut sim, &tiny_net(), goal, &cfg, 0).unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.ticks.len(), 31);
        assert_eq!(r.plans.len(), 6);
    }

    #[test]
    fn executes_chosen_plan_and_warm_starts() {
        let mut sim = flat_sim();
        let goal = sim.state.pose.position + Vector3::new(10.0, 0.0, 0.0);
        let r = navigate(&mut sim, &tiny_net(), goal, &short_cfg(), 3).unwrap();
        for (i, plan) in r.plans.iter().enumerate() {
            for k in 0..5 {
                let t = &r.ticks[i * 5 + k + 1];
                assert_eq!(t.command, plan.actions[k / 3]);
            }
        }
        assert!(r.plans.iter().all(|p| p.actions.len() == 10 && p.predicted.len() == 10));
    }

    #[test]
    fn deterministic() {
        let spec = TerrainSpec::default();
        let terrain = Arc::new(generate_terrain(5, &spec).unwrap());
        let net = tiny_net();
        let run = || {
            let mut sim = Simulator::at_path_start(terrain.clone(), VehicleParams::default(), 2);
            let (g, _) = terrain.path_point(8.0);
            let goal = Vector3::new(g[0], g[1], terrain.surface_at(g[0], g[1]));
            navigate(&mut sim, &net, goal, &short_cfg(), 11).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&run()).unwrap());
    }

    #[test]
    fn realized_bumpiness_uses_the_label() {
        let mut sim = flat_sim();
        sim.terrain = Arc::new(Terrain::flat([30.0, 20.0], 0.1, CellClass::Dirt, 0.6));
        let goal = sim.state.pose.position + Vector3::new(10.0, 0.0, 0.0);
        let r = navigate(&mut sim, &tiny_net(), goal, &short_cfg(), 4).unwrap();
        let z: Vec<f64> = r.ticks[1..].iter().map(|t| t.z_accel).collect();
        assert_eq!(r.bumpiness.len(), z.len() - Z_WINDOW + 1);
        for (i, b) in r.bumpiness.iter().enumerate() {
            let w: [f64; Z_WINDOW] = z[i..i + Z_WINDOW].try_into().unwrap();
            assert_eq!(*b, label_bumpiness(&w));
        }
    }

    #[test]
    fn render_marks_path() {
        let mut sim = flat_sim();
        let goal = sim.state.pose.position + Vector3::new(10.0, 0.0, 0.0);
        let r = navigate(&mut sim, &tiny_net(), goal, &short_cfg(), 3).unwrap();
        let (w, h, rgb) = render_episodes(&sim.terrain, &[&r], 2);
        assert_eq!(rgb.len(), w * h * 3);
        assert!(rgb.chunks(3).any(|p| p == [220, 30, 30]));
        assert!(rgb.chunks(3).any(|p| p == [255, 255, 255]));
    }
}
