//! Kinematic bicycle with first-order speed lag and rate-limited steering.
//!
//! The body origin is the rear-axle center on the ground. Planar motion over
//! one tick is integrated exactly along a circular arc, so constant commands
//! trace a closed-form circle.

use super::terrain::{CellClass, Terrain};
use crate::geometry::Pose;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

/// Simulator tick, seconds (10 Hz control).
pub const DT: f64 = 0.1;
/// Length of the z-acceleration window, samples (1 s at 10 Hz).
pub const Z_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub track: f64,
    pub v_max: f64,
    pub steer_max: f64,
    /// Steering slew limit, rad/s.
    pub steer_rate: f64,
    /// Speed lag time constant, s.
    pub speed_tau: f64,
    /// Roughness-to-acceleration gain.
    pub kappa: f64,
    pub gravity: f64,
    /// Extra z-acceleration on the tick a collision happens, m/s².
    pub collision_spike: f64,
    /// Footprint corners in the body frame: rear overhang, front extent, half width.
    pub footprint: [f64; 3],
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 0.5,
            track: 0.4,
            v_max: 1.5,
            steer_max: 0.4,
            steer_rate: 2.0,
            speed_tau: 0.3,
            kappa: 2.5,
            gravity: 9.81,
            collision_spike: 30.0,
            footprint: [0.1, 0.65, 0.2],
        }
    }
}

/// Throttle-velocity and steering-angle command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub steer: f64,
}

impl Command {
    pub fn new(v: f64, steer: f64) -> Self {
        Command { v, steer }
    }

    pub fn clamped(self, params: &VehicleParams) -> Self {
        Command {
            v: self.v.clamp(0.0, params.v_max),
            steer: self.steer.clamp(-params.steer_max, params.steer_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub pose: Pose,
    pub speed: f64,
    pub steering: f64,
    pub yaw_rate: f64,
    pub z_accel: f64,
    pub z_history: VecDeque<f64>,
    pub collided: bool,
    pub out_of_bounds: bool,
}

impl VehicleState {
    /// At rest at `(x, y)` with heading `yaw`.
    pub fn at_rest(terrain: &Terrain, params: &VehicleParams, x: f64, y: f64, yaw: f64) -> Self {
        VehicleState {
            x,
            y,
            yaw,
            pose: ground_pose(terrain, params, x, y, yaw),
            speed: 0.0,
            steering: 0.0,
            yaw_rate: 0.0,
            z_accel: params.gravity,
            z_history: VecDeque::with_capacity(Z_WINDOW),
            collided: false,
            out_of_bounds: false,
        }
    }

    /// The last 10 z-acceleration samples, once warmed up.
    pub fn z_window(&self) -> Option<[f64; Z_WINDOW]> {
        if self.z_history.len() < Z_WINDOW {
            return None;
        }
        let mut w = [0.0; Z_WINDOW];
        for (d, s) in w.iter_mut().zip(&self.z_history) {
            *d = *s;
        }
        Some(w)
    }
}

/// Pose resting on the terrain: z from the height field, pitch and roll
/// from the wheel contact heights.
pub fn ground_pose(terrain: &Terrain, params: &VehicleParams, x: f64, y: f64, yaw: f64) -> Pose {
    let (s, c) = yaw.sin_cos();
    let l = params.wheelbase;
    let half_track = params.track / 2.0;
    let rear = terrain.height_at(x, y);
    let front = terrain.height_at(x + l * c, y + l * s);
    let mid = [x + 0.5 * l * c, y + 0.5 * l * s];
    let left = terrain.height_at(mid[0] - half_track * s, mid[1] + half_track * c);
    let right = terrain.height_at(mid[0] + half_track * s, mid[1] - half_track * c);
    // nose-up is a negative rotation about body y
    let pitch = -((front - rear) / l).atan();
    let roll = ((left - right) / params.track).atan();
    Pose::from_heading(Vector3::new(x, y, rear), roll, pitch, yaw)
}

fn hits_obstacle(terrain: &Terrain, params: &VehicleParams, x: f64, y: f64, yaw: f64) -> bool {
    let (s, c) = yaw.sin_cos();
    let [rear, front, half] = params.footprint;
    let probes = [
        (-rear, -half),
        (-rear, half),
        (front, -half),
        (front, half),
        (front, 0.0),
        (0.5 * (front - rear), -half),
        (0.5 * (front - rear), half),
        (0.0, 0.0),
    ];
    probes.iter().any(|(bx, by)| {
        let wx = x + bx * c - by * s;
        let wy = y + bx * s + by * c;
        terrain.class_at(wx, wy) == CellClass::Obstacle
    })
}

/// Advance one 0.1 s tick. `eta` is the standard-normal draw that drives
/// the roughness-induced z-acceleration.
pub fn step_vehicle(
    state: &VehicleState,
    cmd: Command,
    terrain: &Terrain,
    params: &VehicleParams,
    eta: f64,
) -> VehicleState {
    let mut next = state.clone();
    if state.collided {
        // stuck against the obstacle
        next.speed = 0.0;
        next.yaw_rate = 0.0;
        next.z_accel = params.gravity;
        push_z(&mut next, params.gravity);
        return next;
    }
    let cmd = cmd.clamped(params);
    let decay = (-DT / params.speed_tau).exp();
    let speed = cmd.v + (state.speed - cmd.v) * decay;
    let distance = cmd.v * DT + (state.speed - cmd.v) * params.speed_tau * (1.0 - decay);
    let max_slew = params.steer_rate * DT;
    let steering = state.steering + (cmd.steer - state.steering).clamp(-max_slew, max_slew);

    let curvature = steering.tan() / params.wheelbase;
    let dyaw = distance * curvature;
    let (mut x, mut y) = if dyaw.abs() < 1e-12 {
        (
            state.x + distance * state.yaw.cos(),
            state.y + distance * state.yaw.sin(),
        )
    } else {
        let r = 1.0 / curvature;
        (
            state.x + r * ((state.yaw + dyaw).sin() - state.yaw.sin()),
            state.y - r * ((state.yaw + dyaw).cos() - state.yaw.cos()),
        )
    };
    let yaw = crate::geometry::wrap_angle(state.yaw + dyaw);

    let size = terrain.spec.size;
    let eps = 1e-6;
    if x < 0.0 || y < 0.0 || x >= size[0] || y >= size[1] {
        next.out_of_bounds = true;
        x = x.clamp(0.0, size[0] - eps);
        y = y.clamp(0.0, size[1] - eps);
    }

    next.x = x;
    next.y = y;
    next.yaw = yaw;
    next.speed = speed;
    next.steering = steering;
    next.yaw_rate = speed * curvature;
    next.pose = ground_pose(terrain, params, x, y, yaw);

    let mut z = params.gravity + terrain.roughness_at(x, y) * speed * params.kappa * eta;
    if hits_obstacle(terrain, params, x, y, yaw) {
        next.collided = true;
        next.speed = 0.0;
        z += params.collision_spike;
    }
    next.z_accel = z;
    push_z(&mut next, z);
    next
}

fn push_z(state: &mut VehicleState, z: f64) {
    if state.z_history.len() == Z_WINDOW {
        state.z_history.pop_front();
    }
    state.z_history.push_back(z);
}

/// A vehicle on a terrain with its own seeded noise stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub terrain: Arc<Terrain>,
    pub params: VehicleParams,
    pub state: VehicleState,
    pub tick: u64,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(terrain: Arc<Terrain>, params: VehicleParams, start: VehicleState, seed: u64) -> Self {
        Simulator {
            terrain,
            params,
            state: start,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Start at rest at the beginning of the terrain's path.
    pub fn at_path_start(terrain: Arc<Terrain>, params: VehicleParams, seed: u64) -> Self {
        let (p, heading) = terrain.start();
        let start = VehicleState::at_rest(&terrain, &params, p[0], p[1], heading);
        Self::new(terrain, params, start, seed)
    }

    pub fn step(&mut self, cmd: Command) -> &VehicleState {
        let eta: f64 = StandardNormal.sample(&mut self.rng);
        self.state = step_vehicle(&self.state, cmd, &self.terrain, &self.params, eta);
        self.tick += 1;
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(roughness: f64) -> Terrain {
        Terrain::flat([40.0, 40.0], 0.1, CellClass::Path, roughness)
    }

    #[test]
    fn zero_command_from_rest_stays_put() {
        let t = flat(0.5);
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(&t, &p, 10.0, 10.0, 0.3);
        for i in 0..20 {
            s = step_vehicle(&s, Command::new(0.0, 0.0), &t, &p, (i as f64).sin());
        }
        assert_eq!((s.x, s.y), (10.0, 10.0));
    }

    #[test]
    fn smooth_ground_gives_exact_gravity() {
        let t = flat(0.0);
        let p = VehicleParams::default();
        let mut sim = Simulator::new(
            Arc::new(t.clone()),
            p.clone(),
            VehicleState::at_rest(&t, &p, 5.0, 20.0, 0.0),
            3,
        );
        for _ in 0..40 {
            let s = sim.step(Command::new(1.2, 0.0));
            assert_eq!(s.z_accel, p.gravity);
        }
    }

    #[test]
    fn constant_turn_traces_closed_form_circle() {
        let t = flat(0.0);
        let p = VehicleParams::default();
        let (v, delta) = (1.0, 0.2);
        let mut s = VehicleState::at_rest(&t, &p, 20.0, 20.0, 0.0);
        s.speed = v;
        s.steering = delta;
        for _ in 0..50 {
            s = step_vehicle(&s, Command::new(v, delta), &t, &p, 0.0);
        }
        // closed form: arc of radius L/tan δ, angle v·t/R, starting at heading 0
        let r = p.wheelbase / delta.tan();
        let theta = v * 5.0 / r;
        let ex = 20.0 + r * theta.sin();
        let ey = 20.0 + r * (1.0 - theta.cos());
        assert!((s.x - ex).abs() < 1e-6 && (s.y - ey).abs() < 1e-6);
    }

    #[test]
    fn speed_and_steering_stay_in_bounds() {
        let t = flat(0.3);
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(&t, &p, 20.0, 20.0, 0.0);
        for i in 0..100 {
            let cmd = Command::new(5.0 * (i as f64 * 0.3).sin(), 3.0 * (i as f64 * 0.7).cos());
            let prev = s.steering;
            s = step_vehicle(&s, cmd, &t, &p, 0.5);
            assert!((0.0..=p.v_max).contains(&s.speed));
            assert!(s.steering.abs() <= p.steer_max + 1e-12);
            assert!((s.steering - prev).abs() <= p.steer_rate * DT + 1e-12);
        }
        assert_eq!(s.z_history.len(), Z_WINDOW);
    }

    #[test]
    fn exits_are_clamped_and_flagged() {
        let t = Terrain::flat([5.0, 5.0], 0.1, CellClass::Dirt, 0.4);
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(&t, &p, 4.5, 2.5, 0.0);
        for _ in 0..30 {
            s = step_vehicle(&s, Command::new(1.5, 0.0), &t, &p, 0.0);
        }
        assert!(s.out_of_bounds);
        assert!(t.in_bounds(s.x, s.y));
    }

    #[test]
    fn obstacle_sets_collision_and_spike() {
        let mut t = flat(0.0);
        t.add_obstacle([22.0, 20.0], 0.4);
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(&t, &p, 19.0, 20.0, 0.0);
        let mut spiked = false;
        for _ in 0..40 {
            s = step_vehicle(&s, Command::new(1.0, 0.0), &t, &p, 0.0);
            spiked |= s.z_accel > p.gravity + 1.0;
        }
        assert!(s.collided && spiked);
        assert!(s.x < 22.0);
    }
}
