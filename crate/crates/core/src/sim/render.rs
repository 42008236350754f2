//! Ray-cast RGB-D camera over the height field.
//!
//! Colors encode the terrain class, but path and dirt are close in hue; what separates them is a roughness-dependent texture anchored to
//! the terrain cells plus per-pixel noise. Depth is measured along the
//! optical axis, which is what a stereo depth camera reports.

use super::noise::{lattice_unit, Fnv64};
use super::terrain::{CellClass, Terrain};
use super::vehicle::VehicleState;
use crate::geometry::{CameraModel, Pose};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const DEPTH_MIN: f64 = 0.1;
pub const DEPTH_MAX: f64 = 20.0;
pub const PIXEL_NOISE: f64 = 0.05;
pub const CHANNELS: usize = 4;

const SKY: [f64; 3] = [0.55, 0.70, 0.90];
const TEXTURE_SEED: u64 = 0x7e57_u64;

/// Base color per terrain class.
pub fn class_color(class: CellClass) -> [f64; 3] {
    match class {
        CellClass::Path => [0.68, 0.60, 0.40],
        CellClass::Dirt => [0.56, 0.49, 0.35],
        CellClass::DropEdge => [0.46, 0.41, 0.30],
        CellClass::Obstacle => [0.33, 0.28, 0.22],
    }
}

/// One camera frame plus the proprioceptive readings taken with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    /// `4 × height × width`, channels R, G, B, depth.
    pub rgbd: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub z_accel: f64,
    pub odometry: Pose,
}

impl SensorFrame {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.rgbd[c * n..(c + 1) * n]
    }

    pub fn is_valid(&self) -> bool {
        let n = self.width * self.height;
        self.rgbd.iter().all(|v| v.is_finite()) && self.rgbd[3 * n..].iter().all(|d| *d > 0.0)
    }

    /// RGB as 8-bit interleaved, for PPM dumps.
    pub fn rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        (0..n)
            .flat_map(|i| (0..3).map(move |c| (c, i)))
            .map(|(c, i)| (self.rgbd[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn ray_hit(terrain: &Terrain, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let above = |t: f64| {
        let p = origin + dir * t;
        p.z - terrain.surface_at(p.x, p.y)
    };
    let top = terrain.max_surface();
    let mut t_prev = DEPTH_MIN * 0.5;
    if above(t_prev) <= 0.0 {
        return Some(t_prev);
    }
    let mut t = t_prev;
    while t < DEPTH_MAX {
        let step = 0.02 + 0.012 * t;
        t = (t + step).min(DEPTH_MAX);
        let p = origin + dir * t;
        if dir.z >= 0.0 && p.z > top {
            return None;
        }
        if above(t) <= 0.0 {
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if above(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        t_prev = t;
        if t >= DEPTH_MAX {
            break;
        }
    }
    None
}

fn shade(terrain: &Terrain, x: f64, y: f64) -> f64 {
    let e = terrain.resolution();
    let dzdx = (terrain.surface_at(x + e, y) - terrain.surface_at(x - e, y)) / (2.0 * e);
    let dzdy = (terrain.surface_at(x, y + e) - terrain.surface_at(x, y - e)) / (2.0 * e);
    let n = Vector3::new(-dzdx, -dzdy, 1.0).normalize();
    let sun = Vector3::new(0.4, 0.3, 0.866).normalize();
    (0.55 + 0.45 * n.dot(&sun).max(0.0)).min(1.0)
}

/// Render the camera carried by `pose`. Deterministic in `(pose, seed)`.
pub fn render_pose(terrain: &Terrain, pose: &Pose, cam: &CameraModel, seed: u64) -> Vec<f32> {
    let (w, h) = (cam.width, cam.height);
    let n = w * h;
    let mut out = vec![0f32; CHANNELS * n];
    let origin = cam.camera_center_world(pose);
    let rot = cam.camera_to_world(pose);

    let mut hasher = Fnv64::default();
    hasher.write_u64(seed);
    for v in pose.position.iter().chain(pose.rotation.iter()) {
        hasher.write_f64(*v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid std-dev");
    let res = terrain.resolution();

    for v in 0..h {
        for u in 0..w {
            let ray = cam.ray_camera(u as f64 + 0.5, v as f64 + 0.5);
            let dir = rot * ray;
            let (color, depth) = match ray_hit(terrain, &origin, &dir) {
                Some(t) => {
                    let p = origin + dir * t;
                    let (ix, iy) = terrain.cell_of(p.x, p.y);
                    let class = terrain.cell_class(ix, iy);
                    let rough = terrain.cell_roughness(ix, iy);
                    let base = class_color(class);
                    // cell-anchored grain, stronger on rough ground
                    let amp = 0.02 + 0.10 * (rough / 1.6).min(1.0);
                    let cx = (p.x / (2.0 * res)).floor() as i64;
                    let cy = (p.y / (2.0 * res)).floor() as i64;
                    let grain = amp * (2.0 * lattice_unit(TEXTURE_SEED, cx, cy) - 1.0);
                    let s = shade(terrain, p.x, p.y);
                    (
                        [
                            (base[0] + grain) * s,
                            (base[1] + grain) * s,
                            (base[2] + grain * 0.8) * s,
                        ],
                        t.clamp(DEPTH_MIN, DEPTH_MAX),
                    )
                }
                None => (SKY, DEPTH_MAX),
            };
            let i = v * w + u;
            for c in 0..3 {
                let val = color[c] + noise.sample(&mut rng);
                out[c * n + i] = val.clamp(0.0, 1.0) as f32;
            }
            out[3 * n + i] = depth as f32;
        }
    }
    out
}

pub fn render_sensors(
    state: &VehicleState,
    terrain: &Terrain,
    cam: &CameraModel,
    seed: u64,
) -> SensorFrame {
    SensorFrame {
        rgbd: render_pose(terrain, &state.pose, cam, seed),
        width: cam.width,
        height: cam.height,
        z_accel: state.z_accel,
        odometry: state.pose,
    }
}
