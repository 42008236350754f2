//! Seeded heightmap terrain: a narrow smooth path through rough ground, with
//! ditch-like drop-offs along parts of the path edge and optional obstacles.

use super::noise::{value_noise, Fnv64};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellClass {
    Path = 0,
    Dirt = 1,
    DropEdge = 2,
    Obstacle = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    /// Map extent along world x and y, meters.
    pub size: [f64; 2],
    pub resolution: f64,
    pub path_length: f64,
    pub path_width: f64,
    /// Path curvature is kept within ±this, 1/m.
    pub max_curvature: f64,
    /// Std-dev of the curvature random walk per meter of path.
    pub curvature_walk: f64,
    /// Fraction of path chunks that get a drop-off on a given side.
    pub drop_edge_fraction: f64,
    pub drop_edge_width: f64,
    pub drop_height: f64,
    pub path_roughness: f64,
    pub dirt_roughness: [f64; 2],
    pub drop_edge_roughness: f64,
    pub hill_amplitude: f64,
    pub hill_wavelength: f64,
    pub obstacle_count: usize,
    pub obstacle_radius: [f64; 2],
    pub obstacle_height: f64,
    /// Keep the path at least this far from the map border, meters.
    pub margin: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        TerrainSpec {
            size: [40.0, 40.0],
            resolution: 0.1,
            path_length: 30.0,
            path_width: 1.5,
            max_curvature: 0.12,
            curvature_walk: 0.06,
            drop_edge_fraction: 0.4,
            drop_edge_width: 0.4,
            drop_height: 0.2,
            path_roughness: 0.05,
            dirt_roughness: [0.3, 0.8],
            drop_edge_roughness: 1.6,
            hill_amplitude: 0.15,
            hill_wavelength: 9.0,
            obstacle_count: 0,
            obstacle_radius: [0.25, 0.5],
            obstacle_height: 1.0,
            margin: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub spec: TerrainSpec,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    height: Vec<f64>,
    roughness: Vec<f64>,
    class: Vec<CellClass>,
    /// Path centerline, world meters, spaced `PATH_STEP` apart.
    pub centerline: Vec<[f64; 2]>,
    pub obstacles: Vec<Obstacle>,
    max_surface: f64,
}

const PATH_STEP: f64 = 0.25;
const CHUNK_LENGTH: f64 = 3.0;
const MAX_ATTEMPTS: u64 = 64;

impl Terrain {
    pub fn resolution(&self) -> f64 {
        self.spec.resolution
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.spec.size[0] && y < self.spec.size[1]
    }

    /// Cell index containing `(x, y)`, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let r = self.spec.resolution;
        let ix = ((x / r).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((y / r).floor().max(0.0) as usize).min(self.ny - 1);
        (ix, iy)
    }

    fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn class_at(&self, x: f64, y: f64) -> CellClass {
        let (ix, iy) = self.cell_of(x, y);
        self.class[self.idx(ix, iy)]
    }

    pub fn roughness_at(&self, x: f64, y: f64) -> f64 {
        let (ix, iy) = self.cell_of(x, y);
        self.roughness[self.idx(ix, iy)]
    }

    pub fn cell_class(&self, ix: usize, iy: usize) -> CellClass {
        self.class[self.idx(ix, iy)]
    }

    pub fn cell_roughness(&self, ix: usize, iy: usize) -> f64 {
        self.roughness[self.idx(ix, iy)]
    }

    pub fn cell_height(&self, ix: usize, iy: usize) -> f64 {
        self.height[self.idx(ix, iy)]
    }

    /// Ground height, bilinear between cell centers.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let r = self.spec.resolution;
        let gx = (x / r - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let gy = (y / r - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let x0 = (gx.floor() as usize).min(self.nx - 2);
        let y0 = (gy.floor() as usize).min(self.ny - 2);
        let tx = gx - x0 as f64;
        let ty = gy - y0 as f64;
        let h00 = self.height[self.idx(x0, y0)];
        let h10 = self.height[self.idx(x0 + 1, y0)];
        let h01 = self.height[self.idx(x0, y0 + 1)];
        let h11 = self.height[self.idx(x0 + 1, y0 + 1)];
        let top = h00 + (h10 - h00) * tx;
        let bottom = h01 + (h11 - h01) * tx;
        top + (bottom - top) * ty
    }

    /// Height of whatever a ray would hit: ground, or obstacle top.
    pub fn surface_at(&self, x: f64, y: f64) -> f64 {
        let ground = self.height_at(x, y);
        if self.class_at(x, y) == CellClass::Obstacle {
            ground + self.spec.obstacle_height
        } else {
            ground
        }
    }

    pub fn max_surface(&self) -> f64 {
        self.max_surface
    }

    pub fn path_length(&self) -> f64 {
        (self.centerline.len() - 1) as f64 * PATH_STEP
    }

    /// Point on the centerline at arc length `s` (clamped) and the local heading.
    pub fn path_point(&self, s: f64) -> ([f64; 2], f64) {
        let f = (s / PATH_STEP).clamp(0.0, (self.centerline.len() - 1) as f64);
        let i = (f.floor() as usize).min(self.centerline.len() - 2);
        let t = f - i as f64;
        let a = self.centerline[i];
        let b = self.centerline[i + 1];
        (
            [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t],
            (b[1] - a[1]).atan2(b[0] - a[0]),
        )
    }

    pub fn start(&self) -> ([f64; 2], f64) {
        self.path_point(0.0)
    }

    /// Distance from `(x, y)` to the centerline, the arc length of the
    /// nearest point, and the signed side (+ = left of travel direction).
    pub fn nearest_on_path(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.centerline.len() - 1 {
            let (d, t, side) = segment_distance(self.centerline[i], self.centerline[i + 1], [x, y]);
            if d < best.0 {
                best = (d, (i as f64 + t) * PATH_STEP, side);
            }
        }
        best
    }

    /// Stable fingerprint of all fields.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write_u64(self.nx as u64);
        h.write_u64(self.ny as u64);
        for v in &self.height {
            h.write_f64(*v);
        }
        for v in &self.roughness {
            h.write_f64(*v);
        }
        h.write(&self.class.iter().map(|c| *c as u8).collect::<Vec<_>>());
        h.finish()
    }

    /// Stamp an impassable disc; used to build obstacle scenarios.
    pub fn add_obstacle(&mut self, center: [f64; 2], radius: f64) {
        let r = self.spec.resolution;
        let (x0, y0) = self.cell_of(center[0] - radius, center[1] - radius);
        let (x1, y1) = self.cell_of(center[0] + radius, center[1] + radius);
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let cx = (ix as f64 + 0.5) * r;
                let cy = (iy as f64 + 0.5) * r;
                if (cx - center[0]).hypot(cy - center[1]) <= radius {
                    let i = self.idx(ix, iy);
                    self.class[i] = CellClass::Obstacle;
                }
            }
        }
        self.obstacles.push(Obstacle { center, radius });
        self.max_surface = self.max_surface.max(
            self.height.iter().cloned().fold(f64::MIN, f64::max) + self.spec.obstacle_height,
        );
    }

    /// Flat, uniformly classed terrain; handy for tests and oracles.
    pub fn flat(size: [f64; 2], resolution: f64, class: CellClass, roughness: f64) -> Terrain {
        let nx = (size[0] / resolution).round() as usize;
        let ny = (size[1] / resolution).round() as usize;
        let spec = TerrainSpec {
            size,
            resolution,
            ..TerrainSpec::default()
        };
        Terrain {
            spec,
            seed: 0,
            nx,
            ny,
            height: vec![0.0; nx * ny],
            roughness: vec![roughness; nx * ny],
            class: vec![class; nx * ny],
            centerline: vec![[0.0, size[1] / 2.0], [size[0], size[1] / 2.0]],
            obstacles: Vec::new(),
            max_surface: 0.0,
        }
    }

    /// Mark every cell within `half_width` of the x-parallel line `y = y0`
    /// as path with the given roughness. Test helper for corridor worlds.
    pub fn paint_straight_path(&mut self, y0: f64, half_width: f64, roughness: f64) {
        let r = self.spec.resolution;
        for iy in 0..self.ny {
            let cy = (iy as f64 + 0.5) * r;
            if (cy - y0).abs() <= half_width {
                for ix in 0..self.nx {
                    let i = self.idx(ix, iy);
                    self.class[i] = CellClass::Path;
                    self.roughness[i] = roughness;
                }
            }
        }
        let step = PATH_STEP;
        let n = (self.spec.size[0] / step).floor() as usize;
        self.centerline = (0..=n).map(|i| [i as f64 * step, y0]).collect();
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> (f64, f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + dx * t, a[1] + dy * t];
    let d = (p[0] - q[0]).hypot(p[1] - q[1]);
    let side = (dx * (p[1] - a[1]) - dy * (p[0] - a[0])).signum();
    (d, t, side)
}

fn generate_centerline(spec: &TerrainSpec, rng: &mut ChaCha8Rng) -> Option<Vec<[f64; 2]>> {
    let n = (spec.path_length / PATH_STEP).ceil() as usize;
    let mut p = [spec.margin, spec.size[1] / 2.0 + rng.random_range(-2.0..2.0)];
    let mut heading: f64 = rng.random_range(-0.3..0.3);
    let mut curvature: f64 = 0.0;
    let mut pts = vec![p];
    let walk = spec.curvature_walk * PATH_STEP.sqrt();
    for _ in 0..n {
        curvature = (curvature + walk * rng.random_range(-1.7..1.7))
            .clamp(-spec.max_curvature, spec.max_curvature);
        heading += curvature * PATH_STEP;
        // keep the path heading broadly across the map
        heading = heading.clamp(-PI / 2.5, PI / 2.5);
        p = [p[0] + PATH_STEP * heading.cos(), p[1] + PATH_STEP * heading.sin()];
        let m = spec.margin;
        if p[0] < m || p[1] < m || p[0] > spec.size[0] - m || p[1] > spec.size[1] - m {
            return None;
        }
        pts.push(p);
    }
    Some(pts)
}

/// Build a terrain deterministically from `seed`.
pub fn generate_terrain(seed: u64, spec: &TerrainSpec) -> Result<Terrain> {
    if spec.resolution <= 0.0 || spec.size[0] <= 0.0 || spec.size[1] <= 0.0 {
        return Err(Error::Config("terrain size and resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centerline = None;
    for _ in 0..MAX_ATTEMPTS {
        centerline = generate_centerline(spec, &mut rng);
        if centerline.is_some() {
            break;
        }
    }
    let centerline = centerline.ok_or_else(|| {
        Error::Terrain(format!(
            "no path of length {} m fits a {}x{} m map with margin {} m",
            spec.path_length, spec.size[0], spec.size[1], spec.margin
        ))
    })?;

    let nx = (spec.size[0] / spec.resolution).round() as usize;
    let ny = (spec.size[1] / spec.resolution).round() as usize;
    let res = spec.resolution;

    let noise_seed = rng.random::<u64>();
    let hill_seed = rng.random::<u64>();
    let n_chunks = ((centerline.len() as f64 * PATH_STEP) / CHUNK_LENGTH).ceil() as usize + 1;
    // hazards: [left, right] per chunk; the first chunk stays clear so the start is safe
    let hazards: Vec<[bool; 2]> = (0..n_chunks)
        .map(|i| {
            if i == 0 {
                [false, false]
            } else {
                [
                    rng.random_bool(spec.drop_edge_fraction),
                    rng.random_bool(spec.drop_edge_fraction),
                ]
            }
        })
        .collect();

    let mut height = vec![0.0; nx * ny];
    let mut roughness = vec![0.0; nx * ny];
    let mut class = vec![CellClass::Dirt; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * res;
            let y = (iy as f64 + 0.5) * res;
            let i = iy * nx + ix;
            height[i] = spec.hill_amplitude
                * (2.0 * value_noise(hill_seed, x, y, spec.hill_wavelength) - 1.0);
            let n = value_noise(noise_seed, x, y, 2.0);
            roughness[i] = spec.dirt_roughness[0] + (spec.dirt_roughness[1] - spec.dirt_roughness[0]) * n;
        }
    }

    // nearest centerline distance per cell near the path
    let half = spec.path_width / 2.0;
    let reach = half + spec.drop_edge_width + res;
    let mut best: Vec<(f64, usize, f64)> = vec![(f64::INFINITY, 0, 0.0); nx * ny];
    for s in 0..centerline.len() - 1 {
        let (a, b) = (centerline[s], centerline[s + 1]);
        let lo = [a[0].min(b[0]) - reach, a[1].min(b[1]) - reach];
        let hi = [a[0].max(b[0]) + reach, a[1].max(b[1]) + reach];
        let ix0 = ((lo[0] / res).floor().max(0.0)) as usize;
        let iy0 = ((lo[1] / res).floor().max(0.0)) as usize;
        let ix1 = ((hi[0] / res).ceil() as usize).min(nx - 1);
        let iy1 = ((hi[1] / res).ceil() as usize).min(ny - 1);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let p = [(ix as f64 + 0.5) * res, (iy as f64 + 0.5) * res];
                let (d, _, side) = segment_distance(a, b, p);
                let i = iy * nx + ix;
                if d < best[i].0 {
                    best[i] = (d, s, side);
                }
            }
        }
    }
    for i in 0..nx * ny {
        let (d, s, side) = best[i];
        if d <= half {
            class[i] = CellClass::Path;
            roughness[i] = spec.path_roughness;
        } else if d <= half + spec.drop_edge_width {
            let chunk = ((s as f64 * PATH_STEP) / CHUNK_LENGTH) as usize;
            let side_idx = if side >= 0.0 { 0 } else { 1 };
            if hazards[chunk.min(n_chunks - 1)][side_idx] {
                class[i] = CellClass::DropEdge;
                roughness[i] = spec.drop_edge_roughness;
                height[i] -= spec.drop_height;
            }
        }
    }

    let max_surface = height.iter().cloned().fold(f64::MIN, f64::max);
    let mut terrain = Terrain {
        spec: spec.clone(),
        seed,
        nx,
        ny,
        height,
        roughness,
        class,
        centerline,
        obstacles: Vec::new(),
        max_surface,
    };

    let clearance = half + spec.drop_edge_width + 0.3;
    let start = terrain.centerline[0];
    let mut placed = 0;
    let mut tries = 0;
    while placed < spec.obstacle_count {
        tries += 1;
        if tries > 1000 * (spec.obstacle_count + 1) {
            return Err(Error::Terrain(format!(
                "could not place {} obstacles off the path",
                spec.obstacle_count
            )));
        }
        let r = rng.random_range(spec.obstacle_radius[0]..=spec.obstacle_radius[1]);
        let c = [
            rng.random_range(r..spec.size[0] - r),
            rng.random_range(r..spec.size[1] - r),
        ];
        let (d, _, _) = terrain.nearest_on_path(c[0], c[1]);
        if d < clearance + r || (c[0] - start[0]).hypot(c[1] - start[1]) < 3.0 {
            continue;
        }
        terrain.add_obstacle(c, r);
        placed += 1;
    }
    Ok(terrain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// 4-connected flood fill over path cells from the start cell.
    fn path_connected(t: &Terrain) -> bool {
        let (sx, sy) = t.cell_of(t.centerline[0][0], t.centerline[0][1]);
        let goal = *t.centerline.last().unwrap();
        let (gx, gy) = t.cell_of(goal[0], goal[1]);
        if t.cell_class(sx, sy) != CellClass::Path || t.cell_class(gx, gy) != CellClass::Path {
            return false;
        }
        let mut seen = vec![false; t.nx * t.ny];
        let mut queue = VecDeque::from([(sx, sy)]);
        seen[sy * t.nx + sx] = true;
        while let Some((x, y)) = queue.pop_front() {
            if (x, y) == (gx, gy) {
                return true;
            }
            let nbrs = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in nbrs {
                if nx < t.nx && ny < t.ny && !seen[ny * t.nx + nx] && t.cell_class(nx, ny) == CellClass::Path {
                    seen[ny * t.nx + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
        false
    }

    fn small_spec() -> TerrainSpec {
        TerrainSpec {
            size: [24.0, 24.0],
            path_length: 16.0,
            margin: 3.0,
            ..TerrainSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_terrain(42, &small_spec()).unwrap();
        let b = generate_terrain(42, &small_spec()).unwrap();
        let c = generate_terrain(43, &small_spec()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn zero_obstacles_means_no_obstacle_cells() {
        let t = generate_terrain(1, &small_spec()).unwrap();
        assert!(t.class.iter().all(|c| *c != CellClass::Obstacle));
    }

    #[test]
    fn obstacles_are_placed_off_path() {
        let spec = TerrainSpec {
            obstacle_count: 5,
            ..small_spec()
        };
        let t = generate_terrain(9, &spec).unwrap();
        assert_eq!(t.obstacles.len(), 5);
        assert!(t.class.iter().any(|c| *c == CellClass::Obstacle));
        assert!(path_connected(&t));
    }

    #[test]
    fn paths_connected_for_200_seeds() {
        let spec = small_spec();
        for seed in 0..200 {
            let t = generate_terrain(seed, &spec).unwrap();
            assert!(path_connected(&t), "seed {seed}");
        }
    }

    #[test]
    fn class_invariants_hold() {
        let spec = small_spec();
        let t = generate_terrain(5, &spec).unwrap();
        let mut drop_cells = 0;
        for iy in 0..t.ny {
            for ix in 0..t.nx {
                let r = t.cell_roughness(ix, iy);
                match t.cell_class(ix, iy) {
                    CellClass::Path => assert!(r <= 0.1),
                    CellClass::Dirt => assert!((0.3..=0.8).contains(&r)),
                    CellClass::DropEdge => {
                        drop_cells += 1;
                        // every drop cell sits at least drop_height below the nearest path cell
                        let x = (ix as f64 + 0.5) * t.resolution();
                        let y = (iy as f64 + 0.5) * t.resolution();
                        let (_, s, _) = t.nearest_on_path(x, y);
                        let (p, _) = t.path_point(s);
                        let (px, py) = t.cell_of(p[0], p[1]);
                        let step = t.cell_height(px, py) - t.cell_height(ix, iy);
                        assert!(step >= 0.15 - 0.02, "step {step}");
                    }
                    CellClass::Obstacle => {}
                }
            }
        }
        assert!(drop_cells > 0);
    }

    #[test]
    fn infeasible_spec_is_an_error() {
        let spec = TerrainSpec {
            size: [10.0, 10.0],
            path_length: 100.0,
            ..TerrainSpec::default()
        };
        assert!(matches!(generate_terrain(0, &spec), Err(Error::Terrain(_))));
    }
}
