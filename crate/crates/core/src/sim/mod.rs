//! Deterministic synthetic world: terrain, vehicle and sensors.

pub mod noise;
pub mod render;
pub mod terrain;
pub mod vehicle;

pub use render::{render_pose, render_sensors, SensorFrame};
pub use terrain::{generate_terrain, CellClass, Obstacle, Terrain, TerrainSpec};
pub use vehicle::{step_vehicle, Command, Simulator, VehicleParams, VehicleState, DT, Z_WINDOW};

use std::io::Write;
use std::path::Path;

/// Write an 8-bit binary PPM (P6).
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> std::io::Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{width} {height}\n255\n")?;
    f.write_all(rgb)?;
    f.flush()
}

/// Top-down class map of a terrain, one pixel per `stride` cells.
pub fn terrain_image(terrain: &Terrain, stride: usize) -> (usize, usize, Vec<u8>) {
    let w = terrain.nx / stride;
    let h = terrain.ny / stride;
    let mut rgb = Vec::with_capacity(w * h * 3);
    // image row 0 is the top of the map (max y)
    for row in 0..h {
        let iy = terrain.ny - 1 - row * stride;
        for col in 0..w {
            let ix = col * stride;
            let c = match terrain.cell_class(ix, iy) {
                CellClass::Path => [222, 196, 120],
                CellClass::Dirt => [120, 96, 70],
                CellClass::DropEdge => [60, 40, 30],
                CellClass::Obstacle => [20, 90, 20],
            };
            rgb.extend_from_slice(&c);
        }
    }
    (w, h, rgb)
}
