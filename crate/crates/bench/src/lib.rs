//! Shared fixtures for the benchmarks.

use cropnav::dataset::RobotState;
use cropnav::geometry::CameraModel;
use cropnav::model::{ModelConfig, Network, Variant};
use cropnav::planner::{sample_actions, ActionBounds, SamplerConfig};
use cropnav::sim::{generate_terrain, render_pose, Command, Simulator, TerrainSpec, VehicleParams};
use std::sync::Arc;

/// One rendered frame, a state and `n` candidate action sequences.
pub struct Fixture {
    pub frame: Vec<f32>,
    pub state: RobotState,
    pub actions: Vec<Vec<[f64; 2]>>,
}

pub fn fixture(n: usize) -> Fixture {
    let terrain = Arc::new(generate_terrain(3, &TerrainSpec::default()).expect("terrain"));
    let sim = Simulator::at_path_start(terrain.clone(), VehicleParams::default(), 0);
    let frame = render_pose(&terrain, &sim.state.pose, &CameraModel::default(), 1);
    let state = RobotState { speed: 0.8, ..Default::default() };
    let actions = sample_actions(
        n,
        10,
        Command::new(0.8, 0.0),
        &ActionBounds::default(),
        &SamplerConfig::default(),
        None,
        7,
    )
    .expect("actions");
    Fixture { frame, state, actions }
}

pub fn network(variant: Variant) -> Network {
    Network::new(ModelConfig { variant, ..Default::default() }).expect("network")
}
