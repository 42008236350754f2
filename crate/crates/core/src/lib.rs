pub mod dataset;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod nn;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
