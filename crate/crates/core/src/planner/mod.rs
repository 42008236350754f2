//! Sampling-based receding-horizon planner over the learned dynamics model.

mod cost;
mod navigate;
mod sampler;

pub use cost::{evaluate, select, CostBreakdown, CostConfig, SUB_COSTS};
pub use navigate::{
    navigate, realized_bumpiness, render_episodes, EpisodeResult, NavConfig, Outcome, PlanLog, TickLog,
};
pub use sampler::{sample_actions, shift_plan, ActionBounds, SamplerConfig};
