//! Experiment configuration, orchestration and result tables.

mod config;
mod navigation;
mod obstacles;
mod pipeline;
mod table1;
mod tables;

pub use config::{ExperimentConfig, Layout, NavSuiteConfig, ObstacleConfig, Table1Config};
pub use navigation::{
    load_episode, nav_table_from_logs, run_navigation_suite, run_trial, trials, GoalDistance, NavTable, Trial,
    TrialRecord,
};
pub use obstacles::{
    build_terrain, max_deviation, offset_near, run_obstacle_scenarios, run_scenario, ObstacleReport, Scenario,
    ScenarioResult,
};
pub use pipeline::{
    all_refs, collect, eval_checkpoints, frames_for, load_corpus, run_pipeline, PipelineOutput, Report, TABLE_FILES,
};
pub use table1::{read_final_mse, run_table1, table1_from_logs, RunMse, RunResult, Table1, SPLITS};
pub use tables::{mean, num, TextTable};
