//! Data preparation, checkpoint evaluation and the end-to-end pipeline.

use super::config::{ExperimentConfig, Layout};
use super::navigation::{nav_table_from_logs, run_navigation_suite, NavTable};
use super::obstacles::{run_obstacle_scenarios, ObstacleReport};
use super::table1::{run_table1, table1_from_logs, Table1, SPLITS};
use super::tables::{num, TextTable};
use crate::dataset::{Corpus, SampleRef, Split};
use crate::model::{evaluate, FrameCache, Network, HEAD_NAMES};
use crate::Result;

/// Collect the corpus described by `cfg`, split it with the run seed and
/// write it under the layout's data directory.
pub fn collect(cfg: &ExperimentConfig, layout: &Layout) -> Result<(Corpus, Split)> {
    let corpus = Corpus::collect(&cfg.collect, &cfg.terrain, &cfg.vehicle, &cfg.camera)?;
    let split = corpus.split(&cfg.collect, cfg.seed)?;
    corpus.save(&layout.data(), &split, cfg.seed)?;
    Ok((corpus, split))
}

pub fn load_corpus(layout: &Layout) -> Result<(Corpus, Split)> {
    Corpus::load(&layout.data())
}

pub fn all_refs(split: &Split) -> Vec<SampleRef> {
    split.train.iter().chain(&split.val).chain(&split.test).copied().collect()
}

/// Rendered frames for every sample of the split.
pub fn frames_for(corpus: &Corpus, split: &Split) -> FrameCache {
    FrameCache::build(corpus, &all_refs(split))
}

/// Per-head MSE of every configured checkpoint on the three splits.
pub fn eval_checkpoints(
    cfg: &ExperimentConfig,
    layout: &Layout,
    corpus: &Corpus,
    split: &Split,
    frames: &FrameCache,
) -> Result<TextTable> {
    let mut header = vec!["run".to_string()];
    for s in SPLITS {
        for h in HEAD_NAMES {
            header.push(format!("{s}_{h}"));
        }
    }
    let mut t = TextTable { header, rows: Vec::new() };
    for v in &cfg.table1.variants {
        for s in &cfg.table1.seeds {
            let net = Network::load(&layout.checkpoint(*v, *s), Some(*v))?;
            let mut row = vec![format!("{v}_s{s}")];
            for refs in [&split.train, &split.val, &split.test] {
                row.extend(evaluate(&net, corpus, frames, refs)?.map(num));
            }
            t.push(row);
        }
    }
    Ok(t)
}

/// Every table of a finished run directory, rebuilt from its logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table1: Option<Table1>,
    pub navigation: Option<NavTable>,
}

impl Report {
    pub fn from_logs(cfg: &ExperimentConfig, layout: &Layout) -> Report {
        Report {
            table1: table1_from_logs(layout, &cfg.table1.variants, &cfg.table1.seeds).ok(),
            navigation: nav_table_from_logs(cfg, layout).ok(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.table1 {
            Some(t) => {
                s.push_str("Prediction error (mean per-head MSE over seeds)\n");
                s.push_str(&t.summary().to_text());
            }
            None => s.push_str("Prediction error: no complete training logs\n"),
        }
        s.push('\n');
        match &self.navigation {
            Some(t) => {
                s.push_str("Navigation\n");
                s.push_str(&t.summary().to_text());
            }
            None => s.push_str("Navigation: no complete trial logs\n"),
        }
        s
    }
}

/// Everything a full run emits.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub table1: Table1,
    pub navigation: NavTable,
    pub obstacles: ObstacleReport,
}

/// Collect, train, navigate and run the obstacle scenarios into `layout`.
pub fn run_pipeline(cfg: &ExperimentConfig, layout: &Layout) -> Result<PipelineOutput> {
    layout.create()?;
    let (corpus, split) = collect(cfg, layout)?;
    let frames = frames_for(&corpus, &split);
    let table1 = run_table1(cfg, &corpus, &split, &frames, layout)?;
    let navigation = run_navigation_suite(cfg, layout)?;
    let obstacles = run_obstacle_scenarios(cfg, layout)?;
    Ok(PipelineOutput { table1, navigation, obstacles })
}

/// File names of every table a run emits.
pub const TABLE_FILES: [&str; 6] = [
    "table1.csv",
    "table1_runs.csv",
    "navigation.csv",
    "navigation_trials.csv",
    "obstacles.csv",
    "obstacles_far.csv",
];
