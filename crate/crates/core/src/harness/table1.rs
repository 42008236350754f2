//! Multi-step prediction error per variant, averaged over training seeds.

use super::config::{ExperimentConfig, Layout};
use super::tables::{mean, num, TextTable};
use crate::dataset::{Corpus, Split};
use crate::model::{train, FrameCache, Network, Variant, HEAD_NAMES};
use crate::{Error, Result};
use rayon::prelude::*;
use std::path::Path;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Final per-head MSE of one run, `[split][head]`.
pub type RunMse = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    /// `None` when the run diverged.
    pub mse: Option<RunMse>,
}

impl RunResult {
    pub fn id(&self) -> String {
        format!("{}_s{}", self.variant, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub runs: Vec<RunResult>,
}

impl Table1 {
    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !v.contains(&r.variant) {
                v.push(r.variant);
            }
        }
        v
    }

    /// Seed mean over the runs that finished; NaN when none did.
    pub fn mean(&self, variant: Variant) -> RunMse {
        let done: Vec<&RunMse> = self.runs.iter().filter(|r| r.variant == variant).filter_map(|r| r.mse.as_ref()).collect();
        let mut out = [[f64::NAN; 3]; 3];
        for (s, row) in out.iter_mut().enumerate() {
            for (h, cell) in row.iter_mut().enumerate() {
                *cell = mean(&done.iter().map(|m| m[s][h]).collect::<Vec<_>>());
            }
        }
        out
    }

    fn header() -> Vec<String> {
        let mut h = vec!["variant".to_string()];
        for s in SPLITS {
            for head in HEAD_NAMES {
                h.push(format!("{s}_{head}"));
            }
        }
        h
    }

    /// One row per variant with seed means and the run ids behind them.
    pub fn summary(&self) -> TextTable {
        let mut header = Self::header();
        header.push("runs".into());
        let mut t = TextTable { header, rows: Vec::new() };
        for v in self.variants() {
            let m = self.mean(v);
            let mut row = vec![v.to_string()];
            row.extend(m.iter().flatten().map(|x| num(*x)));
            let ids: Vec<String> = self
                .runs
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| if r.mse.is_some() { r.id() } else { format!("{}(diverged)", r.id()) })
                .collect();
            row.push(ids.join(" "));
            t.push(row);
        }
        t
    }

    /// One row per run; diverged runs are gaps.
    pub fn per_run(&self) -> TextTable {
        let mut header = vec!["run".to_string()];
        header.extend(Self::header());
        header.push("seed".into());
        let mut t = TextTable { header, rows: Vec::new() };
        for r in &self.runs {
            let mut row = vec![r.id(), r.variant.to_string()];
            match &r.mse {
                Some(m) => row.extend(m.iter().flatten().map(|x| num(*x))),
                None => row.extend(std::iter::repeat_n("diverged".to_string(), 9)),
            }
            row.push(r.seed.to_string());
            t.push(row);
        }
        t
    }

    pub fn save(&self, layout: &Layout) -> Result<()> {
        self.summary().save_csv(&layout.table("table1.csv"))?;
        self.per_run().save_csv(&layout.table("table1_runs.csv"))
    }
}

/// Train every configured variant and seed, write one loss log and
/// checkpoint per run, and build the table from the logs.
pub fn run_table1(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &Split,
    frames: &FrameCache,
    layout: &Layout,
) -> Result<Table1> {
    layout.create()?;
    let jobs: Vec<(Variant, u64)> = cfg
        .table1
        .variants
        .iter()
        .flat_map(|v| cfg.table1.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    jobs.par_iter()
        .map(|(v, s)| train_run(cfg, corpus, split, frames, layout, *v, *s))
        .collect::<Result<Vec<()>>>()?;
    let table = table1_from_logs(layout, &cfg.table1.variants, &cfg.table1.seeds)?;
    table.save(layout)?;
    Ok(table)
}

fn train_run(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &Split,
    frames: &FrameCache,
    layout: &Layout,
    variant: Variant,
    seed: u64,
) -> Result<()> {
    let mut net = Network::new(cfg.model_config(variant, seed))?;
    let marker = layout.divergence_log(variant, seed);
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let outcome = train(&mut net, corpus, split, frames, &cfg.train_config(seed));
    net.save(&layout.checkpoint(variant, seed))?;
    match outcome {
        Ok(report) => report.save_csv(&layout.train_log(variant, seed)),
        Err(e @ Error::Diverged { .. }) => {
            let log = layout.train_log(variant, seed);
            if log.exists() {
                std::fs::remove_file(&log)?;
            }
            Ok(std::fs::write(marker, format!("{e}\n"))?)
        }
        Err(e) => Err(e),
    }
}

/// Final per-split MSEs from one training log.
pub fn read_final_mse(path: &Path) -> Result<RunMse> {
    let text = std::fs::read_to_string(path)?;
    let mut out = [[f64::NAN; 3]; 3];
    let mut seen = [[false; 3]; 3];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("{}: malformed line {line:?}", path.display())));
        }
        let Some(split) = f[1].strip_suffix("_final") else { continue };
        let (Some(s), Some(h)) = (SPLITS.iter().position(|x| *x == split), HEAD_NAMES.iter().position(|x| *x == f[2]))
        else {
            continue;
        };
        out[s][h] = f[3].parse().map_err(|_| Error::Format(format!("{}: bad value {:?}", path.display(), f[3])))?;
        seen[s][h] = true;
    }
    if seen.iter().flatten().all(|x| *x) {
        Ok(out)
    } else {
        Err(Error::Format(format!("{}: missing final losses", path.display())))
    }
}

/// Rebuild the table from the logs in `layout`. A run with a divergence
/// marker and no loss log is a gap.
pub fn table1_from_logs(layout: &Layout, variants: &[Variant], seeds: &[u64]) -> Result<Table1> {
    let mut runs = Vec::new();
    for v in variants {
        for s in seeds {
            let log = layout.train_log(*v, *s);
            let mse = if log.exists() {
                Some(read_final_mse(&log)?)
            } else if layout.divergence_log(*v, *s).exists() {
                None
            } else {
                return Err(Error::Format(format!("no log for run {v}_s{s}")));
            };
            runs.push(RunResult { variant: *v, seed: *s, mse });
        }
    }
    Ok(Table1 { runs })
}
