//! Minibatch training, evaluation and loss curves.

use super::network::LossParts;
use super::Network;
use crate::dataset::{Corpus, SampleRef, Split};
use crate::nn::{AdamConfig, Grads};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

pub const HEAD_NAMES: [&str; 3] = ["position", "orientation", "bumpiness"];

/// Anchor frames rendered once and kept as 8-bit RGB plus f32 depth.
#[derive(Debug, Default)]
pub struct FrameCache {
    frames: HashMap<SampleRef, (Vec<u8>, Vec<f32>)>,
}

impl FrameCache {
    pub fn build(corpus: &Corpus, refs: &[SampleRef]) -> FrameCache {
        let frames = refs
            .par_iter()
            .map(|r| {
                let f = corpus.frame(*r);
                let n = f.len() / 4;
                let rgb = f[..3 * n].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
                (*r, (rgb, f[3 * n..].to_vec()))
            })
            .collect();
        FrameCache { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, r: SampleRef) -> Option<Vec<f32>> {
        self.frames.get(&r).map(|(rgb, depth)| {
            let mut f: Vec<f32> = rgb.iter().map(|v| *v as f32 / 255.0).collect();
            f.extend_from_slice(depth);
            f
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples per parallel gradient worker; results are summed in order.
    pub chunk: usize,
    pub adam: AdamConfig,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            chunk: 8,
            adam: AdamConfig::default(),
            lr_decay: 0.9,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

/// Per-head MSE in physical units: position, orientation, bumpiness.
pub type HeadMse = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: String,
    pub head: String,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    pub train: HeadMse,
    pub val: HeadMse,
    pub test: HeadMse,
}

impl TrainReport {
    fn log(&mut self, epoch: usize, split: &str, mse: HeadMse) {
        for (head, v) in HEAD_NAMES.iter().zip(mse) {
            self.records.push(LossRecord { epoch, split: split.into(), head: (*head).into(), mse: v });
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,split,head,mse")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{:e}", r.epoch, r.split, r.head, r.mse)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        Ok(f.flush()?)
    }
}

fn frame_of(frames: &FrameCache, r: SampleRef) -> Result<Vec<f32>> {
    frames
        .get(r)
        .ok_or_else(|| Error::Config(format!("frame for {r:?} missing from the cache")))
}

/// Loss (and optionally gradients scaled by `scale`) over a set of samples.
fn chunk_loss(
    net: &Network,
    corpus: &Corpus,
    frames: &FrameCache,
    refs: &[SampleRef],
    grads: Option<(&mut Grads, f64)>,
) -> Result<LossParts> {
    let imgs: Vec<Vec<f32>> = refs.iter().map(|r| frame_of(frames, *r)).collect::<Result<_>>()?;
    let samples: Vec<_> = refs.iter().map(|r| corpus.sample(*r)).collect();
    let f: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
    let s: Vec<_> = samples.iter().map(|x| x.state).collect();
    let a: Vec<&[[f64; 2]]> = samples.iter().map(|x| &x.actions[..]).collect();
    let e: Vec<&[_]> = samples.iter().map(|x| &x.events[..]).collect();
    net.batch_loss(&net.store, &f, &s, &a, &e, grads)
}

/// Mean per-head MSE of `net` over `refs`.
pub fn evaluate(net: &Network, corpus: &Corpus, frames: &FrameCache, refs: &[SampleRef]) -> Result<HeadMse> {
    if refs.is_empty() {
        return Ok([f64::NAN; 3]);
    }
    let parts: Vec<(usize, LossParts)> = refs
        .par_chunks(32)
        .map(|c| Ok((c.len(), chunk_loss(net, corpus, frames, c, None)?)))
        .collect::<Result<_>>()?;
    let mut acc = [0.0; 3];
    for (n, p) in &parts {
        for (a, m) in acc.iter_mut().zip(p.mse) {
            *a += m * *n as f64;
        }
    }
    Ok(acc.map(|a| a / refs.len() as f64))
}

/// Adam on the weighted loss over `split.train`. Per-head MSEs are logged
/// for train (running mean over the epoch), val and test after every
/// epoch, and exactly for all three splits at the end. On a non-finite
/// loss or gradient the update is skipped, so the network keeps its last
/// finite parameters, and [`Error::Diverged`] is returned.
pub fn train(
    net: &mut Network,
    corpus: &Corpus,
    split: &Split,
    frames: &FrameCache,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 || cfg.chunk == 0 {
        return Err(Error::Config("batch size and chunk must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = cfg.adam.clone();
    let mut report = TrainReport::default();
    let mut order = split.train.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = [0.0; 3];
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bn = batch.len() as f64;
            let results: Vec<(Grads, usize, LossParts)> = batch
                .par_chunks(cfg.chunk)
                .map(|c| {
                    let mut g = net.store.grads_like();
                    let p = chunk_loss(net, corpus, frames, c, Some((&mut g, c.len() as f64 / bn)))?;
                    Ok((g, c.len(), p))
                })
                .collect::<Result<_>>()?;
            let mut grads = net.store.grads_like();
            let mut loss = 0.0;
            for (g, n, p) in &results {
                grads.add_assign(g);
                loss += p.total * *n as f64 / bn;
                for (r, m) in running.iter_mut().zip(p.mse) {
                    *r += m * *n as f64;
                }
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    detail: format!("loss {loss}, gradient norm {}", grads.norm()),
                });
            }
            let norm = grads.norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
            net.store.set_grads(&grads);
            net.store.adam_step(&adam);
        }
        report.val = evaluate(net, corpus, frames, &split.val)?;
        report.test = evaluate(net, corpus, frames, &split.test)?;
        report.log(epoch, "train", running.map(|r| r / order.len().max(1) as f64));
        report.log(epoch, "val", report.val);
        report.log(epoch, "test", report.test);
        adam.lr *= cfg.lr_decay;
    }
    report.train = evaluate(net, corpus, frames, &split.train)?;
    if cfg.epochs == 0 {
        report.val = evaluate(net, corpus, frames, &split.val)?;
        report.test = evaluate(net, corpus, frames, &split.test)?;
    }
    let last = cfg.epochs;
    report.log(last, "train_final", report.train);
    report.log(last, "val_final", report.val);
    report.log(last, "test_final", report.test);
    Ok(report)
}
