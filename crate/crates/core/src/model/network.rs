//! Forward and reverse passes of the four model variants.

use super::{
    crop_center, prepare_image, ModelConfig, Rollout, RolloutStep, Variant, DOWNSAMPLE,
    OUTPUT_SCALE, OUTPUT_WIDTH,
};
use crate::dataset::{EventLabel, RobotState};
use crate::geometry::{compose, Pose, PoseDelta};
use crate::nn::{
    concat_rows, conv2d_backward, conv2d_forward, crop_gather, crop_scatter_add, relu,
    relu_backward, split_rows, weighted_mse, Cell, Conv2d, ConvCache, Dense, Grads, LstmCell,
    LstmState, LstmStepCache, Mlp, MlpCache, ParamStore, Tensor,
};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const LSTM_NAMES: [&str; 2] = ["pose", "bump"];
/// Rows per worker when fanning a candidate batch out.
const PREDICT_CHUNK: usize = 16;

#[derive(Debug, Clone)]
enum Heads {
    /// Pose LSTM feeds a 6-output MLP, bumpiness LSTM a 1-output MLP.
    Split { pose: Mlp, bump: Mlp },
    /// One LSTM, a shared ReLU trunk, three linear heads.
    Shared { trunk: Dense, pos: Dense, ori: Dense, bump: Dense },
}

#[derive(Debug, Clone)]
struct Layers {
    convs: Vec<Conv2d>,
    state: Dense,
    context: Dense,
    init: Vec<Dense>,
    action: Dense,
    lstms: Vec<LstmCell>,
    heads: Heads,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub store: ParamStore,
    layers: Layers,
}

/// Encoded anchor frames: feature maps, pooled features and the initial
/// recurrent states, all batched over frames.
#[derive(Debug, Clone)]
pub struct Context {
    pub batch: usize,
    /// `batch × C × rows × cols`.
    pub maps: Vec<f64>,
    /// `batch × C`.
    pub pooled: Vec<f64>,
    /// Prepared network input, `batch × 4 × H × W`.
    pub images: Vec<f64>,
    /// One state per LSTM, each `batch × hidden`.
    pub init: Vec<LstmState>,
}

struct EncoderCache {
    convs: Vec<Vec<ConvCache>>,
    acts: Vec<Tensor>,
}

struct ContextCache {
    enc: EncoderCache,
    state_in: Vec<f64>,
    state_h: Vec<f64>,
    ctx_in: Vec<f64>,
    ctx_h: Vec<f64>,
}

enum HeadCache {
    Split(MlpCache, MlpCache),
    Shared { x: Vec<f64>, t: Vec<f64> },
}

struct StepCache {
    centers: Vec<Cell>,
    patch: Option<EncoderCache>,
    act_in: Vec<f64>,
    act_h: Vec<f64>,
    lstm: Vec<LstmStepCache>,
    head: HeadCache,
}

/// Raw per-step outputs of an unroll.
struct Unrolled {
    /// Per step, `rows × 7` in physical units.
    outputs: Vec<Vec<f64>>,
    /// Per step, one accumulated pose per row.
    poses: Vec<Vec<Pose>>,
    centers: Vec<Vec<Cell>>,
    caches: Vec<StepCache>,
}

/// Batch loss with per-head MSEs in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Position, orientation, bumpiness.
    pub mse: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    variant: Variant,
    config: ModelConfig,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let rng = &mut rng;
        let [c1, c2, c3] = config.conv_channels;
        let convs = vec![
            Conv2d::new(&mut store, "enc.conv1", 4, c1, 3, 2, 1, rng),
            Conv2d::new(&mut store, "enc.conv2", c1, c2, 3, 2, 1, rng),
            Conv2d::new(&mut store, "enc.conv3", c2, c3, 3, 2, 1, rng),
        ];
        let (se, ch, ae, hid, hh) = (
            config.state_embed,
            config.context_hidden,
            config.action_embed,
            config.lstm_hidden,
            config.head_hidden,
        );
        let state = Dense::new(&mut store, "ctx.state", 5, se, true, rng);
        let context = Dense::new(&mut store, "ctx.hidden", c3 + se, ch, true, rng);
        let n = config.variant.lstm_count();
        let init = (0..n)
            .map(|i| Dense::new(&mut store, &format!("ctx.init_{}", LSTM_NAMES[i]), ch, 2 * hid, false, rng))
            .collect();
        let action = Dense::new(&mut store, "act.embed", 2, ae, true, rng);
        let fw = feature_width(&config);
        let lstms = (0..n)
            .map(|i| {
                LstmCell::new(&mut store, &format!("lstm.{}", LSTM_NAMES[i]), fw + ae, hid, config.forget_bias, rng)
            })
            .collect();
        let heads = if n == 2 {
            Heads::Split {
                pose: Mlp::new(&mut store, "head.pose", hid, hh, 6, rng),
                bump: Mlp::new(&mut store, "head.bump", hid, hh, 1, rng),
            }
        } else {
            Heads::Shared {
                trunk: Dense::new(&mut store, "head.trunk", hid, hh, true, rng),
                pos: Dense::new(&mut store, "head.pos", hh, 3, false, rng),
                ori: Dense::new(&mut store, "head.ori", hh, 3, false, rng),
                bump: Dense::new(&mut store, "head.bump", hh, 1, false, rng),
            }
        };
        Ok(Network {
            config,
            store,
            layers: Layers { convs, state, context, init, action, lstms, heads },
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn frame_len(&self) -> usize {
        4 * self.config.camera.width * self.config.camera.height
    }

    fn encoder_forward(&self, store: &ParamStore, x: Tensor) -> Result<(Tensor, EncoderCache)> {
        let mut convs = Vec::with_capacity(3);
        let mut acts = Vec::with_capacity(3);
        let mut cur = x;
        for conv in &self.layers.convs {
            let (y, cache) = conv2d_forward(conv, store, &cur)?;
            let y = Tensor::from_vec(&y.shape().to_vec(), relu(y.data()));
            convs.push(cache);
            acts.push(y.clone());
            cur = y;
        }
        Ok((cur, EncoderCache { convs, acts }))
    }

    fn encoder_backward(&self, store: &ParamStore, cache: &EncoderCache, dout: Tensor, grads: &mut Grads) {
        let mut d = dout;
        for l in (0..self.layers.convs.len()).rev() {
            let act = &cache.acts[l];
            let dz = Tensor::from_vec(act.shape(), relu_backward(act.data(), d.data()));
            d = conv2d_backward(&self.layers.convs[l], store, &cache.convs[l], &dz, grads);
        }
    }

    fn encode_with(
        &self,
        store: &ParamStore,
        frames: &[&[f32]],
        states: &[RobotState],
    ) -> Result<(Context, ContextCache)> {
        if frames.len() != states.len() || frames.is_empty() {
            return Err(Error::Config(format!(
                "need one state per frame, got {} frames and {} states",
                frames.len(),
                states.len()
            )));
        }
        let cam = &self.config.camera;
        let b = frames.len();
        let mut images = Vec::with_capacity(b * self.frame_len());
        for f in frames {
            if f.len() != self.frame_len() {
                return Err(Error::Config(format!(
                    "frame has {} values, model expects 4x{}x{}",
                    f.len(),
                    cam.height,
                    cam.width
                )));
            }
            prepare_image(f, &mut images);
        }
        let x = Tensor::from_vec(&[b, 4, cam.height, cam.width], images.clone());
        let (maps, enc) = self.encoder_forward(store, x)?;
        let c3 = self.config.conv_channels[2];
        let cells = maps.len() / (b * c3);
        let pooled: Vec<f64> = maps
            .data()
            .chunks_exact(cells)
            .map(|c| c.iter().sum::<f64>() / cells as f64)
            .collect();

        let l = &self.layers;
        let state_in: Vec<f64> = states.iter().flat_map(|s| self.config.normalize_state(s)).collect();
        let state_h = relu(&l.state.forward(store, &state_in, b));
        let ctx_in = concat_rows(&pooled, c3, &state_h, self.config.state_embed, b);
        let ctx_h = relu(&l.context.forward(store, &ctx_in, b));
        let hid = self.config.lstm_hidden;
        let init = l
            .init
            .iter()
            .map(|d| {
                let raw = d.forward(store, &ctx_h, b);
                let (h, c) = split_rows(&raw, hid, hid, b);
                LstmState { hidden: h.iter().map(|v| v.tanh()).collect(), cell: c }
            })
            .collect();
        Ok((
            Context { batch: b, maps: maps.into_data(), pooled, images, init },
            ContextCache { enc, state_in, state_h, ctx_in, ctx_h },
        ))
    }

    /// Encode frames and robot states into feature maps and initial states.
    pub fn encode(&self, frames: &[&[f32]], states: &[RobotState]) -> Result<Context> {
        Ok(self.encode_with(&self.store, frames, states)?.0)
    }

    fn map_size(&self) -> usize {
        let (mh, mw) = self.config.map_dims();
        self.config.conv_channels[2] * mh * mw
    }

    /// Run the recurrent part for `rows.len()` sequences; row `r` reads
    /// frame `rows[r]` of `ctx` and starts from `init[l]` row `r`.
    fn unroll(
        &self,
        store: &ParamStore,
        ctx: &Context,
        rows: &[usize],
        init: Vec<LstmState>,
        actions: &[&[[f64; 2]]],
        keep: bool,
    ) -> Result<Unrolled> {
        let cfg = &self.config;
        let l = &self.layers;
        let n = rows.len();
        let (mh, mw) = cfg.map_dims();
        let k = cfg.crop;
        let c3 = cfg.conv_channels[2];
        let msz = self.map_size();
        let fw = feature_width(cfg);
        let ae = cfg.action_embed;
        let (img_h, img_w) = (cfg.camera.height, cfg.camera.width);
        let img_sz = 4 * img_h * img_w;

        let mut states = init;
        let mut pose = vec![Pose::identity(); n];
        let mut out = Unrolled {
            outputs: Vec::with_capacity(cfg.horizon),
            poses: Vec::with_capacity(cfg.horizon),
            centers: Vec::with_capacity(cfg.horizon),
            caches: Vec::new(),
        };
        for h in 0..cfg.horizon {
            let centers: Vec<Cell> = if cfg.variant.crops() {
                pose.iter().map(|p| crop_center(p, &cfg.camera, mh, mw, k)).collect()
            } else {
                Vec::new()
            };
            let (feat, patch) = match cfg.variant {
                Variant::CropFeature => (
                    rows.iter()
                        .zip(&centers)
                        .flat_map(|(&i, c)| crop_gather(&ctx.maps[i * msz..(i + 1) * msz], c3, mh, mw, *c, k))
                        .collect(),
                    None,
                ),
                Variant::CropImage => {
                    let side = k * DOWNSAMPLE;
                    let mut px = Vec::with_capacity(n * 4 * side * side);
                    for (&i, c) in rows.iter().zip(&centers) {
                        let img = &ctx.images[i * img_sz..(i + 1) * img_sz];
                        let top = (c.row - k / 2) * DOWNSAMPLE;
                        let left = (c.col - k / 2) * DOWNSAMPLE;
                        for ch in 0..4 {
                            for y in top..top + side {
                                let s = (ch * img_h + y) * img_w + left;
                                px.extend_from_slice(&img[s..s + side]);
                            }
                        }
                    }
                    let (y, cache) = self.encoder_forward(store, Tensor::from_vec(&[n, 4, side, side], px))?;
                    (y.into_data(), Some(cache))
                }
                Variant::BadgrOriginal | Variant::BadgrModified => (
                    rows.iter().flat_map(|&i| ctx.pooled[i * c3..(i + 1) * c3].iter().copied()).collect(),
                    None,
                ),
            };
            let act_in: Vec<f64> = actions.iter().flat_map(|a| cfg.normalize_action(a[h])).collect();
            let act_h = relu(&l.action.forward(store, &act_in, n));
            let x = concat_rows(&feat, fw, &act_h, ae, n);
            let mut lstm_caches = Vec::with_capacity(states.len());
            for (cell, st) in l.lstms.iter().zip(states.iter_mut()) {
                let (next, cache) = cell.forward(store, &x, st, n);
                *st = next;
                lstm_caches.push(cache);
            }

            let mut y = vec![0.0; n * OUTPUT_WIDTH];
            let head = match &l.heads {
                Heads::Split { pose: hp, bump: hb } => {
                    let (yp, cp) = hp.forward(store, &states[0].hidden, n);
                    let (yb, cb) = hb.forward(store, &states[1].hidden, n);
                    for r in 0..n {
                        y[r * OUTPUT_WIDTH..r * OUTPUT_WIDTH + 6].copy_from_slice(&yp[r * 6..r * 6 + 6]);
                        y[r * OUTPUT_WIDTH + 6] = yb[r];
                    }
                    HeadCache::Split(cp, cb)
                }
                Heads::Shared { trunk, pos, ori, bump } => {
                    let x = states[0].hidden.clone();
                    let t = relu(&trunk.forward(store, &x, n));
                    let yp = pos.forward(store, &t, n);
                    let yo = ori.forward(store, &t, n);
                    let yb = bump.forward(store, &t, n);
                    for r in 0..n {
                        y[r * OUTPUT_WIDTH..r * OUTPUT_WIDTH + 3].copy_from_slice(&yp[r * 3..r * 3 + 3]);
                        y[r * OUTPUT_WIDTH + 3..r * OUTPUT_WIDTH + 6].copy_from_slice(&yo[r * 3..r * 3 + 3]);
                        y[r * OUTPUT_WIDTH + 6] = yb[r];
                    }
                    HeadCache::Shared { x, t }
                }
            };
            for row in y.chunks_exact_mut(OUTPUT_WIDTH) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= output_scale(j);
                }
            }
            for (r, p) in pose.iter_mut().enumerate() {
                let o = &y[r * OUTPUT_WIDTH..(r + 1) * OUTPUT_WIDTH];
                *p = compose(p, &PoseDelta::new([o[0], o[1], o[2]], [o[3], o[4], o[5]]));
            }
            out.outputs.push(y);
            out.poses.push(pose.clone());
            if keep {
                out.caches.push(StepCache {
                    centers: centers.clone(),
                    patch,
                    act_in,
                    act_h,
                    lstm: lstm_caches,
                    head,
                });
            }
            out.centers.push(centers);
        }
        Ok(out)
    }

    fn rollouts_from(&self, u: &Unrolled, n: usize) -> Vec<Rollout> {
        (0..n)
            .map(|r| Rollout {
                steps: (0..self.config.horizon)
                    .map(|h| {
                        let o = &u.outputs[h][r * OUTPUT_WIDTH..(r + 1) * OUTPUT_WIDTH];
                        RolloutStep {
                            delta: PoseDelta::new([o[0], o[1], o[2]], [o[3], o[4], o[5]]),
                            pose: u.poses[h][r],
                            bumpiness: o[6],
                            center: u.centers[h].get(r).copied(),
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    fn check_actions(&self, actions: &[Vec<[f64; 2]>]) -> Result<()> {
        match actions.iter().find(|a| a.len() != self.config.horizon) {
            Some(a) => Err(Error::Config(format!(
                "action sequence has {} steps, model horizon is {}",
                a.len(),
                self.config.horizon
            ))),
            None => Ok(()),
        }
    }

    /// Roll out candidate sequences from frame `image` of an encoded context.
    /// Rows are split into fixed chunks that run in parallel; each row's
    /// result depends only on its own inputs.
    pub fn rollout_context(&self, ctx: &Context, image: usize, actions: &[Vec<[f64; 2]>]) -> Result<Vec<Rollout>> {
        self.check_actions(actions)?;
        let chunks: Vec<Result<Vec<Rollout>>> = actions
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let n = chunk.len();
                let rows = vec![image; n];
                let init = ctx.init.iter().map(|s| expand_state(s, self.config.lstm_hidden, image, n)).collect();
                let acts: Vec<&[[f64; 2]]> = chunk.iter().map(|a| a.as_slice()).collect();
                let u = self.unroll(&self.store, ctx, &rows, init, &acts, false)?;
                Ok(self.rollouts_from(&u, n))
            })
            .collect();
        let mut out = Vec::with_capacity(actions.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Encode once, then roll out every candidate action sequence.
    pub fn predict_batch(&self, frame: &[f32], state: &RobotState, actions: &[Vec<[f64; 2]>]) -> Result<Vec<Rollout>> {
        let ctx = self.encode(&[frame], std::slice::from_ref(state))?;
        self.rollout_context(&ctx, 0, actions)
    }

    pub fn rollout(&self, frame: &[f32], state: &RobotState, actions: &[[f64; 2]]) -> Result<Rollout> {
        let mut r = self.predict_batch(frame, state, &[actions.to_vec()])?;
        Ok(r.remove(0))
    }

    /// Forward pass over a training batch. Returns the loss and, when
    /// `grads` is given, accumulates `scale · dL/dθ` into it.
    pub fn batch_loss(
        &self,
        store: &ParamStore,
        frames: &[&[f32]],
        states: &[RobotState],
        actions: &[&[[f64; 2]]],
        events: &[&[EventLabel]],
        grads: Option<(&mut Grads, f64)>,
    ) -> Result<LossParts> {
        let n = frames.len();
        let hz = self.config.horizon;
        if actions.len() != n || events.len() != n {
            return Err(Error::Config("batch inputs disagree in length".into()));
        }
        if actions.iter().any(|a| a.len() != hz) || events.iter().any(|e| e.len() != hz) {
            return Err(Error::Config(format!("every sample needs {hz} actions and events")));
        }
        let keep = grads.is_some();
        let (ctx, ccache) = self.encode_with(store, frames, states)?;
        let rows: Vec<usize> = (0..n).collect();
        let u = self.unroll(store, &ctx, &rows, ctx.init.clone(), actions, keep)?;

        let mut pred = [Vec::new(), Vec::new(), Vec::new()];
        let mut target = [Vec::new(), Vec::new(), Vec::new()];
        for r in 0..n {
            for h in 0..hz {
                let o = &u.outputs[h][r * OUTPUT_WIDTH..(r + 1) * OUTPUT_WIDTH];
                let e = &events[r][h];
                pred[0].extend_from_slice(&o[0..3]);
                pred[1].extend_from_slice(&o[3..6]);
                pred[2].push(o[6]);
                target[0].extend_from_slice(&e.dposition);
                target[1].extend_from_slice(&e.dorientation);
                target[2].push(e.bumpiness);
            }
        }
        let (total, per_head, dheads) = weighted_mse(
            &[(&pred[0], &target[0]), (&pred[1], &target[1]), (&pred[2], &target[2])],
            &self.config.alpha,
        );
        let parts = LossParts { total, mse: [per_head[0], per_head[1], per_head[2]] };
        if let Some((grads, scale)) = grads {
            let mut douts = vec![vec![0.0; n * OUTPUT_WIDTH]; hz];
            for r in 0..n {
                for h in 0..hz {
                    let i = r * hz + h;
                    let d = &mut douts[h][r * OUTPUT_WIDTH..(r + 1) * OUTPUT_WIDTH];
                    d[0..3].copy_from_slice(&dheads[0][3 * i..3 * i + 3]);
                    d[3..6].copy_from_slice(&dheads[1][3 * i..3 * i + 3]);
                    d[6] = dheads[2][i];
                    d.iter_mut().for_each(|v| *v *= scale);
                }
            }
            self.backward(store, &ctx, &ccache, &u, &douts, grads);
        }
        Ok(parts)
    }

    /// Reverse pass of a training unroll (one row per frame).
    fn backward(
        &self,
        store: &ParamStore,
        ctx: &Context,
        cc: &ContextCache,
        u: &Unrolled,
        douts: &[Vec<f64>],
        grads: &mut Grads,
    ) {
        let cfg = &self.config;
        let l = &self.layers;
        let n = ctx.batch;
        let (mh, mw) = cfg.map_dims();
        let k = cfg.crop;
        let c3 = cfg.conv_channels[2];
        let msz = self.map_size();
        let fw = feature_width(cfg);
        let (ae, hid) = (cfg.action_embed, cfg.lstm_hidden);

        let mut carry: Vec<LstmState> = l.lstms.iter().map(|_| LstmState::zeros(n, hid)).collect();
        let mut dmaps = vec![0.0; ctx.maps.len()];
        let mut dpooled = vec![0.0; n * c3];
        for h in (0..cfg.horizon).rev() {
            let sc = &u.caches[h];
            let mut d = douts[h].clone();
            for row in d.chunks_exact_mut(OUTPUT_WIDTH) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= output_scale(j);
                }
            }
            let col = |lo: usize, hi: usize| -> Vec<f64> {
                d.chunks_exact(OUTPUT_WIDTH).flat_map(|r| r[lo..hi].iter().copied()).collect()
            };
            match (&l.heads, &sc.head) {
                (Heads::Split { pose, bump }, HeadCache::Split(cp, cb)) => {
                    let dh0 = pose.backward(store, cp, &col(0, 6), n, grads);
                    let dh1 = bump.backward(store, cb, &col(6, 7), n, grads);
                    add_into(&mut carry[0].hidden, &dh0);
                    add_into(&mut carry[1].hidden, &dh1);
                }
                (Heads::Shared { trunk, pos, ori, bump }, HeadCache::Shared { x, t }) => {
                    let mut dt = pos.backward(store, t, &col(0, 3), n, grads);
                    add_into(&mut dt, &ori.backward(store, t, &col(3, 6), n, grads));
                    add_into(&mut dt, &bump.backward(store, t, &col(6, 7), n, grads));
                    let dt = relu_backward(t, &dt);
                    let dh0 = trunk.backward(store, x, &dt, n, grads);
                    add_into(&mut carry[0].hidden, &dh0);
                }
                _ => unreachable!("head cache matches head layout"),
            }
            let mut dx = vec![0.0; n * (fw + ae)];
            for (i, cell) in l.lstms.iter().enumerate() {
                let (dxl, prev) = cell.backward(store, &sc.lstm[i], &carry[i], n, grads);
                add_into(&mut dx, &dxl);
                carry[i] = prev;
            }
            let (dfeat, dact) = split_rows(&dx, fw, ae, n);
            let dact = relu_backward(&sc.act_h, &dact);
            l.action.backward(store, &sc.act_in, &dact, n, grads);
            match cfg.variant {
                Variant::CropFeature => {
                    for (r, c) in sc.centers.iter().enumerate() {
                        crop_scatter_add(
                            &dfeat[r * fw..(r + 1) * fw],
                            &mut dmaps[r * msz..(r + 1) * msz],
                            c3,
                            mh,
                            mw,
                            *c,
                            k,
                        );
                    }
                }
                Variant::CropImage => {
                    let cache = sc.patch.as_ref().expect("patch cache kept for crop_image");
                    self.encoder_backward(store, cache, Tensor::from_vec(&[n, c3, k, k], dfeat), grads);
                }
                Variant::BadgrOriginal | Variant::BadgrModified => add_into(&mut dpooled, &dfeat),
            }
        }

        let mut dctx_h = vec![0.0; n * cfg.context_hidden];
        for (i, dense) in l.init.iter().enumerate() {
            let hstate = &ctx.init[i].hidden;
            let mut draw = vec![0.0; n * 2 * hid];
            for r in 0..n {
                for j in 0..hid {
                    let hv = hstate[r * hid + j];
                    draw[r * 2 * hid + j] = carry[i].hidden[r * hid + j] * (1.0 - hv * hv);
                    draw[r * 2 * hid + hid + j] = carry[i].cell[r * hid + j];
                }
            }
            add_into(&mut dctx_h, &dense.backward(store, &cc.ctx_h, &draw, n, grads));
        }
        let dctx_h = relu_backward(&cc.ctx_h, &dctx_h);
        let dctx_in = l.context.backward(store, &cc.ctx_in, &dctx_h, n, grads);
        let (dp, dsh) = split_rows(&dctx_in, c3, cfg.state_embed, n);
        add_into(&mut dpooled, &dp);
        let dsh = relu_backward(&cc.state_h, &dsh);
        l.state.backward(store, &cc.state_in, &dsh, n, grads);

        let cells = mh * mw;
        for (plane, g) in dmaps.chunks_exact_mut(cells).zip(&dpooled) {
            let share = g / cells as f64;
            plane.iter_mut().for_each(|v| *v += share);
        }
        self.encoder_backward(store, &cc.enc, Tensor::from_vec(&[n, c3, mh, mw], dmaps), grads);
    }

    fn meta(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointMeta { variant: self.config.variant, config: self.config.clone() })?)
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        self.store.write_checkpoint(&self.meta()?, w)
    }

    /// Rebuild a network from checkpoint bytes; `expect` guards against
    /// loading the wrong variant.
    pub fn read_checkpoint<R: Read>(r: R, expect: Option<Variant>) -> Result<Network> {
        let (store, meta) = ParamStore::read_checkpoint(r)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Checkpoint(format!("unreadable metadata: {e}")))?;
        if let Some(v) = expect {
            if v != meta.variant {
                return Err(Error::Checkpoint(format!(
                    "checkpoint holds a {} model, {} was requested",
                    meta.variant, v
                )));
            }
        }
        let mut net = Network::new(meta.config)?;
        net.store.load_values(&store)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, expect: Option<Variant>) -> Result<Network> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?), expect)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

fn feature_width(cfg: &ModelConfig) -> usize {
    let c3 = cfg.conv_channels[2];
    if cfg.variant.crops() {
        c3 * cfg.crop * cfg.crop
    } else {
        c3
    }
}

fn output_scale(j: usize) -> f64 {
    match j {
        0..=2 => OUTPUT_SCALE[0],
        3..=5 => OUTPUT_SCALE[1],
        _ => OUTPUT_SCALE[2],
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Repeat row `row` of a batched state `n` times.
fn expand_state(s: &LstmState, width: usize, row: usize, n: usize) -> LstmState {
    let pick = |v: &[f64]| -> Vec<f64> { (0..n).flat_map(|_| v[row * width..(row + 1) * width].iter().copied()).collect() };
    LstmState { hidden: pick(&s.hidden), cell: pick(&s.cell) }
}
