use super::*;
use crate::dataset::EventLabel;
use crate::geometry::compose;
use crate::nn::gradcheck::{check, numeric_input_grad, relative_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        conv_channels: [2, 2, 3],
        state_embed: 3,
        context_hidden: 4,
        action_embed: 3,
        lstm_hidden: 4,
        head_hidden: 3,
        camera: CameraModel::from_fov(32, 24, 90f64.to_radians(), [0.3, 0.0, 0.4], 15f64.to_radians()),
        init_seed: seed,
        ..Default::default()
    }
}

fn random_frame(rng: &mut ChaCha8Rng, cam: &CameraModel) -> Vec<f32> {
    let n = cam.width * cam.height;
    let mut f: Vec<f32> = (0..3 * n).map(|_| rng.random_range(0.0..1.0)).collect();
    f.extend((0..n).map(|_| rng.random_range(0.5..20.0f32)));
    f
}

fn random_state(rng: &mut ChaCha8Rng) -> RobotState {
    RobotState {
        speed: rng.random_range(0.0..1.5),
        yaw_rate: rng.random_range(-0.5..0.5),
        bumpiness: rng.random_range(0.0..2.0),
        prev_v: rng.random_range(0.0..1.5),
        prev_steer: rng.random_range(-0.4..0.4),
    }
}

fn random_actions(rng: &mut ChaCha8Rng, h: usize) -> Vec<[f64; 2]> {
    (0..h).map(|_| [rng.random_range(0.3..1.5), rng.random_range(-0.4..0.4)]).collect()
}

fn random_events(rng: &mut ChaCha8Rng, h: usize) -> Vec<EventLabel> {
    (0..h)
        .map(|_| EventLabel {
            dposition: [rng.random_range(0.0..0.4), rng.random_range(-0.05..0.05), rng.random_range(-0.02..0.02)],
            dorientation: [rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.2..0.2)],
            bumpiness: rng.random_range(0.0..3.0),
        })
        .collect()
}

struct Batch {
    frames: Vec<Vec<f32>>,
    states: Vec<RobotState>,
    actions: Vec<Vec<[f64; 2]>>,
    events: Vec<Vec<EventLabel>>,
}

impl Batch {
    fn random(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize) -> Batch {
        Batch {
            frames: (0..n).map(|_| random_frame(rng, &cfg.camera)).collect(),
            states: (0..n).map(|_| random_state(rng)).collect(),
            actions: (0..n).map(|_| random_actions(rng, cfg.horizon)).collect(),
            events: (0..n).map(|_| random_events(rng, cfg.horizon)).collect(),
        }
    }

    fn loss(&self, net: &Network, store: &crate::nn::ParamStore, grads: Option<(&mut crate::nn::Grads, f64)>) -> LossParts {
        let f: Vec<&[f32]> = self.frames.iter().map(|v| v.as_slice()).collect();
        let a: Vec<&[[f64; 2]]> = self.actions.iter().map(|v| v.as_slice()).collect();
        let e: Vec<&[EventLabel]> = self.events.iter().map(|v| v.as_slice()).collect();
        net.batch_loss(store, &f, &self.states, &a, &e, grads).unwrap()
    }
}

#[test]
fn full_graph_gradients_match_finite_differences() {
    for variant in Variant::ALL {
        for seed in 0..5 {
            let cfg = tiny(variant, seed);
            let mut net = Network::new(cfg.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            // zero biases put dead ReLUs exactly on the kink; move them off it
            let ids: Vec<_> = net.store.ids().collect();
            for id in ids {
                if net.store.param(id).name.ends_with(".b") {
                    net.store.value_mut(id).iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
                }
            }
            let batch = Batch::random(&mut rng, &cfg, 2);
            let mut grads = net.store.grads_like();
            batch.loss(&net, &net.store, Some((&mut grads, 1.0)));
            let mut store = net.store.clone();
            let rep = check(&mut store, &grads, 1e-5, 40, |s| batch.loss(&net, s, None).total);
            assert!(rep.max_rel_error < 1e-4, "{variant} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn zero_parameters_give_identity_rollout() {
    for variant in Variant::ALL {
        let mut net = Network::new(ModelConfig { variant, ..Default::default() }).unwrap();
        net.store.fill_zero();
        let cam = net.config.camera;
        let frame = vec![0f32; 4 * cam.width * cam.height];
        let ctx = net.encode(&[&frame], &[RobotState::default()]).unwrap();
        assert!(ctx.init.iter().all(|s| s.hidden.iter().chain(&s.cell).all(|v| *v == 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = random_frame(&mut rng, &cam);
        let r = net.rollout(&frame, &random_state(&mut rng), &random_actions(&mut rng, 10)).unwrap();
        for s in &r.steps {
            assert_eq!(s.delta.dposition, [0.0; 3]);
            assert_eq!(s.delta.dorientation, [0.0; 3]);
            assert_eq!(s.pose, crate::geometry::Pose::identity());
            if variant.crops() {
                assert_eq!(s.center, Some(bottom_center(7, 12, 3)));
            }
        }
    }
}

#[test]
fn accumulated_pose_is_fold_of_compose() {
    let net = Network::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cam = net.config.camera;
    let r = net
        .rollout(&random_frame(&mut rng, &cam), &random_state(&mut rng), &random_actions(&mut rng, 10))
        .unwrap();
    let mut p = crate::geometry::Pose::identity();
    for s in &r.steps {
        p = compose(&p, &s.delta);
        assert!((p.position - s.pose.position).amax() < 1e-12);
        assert!((p.rotation - s.pose.rotation).amax() < 1e-12);
    }
}

#[test]
fn bumpiness_head_gets_no_gradient_without_its_weight() {
    let mut cfg = tiny(Variant::CropFeature, 4);
    cfg.alpha = [1.0, 1.0, 0.0];
    let net = Network::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = Batch::random(&mut rng, &cfg, 3);
    let mut grads = net.store.grads_like();
    batch.loss(&net, &net.store, Some((&mut grads, 1.0)));
    let mut bump_params = 0;
    for id in net.store.ids() {
        let name = &net.store.param(id).name;
        if name.contains("bump") {
            bump_params += 1;
            assert!(grads.get(id).iter().all(|g| *g == 0.0), "{name} received gradient");
        }
    }
    assert!(bump_params >= 4);
}

#[test]
fn single_candidate_matches_rollout_bitwise_and_batches_permute() {
    for variant in Variant::ALL {
        let net = Network::new(ModelConfig { variant, init_seed: 2, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = random_frame(&mut rng, &net.config.camera);
        let state = random_state(&mut rng);
        let cands: Vec<Vec<[f64; 2]>> = (0..37).map(|_| random_actions(&mut rng, 10)).collect();
        let all = net.predict_batch(&frame, &state, &cands).unwrap();
        for (c, r) in cands.iter().zip(&all).step_by(5) {
            assert_eq!(&net.rollout(&frame, &state, c).unwrap(), r);
        }
        let mut perm: Vec<usize> = (0..cands.len()).collect();
        perm.reverse();
        perm.swap(3, 20);
        let shuffled: Vec<_> = perm.iter().map(|&i| cands[i].clone()).collect();
        let out = net.predict_batch(&frame, &state, &shuffled).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(out[j], all[i], "{variant}: candidate {i}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let net = Network::new(ModelConfig { variant: Variant::CropImage, init_seed: 5, ..Default::default() }).unwrap();
    let bytes = net.checkpoint_bytes();
    let back = Network::read_checkpoint(bytes.as_slice(), Some(Variant::CropImage)).unwrap();
    assert_eq!(back.checkpoint_bytes(), bytes);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frame = random_frame(&mut rng, &net.config.camera);
    let state = random_state(&mut rng);
    let acts = random_actions(&mut rng, 10);
    assert_eq!(net.rollout(&frame, &state, &acts).unwrap(), back.rollout(&frame, &state, &acts).unwrap());
    assert!(matches!(
        Network::read_checkpoint(bytes.as_slice(), Some(Variant::CropFeature)),
        Err(crate::Error::Checkpoint(_))
    ));
}

#[test]
fn wrong_frame_shape_is_a_config_error() {
    let net = Network::new(ModelConfig::default()).unwrap();
    let r = net.encode(&[&[0.0f32; 10]], &[RobotState::default()]);
    assert!(matches!(r, Err(crate::Error::Config(_))));
}

/// Pixels a feature cell can see: three 3×3 stride-2 pad-1 layers give
/// `[8j − 7, 8j + 7]` per axis.
fn receptive_span(cell: usize) -> (i64, i64) {
    (8 * cell as i64 - 7, 8 * cell as i64 + 7)
}

#[test]
fn feature_cell_ignores_pixels_outside_its_receptive_field() {
    let net = Network::new(ModelConfig { init_seed: 3, ..Default::default() }).unwrap();
    let cam = net.config.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_frame(&mut rng, &cam);
    let (row, col) = (3usize, 5usize);
    let (r0, r1) = receptive_span(row);
    let (c0, c1) = receptive_span(col);
    let mut b = a.clone();
    let n = cam.width * cam.height;
    for ch in 0..4 {
        for y in 0..cam.height {
            for x in 0..cam.width {
                let inside = (r0..=r1).contains(&(y as i64)) && (c0..=c1).contains(&(x as i64));
                if !inside {
                    b[ch * n + y * cam.width + x] = rng.random_range(0.0..1.0);
                }
            }
        }
    }
    let s = RobotState::default();
    let ma = net.encode(&[&a], &[s]).unwrap().maps;
    let mb = net.encode(&[&b], &[s]).unwrap().maps;
    let (mh, mw) = net.config.map_dims();
    for c in 0..net.config.conv_channels[2] {
        let i = (c * mh + row) * mw + col;
        assert_eq!(ma[i], mb[i]);
    }
    assert_ne!(ma, mb);
}

#[test]
fn crop_rollout_ignores_pixels_outside_every_crop_window() {
    let net = Network::new(ModelConfig { init_seed: 6, ..Default::default() }).unwrap();
    let cam = net.config.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let frame = random_frame(&mut rng, &cam);
    let state = random_state(&mut rng);
    let acts = random_actions(&mut rng, 10);
    let ctx = net.encode(&[&frame], &[state]).unwrap();
    let base = net.rollout_context(&ctx, 0, &[acts.clone()]).unwrap().remove(0);

    // pixels seen by any crop window of any step
    let mut seen = vec![false; cam.width * cam.height];
    for s in &base.steps {
        let c = s.center.unwrap();
        let (r0, _) = receptive_span(c.row - 1);
        let (_, r1) = receptive_span(c.row + 1);
        let (c0, _) = receptive_span(c.col - 1);
        let (_, c1) = receptive_span(c.col + 1);
        for y in r0.max(0)..=r1.min(cam.height as i64 - 1) {
            for x in c0.max(0)..=c1.min(cam.width as i64 - 1) {
                seen[y as usize * cam.width + x as usize] = true;
            }
        }
    }
    assert!(seen.iter().any(|s| !s), "crop windows cover the whole image");
    let mut other = frame.clone();
    let n = cam.width * cam.height;
    for ch in 0..4 {
        for (i, s) in seen.iter().enumerate() {
            if !s {
                other[ch * n + i] = if ch == 3 { 0.7 } else { rng.random_range(0.0..1.0) };
            }
        }
    }
    // the global context sees every pixel, so hold it fixed and swap in the new maps
    let mut perturbed = net.encode(&[&other], &[state]).unwrap();
    assert_ne!(perturbed.maps, ctx.maps);
    perturbed.init = ctx.init.clone();
    let out = net.rollout_context(&perturbed, 0, &[acts]).unwrap().remove(0);
    assert_eq!(out, base);
}

#[test]
fn input_gradient_sanity_for_frames() {
    // the loss must depend on the image through the crops
    let cfg = tiny(Variant::CropFeature, 1);
    let net = Network::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Batch::random(&mut rng, &cfg, 1);
    let mut pixels: Vec<f64> = batch.frames[0][..50].iter().map(|v| *v as f64).collect();
    let num = numeric_input_grad(&mut pixels, 1e-3, |p| {
        let mut b = Batch { frames: batch.frames.clone(), ..Batch::random(&mut ChaCha8Rng::seed_from_u64(5), &cfg, 1) };
        for (d, s) in b.frames[0].iter_mut().zip(p) {
            *d = *s as f32;
        }
        b.loss(&net, &net.store, None).total
    });
    assert!(num.iter().any(|g| g.abs() > 0.0));
    assert!(relative_error(1.0, 1.0) == 0.0);
}
