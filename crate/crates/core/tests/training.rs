use cropnav::dataset::{CollectConfig, Corpus, SampleRef, Split};
use cropnav::geometry::CameraModel;
use cropnav::model::{evaluate, train, FrameCache, ModelConfig, Network, TrainConfig, Variant};
use cropnav::nn::AdamConfig;
use cropnav::sim::{TerrainSpec, VehicleParams};
use cropnav::Error;

fn small_camera() -> CameraModel {
    CameraModel::from_fov(32, 24, 90f64.to_radians(), [0.3, 0.0, 0.4], 15f64.to_radians())
}

fn small_corpus() -> Corpus {
    let cfg = CollectConfig { episodes: 3, duration: 20.0, terrains: 2, seed: 8, ..Default::default() };
    Corpus::collect(&cfg, &TerrainSpec::default(), &VehicleParams::default(), &small_camera()).unwrap()
}

fn first_refs(corpus: &Corpus, n: usize) -> Vec<SampleRef> {
    (0..corpus.episodes.len())
        .flat_map(|e| (0..corpus.samples[e].len()).map(move |i| SampleRef { episode: e as u32, index: i as u32 }))
        .take(n)
        .collect()
}

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        camera: small_camera(),
        conv_channels: [4, 8, 8],
        state_embed: 8,
        context_hidden: 16,
        action_embed: 8,
        lstm_hidden: 32,
        head_hidden: 32,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_leave_initialization_untouched() {
    let corpus = small_corpus();
    let refs = first_refs(&corpus, 16);
    let split = Split { train: refs[..8].to_vec(), val: refs[8..12].to_vec(), test: refs[12..].to_vec(), test_episodes: vec![] };
    let frames = FrameCache::build(&corpus, &refs);
    let mut net = Network::new(config(Variant::CropFeature)).unwrap();
    let before = net.checkpoint_bytes();
    let report = train(&mut net, &corpus, &split, &frames, &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert_eq!(net.checkpoint_bytes(), before);
    assert_eq!(report.val, evaluate(&net, &corpus, &frames, &split.val).unwrap());
}

#[test]
fn memorizes_a_small_batch() {
    let corpus = small_corpus();
    let refs = first_refs(&corpus, 32);
    let split = Split { train: refs.clone(), val: vec![], test: vec![], test_episodes: vec![] };
    let frames = FrameCache::build(&corpus, &refs);
    let mut net = Network::new(ModelConfig { lstm_hidden: 64, head_hidden: 64, ..config(Variant::CropFeature) }).unwrap();
    let initial = evaluate(&net, &corpus, &frames, &refs).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 2,
        chunk: 2,
        adam: AdamConfig { lr: 2e-3, ..Default::default() },
        lr_decay: 0.993,
        ..Default::default()
    };
    let report = train(&mut net, &corpus, &split, &frames, &cfg).unwrap();
    // per-head train MSE, the quantity tabulated per split and head
    for (head, (m, m0)) in report.train.iter().zip(initial).enumerate() {
        assert!(*m < 1e-4, "head {head}: train MSE {m:e} (initial {m0:e})");
    }
}

#[test]
fn divergence_keeps_last_finite_parameters() {
    let mut corpus = small_corpus();
    let refs = first_refs(&corpus, 16);
    corpus.samples[0][0].events[3].bumpiness = f64::NAN;
    let split = Split { train: refs.clone(), val: vec![], test: vec![], test_episodes: vec![] };
    let frames = FrameCache::build(&corpus, &refs);
    let mut net = Network::new(config(Variant::BadgrModified)).unwrap();
    let before = net.checkpoint_bytes();
    let cfg = TrainConfig { epochs: 1, batch_size: 16, ..Default::default() };
    match train(&mut net, &corpus, &split, &frames, &cfg) {
        Err(Error::Diverged { epoch: 0, batch: 0, .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(net.checkpoint_bytes(), before);
}

#[test]
fn training_is_reproducible() {
    let corpus = small_corpus();
    let refs = first_refs(&corpus, 24);
    let split = Split { train: refs[..16].to_vec(), val: refs[16..20].to_vec(), test: refs[20..].to_vec(), test_episodes: vec![] };
    let frames = FrameCache::build(&corpus, &refs);
    let run = || {
        let mut net = Network::new(config(Variant::CropImage)).unwrap();
        let r = train(&mut net, &corpus, &split, &frames, &TrainConfig { epochs: 2, batch_size: 8, chunk: 3, ..Default::default() })
            .unwrap();
        (net.checkpoint_bytes(), r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
