//! Random-control data collection, self-supervised labels and splits.

pub mod format;

pub use format::{Manifest, ManifestEntry};

use crate::geometry::{compose, CameraModel, Pose, PoseDelta};
use crate::sim::noise::mix64;
use crate::sim::{generate_terrain, render_pose, Command, Terrain, TerrainSpec, VehicleParams, VehicleState};
use crate::sim::{Simulator, DT, Z_WINDOW};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Prediction horizon in steps.
pub const HORIZON: usize = 10;
/// Simulator ticks per prediction step (0.3 s).
pub const STEP_TICKS: usize = 3;
/// First tick with a full bumpiness window.
pub const WARMUP_TICKS: usize = Z_WINDOW - 1;
pub const MIN_DURATION: f64 = 10.0;

/// One 10 Hz sample of an episode. `command` is what was applied from this
/// tick to the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub tick: u32,
    pub pose: Pose,
    pub speed: f64,
    pub yaw_rate: f64,
    pub steering: f64,
    pub command: Command,
    pub z_accel: f64,
    pub collided: bool,
    pub out_of_bounds: bool,
}

impl Record {
    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub terrain_seed: u64,
    /// Seeds the camera noise; frames are a pure function of this and the pose.
    pub render_seed: u64,
    pub camera: CameraModel,
    pub records: Vec<Record>,
    /// Optional stored RGB-D planes, `records × 4 × H × W`.
    pub images: Option<Vec<f32>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// RGB-D frame at `tick`, from storage or re-rendered.
    pub fn frame(&self, terrain: &Terrain, tick: usize) -> Vec<f32> {
        let n = 4 * self.camera.width * self.camera.height;
        match &self.images {
            Some(img) => img[tick * n..(tick + 1) * n].to_vec(),
            None => render_pose(terrain, &self.records[tick].pose, &self.camera, self.render_seed),
        }
    }
}

/// Per-step prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLabel {
    pub dposition: [f64; 3],
    pub dorientation: [f64; 3],
    pub bumpiness: f64,
}

impl EventLabel {
    pub fn delta(&self) -> PoseDelta {
        PoseDelta::new(self.dposition, self.dorientation)
    }

    pub fn is_finite(&self) -> bool {
        self.dposition
            .iter()
            .chain(&self.dorientation)
            .chain(std::iter::once(&self.bumpiness))
            .all(|v| v.is_finite())
    }
}

/// Proprioceptive state fed to the model alongside the image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub speed: f64,
    pub yaw_rate: f64,
    pub bumpiness: f64,
    pub prev_v: f64,
    pub prev_steer: f64,
}

impl RobotState {
    pub fn to_array(&self) -> [f64; 5] {
        [self.speed, self.yaw_rate, self.bumpiness, self.prev_v, self.prev_steer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub anchor: usize,
    pub state: RobotState,
    /// `(v, steer)` per step.
    pub actions: [[f64; 2]; HORIZON],
    pub events: [EventLabel; HORIZON],
}

/// Population variance of one bumpiness window. Deviations are taken from
/// the first sample before the two-pass mean so a constant window is exactly 0.
pub fn label_bumpiness(window: &[f64; Z_WINDOW]) -> f64 {
    let k = window[0];
    let n = Z_WINDOW as f64;
    let mean = window.iter().map(|x| x - k).sum::<f64>() / n;
    window.iter().map(|x| (x - k - mean).powi(2)).sum::<f64>() / n
}

/// Bumpiness of the window ending at `tick`, `None` during warm-up.
pub fn bumpiness_at(records: &[Record], tick: usize) -> Option<f64> {
    if tick < WARMUP_TICKS || tick >= records.len() {
        return None;
    }
    let mut w = [0.0; Z_WINDOW];
    for (d, r) in w.iter_mut().zip(&records[tick + 1 - Z_WINDOW..=tick]) {
        *d = r.z_accel;
    }
    Some(label_bumpiness(&w))
}

/// Bounds and dynamics of the exploratory command walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub v_range: [f64; 2],
    pub steer_range: [f64; 2],
    /// Per-tick std-dev of the target walk, `(v, steer)`.
    pub sigma: [f64; 2],
    /// First-order smoothing of the applied command toward the target.
    pub smoothing: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            v_range: [0.0, 1.5],
            steer_range: [-0.4, 0.4],
            sigma: [0.15, 0.08],
            smoothing: 0.7,
        }
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let mut x = x;
    if x > hi {
        x = 2.0 * hi - x;
    }
    if x < lo {
        x = 2.0 * lo - x;
    }
    x.clamp(lo, hi)
}

/// Seeded reflecting random walk over `(v, steer)`, smoothed.
#[derive(Debug, Clone)]
pub struct CommandWalk {
    cfg: PolicyConfig,
    target: [f64; 2],
    current: [f64; 2],
    rng: ChaCha8Rng,
}

impl CommandWalk {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = [
            rng.random_range(cfg.v_range[0]..=cfg.v_range[1]),
            rng.random_range(cfg.steer_range[0]..=cfg.steer_range[1]),
        ];
        CommandWalk { cfg, target, current: target, rng }
    }

    pub fn next_command(&mut self) -> Command {
        let ranges = [self.cfg.v_range, self.cfg.steer_range];
        for i in 0..2 {
            let step = Normal::new(0.0, self.cfg.sigma[i]).expect("sigma must be finite and non-negative");
            let t = self.target[i] + step.sample(&mut self.rng);
            self.target[i] = reflect(t, ranges[i][0], ranges[i][1]);
            let a = self.cfg.smoothing;
            self.current[i] = (a * self.current[i] + (1.0 - a) * self.target[i]).clamp(ranges[i][0], ranges[i][1]);
        }
        Command::new(self.current[0], self.current[1])
    }
}

fn record_of(state: &VehicleState, tick: u32, command: Command) -> Record {
    Record {
        tick,
        pose: state.pose,
        speed: state.speed,
        yaw_rate: state.yaw_rate,
        steering: state.steering,
        command,
        z_accel: state.z_accel,
        collided: state.collided,
        out_of_bounds: state.out_of_bounds,
    }
}

/// Everything that identifies one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSeeds {
    pub id: u64,
    /// Drives the start pose, the command walk and the vehicle noise.
    pub seed: u64,
}

/// Drive `terrain` with the random walk for `duration` seconds, starting
/// at rest somewhere on the first half of the path. Stops early on a
/// collision or a map exit; the terminal tick is still recorded.
pub fn collect_episode(
    terrain: &Arc<Terrain>,
    params: &VehicleParams,
    camera: &CameraModel,
    policy: &PolicyConfig,
    duration: f64,
    seeds: EpisodeSeeds,
    store_images: bool,
) -> Result<Episode> {
    if duration < MIN_DURATION {
        return Err(Error::Config(format!(
            "episode duration {duration} s is below the {MIN_DURATION} s minimum"
        )));
    }
    let ticks = (duration / DT).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seeds.seed ^ 0x5eed));
    let s0 = rng.random_range(0.0..=0.5) * terrain.path_length();
    let (p, heading) = terrain.path_point(s0);
    let start = VehicleState::at_rest(terrain, params, p[0], p[1], heading);
    let mut sim = Simulator::new(terrain.clone(), params.clone(), start, mix64(seeds.seed ^ 0x0e7a));
    let mut walk = CommandWalk::new(policy.clone(), mix64(seeds.seed ^ 0xc0de));

    let mut records = Vec::with_capacity(ticks);
    for tick in 0..ticks {
        let command = walk.next_command().clamped(params);
        let state = sim.state.clone();
        let done = state.collided || state.out_of_bounds;
        records.push(record_of(&state, tick as u32, command));
        if done {
            break;
        }
        if tick + 1 < ticks {
            sim.step(command);
        }
    }
    let render_seed = mix64(seeds.seed ^ 0x1ab);
    let images = store_images.then(|| {
        records
            .iter()
            .flat_map(|r| render_pose(terrain, &r.pose, camera, render_seed))
            .collect()
    });
    Ok(Episode {
        id: seeds.id,
        terrain_seed: terrain.seed,
        render_seed,
        camera: *camera,
        records,
        images,
    })
}

/// Slice an episode into overlapping H-step samples, anchors every 0.3 s.
pub fn make_sequences(episode: &Episode) -> Result<Vec<SequenceSample>> {
    let recs = &episode.records;
    let span = HORIZON * STEP_TICKS;
    let mut out = Vec::new();
    let mut t = WARMUP_TICKS;
    while t + span < recs.len() {
        let prev = if t > 0 { recs[t - 1].command } else { Command::default() };
        let state = RobotState {
            speed: recs[t].speed,
            yaw_rate: recs[t].yaw_rate,
            bumpiness: bumpiness_at(recs, t).expect("anchor is past warm-up"),
            prev_v: prev.v,
            prev_steer: prev.steer,
        };
        let mut actions = [[0.0; 2]; HORIZON];
        let mut events = [EventLabel::default(); HORIZON];
        for h in 0..HORIZON {
            let p = t + h * STEP_TICKS;
            let n = p + STEP_TICKS;
            let d = PoseDelta::between(&recs[p].pose, &recs[n].pose);
            actions[h] = [recs[p].command.v, recs[p].command.steer];
            events[h] = EventLabel {
                dposition: d.dposition,
                dorientation: d.dorientation,
                bumpiness: bumpiness_at(recs, n).expect("step end is past warm-up"),
            };
            if !events[h].is_finite() {
                return Err(Error::Episode(format!(
                    "episode {}: non-finite label at anchor tick {t}, step {h}: {:?}",
                    episode.id, events[h]
                )));
            }
        }
        out.push(SequenceSample { anchor: t, state, actions, events });
        t += STEP_TICKS;
    }
    Ok(out)
}

/// Integrate a sample's labels from `start`; returns the pose after each step.
pub fn integrate_labels(start: &Pose, events: &[EventLabel]) -> Vec<Pose> {
    let mut pose = *start;
    events
        .iter()
        .map(|e| {
            pose = compose(&pose, &e.delta());
            pose
        })
        .collect()
}

/// A sample addressed by episode position in the corpus and its index
/// within that episode's sample list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub episode: u32,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
    pub test_episodes: Vec<usize>,
}

/// Hold out whole episodes for test, then shuffle the rest into train/val
/// with `train_fraction` going to train.
pub fn split(counts: &[usize], train_fraction: f64, holdout_episodes: usize, seed: u64) -> Result<Split> {
    if counts.len() < 3 {
        return Err(Error::Config(format!("split needs at least 3 episodes, got {}", counts.len())));
    }
    if holdout_episodes >= counts.len() {
        return Err(Error::Config("holdout would leave no training episodes".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.shuffle(&mut rng);
    let mut test_episodes = order[..holdout_episodes].to_vec();
    test_episodes.sort_unstable();

    let refs = |e: usize| (0..counts[e]).map(move |i| SampleRef { episode: e as u32, index: i as u32 });
    let test: Vec<SampleRef> = test_episodes.iter().flat_map(|&e| refs(e)).collect();
    let mut rest: Vec<SampleRef> = (0..counts.len())
        .filter(|e| !test_episodes.contains(e))
        .flat_map(refs)
        .collect();
    rest.shuffle(&mut rng);
    let n_train = (rest.len() as f64 * train_fraction).round() as usize;
    let val = rest.split_off(n_train);
    Ok(Split { train: rest, val, test, test_episodes })
}

/// Corpus-level collection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Seconds per episode.
    pub duration: f64,
    /// Number of distinct terrains the episodes cycle through.
    pub terrains: usize,
    pub seed: u64,
    pub store_images: bool,
    pub train_fraction: f64,
    pub holdout_episodes: usize,
    pub policy: PolicyConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            episodes: 200,
            duration: 100.0,
            terrains: 20,
            seed: 0,
            store_images: false,
            train_fraction: 0.8,
            holdout_episodes: 1,
            policy: PolicyConfig::default(),
        }
    }
}

pub fn terrain_seed(base: u64, index: usize) -> u64 {
    mix64(base ^ 0x7e22_a1d0 ^ mix64(index as u64))
}

/// Episodes, their terrains and their slices, held in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub terrain_spec: TerrainSpec,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub episodes: Vec<Episode>,
    pub terrains: Vec<Arc<Terrain>>,
    /// Index into `terrains` per episode.
    pub terrain_of: Vec<usize>,
    pub samples: Vec<Vec<SequenceSample>>,
}

impl Corpus {
    pub fn collect(
        cfg: &CollectConfig,
        spec: &TerrainSpec,
        vehicle: &VehicleParams,
        camera: &CameraModel,
    ) -> Result<Corpus> {
        if cfg.terrains == 0 {
            return Err(Error::Config("at least one terrain is required".into()));
        }
        let terrains: Vec<Arc<Terrain>> = (0..cfg.terrains.min(cfg.episodes.max(1)))
            .into_par_iter()
            .map(|i| generate_terrain(terrain_seed(cfg.seed, i), spec).map(Arc::new))
            .collect::<Result<_>>()?;
        let terrain_of: Vec<usize> = (0..cfg.episodes).map(|i| i % terrains.len()).collect();
        let episodes: Vec<Episode> = (0..cfg.episodes)
            .into_par_iter()
            .map(|i| {
                let seeds = EpisodeSeeds { id: i as u64, seed: mix64(cfg.seed ^ mix64(0xe915 + i as u64)) };
                collect_episode(
                    &terrains[terrain_of[i]],
                    vehicle,
                    camera,
                    &cfg.policy,
                    cfg.duration,
                    seeds,
                    cfg.store_images,
                )
            })
            .collect::<Result<_>>()?;
        Self::from_parts(spec.clone(), vehicle.clone(), *camera, episodes, terrains, terrain_of)
    }

    pub fn from_parts(
        terrain_spec: TerrainSpec,
        vehicle: VehicleParams,
        camera: CameraModel,
        episodes: Vec<Episode>,
        terrains: Vec<Arc<Terrain>>,
        terrain_of: Vec<usize>,
    ) -> Result<Corpus> {
        let samples = episodes.par_iter().map(make_sequences).collect::<Result<_>>()?;
        Ok(Corpus { terrain_spec, vehicle, camera, episodes, terrains, terrain_of, samples })
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.samples.iter().map(Vec::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    pub fn sample(&self, r: SampleRef) -> &SequenceSample {
        &self.samples[r.episode as usize][r.index as usize]
    }

    pub fn terrain(&self, episode: usize) -> &Arc<Terrain> {
        &self.terrains[self.terrain_of[episode]]
    }

    /// Anchor frame of a sample.
    pub fn frame(&self, r: SampleRef) -> Vec<f32> {
        let e = r.episode as usize;
        self.episodes[e].frame(self.terrain(e), self.sample(r).anchor)
    }

    pub fn split(&self, cfg: &CollectConfig, seed: u64) -> Result<Split> {
        split(&self.sample_counts(), cfg.train_fraction, cfg.holdout_episodes, seed)
    }

    /// Write every episode plus a manifest into `dir`.
    pub fn save(&self, dir: &Path, split: &Split, split_seed: u64) -> Result<Manifest> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.episodes.len());
        for (i, ep) in self.episodes.iter().enumerate() {
            let file = format!("episode_{:05}.cnav", ep.id);
            ep.save(&dir.join(&file))?;
            entries.push(ManifestEntry {
                id: ep.id,
                file,
                terrain_seed: ep.terrain_seed,
                records: ep.len(),
                samples: self.samples[i].len(),
            });
        }
        let manifest = Manifest {
            terrain: self.terrain_spec.clone(),
            vehicle: self.vehicle.clone(),
            camera: self.camera,
            episodes: entries,
            split_seed,
            test_episodes: split.test_episodes.iter().map(|&e| self.episodes[e].id).collect(),
            train: split.train.clone(),
            val: split.val.clone(),
            test: split.test.clone(),
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }

    /// Load a corpus written by [`Corpus::save`], regenerating terrains from their seeds.
    pub fn load(dir: &Path) -> Result<(Corpus, Split)> {
        let manifest = Manifest::load(&dir.join("manifest.json"))?;
        let episodes: Vec<Episode> = manifest
            .episodes
            .iter()
            .map(|e| Episode::load(&dir.join(&e.file)))
            .collect::<Result<_>>()?;
        let mut seeds: Vec<u64> = Vec::new();
        let mut terrain_of = Vec::with_capacity(episodes.len());
        for ep in &episodes {
            let idx = match seeds.iter().position(|s| *s == ep.terrain_seed) {
                Some(i) => i,
                None => {
                    seeds.push(ep.terrain_seed);
                    seeds.len() - 1
                }
            };
            terrain_of.push(idx);
        }
        let terrains = seeds
            .par_iter()
            .map(|s| generate_terrain(*s, &manifest.terrain).map(Arc::new))
            .collect::<Result<_>>()?;
        let corpus = Corpus::from_parts(
            manifest.terrain.clone(),
            manifest.vehicle.clone(),
            manifest.camera,
            episodes,
            terrains,
            terrain_of,
        )?;
        let test_episodes = manifest
            .test_episodes
            .iter()
            .filter_map(|id| corpus.episodes.iter().position(|e| e.id == *id))
            .collect();
        let split = Split {
            train: manifest.train,
            val: manifest.val,
            test: manifest.test,
            test_episodes,
        };
        Ok((corpus, split))
    }
}
