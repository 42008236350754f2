//! Candidate action sequences: seeded smoothed random walks plus a warm start.

use crate::sim::Command;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Per-step action limits. `rate` bounds the change between consecutive
/// steps (and between the last executed command and step 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionBounds {
    pub v: [f64; 2],
    pub steer: [f64; 2],
    pub rate: [f64; 2],
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds {
            v: [0.0, 1.5],
            steer: [-0.4, 0.4],
            // steering slews at 2 rad/s over a 0.3 s step
            rate: [0.75, 0.6],
        }
    }
}

impl ActionBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ok(self.v) || !ok(self.steer) {
            return Err(Error::Config(format!("action bounds {:?} / {:?} are not ordered", self.v, self.steer)));
        }
        if self.rate.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config(format!("rate limits {:?} must be ≥ 0", self.rate)));
        }
        Ok(())
    }

    fn range(&self, i: usize) -> [f64; 2] {
        if i == 0 {
            self.v
        } else {
            self.steer
        }
    }

    pub fn contains(&self, a: [f64; 2]) -> bool {
        (0..2).all(|i| {
            let r = self.range(i);
            a[i] >= r[0] && a[i] <= r[1]
        })
    }

    /// Clamp into bounds and within one rate step of `prev`.
    pub fn project(&self, prev: [f64; 2], a: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..2 {
            let r = self.range(i);
            let lo = (prev[i] - self.rate[i]).max(r[0]);
            let hi = (prev[i] + self.rate[i]).min(r[1]);
            out[i] = if lo <= hi { a[i].clamp(lo, hi) } else { a[i].clamp(r[0], r[1]) };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Std-dev of the initial target offset from the walk's start, `(v, steer)`.
    pub spread: [f64; 2],
    /// Per-step std-dev of the target walk.
    pub sigma: [f64; 2],
    pub smoothing: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            spread: [0.6, 0.35],
            sigma: [0.15, 0.08],
            smoothing: 0.7,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spread.iter().chain(&self.sigma).any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("sampler std-devs must be finite and ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} must be in [0, 1)", self.smoothing)));
        }
        Ok(())
    }
}

fn reflect(x: f64, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        return r[0];
    }
    let mut x = x;
    for _ in 0..4 {
        if x > r[1] {
            x = 2.0 * r[1] - x;
        } else if x < r[0] {
            x = 2.0 * r[0] - x;
        } else {
            break;
        }
    }
    x.clamp(r[0], r[1])
}

/// The previous plan advanced by `shift_ticks` simulator ticks, with
/// `step_ticks` ticks per action; the tail repeats the last action.
pub fn shift_plan(plan: &[[f64; 2]], shift_ticks: usize, step_ticks: usize) -> Vec<[f64; 2]> {
    let h = plan.len();
    (0..h)
        .map(|i| plan[((i * step_ticks + shift_ticks) / step_ticks).min(h - 1)])
        .collect()
}

/// `n` sequences of `horizon` actions starting from the last executed
/// command `start`. When `warm` is given it becomes candidate 0 (projected
/// onto the bounds); the rest are random walks.
pub fn sample_actions(
    n: usize,
    horizon: usize,
    start: Command,
    bounds: &ActionBounds,
    cfg: &SamplerConfig,
    warm: Option<&[[f64; 2]]>,
    seed: u64,
) -> Result<Vec<Vec<[f64; 2]>>> {
    if n == 0 || horizon == 0 {
        return Err(Error::Config("need at least one candidate and one step".into()));
    }
    bounds.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = [
        start.v.clamp(bounds.v[0], bounds.v[1]),
        start.steer.clamp(bounds.steer[0], bounds.steer[1]),
    ];
    let mut out = Vec::with_capacity(n);
    if let Some(w) = warm {
        let mut prev = start;
        let seq = (0..horizon)
            .map(|h| {
                let a = w.get(h).or(w.last()).copied().unwrap_or(start);
                prev = bounds.project(prev, a);
                prev
            })
            .collect();
        out.push(seq);
    }
    let gauss = |s: f64| Normal::new(0.0, s).expect("validated std-dev");
    let spread = [gauss(cfg.spread[0]), gauss(cfg.spread[1])];
    let sigma = [gauss(cfg.sigma[0]), gauss(cfg.sigma[1])];
    while out.len() < n {
        let mut target = [0.0; 2];
        for i in 0..2 {
            target[i] = reflect(start[i] + spread[i].sample(&mut rng), bounds.range(i));
        }
        let mut current = start;
        let mut seq = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut next = [0.0; 2];
            for i in 0..2 {
                target[i] = reflect(target[i] + sigma[i].sample(&mut rng), bounds.range(i));
                next[i] = cfg.smoothing * current[i] + (1.0 - cfg.smoothing) * target[i];
            }
            current = bounds.project(current, next);
            seq.push(current);
        }
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_constant_at_start() {
        let cfg = SamplerConfig { spread: [0.0; 2], sigma: [0.0; 2], smoothing: 0.7 };
        let start = Command::new(0.8, -0.1);
        let s = sample_actions(1, 10, start, &ActionBounds::default(), &cfg, None, 3).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].iter().all(|a| *a == [0.8, -0.1]));
    }

    #[test]
    fn bounds_and_rates_hold_over_many_draws() {
        let bounds = ActionBounds { rate: [0.2, 0.1], ..Default::default() };
        let cfg = SamplerConfig { spread: [2.0, 1.0], sigma: [0.8, 0.5], smoothing: 0.0 };
        let start = Command::new(0.3, 0.2);
        let seqs = sample_actions(10_000, 10, start, &bounds, &cfg, None, 17).unwrap();
        for s in &seqs {
            let mut prev = [0.3, 0.2];
            for a in s {
                assert!(bounds.contains(*a), "{a:?}");
                assert!((a[0] - prev[0]).abs() <= 0.2 + 1e-12);
                assert!((a[1] - prev[1]).abs() <= 0.1 + 1e-12);
                prev = *a;
            }
        }
    }

    #[test]
    fn warm_start_is_candidate_zero() {
        let plan: Vec<[f64; 2]> = (0..10).map(|i| [0.1 * i as f64, 0.0]).collect();
        let shifted = shift_plan(&plan, 5, 3);
        assert_eq!(shifted[0], plan[1]);
        assert_eq!(shifted[1], plan[2]);
        assert_eq!(shifted[9], plan[9]);
        let start = Command::new(plan[1][0], 0.0);
        let s = sample_actions(8, 10, start, &ActionBounds::default(), &SamplerConfig::default(), Some(&shifted), 1)
            .unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], shifted);
    }

    #[test]
    fn seeded() {
        let b = ActionBounds::default();
        let c = SamplerConfig::default();
        let a = sample_actions(16, 10, Command::default(), &b, &c, None, 5).unwrap();
        assert_eq!(a, sample_actions(16, 10, Command::default(), &b, &c, None, 5).unwrap());
        assert_ne!(a, sample_actions(16, 10, Command::default(), &b, &c, None, 6).unwrap());
    }

    #[test]
    fn degenerate_bounds_pin_velocity() {
        let b = ActionBounds { v: [0.0, 0.0], ..Default::default() };
        let s = sample_actions(32, 10, Command::new(1.0, 0.0), &b, &SamplerConfig::default(), None, 2).unwrap();
        assert!(s.iter().flatten().all(|a| a[0] == 0.0));
    }

    #[test]
    fn rejects_empty_batch() {
        let b = ActionBounds::default();
        assert!(sample_actions(0, 10, Command::default(), &b, &SamplerConfig::default(), None, 0).is_err());
    }
}
