//! Four-term trajectory cost and argmin selection.

use crate::geometry::matrix_to_euler;
use crate::model::Rollout;
use crate::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const SUB_COSTS: [&str; 4] = ["goal", "bumpy", "ori", "z"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    /// `(w_goal, w_bumpy, w_ori, w_z)`.
    pub weights: [f64; 4],
    pub success_radius: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            weights: [1.0; 4],
            success_radius: 1.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(format!(
                "cost weights {:?} must be finite, ≥ 0 and not all zero",
                self.weights
            )));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::Config("success radius must be positive".into()));
        }
        Ok(())
    }
}

/// Sub-costs `[goal, bumpy, ori, z]` per rollout point, their sums over the
/// horizon, and the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub points: Vec<[f64; 4]>,
    pub sums: [f64; 4],
    pub total: f64,
}

/// Score one rollout against a goal given in the horizon-start robot frame.
/// Predicted bumpiness below zero is scored as zero.
pub fn evaluate(rollout: &Rollout, cfg: &CostConfig, goal: &Vector3<f64>) -> Result<CostBreakdown> {
    let dist = goal.norm();
    if !(dist > 0.0) {
        return Err(Error::Config("goal coincides with the robot; nothing to plan".into()));
    }
    let mut points = Vec::with_capacity(rollout.steps.len());
    let mut sums = [0.0; 4];
    let mut total = 0.0;
    for step in &rollout.steps {
        let p = step.pose.position;
        let [r, pi, y] = matrix_to_euler(&step.pose.rotation.transpose());
        let j = [
            (goal - p).norm() / dist,
            step.bumpiness.max(0.0),
            r.abs() + pi.abs() + y.abs(),
            p.z.abs(),
        ];
        for k in 0..4 {
            sums[k] += j[k];
            total += cfg.weights[k] * j[k];
        }
        points.push(j);
    }
    Ok(CostBreakdown { points, sums, total })
}

/// Index of the lowest total; the first one wins ties. NaN totals never win.
pub fn select(totals: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in totals.iter().enumerate() {
        if t.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *t < totals[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose, Pose, PoseDelta};
    use crate::model::RolloutStep;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rollout_of(deltas: &[PoseDelta], bump: &[f64]) -> Rollout {
        let mut pose = Pose::identity();
        let steps = deltas
            .iter()
            .zip(bump)
            .map(|(d, b)| {
                pose = compose(&pose, d);
                RolloutStep { delta: *d, pose, bumpiness: *b, center: None }
            })
            .collect();
        Rollout { steps }
    }

    fn random_rollout(rng: &mut ChaCha8Rng) -> Rollout {
        let deltas: Vec<PoseDelta> = (0..10)
            .map(|_| {
                PoseDelta::new(
                    [rng.random_range(-0.1..0.5), rng.random_range(-0.2..0.2), rng.random_range(-0.05..0.05)],
                    [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.3..0.3)],
                )
            })
            .collect();
        let bump: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..3.0)).collect();
        rollout_of(&deltas, &bump)
    }

    #[test]
    fn stationary_rollout() {
        let r = rollout_of(&[PoseDelta::default(); 10], &[0.25; 10]);
        let c = evaluate(&r, &CostConfig::default(), &Vector3::new(10.0, 0.0, 0.0)).unwrap();
        for p in &c.points {
            assert_eq!(*p, [1.0, 0.25, 0.0, 0.0]);
        }
        assert!((c.total - 12.5).abs() < 1e-12);
    }

    #[test]
    fn ending_at_goal() {
        let d = PoseDelta::new([1.0, 0.0, 0.0], [0.0; 3]);
        let r = rollout_of(&[d; 10], &[0.0; 10]);
        let c = evaluate(&r, &CostConfig::default(), &Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert!(c.points[9][0].abs() < 1e-12);
    }

    #[test]
    fn matches_flat_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let r = random_rollout(&mut rng);
            let w = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let g = Vector3::new(rng.random_range(2.0..20.0), rng.random_range(-5.0..5.0), 0.0);
            let cfg = CostConfig { weights: w, ..Default::default() };
            let c = evaluate(&r, &cfg, &g).unwrap();

            let mut oracle = 0.0;
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            for s in &r.steps {
                let p = s.pose.position;
                let m = s.pose.rotation;
                // body-to-start rotation is the transpose; read ZYX angles off it
                let pitch = (-m[(0, 2)]).clamp(-1.0, 1.0).asin();
                let roll = m[(1, 2)].atan2(m[(2, 2)]);
                let yaw = m[(0, 1)].atan2(m[(0, 0)]);
                let dx = g[0] - p[0];
                let dy = g[1] - p[1];
                let dz = g[2] - p[2];
                oracle += w[0] * (dx * dx + dy * dy + dz * dz).sqrt() / gn;
                oracle += w[1] * if s.bumpiness > 0.0 { s.bumpiness } else { 0.0 };
                oracle += w[2] * (roll.abs() + pitch.abs() + yaw.abs());
                oracle += w[3] * p[2].abs();
            }
            assert!((c.total - oracle).abs() < 1e-12, "{} vs {oracle}", c.total);
            let resum: f64 = c.points.iter().map(|j| (0..4).map(|k| w[k] * j[k]).sum::<f64>()).sum();
            assert!((c.total - resum).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_goal_is_an_error() {
        let r = rollout_of(&[PoseDelta::default(); 10], &[0.0; 10]);
        assert!(evaluate(&r, &CostConfig::default(), &Vector3::zeros()).is_err());
    }

    #[test]
    fn select_rules() {
        assert_eq!(select(&[3.0]), Some(0));
        assert_eq!(select(&[2.0, 1.0, 1.0, 5.0]), Some(1));
        assert_eq!(select(&[f64::NAN, 4.0]), Some(1));
        assert_eq!(select(&[]), None);
    }

    #[test]
    fn argmin_invariant_under_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let rollouts: Vec<Rollout> = (0..16).map(|_| random_rollout(&mut rng)).collect();
            let w = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.5];
            let g = Vector3::new(rng.random_range(2.0..20.0), rng.random_range(-5.0..5.0), 0.0);
            let scale = rng.random_range(0.01..100.0);
            let pick = |w: [f64; 4]| {
                let cfg = CostConfig { weights: w, ..Default::default() };
                let t: Vec<f64> = rollouts.iter().map(|r| evaluate(r, &cfg, &g).unwrap().total).collect();
                select(&t).unwrap()
            };
            assert_eq!(pick(w), pick(w.map(|x| x * scale)));
        }
    }

    #[test]
    fn weight_validation() {
        assert!(CostConfig::default().validate().is_ok());
        assert!(CostConfig { weights: [0.0; 4], ..Default::default() }.validate().is_err());
        assert!(CostConfig { weights: [1.0, -1.0, 0.0, 0.0], ..Default::default() }.validate().is_err());
    }
}
