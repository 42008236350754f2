//! Crop-LSTM dynamics model and its comparison variants.

mod network;
mod train;
#[cfg(test)]
mod network_tests;

pub use network::{Context, LossParts, Network};
pub use train::{evaluate, train, FrameCache, HeadMse, LossRecord, TrainConfig, TrainReport, HEAD_NAMES};

use crate::dataset::{RobotState, HORIZON};
use crate::geometry::{project_to_pixel, CameraModel, Pose, PoseDelta};
use crate::nn::Cell;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Encoder downsampling from pixels to feature cells.
pub const DOWNSAMPLE: usize = 8;
/// Output scaling per head: position m, orientation rad, bumpiness m²/s⁴.
pub const OUTPUT_SCALE: [f64; 3] = [0.3, 0.2, 2.0];
/// Width of one prediction: 3 position, 3 orientation, 1 bumpiness.
pub const OUTPUT_WIDTH: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Crop a window of the encoder feature map at each step.
    CropFeature,
    /// Re-encode the matching pixel window at each step.
    CropImage,
    /// Global features, one LSTM, shared trunk with three heads.
    BadgrOriginal,
    /// Global features, separate pose and bumpiness LSTMs.
    BadgrModified,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::CropFeature,
        Variant::CropImage,
        Variant::BadgrOriginal,
        Variant::BadgrModified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CropFeature => "crop_feature",
            Variant::CropImage => "crop_image",
            Variant::BadgrOriginal => "badgr_original",
            Variant::BadgrModified => "badgr_modified",
        }
    }

    pub fn crops(self) -> bool {
        matches!(self, Variant::CropFeature | Variant::CropImage)
    }

    pub fn lstm_count(self) -> usize {
        if self == Variant::BadgrOriginal {
            1
        } else {
            2
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub horizon: usize,
    /// Crop window side in feature cells; odd.
    pub crop: usize,
    pub conv_channels: [usize; 3],
    pub state_embed: usize,
    pub context_hidden: usize,
    pub action_embed: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub forget_bias: f64,
    /// Loss weights for position, orientation and bumpiness.
    pub alpha: [f64; 3],
    pub camera: CameraModel,
    pub v_max: f64,
    pub steer_max: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::CropFeature,
            horizon: HORIZON,
            crop: 3,
            conv_channels: [8, 16, 32],
            state_embed: 16,
            context_hidden: 64,
            action_embed: 16,
            lstm_hidden: 64,
            head_hidden: 32,
            forget_bias: 1.0,
            alpha: [100.0, 100.0, 1.0],
            camera: CameraModel::default(),
            v_max: 1.5,
            steer_max: 0.4,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig { variant, ..self.clone() }
    }

    /// Feature-map extents `(rows, cols)`.
    pub fn map_dims(&self) -> (usize, usize) {
        (self.camera.height / DOWNSAMPLE, self.camera.width / DOWNSAMPLE)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate().map_err(Error::Config)?;
        let cam = &self.camera;
        if cam.width % DOWNSAMPLE != 0 || cam.height % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "image {}x{} must be a multiple of {DOWNSAMPLE} in both axes",
                cam.width, cam.height
            )));
        }
        let (mh, mw) = self.map_dims();
        if self.crop % 2 == 0 || self.crop > mh.min(mw) {
            return Err(Error::Config(format!(
                "crop size {} must be odd and at most {} for a {mh}x{mw} map",
                self.crop,
                mh.min(mw)
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let widths = [
            self.state_embed,
            self.context_hidden,
            self.action_embed,
            self.lstm_hidden,
            self.head_hidden,
        ];
        if widths.contains(&0) || self.conv_channels.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.alpha.iter().any(|a| *a < 0.0 || !a.is_finite()) {
            return Err(Error::Config(format!("loss weights {:?} must be finite and ≥ 0", self.alpha)));
        }
        if self.v_max <= 0.0 || self.steer_max <= 0.0 {
            return Err(Error::Config("action bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize_state(&self, s: &RobotState) -> [f64; 5] {
        [
            s.speed / self.v_max,
            s.yaw_rate,
            s.bumpiness.max(0.0).ln_1p(),
            s.prev_v / self.v_max,
            s.prev_steer / self.steer_max,
        ]
    }

    pub fn normalize_action(&self, a: [f64; 2]) -> [f64; 2] {
        [2.0 * a[0] / self.v_max - 1.0, a[1] / self.steer_max]
    }
}

/// Camera frame to network input: RGB quantized to 8 bits and centred,
/// depth as a scaled log.
pub fn prepare_image(rgbd: &[f32], out: &mut Vec<f64>) {
    let n = rgbd.len() / 4;
    out.extend(rgbd[..3 * n].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as f64 / 255.0 - 0.5));
    out.extend(rgbd[3 * n..].iter().map(|d| ((*d as f64).max(1e-3).ln() - 1.0) / 1.5));
}

/// Bottom-centre cell whose window still fits in the map.
pub fn bottom_center(map_h: usize, map_w: usize, k: usize) -> Cell {
    let half = k.div_ceil(2);
    Cell::new(map_h - half, (map_w / 2).clamp(half - 1, map_w - half))
}

/// Feature cell to crop around for a robot at `pose`, expressed in the frame
/// the image was taken from. Behind the camera maps to the bottom centre;
/// off-image points clamp to the nearest valid cell.
pub fn crop_center(pose: &Pose, cam: &CameraModel, map_h: usize, map_w: usize, k: usize) -> Cell {
    let proj = project_to_pixel(&pose.position, &Pose::identity(), cam);
    if !proj.in_front() {
        return bottom_center(map_h, map_w, k);
    }
    let half = k.div_ceil(2) as f64;
    let cell = |px: f64, extent: usize| {
        let c = (px / DOWNSAMPLE as f64).floor();
        c.clamp(half - 1.0, extent as f64 - half) as usize
    };
    Cell::new(cell(proj.pixel[1], map_h), cell(proj.pixel[0], map_w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStep {
    pub delta: PoseDelta,
    /// Accumulated pose in the frame of the horizon start.
    pub pose: Pose,
    pub bumpiness: f64,
    /// Cell cropped to produce this step (crop variants only).
    pub center: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn final_pose(&self) -> Pose {
        self.steps.last().map(|s| s.pose).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn start_of_horizon_is_bottom_center() {
        let cam = CameraModel::default();
        assert_eq!(crop_center(&Pose::identity(), &cam, 7, 12, 3), Cell::new(5, 6));
        assert_eq!(bottom_center(7, 12, 3), Cell::new(5, 6));
        assert_eq!(bottom_center(7, 12, 5), Cell::new(4, 6));
    }

    #[test]
    fn optical_axis_hits_principal_cell() {
        let cam = CameraModel::default();
        // 3 m along the optical axis from the camera centre
        let (s, c) = cam.pitch_down.sin_cos();
        let m = cam.mount;
        let p = Vector3::new(m[0] + 3.0 * c, m[1], m[2] - 3.0 * s);
        let pose = Pose::new(p, nalgebra::Matrix3::identity());
        let cell = crop_center(&pose, &cam, 7, 12, 3);
        assert_eq!(cell, Cell::new((cam.cy / 8.0) as usize, (cam.cx / 8.0) as usize));
    }

    #[test]
    fn far_left_clamps_to_left_edge() {
        let cam = CameraModel::default();
        let pose = Pose::new(Vector3::new(3.0, 10.0, 0.0), nalgebra::Matrix3::identity());
        // symbolic: 10 m left at 2.7 m depth projects to u < 0, so col clamps to 1
        let proj = project_to_pixel(&pose.position, &Pose::identity(), &cam);
        assert!(proj.in_front() && proj.pixel[0] < 0.0);
        let cell = crop_center(&pose, &cam, 7, 12, 3);
        assert_eq!(cell.col, 1);
        let row = ((proj.pixel[1] / 8.0).floor() as usize).clamp(1, 5);
        assert_eq!(cell.row, row);
    }

    #[test]
    fn behind_camera_is_bottom_center() {
        let cam = CameraModel::default();
        let pose = Pose::new(Vector3::new(-2.0, 1.0, 0.0), nalgebra::Matrix3::identity());
        assert_eq!(crop_center(&pose, &cam, 7, 12, 3), Cell::new(5, 6));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { crop: 2, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { crop: 9, ..Default::default() }.validate().is_err());
        assert_eq!("badgr_modified".parse::<Variant>().unwrap(), Variant::BadgrModified);
        assert!("nope".parse::<Variant>().is_err());
    }
}
