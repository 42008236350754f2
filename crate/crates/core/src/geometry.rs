//! Rigid-body math for a planar world with height.
//!
//! Frames: the body frame has x forward, y left and z up. A [`Pose`] stores
//! the body origin in world coordinates together with a rotation that maps
//! *world-frame vectors into the body frame*. With that convention the
//! integration step of the rollout reads
//!
//! ```text
//! P' = P + Rᵀ · ΔP        (ΔP expressed in the previous body frame)
//! R' = ΔR · R             (ΔR maps previous-body vectors into the new body frame)
//! ```
//!
//! Euler triples are `(roll, pitch, yaw)` and describe the matrix
//! `Rz(yaw) · Ry(pitch) · Rx(roll)`. A vehicle whose nose points along world
//! heading `ψ` therefore has `rotation = euler_to_matrix(0, 0, ψ)ᵀ`; see
//! [`Pose::from_heading`].
//!
//! The camera frame follows the usual pinhole convention: z along the optical
//! axis, x to the right of the image, y down the image.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Orthonormality tolerance before a rotation is re-orthonormalized.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Points closer than this along the optical axis are treated as not visible.
pub const MIN_VISIBLE_DEPTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    /// World → body.
    pub rotation: Matrix3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Pose { position, rotation }
    }

    /// Pose of a vehicle at `position` whose body axes are obtained by
    /// rotating the world axes by `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_heading(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Pose {
            position,
            rotation: euler_to_matrix([roll, pitch, yaw]).transpose(),
        }
    }

    /// World-frame heading of the body x axis projected on the ground plane.
    pub fn heading(&self) -> f64 {
        let forward = self.rotation.row(0);
        forward[1].atan2(forward[0])
    }

    /// Express a world point in this body frame.
    pub fn world_to_body(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.position)
    }

    /// Express a body point in the world frame.
    pub fn body_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation.transpose() * point
    }

    /// `other` expressed relative to this pose: position in this body frame,
    /// rotation mapping this body frame into `other`'s body frame.
    pub fn relative(&self, other: &Pose) -> Pose {
        Pose {
            position: self.world_to_body(&other.position),
            rotation: other.rotation * self.rotation.transpose(),
        }
    }

    /// 4×4 homogeneous body → world transform.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let rt = self.rotation.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }
}

/// One-step motion increment: translation in the previous body frame and a
/// relative rotation stored as a ZYX Euler triple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dposition: [f64; 3],
    pub dorientation: [f64; 3],
}

impl PoseDelta {
    pub fn new(dposition: [f64; 3], dorientation: [f64; 3]) -> Self {
        PoseDelta {
            dposition,
            dorientation,
        }
    }

    /// Delta that carries `from` onto `to`; `compose(from, delta) == to`.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        let rel = from.relative(to);
        PoseDelta {
            dposition: rel.position.into(),
            dorientation: matrix_to_euler(&rel.rotation),
        }
    }
}

/// Integrate one delta onto a pose.
pub fn compose(prev: &Pose, delta: &PoseDelta) -> Pose {
    let dp = Vector3::from(delta.dposition);
    let position = prev.position + prev.rotation.transpose() * dp;
    let mut rotation = euler_to_matrix(delta.dorientation) * prev.rotation;
    if orthonormality_error(&rotation) > ORTHONORMAL_TOL {
        rotation = orthonormalize(&rotation);
    }
    Pose { position, rotation }
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_to_matrix(rpy: [f64; 3]) -> Matrix3<f64> {
    let (sr, cr) = rpy[0].sin_cos();
    let (sp, cp) = rpy[1].sin_cos();
    let (sy, cy) = rpy[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`euler_to_matrix`]. At gimbal lock (|pitch| = π/2) roll is
/// set to 0 and yaw absorbs the remaining rotation.
pub fn matrix_to_euler(m: &Matrix3<f64>) -> [f64; 3] {
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let cp = (m[(2, 1)].powi(2) + m[(2, 2)].powi(2)).sqrt();
    let (roll, yaw) = if cp < 1e-12 {
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    [wrap_angle(roll), pitch, wrap_angle(yaw)]
}

/// Map an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Largest elementwise deviation of `mᵀm` from identity.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

/// Gram-Schmidt on the rows, keeping the first row's direction.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r0 = m.row(0).transpose().normalize();
    let r1 = m.row(1).transpose();
    let r1 = (r1 - r0 * r0.dot(&r1)).normalize();
    let r2 = r0.cross(&r1);
    Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera center in the body frame, meters.
    pub mount: [f64; 3],
    /// Downward tilt of the optical axis, radians.
    pub pitch_down: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel::from_fov(96, 56, 90f64.to_radians(), [0.3, 0.0, 0.4], 15f64.to_radians())
    }
}

impl CameraModel {
    /// Square-pixel camera with the principal point at the image center.
    pub fn from_fov(
        width: usize,
        height: usize,
        horizontal_fov: f64,
        mount: [f64; 3],
        pitch_down: f64,
    ) -> Self {
        let f = (width as f64 / 2.0) / (horizontal_fov / 2.0).tan();
        CameraModel {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            mount,
            pitch_down,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            return Err("principal point must lie inside the image".into());
        }
        Ok(())
    }

    /// Rows are the camera x, y, z axes expressed in the body frame.
    pub fn body_to_camera(&self) -> Matrix3<f64> {
        let (s, c) = self.pitch_down.sin_cos();
        Matrix3::new(0.0, -1.0, 0.0, -s, 0.0, -c, c, 0.0, -s)
    }

    pub fn body_point_to_camera(&self, p_body: &Vector3<f64>) -> Vector3<f64> {
        self.body_to_camera() * (p_body - Vector3::from(self.mount))
    }

    /// Pinhole map of a camera-frame point (no visibility test).
    pub fn pixel_of(&self, p_cam: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    pub fn in_image(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] < self.width as f64 && px[1] >= 0.0 && px[1] < self.height as f64
    }

    /// Unit-free ray through pixel `(u, v)` in the camera frame (z = 1).
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn camera_center_world(&self, robot: &Pose) -> Vector3<f64> {
        robot.body_to_world(&Vector3::from(self.mount))
    }

    /// Camera → world rotation for the given robot pose.
    pub fn camera_to_world(&self, robot: &Pose) -> Matrix3<f64> {
        robot.rotation.transpose() * self.body_to_camera().transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// Depth along the optical axis.
    pub depth: f64,
    pub visible: bool,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.depth > MIN_VISIBLE_DEPTH
    }
}

/// Project a world point into the image of the camera carried by `robot`.
/// Points behind the camera report a NaN pixel and `visible = false`.
pub fn project_to_pixel(point_world: &Vector3<f64>, robot: &Pose, cam: &CameraModel) -> Projection {
    let p_cam = cam.body_point_to_camera(&robot.world_to_body(point_world));
    if p_cam.z <= MIN_VISIBLE_DEPTH {
        return Projection {
            pixel: [f64::NAN, f64::NAN],
            depth: p_cam.z,
            visible: false,
        };
    }
    let pixel = cam.pixel_of(&p_cam);
    Projection {
        pixel,
        depth: p_cam.z,
        visible: cam.in_image(pixel),
    }
}
