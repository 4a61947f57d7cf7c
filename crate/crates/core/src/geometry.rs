//! Rigid transforms, pinhole projection and pose-error metrics.
//!
//! Poses map LiDAR-frame points into the camera frame. Increments are applied
//! by left multiplication, `delta * pose`, and the projection Jacobian is taken
//! with respect to the twist of that left increment.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points at or in front of this depth (meters) cannot be projected.
pub const Z_MIN: f64 = 1e-3;

/// Below this rotation angle `exp` uses Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Below this rotation angle the `log` translation coefficient uses a series.
const LOG_SERIES_ANGLE: f64 = 1e-2;

/// `log` refuses rotations whose angle is within this margin of π.
const NEAR_PI_MARGIN: f64 = 1e-6;

/// Maximum deviation of `RᵀR` from identity tolerated before re-orthonormalizing.
const ORTHO_DRIFT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },
    #[error("point is behind or at the camera plane")]
    OutOfView,
    #[error("matrix is not a proper rotation (orthonormality error {error:e}, det {det})")]
    InvalidRotation { error: f64, det: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Row-major text representation used by configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(repr: PoseRepr) -> Result<Self> {
        let r = repr.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        Pose::new(rotation, Vector3::from(repr.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(pose: Pose) -> Self {
        let r = pose.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

impl Pose {
    /// Builds a pose, checking that `rotation` is orthonormal with det +1
    /// (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let error = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if error > ORTHO_DRIFT || (det - 1.0).abs() > ORTHO_DRIFT {
            return Err(GeometryError::InvalidRotation { error, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pure rotation about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        let phi = if n > 0.0 { axis * (angle / n) } else { Vector3::zeros() };
        se3_exp(&Twist::new(Vector3::zeros(), phi))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        transform_point(self, p)
    }
}

/// Minimal 6-DoF increment: translational part `rho` (m) and axis-angle `phi` (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Stacked as `[rho; phi]`, matching the Jacobian column order.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Exponential map of SE(3) (closed-form Rodrigues).
pub fn se3_exp(xi: &Twist) -> Pose {
    let phi = xi.phi;
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let hat = phi.cross_matrix();
    let hat_sq = hat * hat;

    // R = I + a·Φ + b·Φ², V = I + b·Φ + c·Φ²
    let (a, b, c) = if theta < SMALL_ANGLE {
        (
            1.0 - theta_sq / 6.0,
            0.5 - theta_sq / 24.0,
            1.0 / 6.0 - theta_sq / 120.0,
        )
    } else {
        // 1 − cos θ = 2 sin²(θ/2) avoids cancellation at small angles.
        let s = theta.sin();
        let half_sin = (0.5 * theta).sin();
        (
            s / theta,
            2.0 * half_sin * half_sin / theta_sq,
            (theta - s) / (theta_sq * theta),
        )
    };
    let rotation = Matrix3::identity() + hat * a + hat_sq * b;
    let v = Matrix3::identity() + hat * b + hat_sq * c;
    Pose {
        rotation,
        translation: v * xi.rho,
    }
}

/// Rotation vector of an SO(3) matrix. Fails near π where the axis is ambiguous.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin_theta = w.norm();
    let cos_theta = 0.5 * (r.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(GeometryError::NearPiRotation { angle: theta });
    }
    let scale = if theta < SMALL_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / sin_theta
    };
    Ok(w * scale)
}

/// Logarithm of SE(3); inverse of [`se3_exp`] for rotation angles below π − 1e-6.
pub fn se3_log(pose: &Pose) -> Result<Twist> {
    let phi = so3_log(&pose.rotation)?;
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let hat = phi.cross_matrix();
    let coeff = if theta < LOG_SERIES_ANGLE {
        1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / theta_sq
    };
    let v_inv = Matrix3::identity() - hat * 0.5 + hat * hat * coeff;
    Ok(Twist {
        rho: v_inv * pose.translation,
        phi,
    })
}

/// `a * b`: applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    let mut rotation = a.rotation * b.rotation;
    if orthonormality_error(&rotation) > ORTHO_DRIFT {
        rotation = orthonormalize(&rotation);
    }
    Pose {
        rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation * p + pose.translation
}

/// Continuous image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn offset(&self, f: &Vector2<f64>) -> Pixel {
        Pixel::new(self.u + f.x, self.v + f.y)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn is_visible(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.u < self.width as f64 && px.v >= 0.0 && px.v < self.height as f64
    }
}

/// Projects a camera-frame point. Fails with `OutOfView` when `z <= Z_MIN`.
pub fn project(k: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Result<Pixel> {
    if p_cam.z.partial_cmp(&Z_MIN) != Some(std::cmp::Ordering::Greater) {
        return Err(GeometryError::OutOfView);
    }
    Ok(Pixel::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Derivative of `project(k, exp(ξ)·pose·p)` with respect to `ξ = [rho; phi]` at zero.
pub fn project_jacobian(k: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<Matrix2x6<f64>> {
    let pc = transform_point(pose, p);
    if pc.z.partial_cmp(&Z_MIN) != Some(std::cmp::Ordering::Greater) {
        return Err(GeometryError::OutOfView);
    }
    let inv_z = 1.0 / pc.z;
    let d_proj = Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * pc.x * inv_z * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * pc.y * inv_z * inv_z,
    );
    // d(exp(ξ)·pc)/dξ = [I | -[pc]x]
    let d_rot = d_proj * (-pc.cross_matrix());
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_proj);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_rot);
    Ok(j)
}

/// Geodesic angle of a rotation matrix in radians, in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        * 0.5;
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Translation error in meters and rotation error in degrees between two poses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseError {
    pub translation: f64,
    pub rotation_deg: f64,
}

/// `‖t_a − t_b‖` and the geodesic angle of `R_a·R_bᵀ`.
pub fn pose_error(a: &Pose, b: &Pose) -> PoseError {
    let relative = a.rotation * b.rotation.transpose();
    PoseError {
        translation: (a.translation - b.translation).norm(),
        rotation_deg: rotation_angle(&relative).to_degrees(),
    }
}
