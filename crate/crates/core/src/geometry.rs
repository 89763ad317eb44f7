//! Rigid-body pose algebra in the vehicle frame convention.
//!
//! Coordinates are X right, Y forward, Z up. A [`Pose`] maps body coordinates
//! into its reference frame: `p_ref = R * p_body + t`. A positive yaw turns the
//! vehicle to the left (counter-clockwise seen from above), so right turns have
//! negative yaw.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Maximum tolerated `‖RᵀR − I‖_max` before a rotation is re-projected.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Number of chained compositions after which [`PoseChain`] re-projects the
/// accumulated rotation regardless of its residual.
pub const RENORMALIZE_INTERVAL: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (residual {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation is a reflection or degenerate (det {0})")]
    NotProperRotation(f64),
    #[error("pose contains non-finite values")]
    NonFinite,
}

/// A rigid transform: proper rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix, rejecting anything that is not a
    /// proper rotation within [`ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let residual = orthonormality_residual(&rotation);
        if residual > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal(residual));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotProperRotation(det));
        }
        Ok(Self { rotation, translation })
    }

    /// Projects an arbitrary near-rotation onto SO(3) (polar decomposition)
    /// and builds a pose from it.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let rotation = project_to_rotation(&rotation).ok_or(GeometryError::NotProperRotation(0.0))?;
        Ok(Self { rotation, translation })
    }

    /// Rotation by `yaw` about +Z (counter-clockwise, i.e. a left turn).
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let rotation = q.to_rotation_matrix().into_inner();
        Self { rotation, translation }.normalized_if_drifted()
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Heading about +Z, positive to the left. Only meaningful for planar poses.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
        .normalized_if_drifted()
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn orthonormality_residual(&self) -> f64 {
        orthonormality_residual(&self.rotation)
    }

    /// Re-projects the rotation onto SO(3).
    pub fn renormalized(&self) -> Pose {
        match project_to_rotation(&self.rotation) {
            Some(rotation) => Pose {
                rotation,
                translation: self.translation,
            },
            None => *self,
        }
    }

    fn normalized_if_drifted(self) -> Pose {
        if orthonormality_residual(&self.rotation) > ORTHONORMAL_TOL {
            self.renormalized()
        } else {
            self
        }
    }

    /// Largest absolute entry-wise difference of rotations and translations.
    pub fn max_abs_diff(&self, other: &Pose) -> (f64, f64) {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        (dr, dt)
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        let delta = self.rotation.transpose() * other.rotation;
        let c = ((delta.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Unit heading vector in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction3(Vector3<f64>);

impl Direction3 {
    /// Normalizes `v`; `None` for zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(Self(v / n))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Pose of `current` expressed in the body frame of `previous`, i.e.
/// `previous⁻¹ ∘ current`.
///
/// Both inputs share a reference frame (usually the first pose of a
/// trajectory). The rotation equals `R_cur · R_prevᵀ` for planar motion and the
/// translation is the displacement seen from the previous vehicle pose, so
/// `previous.compose(&relative_pose(current, previous)) == current`.
pub fn relative_pose(current: &Pose, previous: &Pose) -> Pose {
    previous.inverse().compose(current)
}

/// Forward (+Y) axis of the relative pose's body, expressed in the previous
/// frame.
pub fn forward_direction(rel: &Pose) -> Direction3 {
    // Columns of a rotation are unit length; the normalization only trims rounding.
    let v = rel.rotation.column(1).into_owned();
    Direction3::new(v).unwrap_or(Direction3(Vector3::y()))
}

pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn orthonormality_residual(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Closest proper rotation to `m` in the Frobenius sense.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Some(u * fix * v_t)
}

/// Accumulates a pose by repeated right-composition, re-projecting the
/// rotation every [`RENORMALIZE_INTERVAL`] steps.
#[derive(Debug, Clone)]
pub struct PoseChain {
    current: Pose,
    since_normalize: usize,
}

impl PoseChain {
    pub fn new(start: Pose) -> Self {
        Self {
            current: start,
            since_normalize: 0,
        }
    }

    pub fn push(&mut self, increment: &Pose) -> Pose {
        self.current = self.current.compose(increment);
        self.since_normalize += 1;
        if self.since_normalize >= RENORMALIZE_INTERVAL {
            self.current = self.current.renormalized();
            self.since_normalize = 0;
        }
        self.current
    }

    pub fn current(&self) -> &Pose {
        &self.current
    }
}
