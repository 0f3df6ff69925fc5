use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{rotation::nearest_rotation, GeomError, Result};

const ROTATION_TOLERANCE: f64 = 1e-9;

/// A rigid transform from the model frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeomError::NonFinitePose);
        }
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if residual >= ROTATION_TOLERANCE || (det - 1.0).abs() >= ROTATION_TOLERANCE {
            return Err(GeomError::InvalidRotation { residual, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose from an approximately orthonormal matrix by projecting it
    /// onto the nearest rotation first.
    pub fn from_approximate(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinitePose);
        }
        Self::new(nearest_rotation(rotation), translation)
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

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `R·p + t`
    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: nearest_rotation(&(self.rotation * other.rotation)),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major rotation followed by translation, the layout used by the
    /// on-disk formats.
    pub fn to_array(&self) -> ([f64; 9], [f64; 3]) {
        let r = &self.rotation;
        (
            [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            [self.translation.x, self.translation.y, self.translation.z],
        )
    }

    pub fn from_array(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Self> {
        Self::new(
            Matrix3::from_row_slice(rotation),
            Vector3::from_column_slice(translation),
        )
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidPose> for PoseRepr {
    fn from(pose: RigidPose) -> Self {
        let (rotation, translation) = pose.to_array();
        PoseRepr {
            rotation,
            translation,
        }
    }
}

impl TryFrom<PoseRepr> for RigidPose {
    type Error = GeomError;

    fn try_from(repr: PoseRepr) -> Result<Self> {
        RigidPose::from_array(&repr.rotation, &repr.translation)
    }
}
