//! Rigid-body pose algebra, pinhole projection, rotation sampling and the
//! pose-error metrics used to score refinement runs.
//!
//! Conventions used throughout the crate:
//!
//! - distances are in meters, angles in degrees;
//! - image coordinates are continuous with the origin at the top-left corner
//!   of the top-left pixel, so the center of pixel `(i, j)` is `(i + 0.5, j + 0.5)`;
//! - a pose maps model-frame points into the camera frame, `X = R·p + t`.

mod camera;
mod kdtree;
mod mesh;
mod metrics;
mod pose;
mod rotation;

pub use camera::{project, CameraIntrinsics};
pub use kdtree::KdTree3;
pub use mesh::{MeshError, MeshHash, MeshModel};
pub use metrics::{
    accuracy_below, accuracy_curve, accuracy_threshold, add_error, add_s_error,
    add_s_error_brute_force, add_s_error_indexed, auc_metric, PoseErrorReport,
    ADD_S_BRUTE_FORCE_LIMIT, AUC_MAX_THRESHOLD,
};
pub use pose::RigidPose;
pub(crate) use rotation::random_rotation;
pub use rotation::{
    axis_angle, exp_so3, geodesic_distance, nearest_rotation, pose_jitter, rotation_log,
    sample_rotations, skew,
};

use thiserror::Error;

/// Errors raised by the geometry layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point lies behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("rotation is not orthonormal with determinant +1 (orthogonality residual {residual:e}, det {det})")]
    InvalidRotation { residual: f64, det: f64 },
    #[error("non-finite pose component")]
    NonFinitePose,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("metric undefined on empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
