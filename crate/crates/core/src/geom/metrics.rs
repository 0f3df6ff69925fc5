use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{geodesic_distance, GeomError, KdTree3, MeshModel, Result, RigidPose};

/// Meshes up to this many vertices use the exact quadratic ADD-S scan.
pub const ADD_S_BRUTE_FORCE_LIMIT: usize = 5000;

/// Upper threshold of the AUC accuracy curve, in meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.10;

/// Errors of one predicted pose against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// meters
    pub add: f64,
    /// meters
    pub add_s: f64,
    /// degrees
    pub rotation_err: f64,
    /// meters
    pub translation_err: f64,
}

impl PoseErrorReport {
    pub fn compute(gt: &RigidPose, pred: &RigidPose, mesh: &MeshModel) -> Self {
        let add = add_error(gt, pred, mesh);
        // nearest-point distance never exceeds the same-index distance; guard
        // against summation-order noise
        let add_s = add_s_error(gt, pred, mesh).min(add);
        PoseErrorReport {
            add,
            add_s,
            rotation_err: geodesic_distance(gt.rotation(), pred.rotation()),
            translation_err: (gt.translation() - pred.translation()).norm(),
        }
    }
}

fn transformed(pose: &RigidPose, mesh: &MeshModel) -> Vec<Vector3<f64>> {
    mesh.vertices().iter().map(|p| pose.transform(p)).collect()
}

/// Mean distance between corresponding model vertices under the two poses.
pub fn add_error(gt: &RigidPose, pred: &RigidPose, mesh: &MeshModel) -> f64 {
    let sum: f64 = mesh
        .vertices()
        .iter()
        .map(|p| (gt.transform(p) - pred.transform(p)).norm())
        .sum();
    sum / mesh.vertices().len() as f64
}

/// Symmetric-object error: mean over ground-truth-posed vertices of the
/// distance to the nearest prediction-posed vertex.
pub fn add_s_error(gt: &RigidPose, pred: &RigidPose, mesh: &MeshModel) -> f64 {
    if mesh.vertices().len() <= ADD_S_BRUTE_FORCE_LIMIT {
        add_s_error_brute_force(gt, pred, mesh)
    } else {
        add_s_error_indexed(gt, pred, mesh)
    }
}

pub fn add_s_error_brute_force(gt: &RigidPose, pred: &RigidPose, mesh: &MeshModel) -> f64 {
    let a = transformed(gt, mesh);
    let b = transformed(pred, mesh);
    let nearest: Vec<f64> = a
        .par_iter()
        .map(|p| {
            b.iter()
                .map(|q| (q - p).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nearest.iter().sum::<f64>() / a.len() as f64
}

/// k-d tree accelerated ADD-S; same result as the brute-force scan.
pub fn add_s_error_indexed(gt: &RigidPose, pred: &RigidPose, mesh: &MeshModel) -> f64 {
    let a = transformed(gt, mesh);
    let tree = KdTree3::new(&transformed(pred, mesh));
    let nearest: Vec<f64> = a
        .par_iter()
        .map(|p| tree.nearest_distance(p).unwrap_or(f64::INFINITY))
        .collect();
    nearest.iter().sum::<f64>() / a.len() as f64
}

/// Share of `errors` strictly below `fraction × diameter` (ADD-0.1d for 0.1).
pub fn accuracy_threshold(errors: &[f64], mesh: &MeshModel, fraction: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if !(fraction > 0.0) {
        return Err(GeomError::InvalidArgument(format!(
            "threshold fraction must be positive, got {fraction}"
        )));
    }
    accuracy_below(errors, fraction * mesh.diameter())
}

/// Share of `errors` strictly below `limit` (meters).
pub fn accuracy_below(errors: &[f64], limit: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let hits = errors.iter().filter(|&&e| e < limit).count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Normalized area under the accuracy-vs-threshold curve on
/// `[0, max_threshold]`.
///
/// The accuracy curve is the step function `τ ↦ share(e < τ)`, so the area is
/// computed exactly: each error contributes `(max − min(e, max)) / max`.
pub fn auc_metric(errors: &[f64], max_threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if !(max_threshold > 0.0) {
        return Err(GeomError::InvalidArgument(format!(
            "AUC threshold must be positive, got {max_threshold}"
        )));
    }
    let area: f64 = errors
        .iter()
        .map(|&e| {
            let clipped = if e.is_nan() {
                max_threshold
            } else {
                e.clamp(0.0, max_threshold)
            };
            (max_threshold - clipped) / max_threshold
        })
        .sum();
    Ok(area / errors.len() as f64)
}

/// Samples of the accuracy curve at `steps + 1` evenly spaced thresholds
/// from 0 to `max_threshold`, as `(threshold, accuracy)` pairs.
pub fn accuracy_curve(errors: &[f64], max_threshold: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if !(max_threshold > 0.0) || steps == 0 {
        return Err(GeomError::InvalidArgument(
            "accuracy curve needs a positive threshold and at least one step".into(),
        ));
    }
    let n = errors.len() as f64;
    Ok((0..=steps)
        .map(|i| {
            let tau = max_threshold * i as f64 / steps as f64;
            let hits = errors.iter().filter(|&&e| e < tau).count();
            (tau, hits as f64 / n)
        })
        .collect())
}
