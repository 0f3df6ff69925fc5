#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pfa_core::exemplar::{fit_exemplar_intrinsics, generate_exemplar_set, ExemplarSet};
use pfa_core::geom::axis_angle;
use pfa_core::synthetic::test_object;
use pfa_core::{CameraIntrinsics, MeshModel, RigidPose};

pub const Z_BAR: f64 = 1.2;

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(572.4114, 573.57043, 325.2611, 242.04899, 640, 480).unwrap()
}

pub fn mesh() -> &'static MeshModel {
    static MESH: OnceLock<MeshModel> = OnceLock::new();
    MESH.get_or_init(test_object)
}

/// 200 exemplars of the test object, shared across a test binary.
pub fn small_set() -> &'static ExemplarSet {
    static SET: OnceLock<ExemplarSet> = OnceLock::new();
    SET.get_or_init(|| {
        let k_r = fit_exemplar_intrinsics(mesh(), Z_BAR, 48.0).unwrap();
        generate_exemplar_set(mesh(), 200, Z_BAR, &k_r, 3).unwrap()
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI))
}

/// Random rotation with the origin placed near the optical axis at `depth`.
pub fn random_pose(rng: &mut ChaCha8Rng, depth: f64) -> RigidPose {
    let r = random_rotation(rng);
    let t = Vector3::new(
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        depth,
    );
    RigidPose::new(r, t).unwrap()
}
