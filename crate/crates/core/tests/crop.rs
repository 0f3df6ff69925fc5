mod common;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use common::{camera, mesh, random_pose, rng};
use pfa_core::crop::{
    align_intrinsics, apply_homogeneous, compute_crop, image_to_crop, lift_to_image, CropTransform,
};
use pfa_core::geom::project;
use pfa_core::CameraIntrinsics;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn padded_crop_contains_every_vertex(seed in any::<u64>(), pad in 1.0f64..2.0, size in 64u32..512) {
        let mut r = rng(seed);
        let depth = r.random_range(0.6..2.0);
        let pose = random_pose(&mut r, depth);
        let k = camera();
        let m = compute_crop(&pose, &k, mesh(), size, pad).unwrap();
        for p in mesh().vertices() {
            let c = m.apply(&project(&k, &pose, p).unwrap());
            prop_assert!(c.x >= -1e-9 && c.y >= -1e-9 && c.x <= size as f64 + 1e-9 && c.y <= size as f64 + 1e-9);
        }
    }

    #[test]
    fn crops_are_pure_similarities(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pose = random_pose(&mut r, 1.0);
        let m = compute_crop(&pose, &camera(), mesh(), 256, 1.2).unwrap();
        let a = m.matrix();
        prop_assert!(a[(0, 0)] > 0.0);
        prop_assert_eq!(a[(0, 0)], a[(1, 1)]);
        prop_assert_eq!(a[(0, 1)], 0.0);
        prop_assert_eq!(a[(1, 0)], 0.0);
        prop_assert_eq!(a.fixed_view::<1, 3>(2, 0).into_owned(), nalgebra::RowVector3::new(0.0, 0.0, 1.0));
        prop_assert!((m.inverse_matrix() * a - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn lift_inverts_image_to_crop(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = r.random_range(200.0..900.0);
        let k_r = CameraIntrinsics::new(f, f, 128.0, 128.0, 256, 256).unwrap();
        let k_t = camera();
        let m = CropTransform::new(
            r.random_range(0.1..4.0),
            Vector2::new(r.random_range(-500.0..500.0), r.random_range(-500.0..500.0)),
            256,
        ).unwrap();
        let u = Vector2::new(r.random_range(0.0..640.0), r.random_range(0.0..480.0));
        let crop = image_to_crop(&u, &m, &k_r, &k_t);
        prop_assert!((lift_to_image(&crop, &m, &k_r, &k_t) - u).amax() < 1e-9);
        // independent oracle: the explicit matrix chain
        let chain = m.matrix() * k_r.matrix() * k_t.matrix().try_inverse().unwrap();
        prop_assert!((apply_homogeneous(&chain, &u) - crop).amax() < 1e-9);
        let back = chain.try_inverse().unwrap();
        prop_assert!((apply_homogeneous(&back, &crop) - u).amax() < 1e-9);
    }

    #[test]
    fn alignment_round_trips(x in 0.0f64..640.0, y in 0.0f64..480.0, f in 100.0f64..2000.0) {
        let k_r = CameraIntrinsics::new(f, f * 1.01, 128.0, 120.0, 256, 256).unwrap();
        let k_t = camera();
        let u = Vector2::new(x, y);
        let back = align_intrinsics(&align_intrinsics(&u, &k_r, &k_t), &k_t, &k_r);
        prop_assert!((back - u).amax() < 1e-12);
    }
}

#[test]
fn crop_pixels_of_model_points_do_not_depend_on_focal_length() {
    let mut r = rng(3);
    let rotation = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.9).into_inner();
    let pose = pfa_core::RigidPose::new(rotation, Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let k1 = CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
    let k2 = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap();
    let m1 = compute_crop(&pose, &k1, mesh(), 256, 1.2).unwrap();
    let m2 = compute_crop(&pose, &k2, mesh(), 256, 1.2).unwrap();
    assert!((m1.scale() / m2.scale() - 2.0).abs() < 1e-9);
    for _ in 0..100 {
        let p = Vector3::from_fn(|_, _| r.random_range(-0.05..0.05));
        let c1 = m1.apply(&project(&k1, &pose, &p).unwrap());
        let c2 = m2.apply(&project(&k2, &pose, &p).unwrap());
        assert!((c1 - c2).amax() < 1e-6);
    }
}
