//! Crop similarities mapping object regions to a common square frame, and the
//! intrinsics alignment between the target camera and the exemplar camera.
//!
//! A target pixel `u` maps into the target crop as `M_t · K_r · K_t⁻¹ · u`;
//! an exemplar pixel maps into its crop as `M_r · u`.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, MeshModel, RigidPose};

/// Default margin factor around the projected bounding box.
pub const DEFAULT_PAD: f64 = 1.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CropError {
    #[error("mesh vertex behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("projected mesh collapses to a point")]
    Degenerate,
    #[error("invalid crop parameter: {0}")]
    InvalidParameter(String),
}

/// Axis-aligned 2D similarity `u ↦ s·u + o` onto an `out_size²` crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    scale: f64,
    offset: Vector2<f64>,
    out_size: u32,
}

impl CropTransform {
    pub fn new(scale: f64, offset: Vector2<f64>, out_size: u32) -> Result<Self, CropError> {
        if !(scale > 0.0) || !scale.is_finite() || !offset.iter().all(|v| v.is_finite()) {
            return Err(CropError::InvalidParameter(format!(
                "similarity needs a finite positive scale (got {scale}) and finite offset"
            )));
        }
        if out_size == 0 {
            return Err(CropError::InvalidParameter(
                "crop size must be positive".into(),
            ));
        }
        Ok(Self {
            scale,
            offset,
            out_size,
        })
    }

    pub fn identity(out_size: u32) -> Self {
        Self {
            scale: 1.0,
            offset: Vector2::zeros(),
            out_size,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> Vector2<f64> {
        self.offset
    }

    pub fn out_size(&self) -> u32 {
        self.out_size
    }

    /// Homogeneous 3×3 form.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.scale,
            0.0,
            self.offset.x,
            0.0,
            self.scale,
            self.offset.y,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let s = 1.0 / self.scale;
        Matrix3::new(
            s,
            0.0,
            -self.offset.x * s,
            0.0,
            s,
            -self.offset.y * s,
            0.0,
            0.0,
            1.0,
        )
    }

    #[inline]
    pub fn apply(&self, u: &Vector2<f64>) -> Vector2<f64> {
        u * self.scale + self.offset
    }

    #[inline]
    pub fn apply_inverse(&self, u: &Vector2<f64>) -> Vector2<f64> {
        (u - self.offset) / self.scale
    }

    /// Whether a continuous crop coordinate lies in `[0, out_size)²`.
    #[inline]
    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        let n = self.out_size as f64;
        u.x >= 0.0 && u.y >= 0.0 && u.x < n && u.y < n
    }
}

/// Square crop around the projected mesh: the bounding box of the projected
/// vertices, enlarged to a square of side `pad × max(w, h)` about its
/// center, is mapped onto `[0, out_size)²`.
pub fn compute_crop(
    pose: &RigidPose,
    k: &CameraIntrinsics,
    mesh: &MeshModel,
    out_size: u32,
    pad: f64,
) -> Result<CropTransform, CropError> {
    if !(pad > 0.0) || !pad.is_finite() {
        return Err(CropError::InvalidParameter(format!(
            "pad must be positive, got {pad}"
        )));
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in mesh.vertices() {
        let x = pose.transform(p);
        let u = k
            .project_camera_point(&x)
            .map_err(|_| CropError::BehindCamera(x.z))?;
        lo = lo.inf(&u);
        hi = hi.sup(&u);
    }
    let extent = hi - lo;
    let side = pad * extent.x.max(extent.y);
    if !(side > 0.0) || !side.is_finite() {
        return Err(CropError::Degenerate);
    }
    let center = (lo + hi) * 0.5;
    let scale = out_size as f64 / side;
    let corner = center - Vector2::repeat(side * 0.5);
    CropTransform::new(scale, -corner * scale, out_size)
}

/// Applies `K_r · K_t⁻¹` to a target-image pixel.
#[inline]
pub fn align_intrinsics(
    u: &Vector2<f64>,
    k_r: &CameraIntrinsics,
    k_t: &CameraIntrinsics,
) -> Vector2<f64> {
    Vector2::new(
        k_r.fx() * (u.x - k_t.cx()) / k_t.fx() + k_r.cx(),
        k_r.fy() * (u.y - k_t.cy()) / k_t.fy() + k_r.cy(),
    )
}

/// Target-image pixel into the target crop: `M · K_r · K_t⁻¹ · u`.
#[inline]
pub fn image_to_crop(
    u: &Vector2<f64>,
    m: &CropTransform,
    k_r: &CameraIntrinsics,
    k_t: &CameraIntrinsics,
) -> Vector2<f64> {
    m.apply(&align_intrinsics(u, k_r, k_t))
}

/// Crop pixel back into the original target image:
/// `(K_r · K_t⁻¹)⁻¹ · M⁻¹ · u_crop`.
#[inline]
pub fn lift_to_image(
    u_crop: &Vector2<f64>,
    m: &CropTransform,
    k_r: &CameraIntrinsics,
    k_t: &CameraIntrinsics,
) -> Vector2<f64> {
    align_intrinsics(&m.apply_inverse(u_crop), k_t, k_r)
}

/// Homogeneous application of an arbitrary 3×3 matrix, for oracles.
pub fn apply_homogeneous(m: &Matrix3<f64>, u: &Vector2<f64>) -> Vector2<f64> {
    let h = m * Vector3::new(u.x, u.y, 1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{box_mesh, test_object};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k_t() -> CameraIntrinsics {
        CameraIntrinsics::new(572.4, 573.6, 325.3, 242.0, 640, 480).unwrap()
    }

    fn k_r() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 128.0, 128.0, 256, 256).unwrap()
    }

    #[test]
    fn hundred_pixel_box_with_default_pad() {
        // a 0.2 m flat face at depth 1 m with f = 500 spans exactly 100 px
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let plate = crate::synthetic::square_plate(0.1);
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let m = compute_crop(&pose, &k, &plate, 256, 1.2).unwrap();
        assert!((m.scale() - 256.0 / 120.0).abs() < 1e-12);
        // bbox center maps to crop center
        let c = m.apply(&Vector2::new(320.0, 240.0));
        assert!((c - Vector2::new(128.0, 128.0)).norm() < 1e-9);
    }

    #[test]
    fn unit_pad_maps_square_bbox_to_crop_corners() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let plate = crate::synthetic::square_plate(0.1);
        let pose = RigidPose::from_translation(Vector3::new(0.03, -0.02, 1.0));
        let m = compute_crop(&pose, &k, &plate, 256, 1.0).unwrap();
        let lo = k
            .project_camera_point(&Vector3::new(-0.07, -0.12, 1.0))
            .unwrap();
        let hi = k
            .project_camera_point(&Vector3::new(0.13, 0.08, 1.0))
            .unwrap();
        assert!((m.apply(&lo) - Vector2::new(0.0, 0.0)).norm() < 1e-9);
        assert!((m.apply(&hi) - Vector2::new(256.0, 256.0)).norm() < 1e-9);
    }

    #[test]
    fn transform_inverse_round_trip() {
        let m = CropTransform::new(2.37, Vector2::new(-310.5, 44.25), 256).unwrap();
        assert!((m.matrix() * m.inverse_matrix() - Matrix3::identity()).amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let u = Vector2::new(
                rng.random_range(-100.0..800.0),
                rng.random_range(-100.0..600.0),
            );
            assert!((m.apply_inverse(&m.apply(&u)) - u).norm() < 1e-9);
        }
    }

    #[test]
    fn behind_camera_and_bad_pad() {
        let mesh = test_object();
        let behind = RigidPose::from_translation(Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            compute_crop(&behind, &k_t(), &mesh, 256, 1.2),
            Err(CropError::BehindCamera(_))
        ));
        assert!(compute_crop(&RigidPose::identity(), &k_t(), &mesh, 256, 0.0).is_err());
        assert!(compute_crop(&RigidPose::identity(), &k_t(), &mesh, 256, f64::NAN).is_err());
    }

    #[test]
    fn all_vertices_inside_crop() {
        let mesh = test_object();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for r in crate::geom::sample_rotations(50, 1) {
            let t = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.6..1.2),
            );
            let pose = RigidPose::new(r, t).unwrap();
            let m = compute_crop(&pose, &k_t(), &mesh, 256, rng.random_range(1.0..2.0)).unwrap();
            for p in mesh.vertices() {
                let u = m.apply(&crate::geom::project(&k_t(), &pose, p).unwrap());
                assert!(u.x >= -1e-9 && u.y >= -1e-9 && u.x <= 256.0 + 1e-9 && u.y <= 256.0 + 1e-9);
            }
        }
    }

    #[test]
    fn crop_composition_is_focal_invariant() {
        let mesh = box_mesh(Vector3::zeros(), Vector3::new(0.05, 0.03, 0.04), 1);
        let pose = RigidPose::new(
            crate::geom::sample_rotations(1, 5)[0],
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let k1 = CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
        let k2 = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap();
        let m1 = compute_crop(&pose, &k1, &mesh, 256, 1.2).unwrap();
        let m2 = compute_crop(&pose, &k2, &mesh, 256, 1.2).unwrap();
        assert!((m1.scale() - m2.scale()).abs() > 1e-3);
        for p in mesh.vertices() {
            let a = m1.apply(&crate::geom::project(&k1, &pose, p).unwrap());
            let b = m2.apply(&crate::geom::project(&k2, &pose, p).unwrap());
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn alignment_cases() {
        let u = Vector2::new(123.4, 56.7);
        assert!((align_intrinsics(&u, &k_t(), &k_t()) - u).norm() < 1e-12);
        let kr = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 640, 480).unwrap();
        let kt = CameraIntrinsics::new(200.0, 200.0, 0.0, 0.0, 640, 480).unwrap();
        assert!((align_intrinsics(&u, &kr, &kt) - u * 0.5).norm() < 1e-12);
        let there = align_intrinsics(&u, &k_r(), &k_t());
        assert!((align_intrinsics(&there, &k_t(), &k_r()) - u).norm() < 1e-12);
    }

    #[test]
    fn lift_matches_matrix_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let m = CropTransform::new(
                rng.random_range(0.2..5.0),
                Vector2::new(
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                ),
                256,
            )
            .unwrap();
            let u = Vector2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0));
            let forward = m.matrix() * k_r().matrix() * k_t().inverse_matrix();
            let x = forward.lu().solve(&Vector3::new(u.x, u.y, 1.0)).unwrap();
            let oracle = Vector2::new(x.x / x.z, x.y / x.z);
            let lifted = lift_to_image(&u, &m, &k_r(), &k_t());
            assert!((lifted - oracle).norm() < 1e-9);
            assert!((image_to_crop(&lifted, &m, &k_r(), &k_t()) - u).norm() < 1e-9);
        }
        let id = CropTransform::identity(256);
        let u = Vector2::new(10.5, 20.25);
        assert_eq!(lift_to_image(&u, &id, &k_t(), &k_t()), u);
        assert_eq!(apply_homogeneous(&Matrix3::identity(), &u), u);
    }
}
