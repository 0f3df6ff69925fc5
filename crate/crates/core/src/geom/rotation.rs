use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CameraIntrinsics, MeshModel, Result, RigidPose};

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation about `axis` (any non-zero length) by `angle` radians.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Matrix3::identity();
    }
    let k = skew(&(axis / n));
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Exponential map of a rotation vector.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    if theta < 1e-8 {
        let k = skew(w);
        return Matrix3::identity() + k + k * k * 0.5;
    }
    axis_angle(w, theta)
}

/// Rotation vector (axis scaled by angle in radians) of `r`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_matrix(r).scaled_axis()
}

/// Closest proper rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        r = u * d * vt;
    }
    r
}

/// Angle of the relative rotation `Raᵀ·Rb`, in degrees.
///
/// Evaluated as `atan2(sin, cos)` of the relative rotation so that tiny and
/// near-180° angles keep full precision; equal to `acos((tr − 1)/2)`.
pub fn geodesic_distance(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let rel = ra.transpose() * rb;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm();
    sin.atan2(cos).to_degrees().clamp(0.0, 180.0)
}

/// Haar-uniform rotations from normalized 4D Gaussian samples.
pub fn sample_rotations(n: usize, seed: u64) -> Vec<Matrix3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_rotation(&mut rng)).collect()
}

pub(crate) fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

pub(crate) fn random_unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Simulated initialization: perturbs `pose` by a random rotation of at most
/// `max_rot` degrees about the mesh centroid, then shifts it so the projected
/// centroid moves by at most `max_reproj` pixels at unchanged depth.
pub fn pose_jitter(
    pose: &RigidPose,
    k: &CameraIntrinsics,
    mesh: &MeshModel,
    max_rot: f64,
    max_reproj: f64,
    seed: u64,
) -> Result<RigidPose> {
    if !(max_rot >= 0.0) || !(max_reproj >= 0.0) {
        return Err(super::GeomError::InvalidArgument(format!(
            "jitter bounds must be non-negative (rotation {max_rot}, reprojection {max_reproj})"
        )));
    }
    if max_rot == 0.0 && max_reproj == 0.0 {
        return Ok(*pose);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = random_unit_vector(&mut rng);
    let angle = max_rot.to_radians() * rng.random::<f64>();
    let radius = max_reproj * rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();

    let delta = axis_angle(&axis, angle);
    let center = pose.transform(&mesh.centroid());
    let rotation = delta * pose.rotation();
    // keep the centroid fixed in the camera frame while rotating
    let translation = center - rotation * mesh.centroid();

    let pixel = k.project_camera_point(&center)?;
    let moved = pixel + Vector2::new(radius * phi.cos(), radius * phi.sin());
    let shifted = k.back_project(&moved, center.z);
    RigidPose::from_approximate(&rotation, translation + (shifted - center))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(r: &Matrix3<f64>) -> bool {
        (r.transpose() * r - Matrix3::identity()).amax() < 1e-9
            && (r.determinant() - 1.0).abs() < 1e-9
    }

    #[test]
    fn geodesic_identity_and_quarter_turn() {
        let i = Matrix3::identity();
        assert_eq!(geodesic_distance(&i, &i), 0.0);
        let rz = axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        assert!((geodesic_distance(&i, &rz) - 90.0).abs() < 1e-12);
        let flip = axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert!((geodesic_distance(&i, &flip) - 180.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_of_constructed_twenty_degrees() {
        let rotations = sample_rotations(50, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for r in rotations {
            let axis = random_unit_vector(&mut rng);
            let rb = r * axis_angle(&axis, 20f64.to_radians());
            assert!((geodesic_distance(&r, &rb) - 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_sample_is_valid_and_sampling_is_deterministic() {
        let r = sample_rotations(1, 12345);
        assert_eq!(r.len(), 1);
        assert!(orthonormal(&r[0]));
        assert_eq!(sample_rotations(64, 7), sample_rotations(64, 7));
        assert_ne!(sample_rotations(4, 7), sample_rotations(4, 8));
    }

    #[test]
    fn log_inverts_axis_angle() {
        let w = Vector3::new(0.2, -0.5, 0.4);
        let r = exp_so3(&w);
        assert!((rotation_log(&r) - w).norm() < 1e-12);
        assert!((exp_so3(&Vector3::new(1e-10, 0.0, 0.0)) - Matrix3::identity()).amax() < 1e-9);
    }

    #[test]
    fn nearest_rotation_repairs_drift() {
        let r = axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.4);
        let noisy = r + Matrix3::repeat(1e-7);
        let fixed = nearest_rotation(&noisy);
        assert!(orthonormal(&fixed));
        assert!((fixed - r).amax() < 1e-6);
    }
}
