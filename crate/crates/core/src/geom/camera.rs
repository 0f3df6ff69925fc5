use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeomError, Result, RigidPose};

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be finite and positive (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "image size must be non-zero ({width}x{height})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeomError::InvalidIntrinsics(format!(
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

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point. The depth `z` is the scale factor λ of
    /// the homogeneous pinhole equation.
    #[inline]
    pub fn project_camera_point(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(x.z > 0.0) {
            return Err(GeomError::BehindCamera { depth: x.z });
        }
        Ok(Vector2::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        ))
    }

    /// Camera-frame point at depth `depth` along the ray through pixel `u`.
    #[inline]
    pub fn back_project(&self, u: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u.x - self.cx) / self.fx * depth,
            (u.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Whether a continuous pixel coordinate lies inside the image rectangle.
    #[inline]
    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        u.x >= 0.0 && u.y >= 0.0 && u.x < self.width as f64 && u.y < self.height as f64
    }
}

/// Pinhole projection of model point `p` under `pose`.
pub fn project(k: &CameraIntrinsics, pose: &RigidPose, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    k.project_camera_point(&pose.transform(p))
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(k: CameraIntrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = GeomError;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}
