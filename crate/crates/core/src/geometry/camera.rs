use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at integer
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the given horizontal field of view (degrees) and the
    /// principal point at the image center.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx > 0.0
            && self.cy > 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    /// Intrinsics of the same camera sampled at `factor` times the
    /// resolution (pixel-center convention preserved).
    pub fn scaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: (self.cx + 0.5) * s - 0.5,
            cy: (self.cy + 0.5) * s - 0.5,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    /// Perspective projection; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Point at camera depth `z` (meters) along the ray through `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Transform from the color camera frame to the depth camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigExtrinsics {
    pub color_to_depth: Pose,
}

impl RigExtrinsics {
    pub fn identity() -> Self {
        Self {
            color_to_depth: Pose::identity(),
        }
    }
}
