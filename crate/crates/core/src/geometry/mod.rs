//! SE(3) algebra, the pinhole camera, depth rasters, point clouds and the
//! small geometric solvers shared by the rest of the crate.

mod camera;
mod cloud;
mod pose;

pub use camera::{CameraIntrinsics, RigExtrinsics};
pub use cloud::{
    estimate_normals, estimate_normals_with, smooth_depth, umeyama_align, unproject, unproject_with_normals,
    DepthImage, NormalMap, PointCloud,
};
pub use pose::{
    hat, se3_compose, se3_exp, se3_left_jacobian, se3_left_jacobian_inv, se3_log, so3_left_jacobian,
    so3_left_jacobian_inv, Pose, LOG_DOMAIN_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("outside the domain of the logarithm: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Depth rasters are stored in millimeters; geometry is in meters.
pub const MM_PER_M: f64 = 1000.0;
