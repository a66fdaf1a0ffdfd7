//! Building-scale RGB-D reconstruction.
//!
//! The pipeline warps color into the raw depth frame, tracks the depth camera
//! with point-to-plane ICP against a keyframe map, closes loops with a
//! bag-of-words index over SIFT-like features, optimizes single- and
//! multi-session pose graphs, and fuses depth into a block-hashed TSDF. The
//! [`synthetic`] module renders analytic scenes that serve as ground truth
//! for the whole chain.

pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod loop_closure;
pub mod odometry;
pub mod pipeline;
pub mod pose_graph;
pub mod spatial;
pub mod surface;
pub mod synthetic;

pub use geometry::{CameraIntrinsics, DepthImage, PointCloud, Pose, RigExtrinsics};
