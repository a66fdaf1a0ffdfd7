//! Surface reconstruction: k-means partitioning of the global cloud,
//! per-segment block-hashed TSDF fusion, marching cubes and mesh merging.

mod kmeans;
pub mod marching_cubes;
mod tsdf;

pub use kmeans::{kmeans_partition, Segment};
pub use tsdf::{Block, TsdfConfig, TsdfVolume, BLOCK};

use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthImage, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud has no view ids")]
    MissingViewIds,
    #[error("no pose for view {0}")]
    MissingPose(u32),
    #[error("no depth frame for view {0}")]
    MissingFrame(u32),
}

/// Triangle mesh with per-vertex unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Signed enclosed volume (positive for outward-facing closed meshes).
    pub fn enclosed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// `V − E + F` over the indexed topology.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Deterministic near-uniform surface samples: each triangle is split
    /// into `n²` similar sub-triangles (`n` chosen so sub-edges are at most
    /// `spacing`) and their centroids are returned.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            let n = ((longest / spacing).ceil() as usize).max(1);
            let (eu, ev) = ((b - a) / n as f64, (c - a) / n as f64);
            for i in 0..n {
                for j in 0..n - i {
                    let (fi, fj) = (i as f64, j as f64);
                    out.push(a + eu * (fi + 1.0 / 3.0) + ev * (fj + 1.0 / 3.0));
                    if i + j + 1 < n {
                        out.push(a + eu * (fi + 2.0 / 3.0) + ev * (fj + 2.0 / 3.0));
                    }
                }
            }
        }
        out
    }

    /// Concatenates meshes, merging vertices that snap to the same cell of
    /// a `snap`-sized grid and dropping triangles that become degenerate or
    /// duplicate.
    pub fn merge_dedup(meshes: &[Mesh], snap: f64) -> Mesh {
        let mut out = Mesh::default();
        let mut cells: HashMap<[i64; 3], u32> = HashMap::new();
        let mut seen: HashSet<[u32; 3]> = HashSet::new();
        for m in meshes {
            let ids: Vec<u32> = m
                .vertices
                .iter()
                .zip(&m.normals)
                .map(|(p, n)| {
                    let key = [(p.x / snap).round() as i64, (p.y / snap).round() as i64, (p.z / snap).round() as i64];
                    *cells.entry(key).or_insert_with(|| {
                        out.vertices.push(*p);
                        out.normals.push(*n);
                        (out.vertices.len() - 1) as u32
                    })
                })
                .collect();
            for t in &m.triangles {
                let tri = t.map(|i| ids[i as usize]);
                if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                    continue;
                }
                let mut key = tri;
                key.sort_unstable();
                if seen.insert(key) {
                    out.triangles.push(tri);
                }
            }
        }
        out
    }
}

/// Integrates `frames` (indexed by view id) into one unbounded volume.
pub fn integrate_all(
    frames: &[DepthImage],
    poses: &[Option<Pose>],
    views: impl IntoIterator<Item = u32>,
    k: &CameraIntrinsics,
    cfg: &TsdfConfig,
    bounds: Option<(Vector3<f64>, Vector3<f64>)>,
) -> Result<TsdfVolume, SurfaceError> {
    let mut vol = TsdfVolume::new(*cfg);
    vol.bounds = bounds;
    for v in views {
        let pose = poses.get(v as usize).copied().flatten().ok_or(SurfaceError::MissingPose(v))?;
        let frame = frames.get(v as usize).ok_or(SurfaceError::MissingFrame(v))?;
        vol.integrate(frame, k, &pose);
    }
    Ok(vol)
}

/// World-space box around the truncation band of one frame's valid depth.
fn band_bounds(depth: &DepthImage, k: &CameraIntrinsics, pose: &Pose, trunc: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let Some(z) = depth.meters(u, v) else { continue };
            for zs in [(z - trunc).max(0.0), z + trunc] {
                let p = pose.transform_point(&k.backproject(u as f64, v as f64, zs));
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    (lo.x <= hi.x).then_some((lo, hi))
}

fn boxes_overlap(a: &(Vector3<f64>, Vector3<f64>), b: &(Vector3<f64>, Vector3<f64>)) -> bool {
    (0..3).all(|i| a.0[i] <= b.1[i] && b.0[i] <= a.1[i])
}

/// Fuses every segment in its own bounded volume (its box grown by the
/// truncation distance), then merges the meshes with a `voxel/8` snap.
/// A segment integrates its own views plus any other view whose truncation
/// band reaches its volume, so the voxels it holds match a single global
/// volume and the overlapping meshes coincide.
pub fn fuse_segments(
    segments: &[Segment],
    frames: &[DepthImage],
    poses: &[Option<Pose>],
    k: &CameraIntrinsics,
    cfg: &TsdfConfig,
) -> Result<Mesh, SurfaceError> {
    for s in segments {
        for &v in &s.view_ids {
            if poses.get(v as usize).copied().flatten().is_none() {
                return Err(SurfaceError::MissingPose(v));
            }
            if v as usize >= frames.len() {
                return Err(SurfaceError::MissingFrame(v));
            }
        }
    }
    let trunc = cfg.truncation();
    let bands: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = frames
        .par_iter()
        .zip(poses.par_iter())
        .map(|(d, p)| p.and_then(|p| band_bounds(d, k, &p, trunc)))
        .collect();
    let margin = Vector3::repeat(trunc);
    let reach = Vector3::repeat(cfg.voxel_size * BLOCK as f64);
    let meshes: Vec<Mesh> = segments
        .par_iter()
        .map(|s| {
            let bounds = (s.aabb.0 - margin, s.aabb.1 + margin);
            let grown = (bounds.0 - reach, bounds.1 + reach);
            let views: BTreeSet<u32> = s
                .view_ids
                .iter()
                .copied()
                .chain(
                    bands
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| b.as_ref().is_some_and(|b| boxes_overlap(b, &grown)))
                        .map(|(i, _)| i as u32),
                )
                .collect();
            integrate_all(frames, poses, views, k, cfg, Some(bounds)).map(|v| v.extract_mesh())
        })
        .collect::<Result<_, _>>()?;
    Ok(Mesh::merge_dedup(&meshes, cfg.voxel_size / 8.0))
}
