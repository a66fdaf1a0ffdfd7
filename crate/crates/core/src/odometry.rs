//! Scan-to-map depth odometry: point-to-plane ICP against a FIFO map of
//! recent keyframes, with tracking-loss detection and map re-initialization.

use std::collections::VecDeque;

use nalgebra::{Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    estimate_normals_with, smooth_depth, unproject_with_normals, CameraIntrinsics, DepthImage, GeometryError,
    PointCloud, Pose,
};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdometryError {
    #[error("only {0} correspondences, need at least 6")]
    TooFewCorrespondences(usize),
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("source cloud is empty")]
    EmptySource,
    #[error("normal equations are singular")]
    Singular,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Meters.
    pub correspondence_max_dist: f64,
    /// Threshold on the norm of the se(3) update.
    pub convergence_eps: f64,
    pub fitness_min: f64,
    /// Meters.
    pub huber_delta: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            correspondence_max_dist: 0.10,
            convergence_eps: 1e-6,
            fitness_min: 0.3,
            huber_delta: 0.05,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations: must be positive".into());
        }
        for (name, v) in [
            ("correspondence_max_dist", self.correspondence_max_dist),
            ("convergence_eps", self.convergence_eps),
            ("huber_delta", self.huber_delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        if !(self.fitness_min > 0.0 && self.fitness_min <= 1.0) {
            return Err(format!("fitness_min: must be in (0, 1], got {}", self.fitness_min));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    pub fitness: f64,
    pub rmse: f64,
    pub iterations: usize,
}

/// Signed point-to-plane distance of source point `s` mapped by `pose`.
#[inline]
pub fn point_to_plane_residual(pose: &Pose, s: &Vector3<f64>, q: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    n.dot(&(pose.transform_point(s) - q))
}

/// Derivative of [`point_to_plane_residual`] with respect to a left
/// increment `[ω; v]` applied to `pose`.
#[inline]
pub fn point_to_plane_jacobian(pose: &Pose, s: &Vector3<f64>, n: &Vector3<f64>) -> Vector6<f64> {
    let p = pose.transform_point(s);
    let a = p.cross(n);
    Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z)
}

#[inline]
fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

const CHUNK: usize = 512;

struct Linearization {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    matched: usize,
    sq_sum: f64,
}

// Correspondences and normal equations at `pose`. Chunks are fixed-size and
// reduced in order so the sum does not depend on the thread count.
fn linearize(
    source: &[Vector3<f64>],
    target: &PointCloud,
    normals: &[Vector3<f64>],
    tree: &KdTree,
    pose: &Pose,
    cfg: &IcpConfig,
) -> Linearization {
    let parts: Vec<Linearization> = source
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut lin = Linearization {
                h: Matrix6::zeros(),
                g: Vector6::zeros(),
                matched: 0,
                sq_sum: 0.0,
            };
            for s in chunk {
                let p = pose.transform_point(s);
                let Some((j, _)) = tree.nearest_within(&p, cfg.correspondence_max_dist) else {
                    continue;
                };
                let n = &normals[j];
                let r = n.dot(&(p - target.points[j]));
                let a = p.cross(n);
                let jac = Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z);
                let w = huber_weight(r, cfg.huber_delta);
                lin.h += w * jac * jac.transpose();
                lin.g += w * r * jac;
                lin.matched += 1;
                lin.sq_sum += r * r;
            }
            lin
        })
        .collect();
    let mut total = Linearization {
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        matched: 0,
        sq_sum: 0.0,
    };
    for p in parts {
        total.h += p.h;
        total.g += p.g;
        total.matched += p.matched;
        total.sq_sum += p.sq_sum;
    }
    total
}

fn solve_normal_equations(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(ch) = h.cholesky() {
        return Some(-ch.solve(g));
    }
    // Rank-deficient geometry (e.g. a single plane): damp the free directions.
    let scale = h.diagonal().max().max(1e-12);
    let damped = h + Matrix6::identity() * (1e-9 * scale);
    damped.cholesky().map(|ch| -ch.solve(g))
}

/// Point-to-plane ICP of `source` onto `target` (which must carry normals).
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult, OdometryError> {
    let tree = KdTree::build(&target.points);
    icp_point_to_plane_indexed(source, target, &tree, init, cfg)
}

/// [`icp_point_to_plane`] with a prebuilt index over `target.points`.
pub fn icp_point_to_plane_indexed(
    source: &PointCloud,
    target: &PointCloud,
    tree: &KdTree,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult, OdometryError> {
    let normals = target.normals.as_ref().ok_or(OdometryError::MissingNormals)?;
    if source.is_empty() {
        return Err(OdometryError::EmptySource);
    }
    let mut pose = *init;
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let lin = linearize(&source.points, target, normals, tree, &pose, cfg);
        if lin.matched < 6 {
            return Err(OdometryError::TooFewCorrespondences(lin.matched));
        }
        let delta = solve_normal_equations(&lin.h, &lin.g).ok_or(OdometryError::Singular)?;
        pose = Pose::exp(&delta).compose(&pose);
        if delta.norm() < cfg.convergence_eps {
            break;
        }
    }
    let fin = linearize(&source.points, target, normals, tree, &pose, cfg);
    if fin.matched < 6 {
        return Err(OdometryError::TooFewCorrespondences(fin.matched));
    }
    Ok(IcpResult {
        pose,
        fitness: fin.matched as f64 / source.len() as f64,
        rmse: (fin.sq_sum / fin.matched as f64).sqrt(),
        iterations,
    })
}

/// Frame preprocessing and keyframe policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryConfig {
    pub icp: IcpConfig,
    /// Pixel stride of the frame cloud.
    pub stride: usize,
    /// Meters of motion since the last keyframe that trigger a new one.
    pub keyframe_translation: f64,
    pub keyframe_rotation_deg: f64,
    pub map_capacity: usize,
    /// Half-width of the edge-aware depth smoothing window; 0 disables it.
    pub smooth_radius: usize,
    /// Relative depth difference still treated as the same surface.
    pub surface_tolerance: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            icp: IcpConfig::default(),
            stride: 2,
            keyframe_translation: 0.2,
            keyframe_rotation_deg: 15.0,
            map_capacity: 20,
            smooth_radius: 2,
            surface_tolerance: 0.05,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.icp.validate().map_err(|e| format!("icp.{e}"))?;
        if self.stride == 0 {
            return Err("stride: must be positive".into());
        }
        if self.map_capacity == 0 {
            return Err("map_capacity: must be positive".into());
        }
        for (name, v) in [
            ("keyframe_translation", self.keyframe_translation),
            ("keyframe_rotation_deg", self.keyframe_rotation_deg),
            ("surface_tolerance", self.surface_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Camera-frame cloud with normals used both as ICP source and as keyframe
/// map contribution.
pub fn frame_cloud(d: &DepthImage, k: &CameraIntrinsics, cfg: &OdometryConfig) -> Result<PointCloud, GeometryError> {
    let smoothed;
    let d = if cfg.smooth_radius > 0 {
        smoothed = smooth_depth(d, cfg.smooth_radius, cfg.surface_tolerance);
        &smoothed
    } else {
        d
    };
    let normals = estimate_normals_with(d, k, Some(cfg.surface_tolerance));
    unproject_with_normals(d, &normals, k, cfg.stride)
}

/// World-frame point map built from the most recent keyframes.
#[derive(Clone, Debug)]
pub struct LocalMap {
    pub capacity: usize,
    keyframes: VecDeque<(Pose, PointCloud)>,
    cloud: PointCloud,
    tree: KdTree,
}

impl LocalMap {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            keyframes: VecDeque::new(),
            cloud: PointCloud::default(),
            tree: KdTree::build(&[]),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn keyframe_poses(&self) -> Vec<Pose> {
        self.keyframes.iter().map(|(p, _)| *p).collect()
    }

    pub fn last_keyframe_pose(&self) -> Option<&Pose> {
        self.keyframes.back().map(|(p, _)| p)
    }

    pub fn clear(&mut self) {
        self.keyframes.clear();
        self.rebuild();
    }

    /// Adds a camera-frame cloud observed at `pose`, evicting the oldest
    /// keyframe beyond capacity.
    pub fn insert(&mut self, pose: Pose, camera_cloud: &PointCloud) {
        self.keyframes.push_back((pose, camera_cloud.transformed(&pose)));
        while self.keyframes.len() > self.capacity {
            self.keyframes.pop_front();
        }
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let mut cloud = PointCloud {
            points: Vec::new(),
            normals: Some(Vec::new()),
            view_ids: None,
        };
        for (_, c) in &self.keyframes {
            cloud.extend(c);
        }
        self.tree = KdTree::build(&cloud.points);
        self.cloud = cloud;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackingStatus {
    Ok,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryResult {
    /// Camera-to-world.
    pub pose: Pose,
    pub fitness: f64,
    pub rmse: f64,
    pub status: TrackingStatus,
    /// Whether the frame was inserted into the map as a keyframe.
    pub keyframe: bool,
}

fn motion_exceeds(a: &Pose, b: &Pose, cfg: &OdometryConfig) -> bool {
    let rel = a.inverse().compose(b);
    rel.translation().norm() > cfg.keyframe_translation || rel.angle() > cfg.keyframe_rotation_deg.to_radians()
}

/// Tracks one frame against `map`. An empty map is bootstrapped with the
/// frame at `prev_pose`.
pub fn register_frame(
    map: &mut LocalMap,
    frame_depth: &DepthImage,
    k: &CameraIntrinsics,
    prev_pose: &Pose,
    cfg: &OdometryConfig,
) -> Result<OdometryResult, GeometryError> {
    let cloud = frame_cloud(frame_depth, k, cfg)?;
    if map.is_empty() {
        if cloud.is_empty() {
            return Ok(lost(prev_pose));
        }
        map.insert(*prev_pose, &cloud);
        return Ok(OdometryResult {
            pose: *prev_pose,
            fitness: 1.0,
            rmse: 0.0,
            status: TrackingStatus::Ok,
            keyframe: true,
        });
    }
    if cloud.is_empty() {
        return Ok(lost(prev_pose));
    }
    let icp = match icp_point_to_plane_indexed(&cloud, &map.cloud, &map.tree, prev_pose, &cfg.icp) {
        Ok(r) => r,
        Err(OdometryError::Geometry(e)) => return Err(e),
        Err(_) => return Ok(lost(prev_pose)),
    };
    if icp.fitness < cfg.icp.fitness_min {
        return Ok(lost(prev_pose));
    }
    let keyframe = map
        .last_keyframe_pose()
        .is_none_or(|kf| motion_exceeds(kf, &icp.pose, cfg));
    if keyframe {
        map.insert(icp.pose, &cloud);
    }
    Ok(OdometryResult {
        pose: icp.pose,
        fitness: icp.fitness,
        rmse: icp.rmse,
        status: TrackingStatus::Ok,
        keyframe,
    })
}

fn lost(last_good: &Pose) -> OdometryResult {
    OdometryResult {
        pose: *last_good,
        fitness: 0.0,
        rmse: 0.0,
        status: TrackingStatus::Lost,
        keyframe: false,
    }
}

/// Incremental session tracker: feeds frames one at a time and restarts the
/// map (with a new map id) whenever tracking is lost.
#[derive(Clone, Debug)]
pub struct SessionTracker {
    cfg: OdometryConfig,
    k: CameraIntrinsics,
    map: LocalMap,
    last_good: Pose,
    map_id: u32,
}

impl SessionTracker {
    pub fn new(k: CameraIntrinsics, cfg: OdometryConfig) -> Self {
        Self {
            map: LocalMap::new(cfg.map_capacity),
            cfg,
            k,
            last_good: Pose::identity(),
            map_id: 0,
        }
    }

    pub fn map(&self) -> &LocalMap {
        &self.map
    }

    pub fn push(&mut self, depth: &DepthImage) -> Result<(OdometryResult, u32), GeometryError> {
        let res = register_frame(&mut self.map, depth, &self.k, &self.last_good, &self.cfg)?;
        if res.status == TrackingStatus::Ok {
            self.last_good = res.pose;
            return Ok((res, self.map_id));
        }
        // Start a fresh map seeded with this frame at the last good pose.
        self.map_id += 1;
        self.map.clear();
        let seeded = register_frame(&mut self.map, depth, &self.k, &self.last_good, &self.cfg)?;
        let mut out = res;
        out.keyframe = seeded.status == TrackingStatus::Ok;
        Ok((out, self.map_id))
    }
}

/// Runs odometry over a whole sequence; one `(result, map_id)` per frame.
pub fn run_session(
    frames: &[DepthImage],
    k: &CameraIntrinsics,
    cfg: &OdometryConfig,
) -> Result<Vec<(OdometryResult, u32)>, GeometryError> {
    let mut tracker = SessionTracker::new(*k, *cfg);
    frames.iter().map(|f| tracker.push(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::synthetic::{make_trajectory, render_depth, room_scene, RigKind, SyntheticRig, TrajectoryKind, TrajectoryParams};

    // Three orthogonal 1 m patches meeting at the origin plus a sphere, with
    // exact normals.
    fn corner_cloud(spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        let mut ns = Vec::new();
        let n = (1.0 / spacing) as usize;
        for i in 0..n {
            for j in 0..n {
                let a = (i as f64 + 0.5) * spacing;
                let b = (j as f64 + 0.5) * spacing;
                pts.push(Vector3::new(a, b, 0.0));
                ns.push(Vector3::z());
                pts.push(Vector3::new(a, 0.0, b));
                ns.push(Vector3::y());
                pts.push(Vector3::new(0.0, a, b));
                ns.push(Vector3::x());
            }
        }
        let c = Vector3::new(0.5, 0.5, 0.3);
        for i in 0..40 {
            for j in 0..20 {
                let th = std::f64::consts::TAU * i as f64 / 40.0;
                let ph = std::f64::consts::PI * (j as f64 + 0.5) / 20.0;
                let d = Vector3::new(ph.sin() * th.cos(), ph.sin() * th.sin(), ph.cos());
                pts.push(c + 0.2 * d);
                ns.push(d);
            }
        }
        PointCloud {
            points: pts,
            normals: Some(ns),
            view_ids: None,
        }
    }

    #[test]
    fn self_registration_is_identity() {
        let t = corner_cloud(0.025);
        let r = icp_point_to_plane(&t, &t, &Pose::identity(), &IcpConfig::default()).unwrap();
        assert!(r.pose.translation().norm() < 1e-6 && r.pose.angle() < 1e-6);
        assert_eq!(r.fitness, 1.0);
    }

    #[test]
    fn recovers_applied_perturbation() {
        let t = corner_cloud(0.02);
        let perturb = Pose::from_axis_angle(&Vector3::y(), 5f64.to_radians(), Vector3::new(0.05, 0.0, 0.0));
        let src = t.transformed(&perturb);
        let r = icp_point_to_plane(&src, &t, &Pose::identity(), &IcpConfig::default()).unwrap();
        let err = r.pose.compose(&perturb);
        assert!(err.translation().norm() < 1e-3, "{:?}", err);
        assert!(err.angle().to_degrees() < 0.1);
    }

    #[test]
    fn far_source_is_rejected() {
        let t = corner_cloud(0.05);
        let src = t.transformed(&Pose::from_translation(Vector3::new(10.0, 0.0, 0.0)));
        assert!(matches!(
            icp_point_to_plane(&src, &t, &Pose::identity(), &IcpConfig::default()),
            Err(OdometryError::TooFewCorrespondences(0))
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let xi = Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let pose = Pose::exp(&xi);
            let s = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let q = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let n = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let jac = point_to_plane_jacobian(&pose, &s, &n);
            let h = 1e-6;
            for i in 0..6 {
                let mut e = Vector6::zeros();
                e[i] = h;
                let rp = point_to_plane_residual(&Pose::exp(&e).compose(&pose), &s, &q, &n);
                let rm = point_to_plane_residual(&Pose::exp(&-e).compose(&pose), &s, &q, &n);
                let fd = (rp - rm) / (2.0 * h);
                assert!((fd - jac[i]).abs() <= 1e-5 * jac[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn equivariance_under_target_frame_change() {
        let t = corner_cloud(0.025);
        let perturb = Pose::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0).normalize(), 0.05, Vector3::new(0.02, -0.03, 0.01));
        let src = t.transformed(&perturb);
        let cfg = IcpConfig::default();
        let a = icp_point_to_plane(&src, &t, &Pose::identity(), &cfg).unwrap();
        let g = Pose::from_axis_angle(&Vector3::z(), 0.3, Vector3::new(0.5, 0.1, 0.0));
        // registering the same source into a moved target
        let b = icp_point_to_plane(&src, &t.transformed(&g), &g, &cfg).unwrap();
        let diff = b.pose.inverse().compose(&g.compose(&a.pose));
        assert!(diff.translation().norm() < 1e-6 && diff.angle() < 1e-6);
    }

    #[test]
    fn map_eviction_keeps_capacity() {
        let c = corner_cloud(0.1);
        let mut m = LocalMap::new(2);
        for i in 0..4 {
            m.insert(Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)), &c);
        }
        assert_eq!(m.keyframe_poses().len(), 2);
        assert_eq!(m.cloud().len(), 2 * c.len());
        assert_eq!(m.keyframe_poses()[0].translation().x, 2.0);
    }

    fn render_sequence(kind: TrajectoryKind, n: usize, params: &TrajectoryParams) -> (Vec<Pose>, Vec<DepthImage>, CameraIntrinsics) {
        let scene = room_scene(7);
        let k = SyntheticRig::new(RigKind::Matched).depth;
        let gt: Vec<Pose> = make_trajectory(kind, n, params).into_iter().map(|(_, p)| p).collect();
        let depth = gt.iter().map(|p| render_depth(&scene, p, &k)).collect();
        (gt, depth, k)
    }

    #[test]
    fn corridor_sequence_tracks_in_one_map() {
        // A third of the loop at roughly 2 cm per frame.
        let params = TrajectoryParams {
            arc_end: 1.0 / 3.0,
            ..TrajectoryParams::default()
        };
        let (gt, depth, k) = render_sequence(TrajectoryKind::CorridorLoop, 100, &params);
        let out = run_session(&depth, &k, &OdometryConfig::default()).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|(r, id)| r.status == TrackingStatus::Ok && *id == 0));
        for i in 1..gt.len() {
            let truth = gt[i - 1].inverse().compose(&gt[i]);
            let est = out[i - 1].0.pose.inverse().compose(&out[i].0.pose);
            let err = truth.inverse().compose(&est).translation().norm();
            assert!(err < 0.005, "frame {i}: {err}");
            // continuity within a map
            assert!(est.translation().norm() < 2.0 * truth.translation().norm() + 1e-3);
        }
    }

    #[test]
    fn teleport_starts_exactly_one_new_map() {
        let (_, depth, k) = render_sequence(TrajectoryKind::TeleportGap, 30, &TrajectoryParams::default());
        let ids: Vec<u32> = run_session(&depth, &k, &OdometryConfig::default())
            .unwrap()
            .iter()
            .map(|(_, id)| *id)
            .collect();
        assert!(ids[..15].iter().all(|&i| i == 0), "{ids:?}");
        assert!(ids[15..].iter().all(|&i| i == 1), "{ids:?}");
    }

    #[test]
    fn single_frame_bootstraps_at_identity() {
        let (_, depth, k) = render_sequence(TrajectoryKind::Orbit, 2, &TrajectoryParams::default());
        let out = run_session(&depth[..1], &k, &OdometryConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1, 0);
        assert_eq!(out[0].0.status, TrackingStatus::Ok);
        assert_eq!(out[0].0.pose, Pose::identity());
    }

    #[test]
    fn frame_far_from_the_map_is_lost() {
        let (_, depth, k) = render_sequence(TrajectoryKind::Orbit, 2, &TrajectoryParams::default());
        let cfg = OdometryConfig::default();
        let mut map = LocalMap::new(cfg.map_capacity);
        register_frame(&mut map, &depth[0], &k, &Pose::identity(), &cfg).unwrap();
        let prev = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let r = register_frame(&mut map, &depth[0], &k, &prev, &cfg).unwrap();
        assert_eq!(r.status, TrackingStatus::Lost);
        assert_eq!(r.pose, prev);
    }

    #[test]
    fn huber_objective_does_not_increase_per_step() {
        let target = corner_cloud(0.02);
        let normals = target.normals.clone().unwrap();
        let tree = KdTree::build(&target.points);
        let perturb = Pose::from_axis_angle(&Vector3::new(0.3, 1.0, 0.2).normalize(), 8f64.to_radians(), Vector3::new(0.06, -0.04, 0.03));
        let src = target.transformed(&perturb);
        let cfg = IcpConfig::default();
        let huber = |r: f64| {
            let a = r.abs();
            if a <= cfg.huber_delta {
                0.5 * r * r
            } else {
                cfg.huber_delta * (a - 0.5 * cfg.huber_delta)
            }
        };
        let mut pose = Pose::identity();
        for _ in 0..10 {
            // correspondences frozen at the current pose
            let pairs: Vec<(Vector3<f64>, usize)> = src
                .points
                .iter()
                .filter_map(|s| tree.nearest_within(&pose.transform_point(s), cfg.correspondence_max_dist).map(|(j, _)| (*s, j)))
                .collect();
            let objective = |p: &Pose| -> f64 {
                pairs
                    .iter()
                    .map(|(s, j)| huber(point_to_plane_residual(p, s, &target.points[*j], &normals[*j])))
                    .sum()
            };
            let lin = linearize(&src.points, &target, &normals, &tree, &pose, &cfg);
            let next = Pose::exp(&solve_normal_equations(&lin.h, &lin.g).unwrap()).compose(&pose);
            let (before, after) = (objective(&pose), objective(&next));
            assert!(after <= before * (1.0 + 1e-12), "{before} -> {after}");
            pose = next;
        }
    }
}
