//! Reconstruction metrics (centroid voxel downsampling, overlap and inlier
//! RMSE at distance thresholds) and trajectory metrics (ATE, RPE).

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{umeyama_align, GeometryError, PointCloud, Pose};
use crate::spatial::KdTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error("only {0} timestamp pairs matched, need at least 3")]
    TooFewPairs(usize),
    #[error("no pose pairs are {0} s apart")]
    NoRelativePairs(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconEvalConfig {
    /// Downsampling voxel, meters.
    pub voxel: f64,
    /// Inlier thresholds, meters, ascending.
    pub gammas: Vec<f64>,
}

impl Default for ReconEvalConfig {
    fn default() -> Self {
        Self {
            voxel: 0.01,
            gammas: vec![0.010, 0.020, 0.050],
        }
    }
}

impl ReconEvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return Err(format!("voxel: must be positive, got {}", self.voxel));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err("gammas: must be a non-empty list of positive values".into());
        }
        if self.gammas.windows(2).any(|w| w[0] >= w[1]) {
            return Err("gammas: must be strictly ascending".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdResult {
    /// Meters.
    pub gamma: f64,
    /// Percent of downsampled ground-truth points (may exceed 100).
    pub overlap: f64,
    /// Meters, over inliers; 0 without inliers.
    pub rmse: f64,
    pub inliers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconEvalResult {
    pub thresholds: Vec<ThresholdResult>,
    pub recon_points: usize,
    pub gt_points: usize,
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[inline]
pub fn voxel_key(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// One point per occupied voxel: the centroid of its members. Output is in
/// ascending voxel-key order.
pub fn voxel_downsample_centroid(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut cells: BTreeMap<[i64; 3], ([CompensatedSum; 3], usize)> = BTreeMap::new();
    for p in &cloud.points {
        let e = cells.entry(voxel_key(p, voxel)).or_default();
        for a in 0..3 {
            e.0[a].add(p[a]);
        }
        e.1 += 1;
    }
    PointCloud::from_points(
        cells
            .values()
            .map(|(s, n)| Vector3::new(s[0].value(), s[1].value(), s[2].value()) / *n as f64)
            .collect(),
    )
}

/// Recon-to-ground-truth distances after downsampling both clouds, scored
/// per threshold. Overlap is normalized by the ground-truth count.
pub fn overlap_rmse(recon: &PointCloud, gt: &PointCloud, cfg: &ReconEvalConfig) -> Result<ReconEvalResult, EvalError> {
    if recon.is_empty() {
        return Err(EvalError::EmptyCloud("reconstructed"));
    }
    if gt.is_empty() {
        return Err(EvalError::EmptyCloud("ground-truth"));
    }
    cfg.validate().map_err(EvalError::Config)?;
    let r = voxel_downsample_centroid(recon, cfg.voxel);
    let g = voxel_downsample_centroid(gt, cfg.voxel);
    let tree = KdTree::build(&g.points);
    let d2: Vec<f64> = r
        .points
        .par_iter()
        .map(|p| tree.nearest(p).expect("non-empty").1)
        .collect();
    let thresholds = cfg
        .gammas
        .iter()
        .map(|&gamma| {
            let mut sq = 0.0;
            let mut inliers = 0usize;
            for &d in &d2 {
                if d.sqrt() < gamma {
                    sq += d;
                    inliers += 1;
                }
            }
            ThresholdResult {
                gamma,
                overlap: inliers as f64 / g.len() as f64 * 100.0,
                rmse: if inliers > 0 { (sq / inliers as f64).sqrt() } else { 0.0 },
                inliers,
            }
        })
        .collect();
    Ok(ReconEvalResult {
        thresholds,
        recon_points: r.len(),
        gt_points: g.len(),
    })
}

/// Timestamped camera-to-world poses, seconds and meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub entries: Vec<(f64, Pose)>,
}

/// Maximum timestamp difference for association, seconds.
pub const ASSOCIATION_WINDOW: f64 = 0.020;

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the entry nearest to `t` within the association window.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        let i = self.entries.partition_point(|(s, _)| *s < t);
        let mut best: Option<(usize, f64)> = None;
        for j in [i.wrapping_sub(1), i] {
            if let Some((s, _)) = self.entries.get(j) {
                let d = (s - t).abs();
                if d <= ASSOCIATION_WINDOW && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }
}

fn sorted(t: &Trajectory) -> Trajectory {
    let mut e = t.entries.clone();
    e.sort_by(|a, b| a.0.total_cmp(&b.0));
    Trajectory { entries: e }
}

/// `(timestamp, est, gt)` for every estimated pose with a ground-truth match.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(f64, Pose, Pose)> {
    let gt = sorted(gt);
    sorted(est)
        .entries
        .iter()
        .filter_map(|(t, p)| gt.nearest(*t).map(|j| (*t, *p, gt.entries[j].1)))
        .collect()
}

/// RMSE of positions after rigid alignment of `est` onto `gt`.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|(_, e, _)| *e.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, _, g)| *g.translation()).collect();
    let align = umeyama_align(&src, &dst)?;
    let mut sum = CompensatedSum::default();
    for (s, d) in src.iter().zip(&dst) {
        sum.add((align.transform_point(s) - d).norm_squared());
    }
    Ok((sum.value() / src.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RpeResult {
    /// Degrees per second.
    pub rot_rms: f64,
    /// Meters per second.
    pub trans_rms: f64,
    pub rot_mean: f64,
    pub trans_mean: f64,
    pub pairs: usize,
}

/// Drift over `delta`-second windows, normalized per second.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: f64) -> Result<RpeResult, EvalError> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewPairs(pairs.len()));
    }
    let times = Trajectory::new(pairs.iter().map(|(t, e, _)| (*t, *e)).collect());
    let mut rot = (CompensatedSum::default(), CompensatedSum::default());
    let mut trans = (CompensatedSum::default(), CompensatedSum::default());
    let mut n = 0usize;
    for (i, (t, e0, g0)) in pairs.iter().enumerate() {
        let Some(j) = times.nearest(t + delta) else { continue };
        if j <= i {
            continue;
        }
        let (t1, e1, g1) = &pairs[j];
        let dt = t1 - t;
        let est_rel = e0.inverse().compose(e1);
        let gt_rel = g0.inverse().compose(g1);
        let err = gt_rel.inverse().compose(&est_rel);
        let r = err.angle().to_degrees() / dt;
        let m = err.translation().norm() / dt;
        rot.0.add(r * r);
        rot.1.add(r);
        trans.0.add(m * m);
        trans.1.add(m);
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoRelativePairs(delta));
    }
    let nf = n as f64;
    Ok(RpeResult {
        rot_rms: (rot.0.value() / nf).sqrt(),
        trans_rms: (trans.0.value() / nf).sqrt(),
        rot_mean: rot.1.value() / nf,
        trans_mean: trans.1.value() / nf,
        pairs: n,
    })
}
