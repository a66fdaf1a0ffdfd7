use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::SurfaceError;
use crate::geometry::PointCloud;

/// One spatial partition of the global cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub centroid: Vector3<f64>,
    pub view_ids: BTreeSet<u32>,
    pub aabb: (Vector3<f64>, Vector3<f64>),
    pub point_count: usize,
}

const MAX_ITERATIONS: usize = 50;
const CHANGE_FRACTION: f64 = 0.001;

fn nearest(centroids: &[Vector3<f64>], p: &Vector3<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = (c - p).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn kmeans_pp(points: &[Vector3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    centroids
}

/// Lloyd k-means with k-means++ seeding, `k = ceil(N / point_budget)`.
/// Returns the non-empty segments and the per-point segment index.
pub fn kmeans_partition(
    cloud: &PointCloud,
    point_budget: usize,
    seed: u64,
) -> Result<(Vec<Segment>, Vec<usize>), SurfaceError> {
    let n = cloud.len();
    if n == 0 {
        return Err(SurfaceError::EmptyCloud);
    }
    let views = cloud.view_ids.as_ref().ok_or(SurfaceError::MissingViewIds)?;
    let k = n.div_ceil(point_budget.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&cloud.points, k, &mut rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<usize> = cloud.points.par_iter().map(|p| nearest(&centroids, p)).collect();
        let changed = next.iter().zip(&assign).filter(|(a, b)| a != b).count();
        assign = next;
        if (changed as f64) < CHANGE_FRACTION * n as f64 {
            break;
        }
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in cloud.points.iter().zip(&assign) {
            sums[a] += p;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
    }
    let mut segments: Vec<Segment> = centroids
        .iter()
        .map(|&c| Segment {
            centroid: c,
            view_ids: BTreeSet::new(),
            aabb: (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            point_count: 0,
        })
        .collect();
    for ((p, &a), &v) in cloud.points.iter().zip(&assign).zip(views) {
        let s = &mut segments[a];
        s.view_ids.insert(v);
        s.aabb.0 = s.aabb.0.inf(p);
        s.aabb.1 = s.aabb.1.sup(p);
        s.point_count += 1;
    }
    // drop empty clusters and renumber
    let mut remap = vec![usize::MAX; k];
    let mut kept = Vec::new();
    for (i, s) in segments.into_iter().enumerate() {
        if s.point_count > 0 {
            remap[i] = kept.len();
            kept.push(s);
        }
    }
    let assign = assign.into_iter().map(|a| remap[a]).collect();
    Ok((kept, assign))
}
