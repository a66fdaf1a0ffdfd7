//! Appearance-based loop detection: a frozen k-means visual vocabulary,
//! tf-idf bag-of-words retrieval, and geometric verification by RANSAC over
//! depth-lifted feature matches followed by ICP refinement.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{descriptor_distance_sq, mutual_matches, Feature, FeatureConfig, DESCRIPTOR_LEN};
use crate::geometry::{umeyama_align, CameraIntrinsics, DepthImage, PointCloud, Pose};
use crate::odometry::{icp_point_to_plane, IcpConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("no descriptors to build a vocabulary from")]
    NoDescriptors,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopClosureConfig {
    pub features: FeatureConfig,
    pub vocabulary_size: usize,
    pub vocabulary_seed: u64,
    pub vocabulary_iterations: usize,
    pub top_k: usize,
    /// Keyframes of the same session closer than this (in keyframe count)
    /// are never proposed.
    pub exclusion_window: usize,
    /// Candidates below this cosine similarity are skipped.
    pub min_similarity: f64,
    pub ratio_test: f64,
    pub ransac_iterations: usize,
    pub ransac_seed: u64,
    /// Meters.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub min_fitness: f64,
    pub icp: IcpConfig,
}

impl Default for LoopClosureConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            vocabulary_size: 256,
            vocabulary_seed: 42,
            vocabulary_iterations: 10,
            top_k: 5,
            exclusion_window: 30,
            min_similarity: 0.05,
            ratio_test: 0.8,
            ransac_iterations: 1000,
            ransac_seed: 42,
            inlier_threshold: 0.05,
            min_inliers: 20,
            min_fitness: 0.3,
            icp: IcpConfig {
                correspondence_max_dist: 0.05,
                huber_delta: 0.02,
                ..IcpConfig::default()
            },
        }
    }
}

impl LoopClosureConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.features.validate().map_err(|e| format!("features.{e}"))?;
        self.icp.validate().map_err(|e| format!("icp.{e}"))?;
        if self.vocabulary_size == 0 {
            return Err("vocabulary_size: must be positive".into());
        }
        if self.top_k == 0 {
            return Err("top_k: must be positive".into());
        }
        if self.min_inliers < 3 {
            return Err(format!("min_inliers: must be at least 3, got {}", self.min_inliers));
        }
        if !(self.ratio_test > 0.0 && self.ratio_test <= 1.0) {
            return Err(format!("ratio_test: must be in (0, 1], got {}", self.ratio_test));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(format!("inlier_threshold: must be positive, got {}", self.inlier_threshold));
        }
        if !(0.0..=1.0).contains(&self.min_fitness) {
            return Err(format!("min_fitness: must be in [0, 1], got {}", self.min_fitness));
        }
        if !(-1.0..=1.0).contains(&self.min_similarity) {
            return Err(format!("min_similarity: must be in [-1, 1], got {}", self.min_similarity));
        }
        Ok(())
    }
}

/// Visual words with their document frequencies over the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub words: Vec<[f32; DESCRIPTOR_LEN]>,
    pub doc_frequency: Vec<u32>,
    pub num_docs: u32,
}

fn nearest_word(words: &[[f32; DESCRIPTOR_LEN]], d: &[f32; DESCRIPTOR_LEN]) -> usize {
    let mut best = (0, f32::INFINITY);
    for (i, w) in words.iter().enumerate() {
        let dist = descriptor_distance_sq(w, d);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best.0
}

impl Vocabulary {
    /// k-means (k-means++ seeding) over all descriptors of `docs`; each doc
    /// is one image's feature list.
    pub fn build(docs: &[&[Feature]], size: usize, seed: u64, iterations: usize) -> Result<Self, LoopError> {
        let descs: Vec<&[f32; DESCRIPTOR_LEN]> = docs.iter().flat_map(|d| d.iter().map(|f| &f.descriptor)).collect();
        if descs.is_empty() {
            return Err(LoopError::NoDescriptors);
        }
        let k = size.min(descs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = vec![*descs[rng.random_range(0..descs.len())]];
        let mut d2: Vec<f32> = descs.iter().map(|d| descriptor_distance_sq(d, &words[0])).collect();
        while words.len() < k {
            let total: f64 = d2.iter().map(|&x| x as f64).sum();
            let pick = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                let mut idx = descs.len() - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if r < d as f64 {
                        idx = i;
                        break;
                    }
                    r -= d as f64;
                }
                idx
            } else {
                rng.random_range(0..descs.len())
            };
            let w = *descs[pick];
            words.push(w);
            d2.par_iter_mut()
                .zip(&descs)
                .for_each(|(x, d)| *x = x.min(descriptor_distance_sq(d, &w)));
        }
        for _ in 0..iterations {
            let assign: Vec<usize> = descs.par_iter().map(|d| nearest_word(&words, d)).collect();
            let mut sums = vec![[0f64; DESCRIPTOR_LEN]; k];
            let mut counts = vec![0usize; k];
            for (d, &a) in descs.iter().zip(&assign) {
                counts[a] += 1;
                for (s, &x) in sums[a].iter_mut().zip(d.iter()) {
                    *s += x as f64;
                }
            }
            for (w, (s, &c)) in words.iter_mut().zip(sums.iter().zip(&counts)) {
                if c > 0 {
                    for (wx, sx) in w.iter_mut().zip(s) {
                        *wx = (sx / c as f64) as f32;
                    }
                }
            }
        }
        let mut vocab = Self {
            words,
            doc_frequency: vec![0; k],
            num_docs: docs.len() as u32,
        };
        for doc in docs {
            let mut seen = vec![false; k];
            for f in doc.iter() {
                seen[vocab.quantize(&f.descriptor)] = true;
            }
            for (df, s) in vocab.doc_frequency.iter_mut().zip(seen) {
                *df += u32::from(s);
            }
        }
        Ok(vocab)
    }

    pub fn quantize(&self, d: &[f32; DESCRIPTOR_LEN]) -> usize {
        nearest_word(&self.words, d)
    }

    fn idf(&self, word: usize) -> f64 {
        (self.num_docs as f64 / self.doc_frequency[word].max(1) as f64).ln()
    }
}

/// L2-normalized sparse tf-idf vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BowVector {
    pub weights: BTreeMap<u32, f64>,
}

impl BowVector {
    pub fn cosine(&self, other: &BowVector) -> f64 {
        let (small, large) = if self.weights.len() <= other.weights.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .weights
            .iter()
            .filter_map(|(w, a)| large.weights.get(w).map(|b| a * b))
            .sum()
    }
}

pub fn bow_signature(features: &[Feature], vocab: &Vocabulary) -> Result<BowVector, LoopError> {
    if vocab.words.is_empty() {
        return Err(LoopError::EmptyVocabulary);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for f in features {
        *counts.entry(vocab.quantize(&f.descriptor) as u32).or_default() += 1;
    }
    let total = features.len().max(1) as f64;
    let mut weights: BTreeMap<u32, f64> = counts
        .into_iter()
        .map(|(w, c)| (w, c as f64 / total * vocab.idf(w as usize)))
        .filter(|(_, x)| *x > 0.0)
        .collect();
    let norm = weights.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        weights.values_mut().for_each(|x| *x /= norm);
    }
    Ok(BowVector { weights })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub session: u32,
    /// Position of the keyframe within its session.
    pub index: usize,
    pub signature: BowVector,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    /// Index into the database.
    pub entry: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BowDatabase {
    pub entries: Vec<DbEntry>,
}

impl BowDatabase {
    pub fn add(&mut self, session: u32, index: usize, signature: BowVector) -> usize {
        self.entries.push(DbEntry {
            session,
            index,
            signature,
        });
        self.entries.len() - 1
    }

    /// Most similar entries, excluding the same session's keyframes within
    /// `exclusion_window` of `index`. Ties keep insertion order.
    pub fn query(
        &self,
        signature: &BowVector,
        session: u32,
        index: usize,
        top_k: usize,
        exclusion_window: usize,
    ) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.session != session || e.index.abs_diff(index) > exclusion_window)
            .map(|(i, e)| Candidate {
                entry: i,
                similarity: e.signature.cosine(signature),
            })
            .collect();
        out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.entry.cmp(&b.entry)));
        out.truncate(top_k);
        out
    }
}

/// Keyframe data needed for geometric verification. Everything is in the
/// keyframe's camera frame.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: u64,
    pub features: Vec<Feature>,
    /// Depth-lifted feature positions, `None` where depth is missing.
    pub points: Vec<Option<Vector3<f64>>>,
    /// Full-frame cloud with normals.
    pub cloud: PointCloud,
}

/// Lifts features (in pixels of an image `scale`× the depth resolution)
/// through the depth map at the nearest depth pixel.
pub fn lift_features(features: &[Feature], depth: &DepthImage, k: &CameraIntrinsics, scale: usize) -> Vec<Option<Vector3<f64>>> {
    let s = scale as f64;
    features
        .iter()
        .map(|f| {
            let x = (f.u + 0.5) / s - 0.5;
            let y = (f.v + 0.5) / s - 0.5;
            let (ui, vi) = (x.round(), y.round());
            if ui < 0.0 || vi < 0.0 || ui >= depth.width as f64 || vi >= depth.height as f64 {
                return None;
            }
            depth
                .meters(ui as usize, vi as usize)
                .map(|z| k.backproject(x, y, z))
        })
        .collect()
}

/// Verified loop constraint; `relative` is the pose of `to_kf` in the frame
/// of `from_kf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopEdgeCandidate {
    pub from_kf: u64,
    pub to_kf: u64,
    pub relative: Pose,
    pub inliers: usize,
    pub icp_rmse: f64,
    pub icp_fitness: f64,
}

/// Matched 3-D pairs `(point in b, point in a)` from mutual descriptor
/// matches with valid depth on both sides.
pub fn lifted_matches(a: &Keyframe, b: &Keyframe, ratio: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    mutual_matches(&a.features, &b.features, ratio)
        .into_iter()
        .filter_map(|(i, j)| Some((b.points[j]?, a.points[i]?)))
        .collect()
}

/// RANSAC over 3-point rigid fits; returns the refit on the best inlier set
/// and its inlier count. The transform maps the first element of each pair
/// onto the second.
pub fn ransac_rigid(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    iterations: usize,
    threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(Pose, usize)> {
    let n = pairs.len();
    if n < 3 {
        return None;
    }
    let inliers_of = |t: &Pose| -> Vec<usize> {
        (0..n)
            .filter(|&i| (t.transform_point(&pairs[i].0) - pairs[i].1).norm() < threshold)
            .collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for m in [i.min(j), i.max(j)] {
            if k >= m {
                k += 1;
            }
        }
        let src = [pairs[i].0, pairs[j].0, pairs[k].0];
        let dst = [pairs[i].1, pairs[j].1, pairs[k].1];
        let Ok(t) = umeyama_align(&src, &dst) else { continue };
        let inl = inliers_of(&t);
        if inl.len() > best.len() {
            best = inl;
            if best.len() == n {
                break;
            }
        }
    }
    if best.len() < 3 {
        return None;
    }
    let src: Vec<_> = best.iter().map(|&i| pairs[i].0).collect();
    let dst: Vec<_> = best.iter().map(|&i| pairs[i].1).collect();
    let t = umeyama_align(&src, &dst).ok()?;
    Some((t, best.len()))
}

/// Geometric verification of a candidate pair. `None` means rejected.
pub fn estimate_loop_transform(a: &Keyframe, b: &Keyframe, cfg: &LoopClosureConfig) -> Option<LoopEdgeCandidate> {
    let lifted = |k: &Keyframe| k.points.iter().filter(|p| p.is_some()).count();
    if lifted(a) < cfg.min_inliers || lifted(b) < cfg.min_inliers {
        return None;
    }
    let pairs = lifted_matches(a, b, cfg.ratio_test);
    if pairs.len() < cfg.min_inliers {
        return None;
    }
    let seed = cfg.ransac_seed ^ a.id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.id.rotate_left(29);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (init, inliers) = ransac_rigid(&pairs, cfg.ransac_iterations, cfg.inlier_threshold, &mut rng)?;
    if inliers < cfg.min_inliers {
        return None;
    }
    let icp = icp_point_to_plane(&b.cloud, &a.cloud, &init, &cfg.icp).ok()?;
    if icp.fitness < cfg.min_fitness {
        return None;
    }
    // Support of the refined transform, which is the one the edge carries.
    let inliers = pairs
        .iter()
        .filter(|(pb, pa)| (icp.pose.transform_point(pb) - pa).norm() < cfg.inlier_threshold)
        .count();
    if inliers < cfg.min_inliers {
        return None;
    }
    Some(LoopEdgeCandidate {
        from_kf: a.id,
        to_kf: b.id,
        relative: icp.pose,
        inliers,
        icp_rmse: icp.rmse,
        icp_fitness: icp.fitness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::detect_features;
    use crate::imaging::{align_color_to_depth, AlignedColor};
    use crate::odometry::{frame_cloud, OdometryConfig};
    use crate::synthetic::{look_along, render_color, render_depth, room_scene, RigKind, Scene, SyntheticRig};

    fn keyframe(scene: &Scene, pose: &Pose, id: u64) -> Keyframe {
        let rig = SyntheticRig::new(RigKind::Matched);
        let depth = render_depth(scene, pose, &rig.depth);
        let color = render_color(scene, &rig.color_pose(pose), &rig.color);
        let aligned: AlignedColor = if depth.data.iter().all(|&z| z > 0) {
            align_color_to_depth(&color, &depth, &rig.depth, &rig.color, &rig.extrinsics).unwrap()
        } else {
            AlignedColor::fully_valid(color)
        };
        let features = detect_features(&aligned, &FeatureConfig::default());
        Keyframe {
            id,
            points: lift_features(&features, &depth, &rig.depth, 2),
            features,
            cloud: frame_cloud(&depth, &rig.depth, &OdometryConfig::default()).unwrap(),
        }
    }

    fn view(x: f64, y: f64, yaw_deg: f64) -> Pose {
        let a = yaw_deg.to_radians();
        look_along(Vector3::new(x, y, 1.3), &Vector3::new(a.cos(), a.sin(), -0.15))
    }

    fn vocab_for(kfs: &[&Keyframe]) -> Vocabulary {
        let docs: Vec<&[Feature]> = kfs.iter().map(|k| k.features.as_slice()).collect();
        Vocabulary::build(&docs, 64, 42, 5).unwrap()
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let v = Vocabulary {
            words: vec![],
            doc_frequency: vec![],
            num_docs: 0,
        };
        assert_eq!(bow_signature(&[], &v), Err(LoopError::EmptyVocabulary));
    }

    #[test]
    fn self_query_and_window() {
        let scene = room_scene(7);
        let a = keyframe(&scene, &view(0.8, -1.0, 0.0), 0);
        let b = keyframe(&scene, &view(-1.0, 0.8, 180.0), 1);
        let c = keyframe(&scene, &view(1.0, 1.2, 120.0), 2);
        let vocab = vocab_for(&[&a, &b, &c]);
        let sig: Vec<BowVector> = [&a, &b, &c].iter().map(|k| bow_signature(&k.features, &vocab).unwrap()).collect();
        let mut db = BowDatabase::default();
        db.add(1, 0, sig[0].clone());
        db.add(1, 1, sig[1].clone());
        db.add(1, 2, sig[2].clone());
        let r = db.query(&sig[1], 0, 0, 5, 30);
        assert_eq!(r[0].entry, 1);
        assert!((r[0].similarity - 1.0).abs() < 1e-12);
        // same session within the window: nothing
        let mut db2 = BowDatabase::default();
        db2.add(0, 0, sig[0].clone());
        assert!(db2.query(&sig[0], 0, 5, 5, 30).is_empty());
        assert_eq!(db2.query(&sig[0], 0, 31, 5, 30).len(), 1);
    }

    #[test]
    fn duplicated_descriptors_keep_ranking() {
        let scene = room_scene(7);
        let kfs: Vec<Keyframe> = (0..4).map(|i| keyframe(&scene, &view(0.9, -1.0 + 0.6 * i as f64, 60.0 * i as f64), i)).collect();
        let refs: Vec<&Keyframe> = kfs.iter().collect();
        let vocab = vocab_for(&refs);
        let mut db = BowDatabase::default();
        for (i, k) in kfs.iter().enumerate() {
            db.add(1, i, bow_signature(&k.features, &vocab).unwrap());
        }
        let q = &kfs[2].features;
        let doubled: Vec<Feature> = q.iter().chain(q.iter()).cloned().collect();
        let r1 = db.query(&bow_signature(q, &vocab).unwrap(), 0, 0, 4, 30);
        let r2 = db.query(&bow_signature(&doubled, &vocab).unwrap(), 0, 0, 4, 30);
        let ids = |r: &[Candidate]| r.iter().map(|c| c.entry).collect::<Vec<_>>();
        assert_eq!(ids(&r1), ids(&r2));
    }

    #[test]
    fn nearby_views_are_mutual_top_match() {
        let scene = room_scene(7);
        let a = keyframe(&scene, &view(0.5, -1.0, 10.0), 0);
        let a2 = keyframe(&scene, &view(0.6, -1.0, 10.0), 1);
        let others: Vec<Keyframe> = [(-1.0, 1.0, 200.0), (1.2, 0.9, 100.0), (-1.2, -0.9, 270.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w))| keyframe(&scene, &view(x, y, w), 10 + i as u64))
            .collect();
        let mut all = vec![&a, &a2];
        all.extend(others.iter());
        let vocab = vocab_for(&all);
        let sig = |k: &Keyframe| bow_signature(&k.features, &vocab).unwrap();
        // session 0 holds `a`, session 1 holds `a2` plus distractors
        let mut db1 = BowDatabase::default();
        db1.add(1, 0, sig(&a2));
        for (i, o) in others.iter().enumerate() {
            db1.add(1, i + 1, sig(o));
        }
        assert_eq!(db1.query(&sig(&a), 0, 0, 1, 30)[0].entry, 0);
        let mut db0 = BowDatabase::default();
        db0.add(0, 0, sig(&a));
        for (i, o) in others.iter().enumerate() {
            db0.add(0, i + 1, sig(o));
        }
        assert_eq!(db0.query(&sig(&a2), 1, 0, 1, 30)[0].entry, 0);
    }

    #[test]
    fn self_transform_is_identity() {
        let scene = room_scene(7);
        let a = keyframe(&scene, &view(0.5, -1.0, 10.0), 3);
        let cfg = LoopClosureConfig::default();
        let pairs = lifted_matches(&a, &a, cfg.ratio_test);
        let e = estimate_loop_transform(&a, &a, &cfg).unwrap();
        assert_eq!(e.inliers, pairs.len());
        assert!(e.relative.translation().norm() < 1e-6);
        assert!(e.relative.angle() < 1e-6);
    }

    #[test]
    fn recovers_known_relative_pose() {
        let scene = room_scene(7);
        let pa = view(0.3, -1.0, 20.0);
        let delta = Pose::from_axis_angle(&Vector3::y(), 10f64.to_radians(), Vector3::new(0.3, 0.0, 0.0).normalize() * 0.3);
        let pb = pa.compose(&delta);
        let a = keyframe(&scene, &pa, 0);
        let b = keyframe(&scene, &pb, 1);
        let cfg = LoopClosureConfig::default();
        let e = estimate_loop_transform(&a, &b, &cfg).expect("accepted");
        let err = delta.inverse().compose(&e.relative);
        assert!(err.translation().norm() < 0.01, "{}", err.translation().norm());
        assert!(err.angle().to_degrees() < 0.5);
        // a posteriori: the relative pose maps b's lifted matches onto a's
        let pairs = lifted_matches(&a, &b, cfg.ratio_test);
        let close = pairs
            .iter()
            .filter(|(pb, pa)| (e.relative.transform_point(pb) - pa).norm() < cfg.inlier_threshold)
            .count();
        assert!(close >= e.inliers, "{close} < {}", e.inliers);
    }

    #[test]
    fn disjoint_views_are_rejected() {
        let a = keyframe(&room_scene(7), &view(0.5, -1.0, 10.0), 0);
        let b = keyframe(&room_scene(99), &view(-1.0, 1.0, 200.0), 1);
        assert!(estimate_loop_transform(&a, &b, &LoopClosureConfig::default()).is_none());
    }

    #[test]
    fn ransac_without_outliers_equals_umeyama() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.3).normalize(), 0.4, Vector3::new(0.1, -0.3, 0.7));
        let src: Vec<Vector3<f64>> = (0..40)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 2.0)
            .collect();
        let pairs: Vec<_> = src.iter().map(|p| (*p, t.transform_point(p) + Vector3::repeat(1e-4))).collect();
        let (r, n) = ransac_rigid(&pairs, 1000, 0.05, &mut rng).unwrap();
        let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(n, 40);
        assert_eq!(r, umeyama_align(&src, &dst).unwrap());
    }
}
