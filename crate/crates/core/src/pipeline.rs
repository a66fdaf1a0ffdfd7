//! Command implementations behind the CLI: alignment, single-session
//! mapping, multi-session merging, fusion, evaluation and synthetic data.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{ate, overlap_rmse, rpe, voxel_downsample_centroid, EvalError, ReconEvalConfig, Trajectory};
use crate::features::detect_features;
use crate::geometry::{unproject, DepthImage, PointCloud, Pose, RigExtrinsics};
use crate::imaging::{
    align_color_to_depth, align_depth_to_color, inpaint_color_holes, inpaint_depth_linear, ir_tone_map, AlignedColor,
    ColorImage, ImagingError,
};
use crate::io::{
    decode_pgm8, decode_ply_points, decode_ppm, encode_cloud_ply, encode_mesh_ply, encode_pgm8,
    encode_ppm, format_trajectory, frame_name, parse_trajectory, read_file, read_text, write_atomic, write_dataset,
    Dataset, IoError, Rig,
};
use crate::loop_closure::{
    bow_signature, estimate_loop_transform, lift_features, BowDatabase, BowVector, Keyframe, LoopClosureConfig,
    LoopEdgeCandidate, Vocabulary,
};
use crate::odometry::{frame_cloud, OdometryConfig, SessionTracker, TrackingStatus};
use crate::pose_graph::{merge_sessions, merged_id, CrossEdge, Edge, EdgeKind, OptimizeOptions, PoseGraph, PoseGraphError};
use crate::surface::{fuse_segments, kmeans_partition, TsdfConfig};
use crate::synthetic::{
    filter_visible, make_trajectory, render_color, render_depth, room_scene, sample_scene_cloud, NoiseModel, RigKind,
    SyntheticRig, TrajectoryKind, TrajectoryParams,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Odometry(String),
    #[error("{0}")]
    Merge(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 2,
            PipelineError::Odometry(_) => 3,
            PipelineError::Merge(_) => 4,
        }
    }
}

impl From<IoError> for PipelineError {
    fn from(e: IoError) -> Self {
        PipelineError::Input(e.to_string())
    }
}

fn input(msg: impl Into<String>) -> PipelineError {
    PipelineError::Input(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Fraction of lost frames above which mapping fails.
    pub max_lost_fraction: f64,
    /// Information weight of an odometry edge whose registration RMSE
    /// equals `reference_rmse`; scales with RMSE⁻².
    pub odometry_information: f64,
    /// Meters.
    pub reference_rmse: f64,
    /// Information weight of a loop edge with `min_inliers` inliers; scales
    /// with the inlier count.
    pub loop_information: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            max_lost_fraction: 0.5,
            odometry_information: 1e4,
            reference_rmse: 0.01,
            loop_information: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub point_budget: usize,
    pub seed: u64,
    /// Every n-th frame is integrated.
    pub frame_stride: usize,
    /// Integrate only the keyframes listed next to the trajectory.
    pub keyframes_only: bool,
    /// Pixel stride of the clouds used for partitioning.
    pub partition_stride: usize,
    /// Spacing of the surface samples written as the fused cloud, meters;
    /// one sample is kept per cell of this size.
    pub cloud_spacing: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            point_budget: 500_000,
            seed: 42,
            frame_stride: 4,
            keyframes_only: false,
            partition_stride: 4,
            cloud_spacing: 0.005,
        }
    }
}

/// Every tunable of the pipeline, one section per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub odometry: OdometryConfig,
    pub loop_closure: LoopClosureConfig,
    pub pose_graph: OptimizeOptions,
    pub mapping: MappingConfig,
    pub tsdf: TsdfConfig,
    pub fusion: FusionConfig,
    pub evaluation: ReconEvalConfig,
}

fn pre(section: &'static str) -> impl Fn(String) -> String {
    move |e| format!("{section}.{e}")
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.odometry.validate().map_err(pre("odometry"))?;
        self.loop_closure.validate().map_err(pre("loop_closure"))?;
        self.pose_graph.validate().map_err(pre("pose_graph"))?;
        self.tsdf.validate().map_err(pre("tsdf"))?;
        self.evaluation.validate().map_err(pre("evaluation"))?;
        let m = &self.mapping;
        if !(0.0..=1.0).contains(&m.max_lost_fraction) {
            return Err(format!("mapping.max_lost_fraction: must be in [0, 1], got {}", m.max_lost_fraction));
        }
        for (name, v) in [
            ("mapping.odometry_information", m.odometry_information),
            ("mapping.reference_rmse", m.reference_rmse),
            ("mapping.loop_information", m.loop_information),
            ("fusion.cloud_spacing", self.fusion.cloud_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("fusion.point_budget", self.fusion.point_budget),
            ("fusion.frame_stride", self.fusion.frame_stride),
            ("fusion.partition_stride", self.fusion.partition_stride),
        ] {
            if v == 0 {
                return Err(format!("{name}: must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, PipelineError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read_text(p)?;
                Self::from_json(&text).map_err(|e| input(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

// ---- alignment ----

/// Color warped into the depth frame, holes filled, with the pre-fill mask.
pub fn align_frame(depth: &DepthImage, color: &ColorImage, rig: &Rig) -> Result<AlignedColor, ImagingError> {
    let dense = match inpaint_depth_linear(depth) {
        Ok(d) => d,
        Err(ImagingError::NoValidDepth) => {
            let (w, h) = (2 * depth.width, 2 * depth.height);
            return Ok(AlignedColor {
                image: ColorImage::black(w, h),
                valid_mask: vec![false; w * h],
                raw_mask: vec![false; w * h],
            });
        }
        Err(e) => return Err(e),
    };
    let aligned = align_color_to_depth(color, &dense, &rig.depth, &rig.color, &rig.extrinsics)?;
    Ok(inpaint_color_holes(&aligned))
}

fn mask_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
}

/// Aligned color of frame `i`: from `aligned/` when present, else computed.
fn aligned_color(ds: &Dataset, i: usize, depth: &DepthImage) -> Result<AlignedColor, PipelineError> {
    let img_path = ds.root.join("aligned").join(frame_name(i, "ppm"));
    let mask_path = ds.root.join("aligned_mask").join(frame_name(i, "pgm"));
    if img_path.is_file() && mask_path.is_file() {
        let image = decode_ppm(&read_file(&img_path)?).map_err(|e| input(format!("{}: {e}", img_path.display())))?;
        let (w, h, m) = decode_pgm8(&read_file(&mask_path)?).map_err(|e| input(format!("{}: {e}", mask_path.display())))?;
        if (w, h) != (image.width, image.height) {
            return Err(input(format!("{}: size differs from the aligned image", mask_path.display())));
        }
        let raw: Vec<bool> = m.iter().map(|&b| b > 0).collect();
        return Ok(AlignedColor {
            image,
            valid_mask: raw.clone(),
            raw_mask: raw,
        });
    }
    let color = ds.color(i)?;
    align_frame(depth, &color, &ds.rig).map_err(|e| input(format!("frame {i}: {e}")))
}

/// Writes `aligned/` and `aligned_mask/` (C2D), or with `d2c` a derived
/// dataset whose depth is registered into the color camera.
pub fn cmd_align(input_dir: &Path, output: &Path, d2c: bool) -> Result<(), PipelineError> {
    let ds = Dataset::open(input_dir)?;
    if d2c {
        if same_dir(input_dir, output) {
            return Err(input("--d2c needs an output directory different from the input"));
        }
        let frames: Vec<(DepthImage, ColorImage)> = (0..ds.len())
            .into_par_iter()
            .map(|i| -> Result<_, PipelineError> {
                let d = ds.depth(i)?;
                let c = ds.color(i)?;
                let reg = align_depth_to_color(&d, &ds.rig.depth, &ds.rig.color, &ds.rig.extrinsics)
                    .map_err(|e| input(format!("frame {i}: {e}")))?;
                Ok((reg, c))
            })
            .collect::<Result<_, _>>()?;
        let rig = Rig {
            depth: ds.rig.color,
            color: ds.rig.color,
            extrinsics: RigExtrinsics::identity(),
        };
        for (i, (_, c)) in frames.iter().enumerate() {
            write_atomic(&output.join("aligned").join(frame_name(i, "ppm")), &encode_ppm(c))?;
            let full = vec![255u8; c.width * c.height];
            write_atomic(
                &output.join("aligned_mask").join(frame_name(i, "pgm")),
                &encode_pgm8(c.width, c.height, &full),
            )?;
        }
        write_dataset(output, &rig, &ds.timestamps, frames.into_iter())?;
        return Ok(());
    }
    let results: Vec<Result<(), PipelineError>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let d = ds.depth(i)?;
            let c = ds.color(i)?;
            let a = align_frame(&d, &c, &ds.rig).map_err(|e| input(format!("frame {i}: {e}")))?;
            write_atomic(&output.join("aligned").join(frame_name(i, "ppm")), &encode_ppm(&a.image))?;
            write_atomic(
                &output.join("aligned_mask").join(frame_name(i, "pgm")),
                &encode_pgm8(a.width(), a.height(), &mask_bytes(&a.raw_mask)),
            )?;
            if ds.has_ir {
                let ir = ds.ir(i)?;
                write_atomic(
                    &output.join("ir_tonemapped").join(frame_name(i, "pgm")),
                    &encode_pgm8(ir.width, ir.height, &ir_tone_map(&ir.data)),
                )?;
            }
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

// ---- mapping ----

fn build_keyframe(ds: &Dataset, i: usize, depth: &DepthImage, cfg: &PipelineConfig) -> Result<Keyframe, PipelineError> {
    let aligned = aligned_color(ds, i, depth)?;
    let features = detect_features(&aligned, &cfg.loop_closure.features);
    let scale = (aligned.width() / depth.width).max(1);
    let cloud = frame_cloud(depth, &ds.rig.depth, &cfg.odometry).map_err(|e| input(format!("frame {i}: {e}")))?;
    Ok(Keyframe {
        id: i as u64,
        points: lift_features(&features, depth, &ds.rig.depth, scale),
        features,
        cloud,
    })
}

fn build_keyframes(ds: &Dataset, ids: &[usize], depths: &[DepthImage], cfg: &PipelineConfig) -> Result<Vec<Keyframe>, PipelineError> {
    ids.par_iter()
        .zip(depths.par_iter())
        .map(|(&i, d)| build_keyframe(ds, i, d, cfg))
        .collect()
}

fn build_vocabulary(kfs: &[Keyframe], cfg: &LoopClosureConfig) -> Option<Vocabulary> {
    let docs: Vec<&[crate::features::Feature]> = kfs.iter().map(|k| k.features.as_slice()).collect();
    Vocabulary::build(&docs, cfg.vocabulary_size, cfg.vocabulary_seed, cfg.vocabulary_iterations).ok()
}

fn information(weight: f64) -> Matrix6<f64> {
    Matrix6::identity() * weight
}

fn odometry_information(cfg: &MappingConfig, rmse: f64) -> Matrix6<f64> {
    let ratio = cfg.reference_rmse / rmse.max(1e-4);
    information(cfg.odometry_information * ratio * ratio)
}

fn loop_information(cfg: &PipelineConfig, inliers: usize) -> Matrix6<f64> {
    information(cfg.mapping.loop_information * inliers as f64 / cfg.loop_closure.min_inliers as f64)
}

/// The best-ranked candidate that passes geometric verification; one loop
/// hypothesis is accepted per query keyframe.
fn verify_candidates(
    query: &Keyframe,
    candidates: &[(usize, &Keyframe)],
    cfg: &LoopClosureConfig,
) -> Option<(usize, LoopEdgeCandidate)> {
    candidates
        .par_iter()
        .find_map_first(|&(entry, kf)| estimate_loop_transform(kf, query, cfg).map(|e| (entry, e)))
}

/// Result of single-session mapping.
#[derive(Clone, Debug)]
pub struct SessionMap {
    /// Optimized camera-to-world pose of every frame.
    pub poses: Vec<Pose>,
    pub graph: PoseGraph,
    pub keyframes: Vec<usize>,
    pub map_ids: Vec<u32>,
    pub loops: Vec<LoopEdgeCandidate>,
    pub lost_frames: usize,
}

/// Optimizes each connected component separately, anchored at its first
/// node.
fn optimize_components(graph: &mut PoseGraph, opts: &OptimizeOptions) -> Result<(), PoseGraphError> {
    for comp in graph.connected_components() {
        let mut sub = graph.subgraph(&comp);
        sub.optimize(opts)?;
        for (id, n) in sub.nodes {
            graph.nodes.get_mut(&id).expect("node from subgraph").pose = n.pose;
        }
    }
    Ok(())
}

/// Re-expresses every frame relative to the latest keyframe of its map.
fn propagate_poses(odo: &[Pose], map_ids: &[u32], keyframes: &[usize], graph: &PoseGraph) -> Vec<Pose> {
    let mut out = Vec::with_capacity(odo.len());
    let mut kf_iter = keyframes.iter().peekable();
    let mut reference: Option<usize> = None;
    for i in 0..odo.len() {
        while let Some(&&k) = kf_iter.peek() {
            if k > i {
                break;
            }
            reference = Some(k);
            kf_iter.next();
        }
        let pose = match reference.filter(|&r| map_ids[r] == map_ids[i]) {
            Some(r) => {
                let opt = graph.pose(r as u64).expect("keyframe node");
                opt.compose(&odo[r].inverse().compose(&odo[i]))
            }
            None => out.last().copied().unwrap_or(odo[i]),
        };
        out.push(pose);
    }
    out
}

pub fn map_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<SessionMap, PipelineError> {
    let n = ds.len();
    let depths: Vec<DepthImage> = (0..n).into_par_iter().map(|i| ds.depth(i)).collect::<Result<_, _>>()?;
    let mut tracker = SessionTracker::new(ds.rig.depth, cfg.odometry);
    let mut odo = Vec::with_capacity(n);
    let mut map_ids = Vec::with_capacity(n);
    let mut keyframes = Vec::new();
    let mut lost = Vec::new();
    let mut rmse = Vec::with_capacity(n);
    for (i, d) in depths.iter().enumerate() {
        let (r, m) = tracker.push(d).map_err(|e| input(format!("frame {i}: {e}")))?;
        if r.status == TrackingStatus::Lost {
            lost.push(i);
        }
        if r.keyframe {
            keyframes.push(i);
        }
        odo.push(r.pose);
        rmse.push(r.rmse);
        map_ids.push(m);
    }
    if lost.len() as f64 > cfg.mapping.max_lost_fraction * n as f64 {
        let breaks: Vec<String> = (1..n)
            .filter(|&i| map_ids[i] != map_ids[i - 1])
            .map(|i| i.to_string())
            .collect();
        return Err(PipelineError::Odometry(format!(
            "tracking lost on {} of {n} frames; map breaks at frames [{}]",
            lost.len(),
            breaks.join(", ")
        )));
    }

    let kf_depths: Vec<DepthImage> = keyframes.iter().map(|&i| depths[i].clone()).collect();
    let kfs = build_keyframes(ds, &keyframes, &kf_depths, cfg)?;

    let mut graph = PoseGraph::new();
    for &k in &keyframes {
        graph.add_node(k as u64, odo[k], 0).map_err(|e| input(e.to_string()))?;
    }
    for w in keyframes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if map_ids[a] == map_ids[b] {
            graph
                .add_edge(Edge {
                    from: a as u64,
                    to: b as u64,
                    relative: odo[a].inverse().compose(&odo[b]),
                    information: odometry_information(&cfg.mapping, rmse[b]),
                    kind: EdgeKind::Odometry,
                })
                .map_err(|e| input(e.to_string()))?;
        }
    }

    let mut loops = Vec::new();
    if let Some(vocab) = build_vocabulary(&kfs, &cfg.loop_closure) {
        let lc = &cfg.loop_closure;
        let sigs: Vec<BowVector> = kfs
            .par_iter()
            .map(|k| bow_signature(&k.features, &vocab))
            .collect::<Result<_, _>>()
            .map_err(|e| input(e.to_string()))?;
        let mut db = BowDatabase::default();
        for (j, kf) in kfs.iter().enumerate() {
            let cands: Vec<(usize, &Keyframe)> = db
                .query(&sigs[j], 0, j, lc.top_k, lc.exclusion_window)
                .into_iter()
                .filter(|c| c.similarity >= lc.min_similarity)
                .map(|c| (c.entry, &kfs[db.entries[c.entry].index]))
                .collect();
            if let Some((_, e)) = verify_candidates(kf, &cands, lc) {
                graph
                    .add_edge(Edge {
                        from: e.from_kf,
                        to: e.to_kf,
                        relative: e.relative,
                        information: loop_information(cfg, e.inliers),
                        kind: EdgeKind::Loop,
                    })
                    .map_err(|err| input(err.to_string()))?;
                loops.push(e);
            }
            db.add(0, j, sigs[j].clone());
        }
    }

    optimize_components(&mut graph, &cfg.pose_graph).map_err(|e| PipelineError::Odometry(format!("pose graph: {e}")))?;
    let poses = propagate_poses(&odo, &map_ids, &keyframes, &graph);
    Ok(SessionMap {
        poses,
        graph,
        keyframes,
        map_ids,
        loops,
        lost_frames: lost.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionInfo {
    pub dataset: PathBuf,
    pub frames: usize,
    pub keyframes: usize,
    pub loop_edges: usize,
    pub lost_frames: usize,
    /// Maps started by odometry (1 + re-initializations after tracking loss).
    pub odometry_maps: usize,
    /// Connected components of the pose graph after loop closure.
    pub map_components: usize,
}

fn timestamped(ds: &Dataset, poses: &[Pose]) -> Vec<(f64, Pose)> {
    ds.timestamps.iter().copied().zip(poses.iter().copied()).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn cmd_map(input_dir: &Path, output: &Path, cfg: &PipelineConfig) -> Result<SessionMap, PipelineError> {
    let ds = Dataset::open(input_dir)?;
    let map = map_dataset(&ds, cfg)?;
    write_atomic(&output.join("trajectory.txt"), format_trajectory(&timestamped(&ds, &map.poses)).as_bytes())?;
    write_atomic(&output.join("graph.txt"), map.graph.to_text().as_bytes())?;
    let kf: String = map.keyframes.iter().map(|k| format!("{k}\n")).collect();
    write_atomic(&output.join("keyframes.txt"), kf.as_bytes())?;
    write_atomic(&output.join("config.json"), cfg.to_json().as_bytes())?;
    let info = SessionInfo {
        dataset: input_dir.canonicalize().unwrap_or_else(|_| input_dir.to_path_buf()),
        frames: ds.len(),
        keyframes: map.keyframes.len(),
        loop_edges: map.loops.len(),
        lost_frames: map.lost_frames,
        odometry_maps: map.map_ids.iter().collect::<std::collections::BTreeSet<_>>().len(),
        map_components: map.graph.connected_components().len(),
    };
    write_json(&output.join("session.json"), &info)?;
    Ok(map)
}

// ---- merging ----

struct LoadedSession {
    dir: PathBuf,
    ds: Dataset,
    graph: PoseGraph,
    trajectory: Vec<(f64, Pose)>,
    keyframes: Vec<usize>,
}

fn load_session(dir: &Path) -> Result<LoadedSession, PipelineError> {
    let info_path = dir.join("session.json");
    let info: SessionInfo = serde_json::from_str(&read_text(&info_path)?)
        .map_err(|e| input(format!("{}: {e}", info_path.display())))?;
    let ds = Dataset::open(&info.dataset)?;
    let graph_path = dir.join("graph.txt");
    let graph = PoseGraph::from_text(&read_text(&graph_path)?).map_err(|e| input(format!("{}: {e}", graph_path.display())))?;
    let traj_path = dir.join("trajectory.txt");
    let trajectory = parse_trajectory(&read_text(&traj_path)?).map_err(|e| input(format!("{}: {e}", traj_path.display())))?;
    if trajectory.len() != ds.len() {
        return Err(input(format!(
            "{}: {} poses for {} frames",
            traj_path.display(),
            trajectory.len(),
            ds.len()
        )));
    }
    let kf_path = dir.join("keyframes.txt");
    let keyframes: Vec<usize> = read_text(&kf_path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| input(format!("{}: not a list of frame indices", kf_path.display())))?;
    if let Some(&k) = keyframes.iter().find(|&&k| k >= ds.len() || graph.pose(k as u64).is_none()) {
        return Err(input(format!("{}: keyframe {k} is not in the graph", kf_path.display())));
    }
    Ok(LoadedSession {
        dir: dir.to_path_buf(),
        ds,
        graph,
        trajectory,
        keyframes,
    })
}

/// Result of multi-session merging: one trajectory per input session.
#[derive(Clone, Debug)]
pub struct MergeResult {
    pub trajectories: Vec<Vec<(f64, Pose)>>,
    pub graph: PoseGraph,
    pub cross_edges: Vec<CrossEdge>,
}

pub fn merge_session_dirs(dirs: &[PathBuf], cfg: &PipelineConfig) -> Result<MergeResult, PipelineError> {
    if dirs.is_empty() {
        return Err(input("no sessions given"));
    }
    let sessions: Vec<LoadedSession> = dirs.iter().map(|d| load_session(d)).collect::<Result<_, _>>()?;
    let mut all_kfs: Vec<Vec<Keyframe>> = Vec::new();
    for s in &sessions {
        let depths: Vec<DepthImage> = s.keyframes.iter().map(|&i| s.ds.depth(i)).collect::<Result<_, _>>()?;
        all_kfs.push(build_keyframes(&s.ds, &s.keyframes, &depths, cfg)?);
    }
    let lc = &cfg.loop_closure;
    let vocab = build_vocabulary(&all_kfs[0], lc);
    let mut cross = Vec::new();
    if let Some(vocab) = vocab {
        let sigs: Vec<Vec<BowVector>> = all_kfs
            .iter()
            .map(|kfs| kfs.par_iter().map(|k| bow_signature(&k.features, &vocab)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()
            .map_err(|e| input(e.to_string()))?;
        let mut db = BowDatabase::default();
        let mut owners: Vec<(usize, usize)> = Vec::new();
        for (s, kfs) in all_kfs.iter().enumerate() {
            if s > 0 {
                for (j, kf) in kfs.iter().enumerate() {
                    let cands: Vec<(usize, &Keyframe)> = db
                        .query(&sigs[s][j], s as u32, j, lc.top_k, lc.exclusion_window)
                        .into_iter()
                        .filter(|c| c.similarity >= lc.min_similarity)
                        .map(|c| {
                            let (os, oj) = owners[c.entry];
                            (c.entry, &all_kfs[os][oj])
                        })
                        .collect();
                    if let Some((entry, e)) = verify_candidates(kf, &cands, lc) {
                        cross.push(CrossEdge {
                            from_session: owners[entry].0,
                            from: e.from_kf,
                            to_session: s,
                            to: e.to_kf,
                            relative: e.relative,
                            information: loop_information(cfg, e.inliers),
                        });
                    }
                }
            }
            for (j, sig) in sigs[s].iter().enumerate() {
                db.add(s as u32, j, sig.clone());
                owners.push((s, j));
            }
        }
    }
    let graphs: Vec<PoseGraph> = sessions.iter().map(|s| s.graph.clone()).collect();
    let (merged, _) = merge_sessions(&graphs, &cross, &cfg.pose_graph).map_err(|e| match e {
        PoseGraphError::UnconnectedSession(k) => PipelineError::Merge(format!(
            "session {k} ({}) has no verified loop closure to the sessions before it",
            sessions[k - 1].dir.display()
        )),
        other => PipelineError::Merge(format!("merge failed: {other}")),
    })?;
    let trajectories = sessions
        .iter()
        .enumerate()
        .map(|(s, sess)| {
            let mut kf_iter = sess.keyframes.iter().peekable();
            let mut reference = sess.keyframes.first().copied().unwrap_or(0);
            sess.trajectory
                .iter()
                .enumerate()
                .map(|(i, (t, p))| {
                    while let Some(&&k) = kf_iter.peek() {
                        if k > i {
                            break;
                        }
                        reference = k;
                        kf_iter.next();
                    }
                    let local = sess.graph.pose(reference as u64).expect("validated keyframe");
                    let global = merged.pose(merged_id(s, reference as u64)).expect("merged node");
                    (*t, global.compose(&local.inverse().compose(p)))
                })
                .collect()
        })
        .collect();
    Ok(MergeResult {
        trajectories,
        graph: merged,
        cross_edges: cross,
    })
}

pub fn cmd_merge(dirs: &[PathBuf], output: &Path, cfg: &PipelineConfig) -> Result<MergeResult, PipelineError> {
    let r = merge_session_dirs(dirs, cfg)?;
    for (s, t) in r.trajectories.iter().enumerate() {
        write_atomic(&output.join(format!("trajectory_{s:03}.txt")), format_trajectory(t).as_bytes())?;
    }
    write_atomic(&output.join("graph.txt"), r.graph.to_text().as_bytes())?;
    write_atomic(&output.join("config.json"), cfg.to_json().as_bytes())?;
    Ok(r)
}

// ---- fusion ----

pub fn cmd_fuse(
    input_dir: &Path,
    trajectory: &Path,
    output: &Path,
    cfg: &PipelineConfig,
) -> Result<crate::surface::Mesh, PipelineError> {
    let ds = Dataset::open(input_dir)?;
    let traj = parse_trajectory(&read_text(trajectory)?).map_err(|e| input(format!("{}: {e}", trajectory.display())))?;
    if traj.len() != ds.len() {
        return Err(input(format!(
            "{}: {} poses for {} frames",
            trajectory.display(),
            traj.len(),
            ds.len()
        )));
    }
    let views: Vec<usize> = if cfg.fusion.keyframes_only {
        let kf_path = trajectory.with_file_name("keyframes.txt");
        read_text(&kf_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<usize>().ok().filter(|&k| k < ds.len()))
            .collect::<Option<_>>()
            .ok_or_else(|| input(format!("{}: bad keyframe index", kf_path.display())))?
    } else {
        (0..ds.len()).step_by(cfg.fusion.frame_stride).collect()
    };
    let mut frames = vec![DepthImage::zeros(0, 0); ds.len()];
    let loaded: Vec<(usize, DepthImage)> = views
        .par_iter()
        .map(|&i| ds.depth(i).map(|d| (i, d)))
        .collect::<Result<_, _>>()?;
    let mut poses: Vec<Option<Pose>> = vec![None; ds.len()];
    let mut cloud = PointCloud {
        points: Vec::new(),
        normals: None,
        view_ids: Some(Vec::new()),
    };
    for (i, d) in loaded {
        let pose = traj[i].1;
        let local = unproject(&d, &ds.rig.depth, cfg.fusion.partition_stride).map_err(|e| input(e.to_string()))?;
        for p in local.points {
            cloud.points.push(pose.transform_point(&p));
            cloud.view_ids.as_mut().expect("set above").push(i as u32);
        }
        poses[i] = Some(pose);
        frames[i] = d;
    }
    if cloud.is_empty() {
        return Err(input("no valid depth in the selected frames"));
    }
    let (segments, _) = kmeans_partition(&cloud, cfg.fusion.point_budget, cfg.fusion.seed).map_err(|e| input(e.to_string()))?;
    let mesh = fuse_segments(&segments, &frames, &poses, &ds.rig.depth, &cfg.tsdf).map_err(|e| input(e.to_string()))?;
    write_atomic(output, &encode_mesh_ply(&mesh))?;
    let samples = voxel_downsample_centroid(
        &PointCloud::from_points(mesh.sample_surface(cfg.fusion.cloud_spacing)),
        cfg.fusion.cloud_spacing,
    );
    write_atomic(&cloud_path_for(output), &encode_cloud_ply(&samples))?;
    Ok(mesh)
}

/// `<stem>_cloud.ply` next to a mesh path.
pub fn cloud_path_for(mesh: &Path) -> PathBuf {
    let stem = mesh.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    mesh.with_file_name(format!("{stem}_cloud.ply"))
}

// ---- evaluation ----

/// Overlaps in percent, inlier RMSE in millimeters, ATE in meters, RPE in
/// degrees and meters per second (RMS, with the mean alongside). RPE is null
/// for sequences shorter than one second.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub overlap_10: f64,
    pub rmse_10: f64,
    pub overlap_20: f64,
    pub rmse_20: f64,
    pub overlap_50: f64,
    pub rmse_50: f64,
    pub ate: Option<f64>,
    pub rpe_rot: Option<f64>,
    pub rpe_trans: Option<f64>,
    pub rpe_rot_mean: Option<f64>,
    pub rpe_trans_mean: Option<f64>,
}

fn load_cloud(path: &Path) -> Result<PointCloud, PipelineError> {
    decode_ply_points(&read_file(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_trajectory(path: &Path) -> Result<Trajectory, PipelineError> {
    let t = parse_trajectory(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(Trajectory::new(t))
}

/// Metrics of a reconstruction against ground truth. With `align`, the
/// reconstruction is first moved by the rigid fit of the estimated onto the
/// ground-truth trajectory positions.
pub fn cmd_eval(
    recon: &Path,
    gt: &Path,
    trajectories: Option<(&Path, &Path)>,
    align: bool,
    cfg: &PipelineConfig,
) -> Result<Metrics, PipelineError> {
    if cfg.evaluation.gammas.len() != 3 {
        return Err(input("evaluation.gammas: the metrics report needs exactly three thresholds"));
    }
    let mut recon_cloud = load_cloud(recon)?;
    let gt_cloud = load_cloud(gt)?;
    let (mut ate_v, mut rpe_v) = (None, None);
    if let Some((est_p, gt_p)) = trajectories {
        let (est, gtt) = (load_trajectory(est_p)?, load_trajectory(gt_p)?);
        ate_v = Some(ate(&est, &gtt).map_err(|e| input(e.to_string()))?);
        rpe_v = match rpe(&est, &gtt, 1.0) {
            Ok(r) => Some(r),
            Err(EvalError::NoRelativePairs(_)) => None,
            Err(e) => return Err(input(e.to_string())),
        };
        if align {
            let t = trajectory_alignment(&est, &gtt)?;
            recon_cloud = recon_cloud.transformed(&t);
        }
    } else if align {
        return Err(input("--align needs --traj-est and --traj-gt"));
    }
    let r = overlap_rmse(&recon_cloud, &gt_cloud, &cfg.evaluation).map_err(|e| input(e.to_string()))?;
    let th = &r.thresholds;
    Ok(Metrics {
        overlap_10: th[0].overlap,
        rmse_10: th[0].rmse * 1000.0,
        overlap_20: th[1].overlap,
        rmse_20: th[1].rmse * 1000.0,
        overlap_50: th[2].overlap,
        rmse_50: th[2].rmse * 1000.0,
        ate: ate_v,
        rpe_rot: rpe_v.map(|r| r.rot_rms),
        rpe_trans: rpe_v.map(|r| r.trans_rms),
        rpe_rot_mean: rpe_v.map(|r| r.rot_mean),
        rpe_trans_mean: rpe_v.map(|r| r.trans_mean),
    })
}

/// Rigid transform taking estimated positions onto ground truth.
pub fn trajectory_alignment(est: &Trajectory, gt: &Trajectory) -> Result<Pose, PipelineError> {
    let pairs = crate::evaluation::associate(est, gt);
    if pairs.len() < 3 {
        return Err(input("fewer than 3 associated poses"));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|(_, e, _)| *e.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|(_, _, g)| *g.translation()).collect();
    crate::geometry::umeyama_align(&src, &dst).map_err(|e| input(e.to_string()))
}

// ---- synthetic data ----

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub trajectory: TrajectoryKind,
    pub frames: usize,
    pub params: TrajectoryParams,
    pub noise: Option<NoiseModel>,
    pub rig: RigKind,
    pub scene_seed: u64,
    /// Ground-truth samples per m² before the visibility filter.
    pub gt_density: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::CorridorLoop,
            frames: 300,
            params: TrajectoryParams::default(),
            noise: Some(NoiseModel::default()),
            rig: RigKind::Wide,
            scene_seed: 7,
            gt_density: 20_000.0,
        }
    }
}

/// Renders a dataset plus `groundtruth.txt` (depth camera),
/// `groundtruth_color.txt` and the visible part of the scene as
/// `scene_cloud.ply`.
pub fn cmd_synth(output: &Path, opts: &SynthOptions) -> Result<(), PipelineError> {
    if opts.frames < 2 {
        return Err(input("--frames must be at least 2"));
    }
    if let Some(n) = &opts.noise {
        n.validate().map_err(input)?;
    }
    let scene = room_scene(opts.scene_seed);
    let srig = SyntheticRig::new(opts.rig);
    let rig = Rig {
        depth: srig.depth,
        color: srig.color,
        extrinsics: srig.extrinsics,
    };
    let traj = make_trajectory(opts.trajectory, opts.frames, &opts.params);
    let frames: Vec<(DepthImage, ColorImage)> = traj
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let clean = render_depth(&scene, p, &srig.depth);
            let d = match &opts.noise {
                Some(n) => n.apply(&clean, i as u64),
                None => clean,
            };
            (d, render_color(&scene, &srig.color_pose(p), &srig.color))
        })
        .collect();
    let timestamps: Vec<f64> = traj.iter().map(|(t, _)| *t).collect();
    write_dataset(output, &rig, &timestamps, frames.into_iter())?;
    write_atomic(&output.join("groundtruth.txt"), format_trajectory(&traj).as_bytes())?;
    let color_traj: Vec<(f64, Pose)> = traj.iter().map(|(t, p)| (*t, srig.color_pose(p))).collect();
    write_atomic(&output.join("groundtruth_color.txt"), format_trajectory(&color_traj).as_bytes())?;
    let poses: Vec<Pose> = traj.iter().step_by(5).map(|(_, p)| *p).collect();
    let samples = sample_scene_cloud(&scene, opts.gt_density, opts.scene_seed);
    let visible = filter_visible(&samples, &scene, &poses, &srig.depth, 0.02);
    write_atomic(&output.join("scene_cloud.ply"), &encode_cloud_ply(&visible))?;
    Ok(())
}
