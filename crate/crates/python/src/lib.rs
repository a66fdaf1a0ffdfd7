//! Python bindings: the CLI commands plus a few numeric helpers.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3, Vector6};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rgbd_atlas::evaluation::{self, ReconEvalConfig, Trajectory};
use rgbd_atlas::geometry::{PointCloud, Pose};
use rgbd_atlas::imaging;
use rgbd_atlas::pipeline::{self, PipelineConfig, PipelineError, SynthOptions};
use rgbd_atlas::synthetic::{NoiseModel, RigKind, TrajectoryKind, TrajectoryParams};

create_exception!(rgbd_atlas_py, RgbdAtlasError, PyException, "Pipeline failure; args are (message, exit_code).");

fn raise(e: PipelineError) -> PyErr {
    RgbdAtlasError::new_err((e.to_string(), e.exit_code()))
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    match json {
        None => Ok(PipelineConfig::default()),
        Some(text) => PipelineConfig::from_json(text).map_err(PyValueError::new_err),
    }
}

/// Default pipeline configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    PipelineConfig::default().to_json()
}

#[pyfunction]
#[pyo3(signature = (output, trajectory="corridor_loop", frames=300, rig="wide", noise=true, seed=1, scene_seed=7, arc_start=0.0, arc_end=1.0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    output: PathBuf,
    trajectory: &str,
    frames: usize,
    rig: &str,
    noise: bool,
    seed: u64,
    scene_seed: u64,
    arc_start: f64,
    arc_end: f64,
) -> PyResult<()> {
    let opts = SynthOptions {
        trajectory: trajectory.parse::<TrajectoryKind>().map_err(PyValueError::new_err)?,
        frames,
        params: TrajectoryParams {
            arc_start,
            arc_end,
            ..TrajectoryParams::default()
        },
        noise: noise.then(|| NoiseModel {
            seed,
            ..NoiseModel::default()
        }),
        rig: rig.parse::<RigKind>().map_err(PyValueError::new_err)?,
        scene_seed,
        ..SynthOptions::default()
    };
    pipeline::cmd_synth(&output, &opts).map_err(raise)
}

#[pyfunction]
#[pyo3(signature = (input, output=None, d2c=false))]
fn align(input: PathBuf, output: Option<PathBuf>, d2c: bool) -> PyResult<()> {
    let out = output.unwrap_or_else(|| input.clone());
    pipeline::cmd_align(&input, &out, d2c).map_err(raise)
}

/// Maps one session; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (input, output, config_json=None))]
fn map_session<'py>(py: Python<'py>, input: PathBuf, output: PathBuf, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_json)?;
    let m = pipeline::cmd_map(&input, &output, &cfg).map_err(raise)?;
    let d = PyDict::new(py);
    d.set_item("frames", m.poses.len())?;
    d.set_item("keyframes", m.keyframes.clone())?;
    d.set_item("loop_edges", m.loops.len())?;
    d.set_item("lost_frames", m.lost_frames)?;
    Ok(d)
}

/// Merges mapped sessions in order; returns the number of cross-session loop edges.
#[pyfunction]
#[pyo3(signature = (inputs, output, config_json=None))]
fn merge(inputs: Vec<PathBuf>, output: PathBuf, config_json: Option<&str>) -> PyResult<usize> {
    let cfg = config(config_json)?;
    let r = pipeline::cmd_merge(&inputs, &output, &cfg).map_err(raise)?;
    Ok(r.cross_edges.len())
}

/// Fuses frames into a mesh; returns (vertices, triangles).
#[pyfunction]
#[pyo3(signature = (input, trajectory, output, keyframes_only=false, stride=None, config_json=None))]
fn fuse(
    input: PathBuf,
    trajectory: PathBuf,
    output: PathBuf,
    keyframes_only: bool,
    stride: Option<usize>,
    config_json: Option<&str>,
) -> PyResult<(usize, usize)> {
    let mut cfg = config(config_json)?;
    cfg.fusion.keyframes_only |= keyframes_only;
    if let Some(s) = stride {
        cfg.fusion.frame_stride = s;
    }
    cfg.validate().map_err(PyValueError::new_err)?;
    let mesh = pipeline::cmd_fuse(&input, &trajectory, &output, &cfg).map_err(raise)?;
    Ok((mesh.vertices.len(), mesh.triangles.len()))
}

/// Reconstruction (and optionally trajectory) metrics as a dict.
#[pyfunction]
#[pyo3(name = "eval", signature = (recon, gt, traj_est=None, traj_gt=None, align=false, config_json=None))]
fn eval_recon<'py>(
    py: Python<'py>,
    recon: PathBuf,
    gt: PathBuf,
    traj_est: Option<PathBuf>,
    traj_gt: Option<PathBuf>,
    align: bool,
    config_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_json)?;
    let trajs: Option<(&Path, &Path)> = match (&traj_est, &traj_gt) {
        (Some(e), Some(g)) => Some((e.as_path(), g.as_path())),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("traj_est and traj_gt go together")),
    };
    let m = pipeline::cmd_eval(&recon, &gt, trajs, align, &cfg).map_err(raise)?;
    let d = PyDict::new(py);
    for (k, v) in [
        ("overlap_10", Some(m.overlap_10)),
        ("rmse_10", Some(m.rmse_10)),
        ("overlap_20", Some(m.overlap_20)),
        ("rmse_20", Some(m.rmse_20)),
        ("overlap_50", Some(m.overlap_50)),
        ("rmse_50", Some(m.rmse_50)),
        ("ate", m.ate),
        ("rpe_rot", m.rpe_rot),
        ("rpe_trans", m.rpe_trans),
        ("rpe_rot_mean", m.rpe_rot_mean),
        ("rpe_trans_mean", m.rpe_trans_mean),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Infrared tone map of raw 16-bit intensities, returned as bytes.
#[pyfunction]
fn ir_tone_map(values: Vec<u16>) -> Vec<u8> {
    imaging::ir_tone_map(&values)
}

fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
    PointCloud::from_points(points.into_iter().map(Vector3::from).collect())
}

/// Per-threshold `(gamma, overlap_percent, rmse_m, inliers)` of `recon` against `gt`.
#[pyfunction]
#[pyo3(signature = (recon, gt, voxel=0.01, gammas=vec![0.01, 0.02, 0.05]))]
fn overlap_rmse(recon: Vec<[f64; 3]>, gt: Vec<[f64; 3]>, voxel: f64, gammas: Vec<f64>) -> PyResult<Vec<(f64, f64, f64, usize)>> {
    let cfg = ReconEvalConfig { voxel, gammas };
    let r = evaluation::overlap_rmse(&cloud(recon), &cloud(gt), &cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(r.thresholds.iter().map(|t| (t.gamma, t.overlap, t.rmse, t.inliers)).collect())
}

fn trajectory(rows: Vec<[f64; 8]>) -> PyResult<Trajectory> {
    let entries = rows
        .into_iter()
        .map(|r| {
            Pose::from_wxyz(r[7], r[4], r[5], r[6], Vector3::new(r[1], r[2], r[3]))
                .map(|p| (r[0], p))
                .map_err(|e| PyValueError::new_err(e.to_string()))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(Trajectory::new(entries))
}

/// ATE in meters; rows are `[t, tx, ty, tz, qx, qy, qz, qw]`.
#[pyfunction]
fn ate(est: Vec<[f64; 8]>, gt: Vec<[f64; 8]>) -> PyResult<f64> {
    evaluation::ate(&trajectory(est)?, &trajectory(gt)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// 4x4 homogeneous matrix of the tangent vector `[wx, wy, wz, vx, vy, vz]`.
#[pyfunction]
fn se3_exp(xi: [f64; 6]) -> [[f64; 4]; 4] {
    let m = Pose::exp(&Vector6::from(xi)).to_matrix();
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

#[pyfunction]
fn se3_log(matrix: [[f64; 4]; 4]) -> PyResult<[f64; 6]> {
    let m = Matrix4::from_fn(|i, j| matrix[i][j]);
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let pose = Pose::from_rotation_matrix(&r, m.fixed_view::<3, 1>(0, 3).into_owned());
    let xi = pose.log().map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(std::array::from_fn(|i| xi[i]))
}

#[pymodule]
fn rgbd_atlas_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RgbdAtlasError", m.py().get_type::<RgbdAtlasError>())?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(map_session, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(eval_recon, m)?)?;
    m.add_function(wrap_pyfunction!(ir_tone_map, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(se3_exp, m)?)?;
    m.add_function(wrap_pyfunction!(se3_log, m)?)?;
    Ok(())
}
