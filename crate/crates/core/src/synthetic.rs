//! Analytic scenes ray-cast to depth and color along scripted trajectories.
//! Used as ground truth for every stage of the pipeline.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthImage, PointCloud, Pose, RigExtrinsics, MM_PER_M};
use crate::imaging::ColorImage;

pub const FRAME_INTERVAL: f64 = 1.0 / 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Square patch of side `2·half_size` centered at `point`.
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
        half_size: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned box; visible from outside and from inside.
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl Primitive {
    fn validate(&self) -> Result<(), String> {
        match self {
            Primitive::Plane { normal, half_size, .. } => {
                if normal.norm() < 1e-12 || !(*half_size > 0.0) {
                    return Err("plane needs a nonzero normal and positive size".into());
                }
            }
            Primitive::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(format!("sphere radius must be positive, got {radius}"));
                }
            }
            Primitive::Box { min, max } => {
                if (0..3).any(|i| !(min[i] < max[i])) {
                    return Err("box min must be below max on every axis".into());
                }
            }
        }
        Ok(())
    }

    /// Smallest positive ray parameter of an intersection.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Plane { point, normal, half_size } => {
                let n = normal.normalize();
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = n.dot(&(point - o)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let (a, b) = plane_basis(&n);
                let r = o + d * t - point;
                (r.dot(&a).abs() <= half_size && r.dot(&b).abs() <= half_size).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.norm_squared();
                let hb = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = hb * hb - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-hb - s) / a, (-hb + s) / a].into_iter().find(|&t| t > 0.0)
            }
            Primitive::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[i] - o[i]) / d[i], (max[i] - o[i]) / d[i]);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    /// Unsigned distance to the primitive's surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Primitive::Plane { point, normal, half_size } => {
                let n = normal.normalize();
                let (a, b) = plane_basis(&n);
                let r = p - point;
                let ea = (r.dot(&a).abs() - half_size).max(0.0);
                let eb = (r.dot(&b).abs() - half_size).max(0.0);
                (r.dot(&n).powi(2) + ea * ea + eb * eb).sqrt()
            }
            Primitive::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Primitive::Box { min, max } => {
                let outside = (0..3).any(|i| p[i] < min[i] || p[i] > max[i]);
                if outside {
                    let q = p.sup(&min).inf(&max);
                    (p - q).norm()
                } else {
                    (0..3).map(|i| (p[i] - min[i]).min(max[i] - p[i])).fold(f64::INFINITY, f64::min)
                }
            }
        }
    }
}

/// Deterministic in-plane axes for a unit normal.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if n.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let a = n.cross(&reference).normalize();
    (a, n.cross(&a))
}

/// Procedural Lambertian texture: jittered checker cells plus fine value
/// noise, both fixed by the seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub checker_period: f64,
    pub noise_period: f64,
    pub seed: u64,
}

impl Default for Texture {
    fn default() -> Self {
        Self {
            checker_period: 0.25,
            noise_period: 0.06,
            seed: 7,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash_cell(seed: u64, c: [i64; 3], salt: u64) -> u64 {
    let mut h = splitmix(seed ^ salt.wrapping_mul(0xA24B_AED4_963E_E407));
    for v in c {
        h = splitmix(h ^ v as u64);
    }
    h
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Texture {
    fn value_noise(&self, p: &Vector3<f64>, channel: u64) -> f64 {
        let q = p / self.noise_period;
        let base = q.map(f64::floor);
        let f = q - base;
        let s = f.map(|t| t * t * (3.0 - 2.0 * t));
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [(corner & 1) as i64, ((corner >> 1) & 1) as i64, ((corner >> 2) & 1) as i64];
            let c = [base.x as i64 + o[0], base.y as i64 + o[1], base.z as i64 + o[2]];
            let w: f64 = (0..3).map(|i| if o[i] == 1 { s[i] } else { 1.0 - s[i] }).product();
            acc += w * unit(hash_cell(self.seed, c, 100 + channel));
        }
        acc
    }

    pub fn color(&self, p: &Vector3<f64>) -> [u8; 3] {
        let cell = p.map(|x| (x / self.checker_period).floor() as i64);
        let parity = (cell.x + cell.y + cell.z).rem_euclid(2) == 0;
        let base = if parity { [190.0, 180.0, 160.0] } else { [70.0, 80.0, 105.0] };
        let c = [cell.x, cell.y, cell.z];
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let jitter = (unit(hash_cell(self.seed, c, ch as u64)) - 0.5) * 90.0;
            let noise = (self.value_noise(p, ch as u64) - 0.5) * 70.0;
            out[ch] = (base[ch] + jitter + noise).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub texture: Texture,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, texture: Texture) -> Result<Self, String> {
        if primitives.is_empty() {
            return Err("scene needs at least one primitive".into());
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { primitives, texture })
    }

    /// Ray parameter of the nearest positive hit.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(o, d))
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Distance to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives.iter().map(|q| q.surface_distance(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Room interior with pillars, a sphere and a table-like block. The room is
/// `[-2.5, 2.5] × [-2, 2] × [0, 2.6]` shifted off the checker grid lines.
pub fn room_scene(texture_seed: u64) -> Scene {
    let o = Vector3::repeat(0.005);
    let bx = |a: [f64; 3], b: [f64; 3]| Primitive::Box {
        min: Vector3::from(a) + o,
        max: Vector3::from(b) + o,
    };
    let primitives = vec![
        bx([-2.5, -2.0, 0.0], [2.5, 2.0, 2.6]),
        bx([-0.3, -0.25, 0.0], [0.3, 0.25, 2.6]),
        bx([1.6, 1.2, 0.0], [2.5, 2.0, 0.8]),
        bx([-2.5, -2.0, 0.0], [-1.7, -1.4, 1.1]),
        bx([1.9, -1.1, 0.0], [2.2, -0.8, 2.6]),
        Primitive::Sphere {
            center: Vector3::new(-1.8, 1.3, 1.0),
            radius: 0.35,
        },
    ];
    Scene::new(
        primitives,
        Texture {
            seed: texture_seed,
            ..Texture::default()
        },
    )
    .expect("room scene is valid")
}

/// Multiplicative Gaussian depth noise with random dropout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation as a fraction of depth.
    pub depth_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma: 0.01,
            dropout_rate: 0.02,
            seed: 1,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("depth_sigma", self.depth_sigma), ("dropout_rate", self.dropout_rate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(format!("{name}: must be in [0, 1), got {v}"));
            }
        }
        Ok(())
    }

    /// Applies noise to one frame; streams are keyed by (seed, frame, pixel).
    pub fn apply(&self, d: &DepthImage, frame: u64) -> DepthImage {
        let stream = splitmix(self.seed ^ splitmix(frame.wrapping_add(0x5151)));
        let data = d
            .data
            .par_iter()
            .enumerate()
            .map(|(i, &z)| {
                if z == 0 {
                    return 0;
                }
                let h1 = splitmix(stream ^ (i as u64).wrapping_mul(3));
                let h2 = splitmix(h1 ^ 0x1234_5678);
                let h3 = splitmix(h2 ^ 0x8765_4321);
                if unit(h3) < self.dropout_rate {
                    return 0;
                }
                let (u1, u2) = (unit(h1).max(1e-300), unit(h2));
                let n = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
                let noisy = z as f64 * (1.0 + self.depth_sigma * n);
                if noisy < 0.5 || noisy > u16::MAX as f64 {
                    0
                } else {
                    noisy.round() as u16
                }
            })
            .collect();
        DepthImage {
            width: d.width,
            height: d.height,
            data,
        }
    }
}

fn cast_pixel(scene: &Scene, pose: &Pose, k: &CameraIntrinsics, u: usize, v: usize) -> Option<(f64, Vector3<f64>)> {
    let dc = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
    let dw = pose.rotate(&dc);
    let o = pose.translation();
    scene.cast(o, &dw).map(|t| (t, o + dw * t))
}

/// Camera-z depth in millimeters; misses and ranges beyond 65.535 m are 0.
pub fn render_depth(scene: &Scene, pose: &Pose, k: &CameraIntrinsics) -> DepthImage {
    let data = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| match cast_pixel(scene, pose, k, i % k.width, i / k.width) {
            Some((z, _)) => {
                let mm = (z * MM_PER_M).round();
                if mm >= 1.0 && mm <= u16::MAX as f64 {
                    mm as u16
                } else {
                    0
                }
            }
            None => 0,
        })
        .collect();
    DepthImage {
        width: k.width,
        height: k.height,
        data,
    }
}

/// Texture color at the first hit; misses are black.
pub fn render_color(scene: &Scene, pose: &Pose, k: &CameraIntrinsics) -> ColorImage {
    let px: Vec<[u8; 3]> = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| match cast_pixel(scene, pose, k, i % k.width, i / k.width) {
            Some((_, p)) => scene.texture.color(&p),
            None => [0; 3],
        })
        .collect();
    ColorImage {
        width: k.width,
        height: k.height,
        data: px.into_iter().flatten().collect(),
    }
}

fn stratified_rect(
    origin: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    density: f64,
    rng: &mut impl FnMut() -> f64,
    out: &mut Vec<Vector3<f64>>,
) {
    let s = density.sqrt();
    let na = ((a.norm() * s).round() as usize).max(1);
    let nb = ((b.norm() * s).round() as usize).max(1);
    for i in 0..na {
        for j in 0..nb {
            let fa = (i as f64 + rng()) / na as f64;
            let fb = (j as f64 + rng()) / nb as f64;
            out.push(origin + a * fa + b * fb);
        }
    }
}

/// Stratified samples on every primitive surface (`density` per m²).
pub fn sample_scene_cloud(scene: &Scene, density: f64, seed: u64) -> PointCloud {
    assert!(density > 0.0, "density must be positive");
    let mut state = splitmix(seed);
    let mut rng = move || {
        state = splitmix(state);
        unit(state)
    };
    let mut out = Vec::new();
    for p in &scene.primitives {
        match *p {
            Primitive::Plane { point, normal, half_size } => {
                let (a, b) = plane_basis(&normal.normalize());
                let origin = point - (a + b) * half_size;
                stratified_rect(origin, a * 2.0 * half_size, b * 2.0 * half_size, density, &mut rng, &mut out);
            }
            Primitive::Sphere { center, radius } => {
                let n = (4.0 * PI * radius * radius * density).round() as usize;
                let golden = PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    // equal-area bands in z
                    let z = 1.0 - 2.0 * (i as f64 + rng()) / n as f64;
                    let phi = golden * i as f64 + 0.3 * rng();
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    out.push(center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius);
                }
            }
            Primitive::Box { min, max } => {
                let e = max - min;
                for axis in 0..3 {
                    let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                    let mut a = Vector3::zeros();
                    a[i] = e[i];
                    let mut b = Vector3::zeros();
                    b[j] = e[j];
                    for side in [min[axis], max[axis]] {
                        let mut origin = min;
                        origin[axis] = side;
                        stratified_rect(origin, a, b, density, &mut rng, &mut out);
                    }
                }
            }
        }
    }
    PointCloud::from_points(out)
}

/// Keeps the samples that some view actually observes: the point projects
/// inside the image and its camera depth agrees with the rendered depth.
pub fn filter_visible(
    cloud: &PointCloud,
    scene: &Scene,
    poses: &[Pose],
    k: &CameraIntrinsics,
    tolerance: f64,
) -> PointCloud {
    let views: Vec<(Pose, DepthImage)> = poses.iter().map(|p| (p.inverse(), render_depth(scene, p, k))).collect();
    let points = cloud
        .points
        .par_iter()
        .filter(|p| {
            views.iter().any(|(w2c, d)| {
                let q = w2c.transform_point(p);
                let Some((u, v)) = k.project(&q) else { return false };
                if !k.contains(u, v) {
                    return false;
                }
                d.meters(u.round() as usize, v.round() as usize)
                    .is_some_and(|z| (z - q.z).abs() < tolerance * (1.0 + q.z))
            })
        })
        .copied()
        .collect();
    PointCloud::from_points(points)
}

/// Camera pose at `position` looking along `forward` with world +z up
/// (camera x right, y down, z forward).
pub fn look_along(position: Vector3<f64>, forward: &Vector3<f64>) -> Pose {
    let z = forward.normalize();
    let up = if z.cross(&Vector3::z()).norm() < 1e-9 { Vector3::y() } else { Vector3::z() };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    Pose::from_rotation_matrix(&Matrix3::from_columns(&[x, y, z]), position)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    CorridorLoop,
    Orbit,
    TeleportGap,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "corridor_loop" => Ok(Self::CorridorLoop),
            "orbit" => Ok(Self::Orbit),
            "teleport_gap" => Ok(Self::TeleportGap),
            _ => Err(format!("unknown trajectory kind '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub center: [f64; 3],
    /// Orbit radius, or the corridor ellipse's x semi-axis.
    pub radius: f64,
    /// Corridor ellipse's y semi-axis.
    pub radius_b: f64,
    /// Downward tilt of the viewing direction, degrees.
    pub pitch_deg: f64,
    /// Teleport displacement, meters. The jump is along the (1, 1, 1)
    /// diagonal so that no wall, floor or ceiling stays in place.
    pub jump: f64,
    /// Straight-line speed for the teleport trajectory, meters per frame.
    pub step: f64,
    /// Fraction of the full corridor loop to traverse.
    pub arc_start: f64,
    pub arc_end: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 1.3],
            radius: 1.2,
            radius_b: 0.8,
            pitch_deg: 10.0,
            jump: 1.0,
            step: 0.02,
            arc_start: 0.0,
            arc_end: 1.0,
        }
    }
}

/// Scripted camera path with 30 Hz timestamps.
pub fn make_trajectory(kind: TrajectoryKind, n_frames: usize, params: &TrajectoryParams) -> Vec<(f64, Pose)> {
    assert!(n_frames >= 2, "trajectory needs at least two frames");
    let c = Vector3::from(params.center);
    let pitch = params.pitch_deg.to_radians();
    (0..n_frames)
        .map(|i| {
            let t = i as f64 * FRAME_INTERVAL;
            let pose = match kind {
                TrajectoryKind::CorridorLoop => {
                    let f = i as f64 / (n_frames - 1) as f64;
                    let s = TAU * (params.arc_start + (params.arc_end - params.arc_start) * f);
                    let p = c + Vector3::new(params.radius * s.cos(), params.radius_b * s.sin(), 0.0);
                    let tangent = Vector3::new(-params.radius * s.sin(), params.radius_b * s.cos(), 0.0).normalize();
                    let fwd = tangent * pitch.cos() - Vector3::z() * pitch.sin();
                    look_along(p, &fwd)
                }
                TrajectoryKind::Orbit => {
                    let s = TAU * i as f64 / n_frames as f64;
                    let p = c + Vector3::new(params.radius * s.cos(), params.radius * s.sin(), 0.0);
                    look_along(p, &(c - p))
                }
                TrajectoryKind::TeleportGap => {
                    let mut p = c + Vector3::new(params.step * i as f64 - params.radius, 0.0, 0.0);
                    if i >= n_frames / 2 {
                        p += Vector3::repeat(params.jump / 3f64.sqrt());
                    }
                    let fwd = Vector3::new(0.0, 1.0, 0.0) * pitch.cos() - Vector3::z() * pitch.sin();
                    look_along(p, &fwd)
                }
            };
            (t, pose)
        })
        .collect()
}

/// Depth and color cameras of a synthetic rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticRig {
    pub depth: CameraIntrinsics,
    pub color: CameraIntrinsics,
    pub extrinsics: RigExtrinsics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    /// Color camera identical to the depth camera at twice the resolution.
    Matched,
    /// Wide-angle depth camera with a narrower, offset color camera.
    Wide,
}

impl std::str::FromStr for RigKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "matched" => Ok(Self::Matched),
            "wide" => Ok(Self::Wide),
            _ => Err(format!("unknown rig '{s}'")),
        }
    }
}

impl SyntheticRig {
    pub fn new(kind: RigKind) -> Self {
        let depth = CameraIntrinsics::from_fov(160, 160, 120.0);
        match kind {
            RigKind::Matched => Self {
                depth,
                color: depth.scaled(2),
                extrinsics: RigExtrinsics::identity(),
            },
            RigKind::Wide => Self {
                depth,
                color: CameraIntrinsics {
                    fx: 160.0,
                    fy: 160.0,
                    cx: 159.5,
                    cy: 89.5,
                    width: 320,
                    height: 180,
                },
                extrinsics: RigExtrinsics {
                    color_to_depth: Pose::from_axis_angle(&Vector3::y(), 1f64.to_radians(), Vector3::new(0.032, 0.002, 0.004)),
                },
            },
        }
    }

    /// Color camera pose for a depth camera pose.
    pub fn color_pose(&self, depth_pose: &Pose) -> Pose {
        depth_pose.compose(&self.extrinsics.color_to_depth)
    }
}
