use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::marching_cubes::{case_table, CORNERS, EDGES};
use super::Mesh;
use crate::geometry::{CameraIntrinsics, DepthImage, Pose};

/// Voxels per block side.
pub const BLOCK: i32 = 16;
const BLOCK_VOXELS: usize = (BLOCK * BLOCK * BLOCK) as usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsdfConfig {
    /// Meters.
    pub voxel_size: f64,
    /// Truncation band in voxels.
    pub truncation_voxels: f64,
    pub weight_cap: f32,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            truncation_voxels: 4.0,
            weight_cap: 100.0,
        }
    }
}

impl TsdfConfig {
    pub fn truncation(&self) -> f64 {
        self.truncation_voxels * self.voxel_size
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("truncation_voxels", self.truncation_voxels),
            ("weight_cap", self.weight_cap as f64),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub tsdf: Vec<f32>,
    pub weight: Vec<f32>,
}

impl Block {
    fn new() -> Self {
        Self {
            tsdf: vec![1.0; BLOCK_VOXELS],
            weight: vec![0.0; BLOCK_VOXELS],
        }
    }
}

#[inline]
fn local_index(l: [i32; 3]) -> usize {
    (l[0] + BLOCK * (l[1] + BLOCK * l[2])) as usize
}

#[inline]
fn split(g: [i32; 3]) -> ([i32; 3], [i32; 3]) {
    (
        [g[0].div_euclid(BLOCK), g[1].div_euclid(BLOCK), g[2].div_euclid(BLOCK)],
        [g[0].rem_euclid(BLOCK), g[1].rem_euclid(BLOCK), g[2].rem_euclid(BLOCK)],
    )
}

/// Block-hashed truncated signed distance field. Voxel `g` (global integer
/// coordinates) sits at `g · voxel_size`.
#[derive(Clone, Debug)]
pub struct TsdfVolume {
    pub config: TsdfConfig,
    pub blocks: HashMap<[i32; 3], Block>,
    /// Optional world-frame box; only blocks intersecting it are allocated.
    pub bounds: Option<(Vector3<f64>, Vector3<f64>)>,
}

impl TsdfVolume {
    pub fn new(config: TsdfConfig) -> Self {
        Self {
            config,
            blocks: HashMap::new(),
            bounds: None,
        }
    }

    pub fn with_bounds(config: TsdfConfig, lo: Vector3<f64>, hi: Vector3<f64>) -> Self {
        Self {
            config,
            blocks: HashMap::new(),
            bounds: Some((lo, hi)),
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn sorted_keys(&self) -> Vec<[i32; 3]> {
        let mut keys: Vec<[i32; 3]> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// `(tsdf, weight)` of a voxel, if its block exists.
    pub fn voxel(&self, g: [i32; 3]) -> Option<(f32, f32)> {
        let (b, l) = split(g);
        self.blocks.get(&b).map(|blk| {
            let i = local_index(l);
            (blk.tsdf[i], blk.weight[i])
        })
    }

    /// Sets a voxel directly, allocating its block.
    pub fn set_voxel(&mut self, g: [i32; 3], tsdf: f32, weight: f32) {
        let (b, l) = split(g);
        let blk = self.blocks.entry(b).or_insert_with(Block::new);
        let i = local_index(l);
        blk.tsdf[i] = tsdf;
        blk.weight[i] = weight;
    }

    pub fn voxel_position(&self, g: [i32; 3]) -> Vector3<f64> {
        Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64) * self.config.voxel_size
    }

    fn block_side(&self) -> f64 {
        BLOCK as f64 * self.config.voxel_size
    }

    fn block_of_point(&self, p: &Vector3<f64>) -> [i32; 3] {
        let g = p / self.config.voxel_size;
        split([g.x.round() as i32, g.y.round() as i32, g.z.round() as i32]).0
    }

    fn block_in_bounds(&self, b: [i32; 3]) -> bool {
        let Some((lo, hi)) = &self.bounds else { return true };
        let v = self.config.voxel_size;
        (0..3).all(|a| {
            let min = (b[a] * BLOCK) as f64 * v;
            let max = ((b[a] + 1) * BLOCK - 1) as f64 * v;
            max >= lo[a] && min <= hi[a]
        })
    }

    /// Fuses one depth frame observed from `pose` (camera-to-world).
    pub fn integrate(&mut self, depth: &DepthImage, k: &CameraIntrinsics, pose: &Pose) {
        let trunc = self.config.truncation();
        let voxel = self.config.voxel_size;
        let block_side = self.block_side();

        // Blocks along each valid ray within the truncation band.
        let mut touched: HashSet<[i32; 3]> = HashSet::new();
        let steps = (2.0 * trunc / (0.25 * block_side)).ceil().max(1.0) as usize;
        for v in 0..depth.height {
            for u in 0..depth.width {
                let Some(z) = depth.meters(u, v) else { continue };
                for s in 0..=steps {
                    let zs = z - trunc + 2.0 * trunc * s as f64 / steps as f64;
                    if zs <= 0.0 {
                        continue;
                    }
                    let p = pose.transform_point(&k.backproject(u as f64, v as f64, zs));
                    touched.insert(self.block_of_point(&p));
                }
            }
        }
        touched.retain(|b| self.block_in_bounds(*b));
        for b in &touched {
            self.blocks.entry(*b).or_insert_with(Block::new);
        }

        // Only blocks this frame touches are updated, which keeps the result
        // independent of frame order.
        let world_to_cam = pose.inverse();
        let mut keys: Vec<[i32; 3]> = touched.into_iter().collect();
        keys.sort_unstable();

        let cap = self.config.weight_cap;
        let mut work: Vec<([i32; 3], Block)> = keys
            .iter()
            .map(|b| (*b, self.blocks.remove(b).expect("key exists")))
            .collect();
        work.par_iter_mut().for_each(|(b, blk)| {
            let rot = world_to_cam.rotation_matrix();
            let base = world_to_cam.transform_point(&Vector3::new(
                (b[0] * BLOCK) as f64 * voxel,
                (b[1] * BLOCK) as f64 * voxel,
                (b[2] * BLOCK) as f64 * voxel,
            ));
            let (dx, dy, dz) = (rot.column(0) * voxel, rot.column(1) * voxel, rot.column(2) * voxel);
            for lz in 0..BLOCK {
                for ly in 0..BLOCK {
                    for lx in 0..BLOCK {
                        let c = base + dx * lx as f64 + dy * ly as f64 + dz * lz as f64;
                        if c.z <= 0.0 {
                            continue;
                        }
                        let u = (k.fx * c.x / c.z + k.cx).round();
                        let v = (k.fy * c.y / c.z + k.cy).round();
                        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
                            continue;
                        }
                        let Some(d) = depth.meters(u as usize, v as usize) else { continue };
                        let sdf = d - c.z;
                        if sdf <= -trunc {
                            continue;
                        }
                        let t = (sdf / trunc).clamp(-1.0, 1.0) as f32;
                        let i = local_index([lx, ly, lz]);
                        let w = blk.weight[i];
                        blk.tsdf[i] = (blk.tsdf[i] * w + t) / (w + 1.0);
                        blk.weight[i] = (w + 1.0).min(cap);
                    }
                }
            }
        });
        for (b, blk) in work {
            self.blocks.insert(b, blk);
        }
    }

    fn gradient(&self, g: [i32; 3]) -> Vector3<f64> {
        let value = |g: [i32; 3]| self.voxel(g).filter(|&(_, w)| w > 0.0).map(|(t, _)| t as f64);
        let center = value(g).unwrap_or(0.0);
        let mut out = Vector3::zeros();
        for a in 0..3 {
            let mut hi = g;
            hi[a] += 1;
            let mut lo = g;
            lo[a] -= 1;
            out[a] = match (value(hi), value(lo)) {
                (Some(h), Some(l)) => (h - l) / 2.0,
                (Some(h), None) => h - center,
                (None, Some(l)) => center - l,
                (None, None) => 0.0,
            };
        }
        out
    }

    /// Marching-cubes surface over all cubes whose eight corners are
    /// observed. Cubes straddling block borders are included.
    pub fn extract_mesh(&self) -> Mesh {
        let table = case_table();
        let voxel = self.config.voxel_size;
        let keys = self.sorted_keys();
        // Per block: triangles as (edge key, position, normal) triples.
        type EdgeKey = ([i32; 3], u8);
        let per_block: Vec<Vec<[(EdgeKey, Vector3<f64>, Vector3<f64>); 3]>> = keys
            .par_iter()
            .map(|b| {
                let blk = &self.blocks[b];
                let mut tris = Vec::new();
                let lookup = |g: [i32; 3]| -> Option<f32> {
                    let (bb, l) = split(g);
                    let w;
                    let t;
                    if bb == *b {
                        let i = local_index(l);
                        w = blk.weight[i];
                        t = blk.tsdf[i];
                    } else {
                        (t, w) = self.voxel(g)?;
                    }
                    (w > 0.0).then_some(t)
                };
                for lz in 0..BLOCK {
                    for ly in 0..BLOCK {
                        for lx in 0..BLOCK {
                            let g0 = [b[0] * BLOCK + lx, b[1] * BLOCK + ly, b[2] * BLOCK + lz];
                            let mut vals = [0f32; 8];
                            let mut complete = true;
                            let mut case = 0usize;
                            for (c, off) in CORNERS.iter().enumerate() {
                                match lookup([g0[0] + off[0], g0[1] + off[1], g0[2] + off[2]]) {
                                    Some(t) => {
                                        vals[c] = t;
                                        if t < 0.0 {
                                            case |= 1 << c;
                                        }
                                    }
                                    None => {
                                        complete = false;
                                        break;
                                    }
                                }
                            }
                            if !complete || case == 0 || case == 255 {
                                continue;
                            }
                            for tri in &table[case] {
                                let mut out = [(([0; 3], 0u8), Vector3::zeros(), Vector3::zeros()); 3];
                                for (slot, &e) in out.iter_mut().zip(tri) {
                                    let (a, bc) = EDGES[e as usize];
                                    let (ca, cb) = (CORNERS[a], CORNERS[bc]);
                                    // orient the edge from its lower corner
                                    let (lo_c, hi_c, f_lo, f_hi) = if ca <= cb {
                                        (ca, cb, vals[a], vals[bc])
                                    } else {
                                        (cb, ca, vals[bc], vals[a])
                                    };
                                    let axis = (0..3).find(|&i| lo_c[i] != hi_c[i]).expect("axis edge") as u8;
                                    let glo = [g0[0] + lo_c[0], g0[1] + lo_c[1], g0[2] + lo_c[2]];
                                    let ghi = [g0[0] + hi_c[0], g0[1] + hi_c[1], g0[2] + hi_c[2]];
                                    let t = (f_lo / (f_lo - f_hi)) as f64;
                                    let plo = self.voxel_position(glo);
                                    let mut p = plo;
                                    p[axis as usize] += t * voxel;
                                    let n = self.gradient(glo) * (1.0 - t) + self.gradient(ghi) * t;
                                    *slot = ((glo, axis), p, n);
                                }
                                tris.push(out);
                            }
                        }
                    }
                }
                tris
            })
            .collect();

        let mut mesh = Mesh::default();
        let mut index: HashMap<EdgeKey, u32> = HashMap::new();
        let min_area2 = (1e-10 * voxel * voxel).powi(2);
        for tris in per_block {
            for tri in tris {
                let (p0, p1, p2) = (tri[0].1, tri[1].1, tri[2].1);
                if (p1 - p0).cross(&(p2 - p0)).norm_squared() / 4.0 <= min_area2 {
                    continue;
                }
                let mut ids = [0u32; 3];
                for (id, (key, p, n)) in ids.iter_mut().zip(tri) {
                    *id = *index.entry(key).or_insert_with(|| {
                        mesh.vertices.push(p);
                        let norm = n.norm();
                        mesh.normals.push(if norm > 0.0 { n / norm } else { Vector3::z() });
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                    mesh.triangles.push(ids);
                }
            }
        }
        mesh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_frame(z_mm: u16) -> (DepthImage, CameraIntrinsics) {
        let k = CameraIntrinsics::from_fov(48, 48, 60.0);
        (DepthImage::new(48, 48, vec![z_mm; 48 * 48]).unwrap(), k)
    }

    #[test]
    fn all_invalid_frame_allocates_nothing() {
        let mut vol = TsdfVolume::new(TsdfConfig::default());
        let k = CameraIntrinsics::from_fov(16, 16, 60.0);
        vol.integrate(&DepthImage::zeros(16, 16), &k, &Pose::identity());
        assert_eq!(vol.block_count(), 0);
        assert!(vol.extract_mesh().is_empty());
    }

    #[test]
    fn same_frame_twice_doubles_weights() {
        let (d, k) = plane_frame(1500);
        let mut once = TsdfVolume::new(TsdfConfig::default());
        once.integrate(&d, &k, &Pose::identity());
        let mut twice = once.clone();
        twice.integrate(&d, &k, &Pose::identity());
        assert_eq!(once.sorted_keys(), twice.sorted_keys());
        for key in once.sorted_keys() {
            let (a, b) = (&once.blocks[&key], &twice.blocks[&key]);
            for i in 0..BLOCK_VOXELS {
                assert_eq!(a.tsdf[i], b.tsdf[i]);
                assert_eq!(2.0 * a.weight[i], b.weight[i]);
            }
        }
    }

    #[test]
    fn plane_zero_crossing_and_mesh_fit() {
        let (d, k) = plane_frame(1513);
        let mut vol = TsdfVolume::new(TsdfConfig::default());
        vol.integrate(&d, &k, &Pose::identity());
        let mesh = vol.extract_mesh();
        assert!(!mesh.is_empty());
        let rms = (mesh.vertices.iter().map(|p| (p.z - 1.513).powi(2)).sum::<f64>() / mesh.vertices.len() as f64).sqrt();
        assert!(rms < 0.02 / 4.0, "rms {rms}");
        for n in &mesh.normals {
            assert!(n.z < -0.9);
        }
        // along the optical axis the sign change brackets the plane within half a voxel
        let g = |z: i32| vol.voxel([0, 0, z]).map(|(t, _)| t).unwrap();
        let zc = (74..80).find(|&z| g(z) >= 0.0 && g(z + 1) < 0.0).unwrap();
        let t = g(zc) / (g(zc) - g(zc + 1));
        assert!(((zc as f32 + t) * 0.02 - 1.513).abs() < 0.01);
    }

    #[test]
    fn order_invariance_for_pairs() {
        let k = CameraIntrinsics::from_fov(32, 32, 70.0);
        let a = DepthImage::new(32, 32, (0..1024).map(|i| 1400 + (i % 32) as u16 * 3).collect()).unwrap();
        let b = DepthImage::new(32, 32, vec![1450; 1024]).unwrap();
        let pa = Pose::identity();
        let pb = Pose::from_translation(Vector3::new(0.03, -0.02, 0.01));
        let mut ab = TsdfVolume::new(TsdfConfig::default());
        ab.integrate(&a, &k, &pa);
        ab.integrate(&b, &k, &pb);
        let mut ba = TsdfVolume::new(TsdfConfig::default());
        ba.integrate(&b, &k, &pb);
        ba.integrate(&a, &k, &pa);
        assert_eq!(ab.sorted_keys(), ba.sorted_keys());
        for key in ab.sorted_keys() {
            assert_eq!(ab.blocks[&key], ba.blocks[&key]);
        }
    }
}
