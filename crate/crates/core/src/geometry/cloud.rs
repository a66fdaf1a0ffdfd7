use nalgebra::{Matrix3, Vector3};

use super::{CameraIntrinsics, GeometryError, Pose, MM_PER_M};

/// Row-major 16-bit depth raster in millimeters; 0 marks an invalid sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::DimensionMismatch(format!(
                "depth data has {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u16 {
        self.data[v * self.width + u]
    }

    /// Depth in meters, `None` when invalid.
    #[inline]
    pub fn meters(&self, u: usize, v: usize) -> Option<f64> {
        match self.get(u, v) {
            0 => None,
            d => Some(d as f64 / MM_PER_M),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != 0).count()
    }

    pub fn check_matches(&self, k: &CameraIntrinsics) -> Result<(), GeometryError> {
        if self.width != k.width || self.height != k.height {
            return Err(GeometryError::DimensionMismatch(format!(
                "image is {}x{} but intrinsics describe {}x{}",
                self.width, self.height, k.width, k.height
            )));
        }
        Ok(())
    }
}

/// 3-D points in meters with optional unit normals and per-point view index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub view_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            view_ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.points.len();
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(GeometryError::DimensionMismatch(format!(
                    "{} normals for {} points",
                    normals.len(),
                    n
                )));
            }
            if let Some(bad) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(GeometryError::Degenerate(format!("normal {bad} is not unit length")));
            }
        }
        if let Some(ids) = &self.view_ids {
            if ids.len() != n {
                return Err(GeometryError::DimensionMismatch(format!("{} view ids for {} points", ids.len(), n)));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.rotate(n)).collect()),
            view_ids: self.view_ids.clone(),
        }
    }

    /// Appends `other`; optional channels survive only if both clouds carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.points.is_empty();
        self.points.extend_from_slice(&other.points);
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
        self.view_ids = match (self.view_ids.take(), &other.view_ids) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }
}

/// Per-pixel normals of a depth image; `None` where undefined.
#[derive(Clone, Debug)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl NormalMap {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<Vector3<f64>> {
        self.normals[v * self.width + u]
    }
}

/// Back-projects valid pixels on a `stride` grid into camera-frame points.
pub fn unproject(d: &DepthImage, k: &CameraIntrinsics, stride: usize) -> Result<PointCloud, GeometryError> {
    d.check_matches(k)?;
    if stride == 0 {
        return Err(GeometryError::Degenerate("stride must be positive".into()));
    }
    let mut points = Vec::new();
    for v in (0..d.height).step_by(stride) {
        for u in (0..d.width).step_by(stride) {
            if let Some(z) = d.meters(u, v) {
                points.push(k.backproject(u as f64, v as f64, z));
            }
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Like [`unproject`] but keeps only pixels with a defined normal and
/// attaches it.
pub fn unproject_with_normals(
    d: &DepthImage,
    normals: &NormalMap,
    k: &CameraIntrinsics,
    stride: usize,
) -> Result<PointCloud, GeometryError> {
    d.check_matches(k)?;
    if normals.width != d.width || normals.height != d.height {
        return Err(GeometryError::DimensionMismatch("normal map size differs from depth".into()));
    }
    if stride == 0 {
        return Err(GeometryError::Degenerate("stride must be positive".into()));
    }
    let mut points = Vec::new();
    let mut ns = Vec::new();
    for v in (0..d.height).step_by(stride) {
        for u in (0..d.width).step_by(stride) {
            if let (Some(z), Some(n)) = (d.meters(u, v), normals.get(u, v)) {
                points.push(k.backproject(u as f64, v as f64, z));
                ns.push(n);
            }
        }
    }
    Ok(PointCloud {
        points,
        normals: Some(ns),
        view_ids: None,
    })
}

/// Central-difference normals oriented toward the camera.
pub fn estimate_normals(d: &DepthImage, k: &CameraIntrinsics) -> NormalMap {
    estimate_normals_with(d, k, None)
}

/// [`estimate_normals`] that additionally rejects pixels whose horizontal or
/// vertical neighbors differ in depth by more than `max_rel_jump` times the
/// center depth (occluding edges).
pub fn estimate_normals_with(d: &DepthImage, k: &CameraIntrinsics, max_rel_jump: Option<f64>) -> NormalMap {
    let (w, h) = (d.width, d.height);
    let mut normals = vec![None; w * h];
    if w < 3 || h < 3 {
        return NormalMap { width: w, height: h, normals };
    }
    let point = |u: usize, v: usize| d.meters(u, v).map(|z| k.backproject(u as f64, v as f64, z));
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let (Some(c), Some(l), Some(r), Some(t), Some(b)) =
                (point(u, v), point(u - 1, v), point(u + 1, v), point(u, v - 1), point(u, v + 1))
            else {
                continue;
            };
            if let Some(jump) = max_rel_jump {
                let lim = jump * c.z;
                if (r.z - l.z).abs() > 2.0 * lim
                    || (b.z - t.z).abs() > 2.0 * lim
                    || (r.z - c.z).abs() > lim
                    || (l.z - c.z).abs() > lim
                    || (t.z - c.z).abs() > lim
                    || (b.z - c.z).abs() > lim
                {
                    continue;
                }
            }
            let n = (r - l).cross(&(b - t));
            let norm = n.norm();
            if norm < 1e-15 {
                continue;
            }
            let mut n = n / norm;
            if n.dot(&c) > 0.0 {
                n = -n;
            }
            normals[v * w + u] = Some(n);
        }
    }
    NormalMap { width: w, height: h, normals }
}

/// Edge-aware smoothing: each valid pixel is replaced by a least-squares
/// plane fitted in inverse depth over the valid pixels of its `(2r+1)²`
/// window whose depth is within `rel_tol` of its own. Inverse depth is
/// affine in pixel coordinates on a plane, so planes survive exactly even
/// where the window is cut short by borders or edges.
pub fn smooth_depth(d: &DepthImage, radius: usize, rel_tol: f64) -> DepthImage {
    let (w, h) = (d.width, d.height);
    let mut out = vec![0u16; w * h];
    let r = radius as isize;
    for v in 0..h {
        for u in 0..w {
            let c = d.get(u, v);
            if c == 0 {
                continue;
            }
            let cf = c as f64;
            let tol = rel_tol * cf;
            let mut ata = Matrix3::<f64>::zeros();
            let mut atb = Vector3::<f64>::zeros();
            let mut n = 0usize;
            for dv in -r..=r {
                let vv = v as isize + dv;
                if vv < 0 || vv >= h as isize {
                    continue;
                }
                for du in -r..=r {
                    let uu = u as isize + du;
                    if uu < 0 || uu >= w as isize {
                        continue;
                    }
                    let s = d.get(uu as usize, vv as usize);
                    if s != 0 && (s as f64 - cf).abs() <= tol {
                        let row = Vector3::new(1.0, du as f64, dv as f64);
                        ata += row * row.transpose();
                        atb += row * (1.0 / s as f64);
                        n += 1;
                    }
                }
            }
            // the center itself is always a member, so n >= 1
            let inv = match ata.cholesky() {
                Some(ch) if n >= 4 => ch.solve(&atb).x,
                _ => atb.x / ata[(0, 0)],
            };
            out[v * w + u] = if inv > 0.0 {
                (1.0 / inv).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                c
            };
        }
    }
    DepthImage { width: w, height: h, data: out }
}

/// Least-squares rigid transform `T` minimizing `Σ |T·src_i − dst_i|²`
/// (no scale), via SVD of the cross-covariance with reflection correction.
pub fn umeyama_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::DimensionMismatch(format!(
            "{} source points vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeometryError::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mu_d = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = sv[0].max(f64::MIN_POSITIVE);
    if sv[0] < 1e-18 || sv[1] <= 1e-10 * scale {
        return Err(GeometryError::Degenerate(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let u = svd.u.ok_or_else(|| GeometryError::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| GeometryError::Degenerate("SVD failed".into()))?;
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    // cov = Σ d sᵀ, so R = U S Vᵀ maps source onto destination.
    let r = u * s * v_t;
    let t = mu_d - r * mu_s;
    Ok(Pose::from_rotation_matrix(&r, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn k4() -> CameraIntrinsics {
        CameraIntrinsics::new(2.0, 2.0, 1.5, 1.5, 4, 4).unwrap()
    }

    #[test]
    fn unproject_empty_and_principal_point() {
        let k = k4();
        let d = DepthImage::zeros(4, 4);
        assert!(unproject(&d, &k, 1).unwrap().is_empty());

        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 1.0, 5, 3).unwrap();
        let mut d = DepthImage::zeros(5, 3);
        d.data[5 + 2] = 1000;
        let c = unproject(&d, &k, 1).unwrap();
        assert_eq!(c.points, vec![Vector3::new(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn unproject_stride_grid_by_hand() {
        // 4x4 plane at 2 m, fx = fy = 2, c = (1.5, 1.5); stride 2 keeps
        // pixels u, v ∈ {0, 2}: x = 2·(u − 1.5)/2 = u − 1.5
        let d = DepthImage::new(4, 4, vec![2000; 16]).unwrap();
        let c = unproject(&d, &k4(), 2).unwrap();
        let expect = [
            Vector3::new(-1.5, -1.5, 2.0),
            Vector3::new(0.5, -1.5, 2.0),
            Vector3::new(-1.5, 0.5, 2.0),
            Vector3::new(0.5, 0.5, 2.0),
        ];
        assert_eq!(c.points.len(), 4);
        for (p, e) in c.points.iter().zip(expect.iter()) {
            assert!((p - e).norm() < 1e-12);
        }
    }

    #[test]
    fn unproject_dimension_mismatch() {
        let d = DepthImage::zeros(3, 3);
        assert!(matches!(unproject(&d, &k4(), 1), Err(GeometryError::DimensionMismatch(_))));
    }

    #[test]
    fn flat_plane_normals_face_camera() {
        let k = CameraIntrinsics::from_fov(16, 12, 60.0);
        let d = DepthImage::new(16, 12, vec![1500; 16 * 12]).unwrap();
        let nm = estimate_normals(&d, &k);
        for v in 1..11 {
            for u in 1..15 {
                let n = nm.get(u, v).unwrap();
                assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
            }
        }
        assert!(nm.get(0, 5).is_none());
    }

    #[test]
    fn invalid_neighbor_invalidates_normal() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0);
        let mut d = DepthImage::new(8, 8, vec![1000; 64]).unwrap();
        d.data[3 * 8 + 3] = 0;
        let nm = estimate_normals(&d, &k);
        assert!(nm.get(4, 3).is_none());
        assert!(nm.get(3, 4).is_none());
        assert!(nm.get(2, 3).is_none());
        assert!(nm.get(5, 5).is_some());
    }

    #[test]
    fn umeyama_identity_and_recovery() {
        let src = vec![
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(1.0, -0.5, 0.7),
            Vector3::new(-0.4, 0.9, 1.3),
            Vector3::new(0.6, 0.6, -0.8),
        ];
        let id = umeyama_align(&src, &src).unwrap();
        assert!(id.angle() < 1e-12 && id.translation().norm() < 1e-12);

        let t = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
        let est = umeyama_align(&src, &dst).unwrap();
        let diff = est.inverse().compose(&t);
        assert!(diff.angle() < 1e-9 && diff.translation().norm() < 1e-9);
    }

    #[test]
    fn umeyama_collinear_is_degenerate() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(2.0, 2.0, 2.0),
        ];
        assert!(matches!(umeyama_align(&src, &src), Err(GeometryError::Degenerate(_))));
        assert!(umeyama_align(&src[..2], &src[..2]).is_err());
    }

    #[test]
    fn smoothing_keeps_planes_and_edges() {
        let mut data = vec![1000u16; 100];
        for v in 0..10 {
            for u in 5..10 {
                data[v * 10 + u] = 3000;
            }
        }
        let d = DepthImage::new(10, 10, data.clone()).unwrap();
        let s = smooth_depth(&d, 2, 0.05);
        assert_eq!(s.data, data);
    }

    #[test]
    fn smoothing_keeps_slanted_planes_up_to_the_border() {
        // plane z = 2 + 0.5 x seen by a wide camera: 1/z is affine in pixels
        let k = CameraIntrinsics::new(20.0, 20.0, 19.5, 14.5, 40, 30).unwrap();
        let mut data = vec![0u16; 40 * 30];
        for v in 0..30 {
            for u in 0..40 {
                let x = (u as f64 - k.cx) / k.fx;
                data[v * 40 + u] = (2000.0 / (1.0 - 0.5 * x)).round() as u16;
            }
        }
        let d = DepthImage::new(40, 30, data.clone()).unwrap();
        let s = smooth_depth(&d, 2, 0.05);
        for (a, b) in s.data.iter().zip(&data) {
            assert!((*a as i32 - *b as i32).abs() <= 1, "{a} vs {b}");
        }
    }
}
