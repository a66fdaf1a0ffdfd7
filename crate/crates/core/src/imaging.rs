//! Color-to-depth alignment: dense depth inpainting, inverse warping of the
//! color image into the depth frame at twice the depth resolution, and
//! diffusion fill of the remaining holes. Also hosts the opposite
//! (depth-to-color) registration used for ablations and the infrared tone map.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthImage, GeometryError, RigExtrinsics, MM_PER_M};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("depth image has no valid pixel")]
    NoValidDepth,
    #[error("depth image is not dense: pixel ({0}, {1}) is invalid")]
    NotDense(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Row-major 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if data.len() != 3 * width * height {
            return Err(GeometryError::DimensionMismatch(format!(
                "color data has {} bytes, expected 3x{}x{}",
                data.len(),
                width,
                height
            ))
            .into());
        }
        Ok(Self { width, height, data })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; 3 * width * height],
        }
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let i = 3 * (v * self.width + u);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma in `[0, 1]` (Rec. 601 weights).
    pub fn to_gray(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect()
    }

    fn check_matches(&self, k: &CameraIntrinsics) -> Result<(), ImagingError> {
        if self.width != k.width || self.height != k.height {
            return Err(GeometryError::DimensionMismatch(format!(
                "color image is {}x{} but intrinsics describe {}x{}",
                self.width, self.height, k.width, k.height
            ))
            .into());
        }
        Ok(())
    }
}

/// Color image registered to the depth frame at twice its resolution.
///
/// `valid_mask` marks pixels that received a color (by reprojection or
/// inpainting); `raw_mask` is the reprojection-only mask and is what feature
/// detection honors.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedColor {
    pub image: ColorImage,
    pub valid_mask: Vec<bool>,
    pub raw_mask: Vec<bool>,
}

impl AlignedColor {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Wraps an image whose pixels are all valid.
    pub fn fully_valid(image: ColorImage) -> Self {
        let n = image.width * image.height;
        Self {
            image,
            valid_mask: vec![true; n],
            raw_mask: vec![true; n],
        }
    }
}

/// Fills every invalid depth sample by averaging row-wise and column-wise
/// linear interpolation between the nearest valid samples. Borders extend
/// the nearest sample; pixels whose row and column are both empty take the
/// globally nearest valid sample.
pub fn inpaint_depth_linear(d: &DepthImage) -> Result<DepthImage, ImagingError> {
    let (w, h) = (d.width, d.height);
    if d.data.iter().all(|&x| x == 0) {
        return Err(ImagingError::NoValidDepth);
    }
    if d.data.iter().all(|&x| x != 0) {
        return Ok(d.clone());
    }
    let row_est = directional_estimates(&d.data, w, h, w, 1);
    let col_est = directional_estimates(&d.data, h, w, 1, w);
    let valid: Vec<(usize, usize, u16)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .filter_map(|(u, v)| {
            let s = d.get(u, v);
            (s != 0).then_some((u, v, s))
        })
        .collect();

    let mut out = d.data.clone();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if d.data[i] != 0 {
                continue;
            }
            let est = match (row_est[i], col_est[i]) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => {
                    let mut best = (u64::MAX, 0u16);
                    for &(vu, vv, s) in &valid {
                        let du = vu.abs_diff(u) as u64;
                        let dv = vv.abs_diff(v) as u64;
                        let d2 = du * du + dv * dv;
                        if d2 < best.0 {
                            best = (d2, s);
                        }
                    }
                    best.1 as f64
                }
            };
            out[i] = est.round().clamp(1.0, u16::MAX as f64) as u16;
        }
    }
    Ok(DepthImage { width: w, height: h, data: out })
}

// 1-D interpolation along `lines` lines of `len` samples each; sample `j` of
// line `l` lives at `l * line_step + j * step`.
fn directional_estimates(data: &[u16], len: usize, lines: usize, line_step: usize, step: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; data.len()];
    let mut prev = vec![None; len];
    for l in 0..lines {
        let idx = |j: usize| l * line_step + j * step;
        let mut last = None;
        for (j, p) in prev.iter_mut().enumerate() {
            if data[idx(j)] != 0 {
                last = Some(j);
            }
            *p = last;
        }
        let mut next = None;
        for j in (0..len).rev() {
            if data[idx(j)] != 0 {
                next = Some(j);
                continue;
            }
            out[idx(j)] = match (prev[j], next) {
                (Some(a), Some(b)) => {
                    let da = data[idx(a)] as f64;
                    let db = data[idx(b)] as f64;
                    Some(da + (db - da) * (j - a) as f64 / (b - a) as f64)
                }
                (Some(a), None) => Some(data[idx(a)] as f64),
                (None, Some(b)) => Some(data[idx(b)] as f64),
                (None, None) => None,
            };
        }
    }
    out
}

const SUBPIXEL_BITS: u32 = 10;
const SUBPIXEL: i64 = 1 << SUBPIXEL_BITS;

/// Bilinear color lookup with coordinates quantized to 1/1024 pixel and
/// integer weights; neighbors are clamped to the image.
pub fn sample_color_bilinear(img: &ColorImage, x: f64, y: f64) -> [u8; 3] {
    let xq = (x * SUBPIXEL as f64).round() as i64;
    let yq = (y * SUBPIXEL as f64).round() as i64;
    let x0 = xq.div_euclid(SUBPIXEL);
    let y0 = yq.div_euclid(SUBPIXEL);
    let fx = xq.rem_euclid(SUBPIXEL);
    let fy = yq.rem_euclid(SUBPIXEL);
    let clampx = |v: i64| v.clamp(0, img.width as i64 - 1) as usize;
    let clampy = |v: i64| v.clamp(0, img.height as i64 - 1) as usize;
    let (xa, xb) = (clampx(x0), clampx(x0 + 1));
    let (ya, yb) = (clampy(y0), clampy(y0 + 1));
    let w00 = (SUBPIXEL - fx) * (SUBPIXEL - fy);
    let w10 = fx * (SUBPIXEL - fy);
    let w01 = (SUBPIXEL - fx) * fy;
    let w11 = fx * fy;
    let (p00, p10, p01, p11) = (img.pixel(xa, ya), img.pixel(xb, ya), img.pixel(xa, yb), img.pixel(xb, yb));
    let half = 1i64 << (2 * SUBPIXEL_BITS - 1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let s = w00 * p00[c] as i64 + w10 * p10[c] as i64 + w01 * p01[c] as i64 + w11 * p11[c] as i64;
        out[c] = ((s + half) >> (2 * SUBPIXEL_BITS)) as u8;
    }
    out
}

/// Bilinear depth (meters) with clamped neighbors; the image must be dense.
fn sample_depth_bilinear(d: &DepthImage, x: f64, y: f64) -> f64 {
    let xc = x.clamp(0.0, (d.width - 1) as f64);
    let yc = y.clamp(0.0, (d.height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(d.width - 1);
    let y1 = (y0 + 1).min(d.height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let g = |u: usize, v: usize| d.get(u, v) as f64;
    let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
    let bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
    (top * (1.0 - fy) + bot * fy) / MM_PER_M
}

/// Warps the color image into the depth frame at twice the depth resolution
/// by inverse mapping through the dense depth map.
pub fn align_color_to_depth(
    c: &ColorImage,
    d_dense: &DepthImage,
    k_depth: &CameraIntrinsics,
    k_color: &CameraIntrinsics,
    rig: &RigExtrinsics,
) -> Result<AlignedColor, ImagingError> {
    d_dense.check_matches(k_depth)?;
    c.check_matches(k_color)?;
    if let Some(i) = d_dense.data.iter().position(|&x| x == 0) {
        return Err(ImagingError::NotDense(i % d_dense.width, i / d_dense.width));
    }
    let (ow, oh) = (2 * d_dense.width, 2 * d_dense.height);
    let depth_to_color = rig.color_to_depth.inverse();
    let rows: Vec<(Vec<u8>, Vec<bool>)> = (0..oh)
        .into_par_iter()
        .map(|v| {
            let mut rgb = vec![0u8; 3 * ow];
            let mut mask = vec![false; ow];
            let y = (v as f64 + 0.5) / 2.0 - 0.5;
            for u in 0..ow {
                let x = (u as f64 + 0.5) / 2.0 - 0.5;
                let z = sample_depth_bilinear(d_dense, x, y);
                let p_depth = k_depth.backproject(x, y, z);
                let p_color = depth_to_color.transform_point(&p_depth);
                if let Some((uc, vc)) = k_color.project(&p_color) {
                    if k_color.contains(uc, vc) {
                        rgb[3 * u..3 * u + 3].copy_from_slice(&sample_color_bilinear(c, uc, vc));
                        mask[u] = true;
                    }
                }
            }
            (rgb, mask)
        })
        .collect();
    let mut data = Vec::with_capacity(3 * ow * oh);
    let mut mask = Vec::with_capacity(ow * oh);
    for (r, m) in rows {
        data.extend_from_slice(&r);
        mask.extend_from_slice(&m);
    }
    Ok(AlignedColor {
        image: ColorImage { width: ow, height: oh, data },
        raw_mask: mask.clone(),
        valid_mask: mask,
    })
}

/// Conventional depth-to-color registration: every depth pixel is splatted
/// as its projected footprint into the color frame with a z-buffer. Output is
/// depth (mm, color-camera z) at color resolution.
pub fn align_depth_to_color(
    d: &DepthImage,
    k_depth: &CameraIntrinsics,
    k_color: &CameraIntrinsics,
    rig: &RigExtrinsics,
) -> Result<DepthImage, ImagingError> {
    d.check_matches(k_depth)?;
    let (cw, ch) = (k_color.width, k_color.height);
    let mut zbuf = vec![f64::INFINITY; cw * ch];
    let depth_to_color = rig.color_to_depth.inverse();
    for v in 0..d.height {
        for u in 0..d.width {
            let Some(z) = d.meters(u, v) else { continue };
            let center = depth_to_color.transform_point(&k_depth.backproject(u as f64, v as f64, z));
            if center.z <= 0.0 {
                continue;
            }
            let mut lo = (f64::INFINITY, f64::INFINITY);
            let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut behind = false;
            for (du, dv) in [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)] {
                let p = depth_to_color.transform_point(&k_depth.backproject(u as f64 + du, v as f64 + dv, z));
                match k_color.project(&p) {
                    Some((x, y)) => {
                        lo = (lo.0.min(x), lo.1.min(y));
                        hi = (hi.0.max(x), hi.1.max(y));
                    }
                    None => behind = true,
                }
            }
            if behind {
                continue;
            }
            let u0 = (lo.0 - 0.5).ceil().max(0.0);
            let u1 = (hi.0 + 0.5).floor().min(cw as f64 - 1.0);
            let v0 = (lo.1 - 0.5).ceil().max(0.0);
            let v1 = (hi.1 + 0.5).floor().min(ch as f64 - 1.0);
            if u0 > u1 || v0 > v1 {
                continue;
            }
            for vv in v0 as usize..=v1 as usize {
                for uu in u0 as usize..=u1 as usize {
                    let i = vv * cw + uu;
                    if center.z < zbuf[i] {
                        zbuf[i] = center.z;
                    }
                }
            }
        }
    }
    let data = zbuf
        .iter()
        .map(|&z| {
            if z.is_finite() {
                (z * MM_PER_M).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    Ok(DepthImage { width: cw, height: ch, data })
}

/// Maximum number of diffusion sweeps in [`inpaint_color_holes`].
pub const HOLE_FILL_ITERATIONS: usize = 100;

/// Fills invalid pixels that touch a valid 8-neighbor with the mean of those
/// neighbors, sweep after sweep, until nothing is fillable or the iteration
/// cap is hit. `raw_mask` is left untouched.
pub fn inpaint_color_holes(a: &AlignedColor) -> AlignedColor {
    let (w, h) = (a.width(), a.height());
    let mut img = a.image.clone();
    let mut mask = a.valid_mask.clone();
    for _ in 0..HOLE_FILL_ITERATIONS {
        let mut fills = Vec::new();
        for v in 0..h {
            for u in 0..w {
                if mask[v * w + u] {
                    continue;
                }
                let mut sum = [0u32; 3];
                let mut n = 0u32;
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (uu, vv) = (u as i64 + du, v as i64 + dv);
                        if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                            continue;
                        }
                        let (uu, vv) = (uu as usize, vv as usize);
                        if mask[vv * w + uu] {
                            let p = img.pixel(uu, vv);
                            for c in 0..3 {
                                sum[c] += p[c] as u32;
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    let avg = [
                        ((sum[0] + n / 2) / n) as u8,
                        ((sum[1] + n / 2) / n) as u8,
                        ((sum[2] + n / 2) / n) as u8,
                    ];
                    fills.push((u, v, avg));
                }
            }
        }
        if fills.is_empty() {
            break;
        }
        for (u, v, rgb) in fills {
            img.set(u, v, rgb);
            mask[v * w + u] = true;
        }
    }
    AlignedColor {
        image: img,
        valid_mask: mask,
        raw_mask: a.raw_mask.clone(),
    }
}

/// Power-law infrared tone map `clamp(round(0.04 · I^0.6), 0, 255)`.
#[inline]
pub fn tone_map_ir_pixel(i: u16) -> u8 {
    (0.04 * (i as f64).powf(0.6)).round().clamp(0.0, 255.0) as u8
}

pub fn ir_tone_map(ir: &[u16]) -> Vec<u8> {
    ir.iter().map(|&i| tone_map_ir_pixel(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    #[test]
    fn dense_depth_is_unchanged() {
        let d = DepthImage::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(inpaint_depth_linear(&d).unwrap(), d);
    }

    #[test]
    fn row_interpolation_by_hand() {
        let d = DepthImage::new(4, 1, vec![100, 0, 0, 400]).unwrap();
        assert_eq!(inpaint_depth_linear(&d).unwrap().data, vec![100, 200, 300, 400]);
    }

    #[test]
    fn single_valid_pixel_floods() {
        let mut d = DepthImage::zeros(5, 4);
        d.data[2 * 5 + 3] = 500;
        let out = inpaint_depth_linear(&d).unwrap();
        assert!(out.data.iter().all(|&x| x == 500));
    }

    #[test]
    fn all_invalid_depth_is_an_error() {
        assert_eq!(inpaint_depth_linear(&DepthImage::zeros(3, 3)), Err(ImagingError::NoValidDepth));
    }

    #[test]
    fn averages_row_and_column_estimates() {
        // center pixel: row gives (100 + 300)/2 = 200, column gives (1000 + 3000)/2 = 2000
        let d = DepthImage::new(3, 3, vec![5, 1000, 5, 100, 0, 300, 5, 3000, 5]).unwrap();
        assert_eq!(inpaint_depth_linear(&d).unwrap().get(1, 1), 1100);
    }

    #[test]
    fn tone_map_values() {
        assert_eq!(tone_map_ir_pixel(0), 0);
        assert_eq!(tone_map_ir_pixel(65535), 31);
        let all: Vec<u16> = (0..=u16::MAX).collect();
        let mapped = ir_tone_map(&all);
        assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn uniform_color_with_translated_rig() {
        let k = CameraIntrinsics::from_fov(40, 30, 70.0);
        let d = DepthImage::new(40, 30, vec![2000; 1200]).unwrap();
        let c = ColorImage::new(40, 30, [10u8, 200, 77].repeat(1200)).unwrap();
        let rig = RigExtrinsics {
            color_to_depth: Pose::from_translation(Vector3::new(0.05, 0.0, 0.0)),
        };
        let a = align_color_to_depth(&c, &d, &k, &k, &rig).unwrap();
        // parallax fx·0.05/2 px in the depth frame, doubled in the output
        let shift = k.fx * 0.05 / 2.0 * 2.0;
        for v in 0..60 {
            for u in 0..80 {
                let i = v * 80 + u;
                if a.raw_mask[i] {
                    assert_eq!(a.image.pixel(u, v), [10, 200, 77]);
                }
                if (u as f64) > shift + 2.0 {
                    assert!(a.raw_mask[i], "pixel {u},{v}");
                }
            }
            assert!(!a.raw_mask[v * 80]);
        }
    }

    #[test]
    fn outside_color_fov_is_masked() {
        let kd = CameraIntrinsics::from_fov(32, 32, 120.0);
        let kc = CameraIntrinsics::from_fov(32, 18, 60.0);
        let d = DepthImage::new(32, 32, vec![1500; 1024]).unwrap();
        let c = ColorImage::new(32, 18, vec![90; 32 * 18 * 3]).unwrap();
        let a = align_color_to_depth(&c, &d, &kd, &kc, &RigExtrinsics::identity()).unwrap();
        assert!(!a.raw_mask[0]);
        assert!(a.raw_mask[32 * 64 + 32]);
    }

    #[test]
    fn sparse_depth_is_rejected() {
        let k = CameraIntrinsics::from_fov(4, 4, 60.0);
        let d = DepthImage::new(4, 4, vec![0; 16]).unwrap();
        let c = ColorImage::black(4, 4);
        assert!(matches!(
            align_color_to_depth(&c, &d, &k, &k, &RigExtrinsics::identity()),
            Err(ImagingError::NotDense(0, 0))
        ));
    }

    #[test]
    fn hole_fill_single_pixel_and_no_op() {
        let img = ColorImage::new(3, 3, [40u8, 50, 60].repeat(9)).unwrap();
        let full = AlignedColor::fully_valid(img.clone());
        assert_eq!(inpaint_color_holes(&full), full);

        let mut a = AlignedColor::fully_valid(img);
        a.valid_mask[4] = false;
        a.raw_mask[4] = false;
        a.image.set(1, 1, [0, 0, 0]);
        let out = inpaint_color_holes(&a);
        assert_eq!(out.image.pixel(1, 1), [40, 50, 60]);
        assert!(out.valid_mask[4]);
        assert!(!out.raw_mask[4]);
    }

    #[test]
    fn hole_across_boundary_fills_between_colors() {
        // 7x7: left three columns 0, right columns 200, column band 2..5 is
        // a hole spanning the boundary
        let mut img = ColorImage::black(7, 7);
        for v in 0..7 {
            for u in 0..7 {
                let x = if u < 3 { 0 } else { 200 };
                img.set(u, v, [x, x, x]);
            }
        }
        let mut a = AlignedColor::fully_valid(img);
        for v in 0..7 {
            for u in 2..5 {
                a.valid_mask[v * 7 + u] = false;
                a.image.set(u, v, [255, 0, 255]);
            }
        }
        let out = inpaint_color_holes(&a);
        assert!(out.valid_mask.iter().all(|&m| m));
        let mut prev = 0u8;
        for u in 0..7 {
            let p = out.image.pixel(u, 3);
            assert!(p[0] == p[1] && p[1] == p[2]);
            assert!(p[0] <= 200);
            assert!(p[0] >= prev, "row is monotone across the hole");
            prev = p[0];
        }
        assert!(out.image.pixel(3, 3)[0] > 0 && out.image.pixel(3, 3)[0] < 200);
    }

    #[test]
    fn d2c_plane_is_constant_inside_color_view() {
        let kd = CameraIntrinsics::from_fov(64, 64, 120.0);
        let kc = CameraIntrinsics::from_fov(48, 27, 90.0);
        let d = DepthImage::new(64, 64, vec![2000; 64 * 64]).unwrap();
        let out = align_depth_to_color(&d, &kd, &kc, &RigExtrinsics::identity()).unwrap();
        assert_eq!((out.width, out.height), (48, 27));
        assert!(out.data.iter().all(|&z| z == 2000));
    }

    // Independent half-pixel bilinear upsampler with clamped borders.
    fn upsample_reference(c: &ColorImage) -> Vec<u8> {
        let (w, h) = (c.width, c.height);
        let mut out = Vec::with_capacity(12 * w * h);
        for v in 0..2 * h {
            for u in 0..2 * w {
                let x = (u as f64 + 0.5) / 2.0 - 0.5;
                let y = (v as f64 + 0.5) / 2.0 - 0.5;
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let at = |xi: f64, yi: f64| c.pixel(xi.clamp(0.0, (w - 1) as f64) as usize, yi.clamp(0.0, (h - 1) as f64) as usize);
                let (p00, p10, p01, p11) = (at(x0, y0), at(x0 + 1.0, y0), at(x0, y0 + 1.0), at(x0 + 1.0, y0 + 1.0));
                for ch in 0..3 {
                    let val = (1.0 - fx) * (1.0 - fy) * p00[ch] as f64
                        + fx * (1.0 - fy) * p10[ch] as f64
                        + (1.0 - fx) * fy * p01[ch] as f64
                        + fx * fy * p11[ch] as f64;
                    out.push((val + 0.5).floor() as u8);
                }
            }
        }
        out
    }

    #[test]
    fn identity_rig_reduces_to_bilinear_upsampling() {
        let (w, h) = (23, 17);
        let k = CameraIntrinsics::from_fov(w, h, 75.0);
        let data: Vec<u8> = (0..3 * w * h).map(|i| ((i * 37 + i / 7 * 11) % 256) as u8).collect();
        let c = ColorImage::new(w, h, data).unwrap();
        // slanted dense depth; the result must not depend on it
        let depth: Vec<u16> = (0..w * h).map(|i| 900 + (i % w) as u16 * 13 + (i / w) as u16 * 5).collect();
        let d = DepthImage::new(w, h, depth).unwrap();
        let rig = RigExtrinsics {
            color_to_depth: Pose::identity(),
        };
        let a = align_color_to_depth(&c, &d, &k, &k, &rig).unwrap();
        assert!(a.raw_mask.iter().all(|&m| m));
        assert_eq!(a.image.data, upsample_reference(&c));
    }

    fn sparse_depth() -> impl Strategy<Value = DepthImage> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![1 => 1u16..5000, 1 => Just(0u16)], w * h)
                .prop_filter("some valid depth", |d| d.iter().any(|&x| x > 0))
                .prop_map(move |d| DepthImage::new(w, h, d).unwrap())
        })
    }

    fn holey_color() -> impl Strategy<Value = AlignedColor> {
        (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(any::<u8>(), 3 * w * h),
                proptest::collection::vec(any::<bool>(), w * h),
            )
                .prop_map(move |(rgb, mask)| AlignedColor {
                    image: ColorImage::new(w, h, rgb).unwrap(),
                    raw_mask: mask.clone(),
                    valid_mask: mask,
                })
        })
    }

    proptest! {
        #[test]
        fn depth_inpainting_is_idempotent_and_keeps_valid(d in sparse_depth()) {
            let once = inpaint_depth_linear(&d).unwrap();
            prop_assert!(once.data.iter().all(|&x| x > 0));
            for (a, b) in d.data.iter().zip(&once.data) {
                if *a > 0 {
                    prop_assert_eq!(a, b);
                }
            }
            prop_assert_eq!(inpaint_depth_linear(&once).unwrap(), once);
        }

        #[test]
        fn hole_filling_keeps_valid_pixels(a in holey_color()) {
            let f = inpaint_color_holes(&a);
            let w = a.width();
            for (i, &m) in a.valid_mask.iter().enumerate() {
                if m {
                    prop_assert!(f.valid_mask[i]);
                    prop_assert_eq!(f.image.pixel(i % w, i / w), a.image.pixel(i % w, i / w));
                }
            }
            prop_assert_eq!(&f.raw_mask, &a.raw_mask);
            // any valid pixel floods a connected image
            if a.valid_mask.iter().any(|&m| m) {
                prop_assert!(f.valid_mask.iter().all(|&m| m));
            }
        }
    }
}
