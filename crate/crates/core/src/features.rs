//! Difference-of-Gaussians keypoints with 128-D gradient-orientation
//! histogram descriptors, restricted to the valid area of an aligned color
//! image.

use std::f32::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::imaging::AlignedColor;

pub const DESCRIPTOR_LEN: usize = 128;
const HIST_CELLS: usize = 4;
const ORI_BINS_DESC: usize = 8;
const ORI_BINS: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// Blur of the first level of each octave, in octave pixels.
    pub base_sigma: f64,
    /// Minimum |DoG| response on a `[0, 1]` gray image.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio.
    pub edge_ratio: f64,
    pub max_features: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            max_features: 500,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.octaves == 0 || self.scales_per_octave == 0 {
            return Err("octaves and scales_per_octave must be positive".into());
        }
        for (name, v) in [
            ("base_sigma", self.base_sigma),
            ("contrast_threshold", self.contrast_threshold),
            ("edge_ratio", self.edge_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name}: must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Scale-space extremum before description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub octave: usize,
    pub level: usize,
    /// Sub-pixel position in octave pixels.
    pub ox: f64,
    pub oy: f64,
    /// Interpolated DoG value.
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    /// Sub-pixel position in input pixels.
    pub u: f64,
    pub v: f64,
    /// Blur scale in input pixels.
    pub scale: f64,
    /// Radians, image axes (y down).
    pub orientation: f64,
    pub descriptor: [f32; DESCRIPTOR_LEN],
    pub contrast: f64,
}

#[derive(Clone, Debug)]
struct Image {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Image {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.w as isize - 1) as usize;
        let yc = y.clamp(0, self.h as isize - 1) as usize;
        self.data[yc * self.w + xc]
    }

    fn blur(&self, sigma: f64) -> Image {
        let r = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
        let s: f32 = k.iter().sum();
        k.iter_mut().for_each(|x| *x /= s);
        let mut tmp = vec![0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0f32;
                for (j, &kv) in k.iter().enumerate() {
                    acc += kv * self.clamped(x as isize + j as isize - r, y as isize);
                }
                tmp[y * self.w + x] = acc;
            }
        }
        let t = Image {
            w: self.w,
            h: self.h,
            data: tmp,
        };
        let mut out = vec![0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0f32;
                for (j, &kv) in k.iter().enumerate() {
                    acc += kv * t.clamped(x as isize, y as isize + j as isize - r);
                }
                out[y * self.w + x] = acc;
            }
        }
        Image {
            w: self.w,
            h: self.h,
            data: out,
        }
    }

    fn decimate(&self) -> Image {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Image { w, h, data }
    }

    #[inline]
    fn gradient(&self, x: usize, y: usize) -> (f32, f32) {
        let (xi, yi) = (x as isize, y as isize);
        let dx = self.clamped(xi + 1, yi) - self.clamped(xi - 1, yi);
        let dy = self.clamped(xi, yi + 1) - self.clamped(xi, yi - 1);
        (dx, dy)
    }
}

/// Gaussian and DoG pyramids of a gray image.
#[derive(Clone, Debug)]
pub struct ScaleSpace {
    cfg: FeatureConfig,
    gauss: Vec<Vec<Image>>,
    dog: Vec<Vec<Image>>,
}

const INPUT_BLUR: f64 = 0.5;

impl ScaleSpace {
    pub fn build(gray: &[f32], width: usize, height: usize, cfg: &FeatureConfig) -> Self {
        assert_eq!(gray.len(), width * height, "gray image size");
        let s = cfg.scales_per_octave;
        let k = 2f64.powf(1.0 / s as f64);
        let base = Image {
            w: width,
            h: height,
            data: gray.to_vec(),
        };
        let first_blur = (cfg.base_sigma * cfg.base_sigma - INPUT_BLUR * INPUT_BLUR).max(0.01).sqrt();
        let mut seed = base.blur(first_blur);
        let mut gauss = Vec::new();
        let mut dog = Vec::new();
        for o in 0..cfg.octaves {
            if o > 0 {
                let prev: &Vec<Image> = &gauss[o - 1];
                seed = prev[s].decimate();
            }
            let mut levels = vec![seed.clone()];
            for i in 1..s + 3 {
                let prev_sigma = cfg.base_sigma * k.powi(i as i32 - 1);
                let sigma = prev_sigma * k;
                let inc = (sigma * sigma - prev_sigma * prev_sigma).sqrt();
                let next = levels[i - 1].blur(inc);
                levels.push(next);
            }
            let d: Vec<Image> = levels
                .windows(2)
                .map(|p| Image {
                    w: p[0].w,
                    h: p[0].h,
                    data: p[1].data.iter().zip(&p[0].data).map(|(a, b)| a - b).collect(),
                })
                .collect();
            gauss.push(levels);
            dog.push(d);
            if seed.w < 16 || seed.h < 16 {
                break;
            }
        }
        Self { cfg: *cfg, gauss, dog }
    }

    fn sigma(&self, level: usize) -> f64 {
        self.cfg.base_sigma * 2f64.powf(level as f64 / self.cfg.scales_per_octave as f64)
    }

    /// Scale-space extrema passing the contrast and edge tests.
    pub fn keypoints(&self) -> Vec<Keypoint> {
        let s = self.cfg.scales_per_octave;
        let thr = self.cfg.contrast_threshold as f32;
        let r = self.cfg.edge_ratio;
        let mut out = Vec::new();
        for (o, d) in self.dog.iter().enumerate() {
            let (w, h) = (d[0].w, d[0].h);
            if w < 3 || h < 3 {
                continue;
            }
            for l in 1..=s {
                let (below, cur, above) = (&d[l - 1], &d[l], &d[l + 1]);
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let v = cur.at(x, y);
                        if v.abs() < 0.5 * thr {
                            continue;
                        }
                        let mut is_max = true;
                        let mut is_min = true;
                        for img in [below, cur, above] {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let (xx, yy) = (x + dx - 1, y + dy - 1);
                                    if std::ptr::eq(img, cur) && xx == x && yy == y {
                                        continue;
                                    }
                                    let n = img.at(xx, yy);
                                    is_max &= v > n;
                                    is_min &= v < n;
                                }
                            }
                        }
                        if !is_max && !is_min {
                            continue;
                        }
                        let dxx = (cur.at(x + 1, y) + cur.at(x - 1, y) - 2.0 * v) as f64;
                        let dyy = (cur.at(x, y + 1) + cur.at(x, y - 1) - 2.0 * v) as f64;
                        let dxy = ((cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1)
                            + cur.at(x - 1, y - 1))
                            / 4.0) as f64;
                        let gx = ((cur.at(x + 1, y) - cur.at(x - 1, y)) / 2.0) as f64;
                        let gy = ((cur.at(x, y + 1) - cur.at(x, y - 1)) / 2.0) as f64;
                        let det = dxx * dyy - dxy * dxy;
                        let tr = dxx + dyy;
                        if det <= 0.0 || tr * tr / det >= (r + 1.0) * (r + 1.0) / r {
                            continue;
                        }
                        let off = |g: f64, c: f64| if c.abs() > 1e-12 { (-g / c).clamp(-0.5, 0.5) } else { 0.0 };
                        let (ox, oy) = (off(gx, dxx), off(gy, dyy));
                        let contrast = v as f64 + 0.5 * (gx * ox + gy * oy);
                        if contrast.abs() < thr as f64 {
                            continue;
                        }
                        out.push(Keypoint {
                            octave: o,
                            level: l,
                            ox: x as f64 + ox,
                            oy: y as f64 + oy,
                            contrast,
                        });
                    }
                }
            }
        }
        out
    }

    /// Dominant gradient orientation around a keypoint.
    pub fn orientation(&self, kp: &Keypoint) -> f64 {
        let img = &self.gauss[kp.octave][kp.level];
        let sw = 1.5 * self.sigma(kp.level);
        let rad = (3.0 * sw).round() as isize;
        let (cx, cy) = (kp.ox.round() as isize, kp.oy.round() as isize);
        let mut hist = [0f64; ORI_BINS];
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let (x, y) = (cx + dx, cy + dy);
                if x < 1 || y < 1 || x >= img.w as isize - 1 || y >= img.h as isize - 1 {
                    continue;
                }
                let (gx, gy) = img.gradient(x as usize, y as usize);
                let mag = ((gx * gx + gy * gy) as f64).sqrt();
                let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sw * sw)).exp();
                let ang = (gy as f64).atan2(gx as f64).rem_euclid(std::f64::consts::TAU);
                let bin = ((ang / std::f64::consts::TAU * ORI_BINS as f64).floor() as usize) % ORI_BINS;
                hist[bin] += wgt * mag;
            }
        }
        let smooth: Vec<f64> = (0..ORI_BINS)
            .map(|i| {
                let g = |d: isize| hist[(i as isize + d).rem_euclid(ORI_BINS as isize) as usize];
                (g(-2) + g(2)) / 16.0 + (g(-1) + g(1)) * 4.0 / 16.0 + g(0) * 6.0 / 16.0
            })
            .collect();
        let mut best = 0;
        for i in 1..ORI_BINS {
            if smooth[i] > smooth[best] {
                best = i;
            }
        }
        let l = smooth[(best + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(best + 1) % ORI_BINS];
        let c = smooth[best];
        let denom = l - 2.0 * c + r;
        let off = if denom.abs() > 1e-12 { 0.5 * (l - r) / denom } else { 0.0 };
        ((best as f64 + 0.5 + off) / ORI_BINS as f64 * std::f64::consts::TAU).rem_euclid(std::f64::consts::TAU)
    }

    /// Rotation-normalized 4×4×8 descriptor at a keypoint with a given
    /// orientation.
    pub fn descriptor(&self, kp: &Keypoint, orientation: f64) -> [f32; DESCRIPTOR_LEN] {
        let img = &self.gauss[kp.octave][kp.level];
        let d = HIST_CELLS as f64;
        let hist_width = 3.0 * self.sigma(kp.level);
        let radius = (hist_width * std::f64::consts::SQRT_2 * (d + 1.0) / 2.0).round() as isize;
        let (cos_t, sin_t) = (orientation.cos(), orientation.sin());
        let (cx, cy) = (kp.ox.round() as isize, kp.oy.round() as isize);
        let mut hist = [0f64; DESCRIPTOR_LEN];
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                // offset in the keypoint's rotated frame, in cell units
                let xr = (cos_t * dx as f64 + sin_t * dy as f64) / hist_width;
                let yr = (-sin_t * dx as f64 + cos_t * dy as f64) / hist_width;
                let cbin = xr + d / 2.0 - 0.5;
                let rbin = yr + d / 2.0 - 0.5;
                if cbin <= -1.0 || cbin >= d || rbin <= -1.0 || rbin >= d {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x < 1 || y < 1 || x >= img.w as isize - 1 || y >= img.h as isize - 1 {
                    continue;
                }
                let (gx, gy) = img.gradient(x as usize, y as usize);
                let mag = ((gx * gx + gy * gy) as f64).sqrt();
                let ang = ((gy as f64).atan2(gx as f64) - orientation).rem_euclid(std::f64::consts::TAU);
                let obin = ang / std::f64::consts::TAU * ORI_BINS_DESC as f64;
                let wgt = (-(xr * xr + yr * yr) / (2.0 * (0.5 * d) * (0.5 * d))).exp() * mag;
                let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
                let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
                for (ri, wr) in [(r0 as isize, 1.0 - fr), (r0 as isize + 1, fr)] {
                    if ri < 0 || ri >= HIST_CELLS as isize {
                        continue;
                    }
                    for (ci, wc) in [(c0 as isize, 1.0 - fc), (c0 as isize + 1, fc)] {
                        if ci < 0 || ci >= HIST_CELLS as isize {
                            continue;
                        }
                        for (oi, wo) in [(o0 as usize, 1.0 - fo), (o0 as usize + 1, fo)] {
                            let oi = oi % ORI_BINS_DESC;
                            hist[(ri as usize * HIST_CELLS + ci as usize) * ORI_BINS_DESC + oi] += wgt * wr * wc * wo;
                        }
                    }
                }
            }
        }
        normalize_descriptor(&mut hist);
        hist.map(|x| x as f32)
    }

    /// Keypoint position and blur scale in input pixels.
    pub fn to_input_frame(&self, kp: &Keypoint) -> (f64, f64, f64) {
        let f = (1usize << kp.octave) as f64;
        (kp.ox * f, kp.oy * f, self.sigma(kp.level) * f)
    }
}

fn normalize_descriptor(h: &mut [f64; DESCRIPTOR_LEN]) {
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 {
        // flat patch: a fixed unit vector keeps the norm invariant
        h.iter_mut().for_each(|x| *x = 1.0 / (DESCRIPTOR_LEN as f64).sqrt());
        return;
    }
    h.iter_mut().for_each(|x| *x = (*x / norm).min(0.2));
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    h.iter_mut().for_each(|x| *x /= norm);
}

/// Radius (input pixels) of the image area a feature depends on.
pub fn support_radius(scale: f64) -> f64 {
    3.0 * scale
}

// Summed-area table of invalid pixels for O(1) window checks.
struct InvalidCounts {
    w: usize,
    sums: Vec<u32>,
}

impl InvalidCounts {
    fn new(mask: &[bool], w: usize, h: usize) -> Self {
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(!mask[y * w + x]);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    // Invalid pixels in [x0, x1) × [y0, y1).
    fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0)
    }
}

/// Features of a gray image whose support window lies entirely inside the
/// image and the valid mask, strongest `max_features` first.
pub fn detect_gray(gray: &[f32], mask: &[bool], width: usize, height: usize, cfg: &FeatureConfig) -> Vec<Feature> {
    let ss = ScaleSpace::build(gray, width, height, cfg);
    let invalid = InvalidCounts::new(mask, width, height);
    let mut kps: Vec<(Keypoint, f64, f64, f64)> = ss
        .keypoints()
        .into_iter()
        .filter_map(|kp| {
            let (u, v, scale) = ss.to_input_frame(&kp);
            let r = support_radius(scale);
            let (x0, y0) = ((u - r).floor(), (v - r).floor());
            let (x1, y1) = ((u + r).ceil() + 1.0, (v + r).ceil() + 1.0);
            if x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
                return None;
            }
            (invalid.count(x0 as usize, y0 as usize, x1 as usize, y1 as usize) == 0).then_some((kp, u, v, scale))
        })
        .collect();
    kps.sort_by(|a, b| {
        b.0.contrast
            .abs()
            .total_cmp(&a.0.contrast.abs())
            .then(a.0.octave.cmp(&b.0.octave))
            .then(a.0.level.cmp(&b.0.level))
            .then(a.0.oy.total_cmp(&b.0.oy))
            .then(a.0.ox.total_cmp(&b.0.ox))
    });
    kps.truncate(cfg.max_features);
    kps.into_iter()
        .map(|(kp, u, v, scale)| {
            let orientation = ss.orientation(&kp);
            Feature {
                u,
                v,
                scale,
                orientation,
                descriptor: ss.descriptor(&kp, orientation),
                contrast: kp.contrast,
            }
        })
        .collect()
}

/// Features from the pre-inpainting valid area of an aligned color image.
pub fn detect_features(img: &AlignedColor, cfg: &FeatureConfig) -> Vec<Feature> {
    detect_gray(&img.image.to_gray(), &img.raw_mask, img.width(), img.height(), cfg)
}

#[inline]
pub fn descriptor_distance_sq(a: &[f32; DESCRIPTOR_LEN], b: &[f32; DESCRIPTOR_LEN]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index pairs `(i, j)` that are mutual nearest neighbors between `a` and
/// `b` and pass the ratio test in both directions.
pub fn mutual_matches(a: &[Feature], b: &[Feature], ratio: f64) -> Vec<(usize, usize)> {
    let best = |q: &Feature, set: &[Feature]| -> Option<(usize, bool)> {
        let mut d1 = (usize::MAX, f32::INFINITY);
        let mut d2 = f32::INFINITY;
        for (j, f) in set.iter().enumerate() {
            let d = descriptor_distance_sq(&q.descriptor, &f.descriptor);
            if d < d1.1 {
                d2 = d1.1;
                d1 = (j, d);
            } else if d < d2 {
                d2 = d;
            }
        }
        if d1.0 == usize::MAX {
            return None;
        }
        let passes = d2.is_infinite() || (d1.1 as f64).sqrt() < ratio * (d2 as f64).sqrt();
        Some((d1.0, passes))
    };
    let back: Vec<Option<(usize, bool)>> = b.iter().map(|f| best(f, a)).collect();
    a.iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let (j, ok) = best(f, b)?;
            let (i2, ok2) = back[j]?;
            (ok && ok2 && i2 == i).then_some((i, j))
        })
        .collect()
}

/// Orientation-bin width of the descriptor, radians.
pub const DESCRIPTOR_BIN: f32 = TAU / ORI_BINS_DESC as f32;

#[cfg(test)]
mod tests {
    use super::*;

    // Smooth random blobs; odd size keeps 90° rotation aligned with decimation.
    fn blob_image(n: usize, seed: u64) -> Vec<f32> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (1u64 << 31) as f64
        };
        let blobs: Vec<(f64, f64, f64, f64)> = (0..n)
            .map(|_| (next() * n as f64, next() * n as f64, 2.0 + 6.0 * next(), next() - 0.5))
            .collect();
        let mut img = vec![0.5f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let mut v = 0.5;
                for &(bx, by, s, a) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    v += a * (-d2 / (2.0 * s * s)).exp();
                }
                img[y * n + x] = v as f32;
            }
        }
        img
    }

    fn rotate90(img: &[f32], n: usize) -> Vec<f32> {
        // (x, y) -> (n-1-y, x)
        let mut out = vec![0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                out[x * n + (n - 1 - y)] = img[y * n + x];
            }
        }
        out
    }

    #[test]
    fn uniform_image_has_no_features() {
        let n = 64;
        let f = detect_gray(&vec![0.4; n * n], &vec![true; n * n], n, n, &FeatureConfig::default());
        assert!(f.is_empty());
    }

    #[test]
    fn descriptors_are_unit_length() {
        let n = 121;
        let f = detect_gray(&blob_image(n, 3), &vec![true; n * n], n, n, &FeatureConfig::default());
        assert!(f.len() > 10);
        for ft in &f {
            let norm: f64 = ft.descriptor.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_self_match() {
        let n = 161;
        let img = blob_image(n, 9);
        let rot = rotate90(&img, n);
        let mask = vec![true; n * n];
        let cfg = FeatureConfig::default();
        let a = detect_gray(&img, &mask, n, n, &cfg);
        let b = detect_gray(&rot, &mask, n, n, &cfg);
        let matches = mutual_matches(&a, &b, 1.0);
        let good = matches
            .iter()
            .filter(|&&(i, j)| {
                let (ex, ey) = ((n - 1) as f64 - a[i].v, a[i].u);
                (b[j].u - ex).hypot(b[j].v - ey) < 2.0
            })
            .count();
        let frac = good as f64 / a.len().min(b.len()) as f64;
        assert!(frac >= 0.7, "{good} of {} / {}", a.len(), b.len());
    }

    #[test]
    fn masked_region_has_no_features() {
        let n = 121;
        let img = blob_image(n, 5);
        let mut mask = vec![true; n * n];
        for y in 0..n {
            for x in 0..60 {
                mask[y * n + x] = false;
            }
        }
        let cfg = FeatureConfig::default();
        let all = detect_gray(&img, &vec![true; n * n], n, n, &cfg);
        let f = detect_gray(&img, &mask, n, n, &cfg);
        assert!(all.iter().any(|ft| ft.u < 60.0));
        for ft in &f {
            assert!(ft.u - support_radius(ft.scale) >= 60.0 - 1.0);
        }
    }

    #[test]
    fn brightness_change_keeps_descriptors() {
        let n = 121;
        let img = blob_image(n, 21);
        let bright: Vec<f32> = img.iter().map(|&x| 0.7 * x + 0.2).collect();
        let cfg = FeatureConfig::default();
        let s1 = ScaleSpace::build(&img, n, n, &cfg);
        let s2 = ScaleSpace::build(&bright, n, n, &cfg);
        let kps = s1.keypoints();
        assert!(kps.len() > 10);
        let mk = |s: &ScaleSpace| -> Vec<Feature> {
            kps.iter()
                .map(|kp| {
                    let o = s.orientation(kp);
                    let (u, v, scale) = s.to_input_frame(kp);
                    Feature {
                        u,
                        v,
                        scale,
                        orientation: o,
                        descriptor: s.descriptor(kp, o),
                        contrast: kp.contrast,
                    }
                })
                .collect()
        };
        let (a, b) = (mk(&s1), mk(&s2));
        let m = mutual_matches(&a, &b, 1.0);
        let same = m.iter().filter(|(i, j)| i == j).count();
        assert!(same as f64 >= 0.95 * a.len() as f64);
    }
}
