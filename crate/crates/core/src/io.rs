//! File formats: binary PGM/PPM, PLY meshes and clouds, trajectories,
//! intrinsics JSON, and the on-disk dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthImage, PointCloud, Pose, RigExtrinsics};
use crate::imaging::ColorImage;
use crate::surface::Mesh;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let io = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

// ---- PNM ----

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("not a PNM file".into());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header number out of range")?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2] as u32);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad dimensions {width}x{height} or maxval {maxval}"));
    }
    Ok(PnmHeader {
        magic,
        width,
        height,
        maxval,
        offset: pos + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &PnmHeader, channels: usize) -> Result<&'a [u8], String> {
    let bpp = if h.maxval > 255 { 2 } else { 1 };
    let need = h.width * h.height * channels * bpp;
    let data = &bytes[h.offset..];
    if data.len() < need {
        return Err(format!("raster truncated: {} of {need} bytes", data.len()));
    }
    Ok(&data[..need])
}

/// 16-bit P5, two bytes per pixel, most significant first.
pub fn encode_pgm16(d: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", d.width, d.height).into_bytes();
    out.reserve(d.data.len() * 2);
    for &z in &d.data {
        out.extend_from_slice(&z.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<DepthImage, String> {
    let h = parse_pnm_header(bytes)?;
    if &h.magic != b"P5" {
        return Err("expected binary PGM (P5)".into());
    }
    let r = raster(bytes, &h, 1)?;
    let data: Vec<u16> = if h.maxval > 255 {
        r.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        r.iter().map(|&b| b as u16).collect()
    };
    Ok(DepthImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn encode_pgm8(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn decode_pgm8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let h = parse_pnm_header(bytes)?;
    if &h.magic != b"P5" || h.maxval > 255 {
        return Err("expected 8-bit binary PGM".into());
    }
    Ok((h.width, h.height, raster(bytes, &h, 1)?.to_vec()))
}

pub fn encode_ppm(c: &ColorImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", c.width, c.height).into_bytes();
    out.extend_from_slice(&c.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ColorImage, String> {
    let h = parse_pnm_header(bytes)?;
    if &h.magic != b"P6" || h.maxval > 255 {
        return Err("expected 8-bit binary PPM (P6)".into());
    }
    Ok(ColorImage {
        width: h.width,
        height: h.height,
        data: raster(bytes, &h, 3)?.to_vec(),
    })
}

// ---- PLY ----

fn push_f32(out: &mut Vec<u8>, x: f64) {
    out.extend_from_slice(&(x as f32).to_le_bytes());
}

pub fn encode_mesh_ply(m: &Mesh) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        m.vertices.len(),
        m.triangles.len()
    )
    .into_bytes();
    for (p, n) in m.vertices.iter().zip(&m.normals) {
        for x in p.iter().chain(n.iter()) {
            push_f32(&mut out, *x);
        }
    }
    for t in &m.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn encode_cloud_ply(c: &PointCloud) -> Vec<u8> {
    let normals = c.normals.as_ref();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        c.len()
    );
    if normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in c.points.iter().enumerate() {
        for x in p.iter() {
            push_f32(&mut out, *x);
        }
        if let Some(n) = normals {
            for x in n[i].iter() {
                push_f32(&mut out, *x);
            }
        }
    }
    out
}

/// Vertex positions of an ASCII or binary little-endian PLY file.
pub fn decode_ply_points(bytes: &[u8]) -> Result<PointCloud, String> {
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or("missing end_header")?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not ASCII")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("not a PLY file".into());
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => format = Some(f.to_string()),
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(n.parse::<usize>().map_err(|_| "bad vertex count")?);
                }
            }
            ["property", "list", ..] if in_vertex => return Err("list property on vertex".into()),
            ["property", ty, name] if in_vertex => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let n = vertex_count.ok_or("no vertex element")?;
    let idx = |name: &str| props.iter().position(|(_, p)| p == name).ok_or(format!("no '{name}' property"));
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let body = &bytes[end + 11..];
    let mut points = Vec::with_capacity(n);
    match format.as_deref() {
        Some("ascii") => {
            let text = std::str::from_utf8(body).map_err(|_| "body is not ASCII")?;
            let mut rows = text.lines().filter(|l| !l.trim().is_empty());
            for _ in 0..n {
                let row = rows.next().ok_or("truncated vertex list")?;
                let v: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| format!("bad number '{t}'")))
                    .collect::<Result<_, _>>()?;
                if v.len() < props.len() {
                    return Err("short vertex row".into());
                }
                points.push(Vector3::new(v[ix], v[iy], v[iz]));
            }
        }
        Some("binary_little_endian") => {
            let sizes: Vec<usize> = props
                .iter()
                .map(|(t, _)| match t.as_str() {
                    "char" | "uchar" | "int8" | "uint8" => Ok(1),
                    "short" | "ushort" | "int16" | "uint16" => Ok(2),
                    "int" | "uint" | "float" | "int32" | "uint32" | "float32" => Ok(4),
                    "double" | "float64" => Ok(8),
                    other => Err(format!("unsupported property type '{other}'")),
                })
                .collect::<Result<_, _>>()?;
            let stride: usize = sizes.iter().sum();
            if body.len() < n * stride {
                return Err("truncated vertex data".into());
            }
            let offsets: Vec<usize> = sizes.iter().scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            }).collect();
            let read = |row: &[u8], i: usize| -> Result<f64, String> {
                let o = offsets[i];
                match props[i].0.as_str() {
                    "float" | "float32" => Ok(f32::from_le_bytes(row[o..o + 4].try_into().unwrap()) as f64),
                    "double" | "float64" => Ok(f64::from_le_bytes(row[o..o + 8].try_into().unwrap())),
                    other => Err(format!("coordinate property of type '{other}'")),
                }
            };
            for row in body.chunks_exact(stride).take(n) {
                points.push(Vector3::new(read(row, ix)?, read(row, iy)?, read(row, iz)?));
            }
        }
        Some(f) => return Err(format!("unsupported PLY format '{f}'")),
        None => return Err("missing format line".into()),
    }
    Ok(PointCloud::from_points(points))
}

// ---- trajectories ----

/// One line per pose: `timestamp tx ty tz qx qy qz qw`.
pub fn format_trajectory(entries: &[(f64, Pose)]) -> String {
    let mut s = String::new();
    for (t, p) in entries {
        let tr = p.translation();
        let [w, x, y, z] = p.quaternion_wxyz();
        s.push_str(&format!(
            "{t:.6} {:.9} {:.9} {:.9} {x:.9} {y:.9} {z:.9} {w:.9}\n",
            tr.x, tr.y, tr.z
        ));
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Vec<(f64, Pose)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("line {}: non-numeric field", i + 1))?;
        if v.len() != 8 {
            return Err(format!("line {}: expected 8 fields, got {}", i + 1, v.len()));
        }
        let pose = Pose::from_wxyz(v[7], v[4], v[5], v[6], Vector3::new(v[1], v[2], v[3]))
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push((v[0], pose));
    }
    Ok(out)
}

// ---- intrinsics ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<CameraIntrinsics> for IntrinsicsJson {
    fn from(k: CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicsJson {
    /// `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

/// `intrinsics.json`: both cameras and the color-to-depth transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigJson {
    pub depth: IntrinsicsJson,
    pub color: IntrinsicsJson,
    pub color_to_depth: ExtrinsicsJson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rig {
    pub depth: CameraIntrinsics,
    pub color: CameraIntrinsics,
    pub extrinsics: RigExtrinsics,
}

impl RigJson {
    pub fn from_rig(r: &Rig) -> Self {
        let t = r.extrinsics.color_to_depth.translation();
        Self {
            depth: r.depth.into(),
            color: r.color.into(),
            color_to_depth: ExtrinsicsJson {
                quaternion: r.extrinsics.color_to_depth.quaternion_wxyz(),
                translation: [t.x, t.y, t.z],
            },
        }
    }

    pub fn to_rig(&self) -> Result<Rig, String> {
        let k = |j: &IntrinsicsJson, name: &str| {
            CameraIntrinsics::new(j.fx, j.fy, j.cx, j.cy, j.width, j.height).map_err(|e| format!("{name}: {e}"))
        };
        let [w, x, y, z] = self.color_to_depth.quaternion;
        let pose = Pose::from_wxyz(w, x, y, z, Vector3::from(self.color_to_depth.translation))
            .map_err(|e| format!("color_to_depth: {e}"))?;
        Ok(Rig {
            depth: k(&self.depth, "depth")?,
            color: k(&self.color, "color")?,
            extrinsics: RigExtrinsics { color_to_depth: pose },
        })
    }
}

// ---- dataset layout ----

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

/// Validated dataset directory. Frames are read lazily.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub timestamps: Vec<f64>,
    pub rig: Rig,
    pub has_ir: bool,
}

fn check_frame_dir(root: &Path, dir: &str, ext: &str, n: usize) -> Result<(), IoError> {
    let path = root.join(dir);
    for i in 0..n {
        let f = path.join(frame_name(i, ext));
        if !f.is_file() {
            return Err(IoError::format(&f, "missing frame"));
        }
    }
    let entries = fs::read_dir(&path).map_err(|source| IoError::Io {
        path: path.clone(),
        source,
    })?;
    let mut count = 0;
    for e in entries.flatten() {
        if e.path().extension().is_some_and(|x| x == ext) {
            count += 1;
        }
    }
    if count != n {
        return Err(IoError::format(
            &path,
            format!("{count} .{ext} files but {n} timestamps"),
        ));
    }
    Ok(())
}

/// Checks `imu.csv`: optional header, then seven numeric columns with
/// non-decreasing timestamps.
pub fn validate_imu(path: &Path) -> Result<usize, IoError> {
    let text = read_text(path)?;
    let mut rows = 0;
    let mut last = f64::NEG_INFINITY;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 7 && v.iter().all(|x| x.is_finite()) => {
                if v[0] < last {
                    return Err(IoError::format(path, format!("line {}: timestamps go backwards", i + 1)));
                }
                last = v[0];
                rows += 1;
            }
            Err(_) if i == 0 => {}
            _ => return Err(IoError::format(path, format!("line {}: expected 7 numeric columns", i + 1))),
        }
    }
    Ok(rows)
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, IoError> {
        let ts_path = root.join("timestamps.txt");
        let text = read_text(&ts_path)?;
        let mut timestamps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let t: f64 = line
                .parse()
                .map_err(|_| IoError::format(&ts_path, format!("line {}: not a number", i + 1)))?;
            if !t.is_finite() {
                return Err(IoError::format(&ts_path, format!("line {}: not finite", i + 1)));
            }
            timestamps.push(t);
        }
        if timestamps.is_empty() {
            return Err(IoError::format(&ts_path, "no frames"));
        }
        let k_path = root.join("intrinsics.json");
        let rig_json: RigJson = serde_json::from_str(&read_text(&k_path)?)
            .map_err(|e| IoError::format(&k_path, e.to_string()))?;
        let rig = rig_json.to_rig().map_err(|e| IoError::format(&k_path, e))?;
        let n = timestamps.len();
        check_frame_dir(root, "depth", "pgm", n)?;
        check_frame_dir(root, "color", "ppm", n)?;
        let has_ir = root.join("ir").is_dir();
        if has_ir {
            check_frame_dir(root, "ir", "pgm", n)?;
        }
        let imu = root.join("imu.csv");
        if imu.exists() {
            validate_imu(&imu)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            timestamps,
            rig,
            has_ir,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn depth_path(&self, i: usize) -> PathBuf {
        self.root.join("depth").join(frame_name(i, "pgm"))
    }

    pub fn color_path(&self, i: usize) -> PathBuf {
        self.root.join("color").join(frame_name(i, "ppm"))
    }

    pub fn depth(&self, i: usize) -> Result<DepthImage, IoError> {
        let p = self.depth_path(i);
        let d = decode_pgm16(&read_file(&p)?).map_err(|e| IoError::format(&p, e))?;
        d.check_matches(&self.rig.depth).map_err(|e| IoError::format(&p, e.to_string()))?;
        Ok(d)
    }

    pub fn color(&self, i: usize) -> Result<ColorImage, IoError> {
        let p = self.color_path(i);
        let c = decode_ppm(&read_file(&p)?).map_err(|e| IoError::format(&p, e))?;
        if c.width != self.rig.color.width || c.height != self.rig.color.height {
            return Err(IoError::format(
                &p,
                format!(
                    "{}x{} image but color intrinsics are {}x{}",
                    c.width, c.height, self.rig.color.width, self.rig.color.height
                ),
            ));
        }
        Ok(c)
    }

    pub fn ir(&self, i: usize) -> Result<DepthImage, IoError> {
        let p = self.root.join("ir").join(frame_name(i, "pgm"));
        decode_pgm16(&read_file(&p)?).map_err(|e| IoError::format(&p, e))
    }
}

/// Writes a full dataset (frames, timestamps, intrinsics).
pub fn write_dataset(
    root: &Path,
    rig: &Rig,
    timestamps: &[f64],
    frames: impl Iterator<Item = (DepthImage, ColorImage)>,
) -> Result<(), IoError> {
    for (i, (d, c)) in frames.enumerate() {
        write_atomic(&root.join("depth").join(frame_name(i, "pgm")), &encode_pgm16(&d))?;
        write_atomic(&root.join("color").join(frame_name(i, "ppm")), &encode_ppm(&c))?;
    }
    let ts: String = timestamps.iter().map(|t| format!("{t:.6}\n")).collect();
    write_atomic(&root.join("timestamps.txt"), ts.as_bytes())?;
    let json = serde_json::to_string_pretty(&RigJson::from_rig(rig)).expect("serializable");
    write_atomic(&root.join("intrinsics.json"), json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm16_round_trip_is_big_endian() {
        let d = DepthImage {
            width: 3,
            height: 2,
            data: vec![0, 1, 258, 65535, 1000, 7],
        };
        let bytes = encode_pgm16(&d);
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        let raster = &bytes[bytes.len() - 12..];
        assert_eq!(&raster[4..6], &[1, 2]);
        assert_eq!(decode_pgm16(&bytes).unwrap(), d);
    }

    #[test]
    fn pnm_header_comments() {
        let mut bytes = b"P6 # a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let c = decode_ppm(&bytes).unwrap();
        assert_eq!(c.data, vec![1, 2, 3, 4, 5, 6]);
        assert!(decode_ppm(b"P6\n2 1\n255\n\x01\x02").is_err());
        assert!(decode_pgm16(b"P2\n1 1\n255\n1").is_err());
    }

    #[test]
    fn ply_round_trip() {
        let c = PointCloud::from_points(vec![Vector3::new(0.5, -1.25, 2.0), Vector3::new(3.0, 0.0, -0.125)]);
        assert_eq!(decode_ply_points(&encode_cloud_ply(&c)).unwrap().points, c.points);
        let m = Mesh {
            vertices: c.points.clone(),
            normals: vec![Vector3::z(); 2],
            triangles: vec![],
        };
        assert_eq!(decode_ply_points(&encode_mesh_ply(&m)).unwrap().points, c.points);
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n";
        assert_eq!(decode_ply_points(ascii).unwrap().points, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn trajectory_round_trip() {
        let p = Pose::from_axis_angle(&Vector3::new(0.0, 1.0, 1.0).normalize(), 0.7, Vector3::new(1.0, -2.0, 0.5));
        let text = format_trajectory(&[(0.5, p), (1.0, Pose::identity())]);
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].1.translation() - p.translation()).norm() < 1e-9);
        assert!(back[0].1.inverse().compose(&p).angle() < 1e-8);
        assert!(parse_trajectory("0 1 2 3\n").unwrap_err().contains("line 1"));
    }

    #[test]
    fn imu_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("imu.csv");
        fs::write(&p, "timestamp,ax,ay,az,gx,gy,gz\n0,0,0,9.8,0,0,0\n0.01,0,0,9.8,0,0,0\n").unwrap();
        assert_eq!(validate_imu(&p).unwrap(), 2);
        fs::write(&p, "0,0,0,9.8,0,0\n").unwrap();
        assert!(validate_imu(&p).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"hello").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hello");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
