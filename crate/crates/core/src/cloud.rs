// SPDX-License-Identifier: Apache-2.0

//! Point-cloud types and PCD / PLY file I/O.
//!
//! PCD v0.7 is read in `ascii` and `binary` (packed little-endian) flavours
//! and written in both; coordinates are written as FLOAT64 so a binary
//! save/load round trip is bit-exact. An optional `label` field (UINT8,
//! 0 = static, 1 = dynamic) carries the motion labels used by evaluation.
//! PLY is read-only and ascii-only.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::ops::{Add, Mul, Sub};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed data: {0}")]
    MalformedData(String),
    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("label count {labels} does not match point count {points}")]
    LabelMismatch { points: usize, labels: usize },
    #[error("invalid motion label {value} at point {index} (expected 0 or 1)")]
    InvalidLabel { index: usize, value: i64 },
}

impl CloudError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CloudError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Squared Euclidean distance, summed in x, y, z order.
    #[inline]
    pub fn distance_squared(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(self, other: Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    #[inline]
    pub fn coord(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Ground-truth motion label. Serialized as 0 = static, 1 = dynamic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionLabel {
    Static,
    Dynamic,
}

impl MotionLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            MotionLabel::Static => 0,
            MotionLabel::Dynamic => 1,
        }
    }

    pub fn from_code(value: i64) -> Option<Self> {
        match value {
            0 => Some(MotionLabel::Static),
            1 => Some(MotionLabel::Dynamic),
            _ => None,
        }
    }
}

impl Serialize for MotionLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for MotionLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        MotionLabel::from_code(v)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid motion label {v}")))
    }
}

/// An ordered point set with optional per-point motion labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<MotionLabel>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            labels: None,
        }
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<MotionLabel>) -> Result<Self, CloudError> {
        if points.len() != labels.len() {
            return Err(CloudError::LabelMismatch {
                points: points.len(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            points,
            labels: Some(labels),
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[MotionLabel]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Replaces (or clears) the label column.
    pub fn set_labels(&mut self, labels: Option<Vec<MotionLabel>>) -> Result<(), CloudError> {
        if let Some(l) = &labels {
            if l.len() != self.points.len() {
                return Err(CloudError::LabelMismatch {
                    points: self.points.len(),
                    labels: l.len(),
                });
            }
        }
        self.labels = labels;
        Ok(())
    }

    /// Points (and labels) at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Concatenates two clouds. Labels survive only if both sides carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = Vec::with_capacity(self.len() + other.len());
        points.extend_from_slice(&self.points);
        points.extend_from_slice(&other.points);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            _ => None,
        };
        PointCloud { points, labels }
    }

    /// Index of the first non-finite point, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.points.iter().position(|p| !p.is_finite())
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<MotionLabel>>) {
        (self.points, self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    PcdAscii,
    PcdBinary,
    PlyAscii,
}

impl CloudFormat {
    /// Guess the format from the file extension (`.ply` or `.pcd`).
    pub fn from_extension(path: &Path) -> Option<CloudFormat> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "ply" => Some(CloudFormat::PlyAscii),
            "pcd" => Some(CloudFormat::PcdBinary),
            _ => None,
        }
    }
}

/// Loads a cloud. With `format == None` the format is sniffed from the
/// file contents (PLY magic) and otherwise treated as PCD; the PCD DATA
/// line decides between ascii and binary in either case.
pub fn load_cloud(path: &Path, format: Option<CloudFormat>) -> Result<PointCloud, CloudError> {
    let bytes = fs::read(path).map_err(|e| CloudError::io(path, e))?;
    let is_ply = match format {
        Some(CloudFormat::PlyAscii) => true,
        Some(_) => false,
        None => bytes.starts_with(b"ply"),
    };
    if is_ply {
        parse_ply(&bytes)
    } else {
        parse_pcd(&bytes)
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<(), CloudError> {
    let bytes = encode_pcd(cloud, format)?;
    let file = fs::File::create(path).map_err(|e| CloudError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| CloudError::io(path, e))?;
    w.flush().map_err(|e| CloudError::io(path, e))
}

/// Serializes a cloud as PCD v0.7. PLY output is not supported.
pub fn encode_pcd(cloud: &PointCloud, format: CloudFormat) -> Result<Vec<u8>, CloudError> {
    let binary = match format {
        CloudFormat::PcdAscii => false,
        CloudFormat::PcdBinary => true,
        CloudFormat::PlyAscii => {
            return Err(CloudError::UnsupportedFormat(
                "PLY is supported for reading only".into(),
            ))
        }
    };
    let labeled = cloud.labels.is_some();
    let n = cloud.len();
    let mut out = Vec::with_capacity(256 + n * 25);
    let mut header = String::new();
    header.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    header.push_str("VERSION 0.7\n");
    if labeled {
        header.push_str("FIELDS x y z label\nSIZE 8 8 8 1\nTYPE F F F U\nCOUNT 1 1 1 1\n");
    } else {
        header.push_str("FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nCOUNT 1 1 1\n");
    }
    header.push_str(&format!(
        "WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\n"
    ));
    header.push_str(if binary {
        "DATA binary\n"
    } else {
        "DATA ascii\n"
    });
    out.extend_from_slice(header.as_bytes());

    let labels = cloud.labels.as_deref();
    if binary {
        for (i, p) in cloud.points.iter().enumerate() {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.extend_from_slice(&p.z.to_le_bytes());
            if let Some(l) = labels {
                out.push(l[i].as_u8());
            }
        }
    } else {
        let mut line = String::new();
        for (i, p) in cloud.points.iter().enumerate() {
            line.clear();
            line.push_str(&format_sig9(p.x));
            line.push(' ');
            line.push_str(&format_sig9(p.y));
            line.push(' ');
            line.push_str(&format_sig9(p.z));
            if let Some(l) = labels {
                line.push(' ');
                line.push_str(if l[i] == MotionLabel::Dynamic {
                    "1"
                } else {
                    "0"
                });
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
    }
    Ok(out)
}

/// Plain decimal with 9 significant digits, trailing zeros trimmed.
fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).clamp(0, 40) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FieldKind {
    Float,
    Unsigned,
    Signed,
}

#[derive(Debug, Clone)]
struct PcdField {
    name: String,
    size: usize,
    kind: FieldKind,
    count: usize,
}

impl PcdField {
    fn read_f64(&self, b: &[u8]) -> Option<f64> {
        Some(match (self.kind, self.size) {
            (FieldKind::Float, 4) => f32::from_le_bytes(b.try_into().ok()?) as f64,
            (FieldKind::Float, 8) => f64::from_le_bytes(b.try_into().ok()?),
            _ => return None,
        })
    }

    fn read_int(&self, b: &[u8]) -> Option<i64> {
        Some(match (self.kind, self.size) {
            (FieldKind::Unsigned, 1) => b[0] as i64,
            (FieldKind::Unsigned, 2) => u16::from_le_bytes(b.try_into().ok()?) as i64,
            (FieldKind::Unsigned, 4) => u32::from_le_bytes(b.try_into().ok()?) as i64,
            (FieldKind::Unsigned, 8) => u64::from_le_bytes(b.try_into().ok()?) as i64,
            (FieldKind::Signed, 1) => b[0] as i8 as i64,
            (FieldKind::Signed, 2) => i16::from_le_bytes(b.try_into().ok()?) as i64,
            (FieldKind::Signed, 4) => i32::from_le_bytes(b.try_into().ok()?) as i64,
            (FieldKind::Signed, 8) => i64::from_le_bytes(b.try_into().ok()?),
            _ => return None,
        })
    }
}

/// Column positions of the fields the loader consumes.
struct PcdLayout {
    fields: Vec<PcdField>,
    xyz: [usize; 3],
    label: Option<usize>,
}

fn split_header_line(bytes: &[u8], pos: &mut usize) -> Option<String> {
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|o| start + o)
        .unwrap_or(bytes.len());
    *pos = (end + 1).min(bytes.len());
    Some(
        String::from_utf8_lossy(&bytes[start..end])
            .trim()
            .to_string(),
    )
}

fn parse_pcd(bytes: &[u8]) -> Result<PointCloud, CloudError> {
    let mut pos = 0usize;
    let mut names: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut types: Option<Vec<char>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut points: Option<usize> = None;
    let mut data: Option<String> = None;

    while let Some(line) = split_header_line(bytes, &mut pos) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        let parse_usizes = |what: &str| -> Result<Vec<usize>, CloudError> {
            rest.iter()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| CloudError::MalformedHeader(format!("bad {what} value `{t}`")))
                })
                .collect()
        };
        match key.as_str() {
            "VERSION" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            "FIELDS" | "COLUMNS" => names = Some(rest.iter().map(|s| s.to_string()).collect()),
            "SIZE" => sizes = Some(parse_usizes("SIZE")?),
            "COUNT" => counts = Some(parse_usizes("COUNT")?),
            "TYPE" => {
                types = Some(
                    rest.iter()
                        .map(|t| t.chars().next().unwrap_or('?').to_ascii_uppercase())
                        .collect(),
                )
            }
            "POINTS" => {
                let v = parse_usizes("POINTS")?;
                points =
                    Some(*v.first().ok_or_else(|| {
                        CloudError::MalformedHeader("POINTS has no value".into())
                    })?);
            }
            "DATA" => {
                data = Some(
                    rest.first()
                        .map(|s| s.to_ascii_lowercase())
                        .unwrap_or_default(),
                );
                break;
            }
            other => {
                return Err(CloudError::MalformedHeader(format!(
                    "unknown header key `{other}`"
                )))
            }
        }
    }

    let names = names.ok_or_else(|| CloudError::MalformedHeader("missing FIELDS".into()))?;
    let n_points = points.ok_or_else(|| CloudError::MalformedHeader("missing POINTS".into()))?;
    let data = data.ok_or_else(|| CloudError::MalformedHeader("missing DATA".into()))?;
    let sizes = sizes.ok_or_else(|| CloudError::MalformedHeader("missing SIZE".into()))?;
    let types = types.ok_or_else(|| CloudError::MalformedHeader("missing TYPE".into()))?;
    let counts = counts.unwrap_or_else(|| vec![1; names.len()]);
    if sizes.len() != names.len() || types.len() != names.len() || counts.len() != names.len() {
        return Err(CloudError::MalformedHeader(
            "FIELDS, SIZE, TYPE and COUNT lengths differ".into(),
        ));
    }

    let mut fields = Vec::with_capacity(names.len());
    for i in 0..names.len() {
        let kind = match types[i] {
            'F' => FieldKind::Float,
            'U' => FieldKind::Unsigned,
            'I' => FieldKind::Signed,
            t => return Err(CloudError::MalformedHeader(format!("unknown TYPE `{t}`"))),
        };
        if !matches!(sizes[i], 1 | 2 | 4 | 8) {
            return Err(CloudError::MalformedHeader(format!(
                "bad SIZE {}",
                sizes[i]
            )));
        }
        fields.push(PcdField {
            name: names[i].clone(),
            size: sizes[i],
            kind,
            count: counts[i],
        });
    }
    let layout = resolve_layout(fields)?;

    match data.as_str() {
        "ascii" => parse_pcd_ascii(&bytes[pos..], &layout, n_points),
        "binary" => parse_pcd_binary(&bytes[pos..], &layout, n_points),
        other => Err(CloudError::UnsupportedFormat(format!("PCD DATA `{other}`"))),
    }
}

fn resolve_layout(fields: Vec<PcdField>) -> Result<PcdLayout, CloudError> {
    let find = |name: &str| fields.iter().position(|f| f.name == name);
    let mut xyz = [0usize; 3];
    for (slot, axis) in ["x", "y", "z"].iter().enumerate() {
        let i = find(axis)
            .ok_or_else(|| CloudError::MalformedHeader(format!("FIELDS lacks `{axis}`")))?;
        let f = &fields[i];
        if f.kind != FieldKind::Float || !(f.size == 4 || f.size == 8) || f.count != 1 {
            return Err(CloudError::MalformedHeader(format!(
                "field `{axis}` must be FLOAT32 or FLOAT64 with COUNT 1"
            )));
        }
        xyz[slot] = i;
    }
    let mut label = None;
    if let Some(i) = find("label") {
        let f = &fields[i];
        if f.kind != FieldKind::Float && f.count == 1 {
            label = Some(i);
        } else {
            log::warn!("ignoring non-integer `label` field");
        }
    }
    for (i, f) in fields.iter().enumerate() {
        if !xyz.contains(&i) && label != Some(i) {
            log::warn!("skipping unsupported PCD field `{}`", f.name);
        }
    }
    Ok(PcdLayout { fields, xyz, label })
}

fn finish(points: Vec<Point3>, labels: Option<Vec<MotionLabel>>) -> Result<PointCloud, CloudError> {
    let cloud = PointCloud { points, labels };
    if let Some(index) = cloud.first_non_finite() {
        return Err(CloudError::NonFiniteCoordinate { index });
    }
    Ok(cloud)
}

fn parse_pcd_ascii(body: &[u8], layout: &PcdLayout, n: usize) -> Result<PointCloud, CloudError> {
    let text = std::str::from_utf8(body)
        .map_err(|_| CloudError::MalformedData("ascii body is not UTF-8".into()))?;
    // Token offset of each field's first value within a record.
    let mut offsets = Vec::with_capacity(layout.fields.len());
    let mut width = 0;
    for f in &layout.fields {
        offsets.push(width);
        width += f.count;
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = layout.label.map(|_| Vec::with_capacity(n));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| CloudError::MalformedData(format!("expected {n} points, found {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < width {
            return Err(CloudError::MalformedData(format!(
                "point {i}: expected {width} values, found {}",
                toks.len()
            )));
        }
        let mut c = [0.0f64; 3];
        for (slot, &fi) in layout.xyz.iter().enumerate() {
            let t = toks[offsets[fi]];
            c[slot] = t
                .parse::<f64>()
                .map_err(|_| CloudError::MalformedData(format!("point {i}: bad number `{t}`")))?;
        }
        points.push(Point3::from(c));
        if let (Some(li), Some(out)) = (layout.label, labels.as_mut()) {
            let t = toks[offsets[li]];
            let v = t
                .parse::<i64>()
                .map_err(|_| CloudError::MalformedData(format!("point {i}: bad label `{t}`")))?;
            out.push(
                MotionLabel::from_code(v).ok_or(CloudError::InvalidLabel { index: i, value: v })?,
            );
        }
    }
    finish(points, labels)
}

fn parse_pcd_binary(body: &[u8], layout: &PcdLayout, n: usize) -> Result<PointCloud, CloudError> {
    let mut offsets = Vec::with_capacity(layout.fields.len());
    let mut stride = 0;
    for f in &layout.fields {
        offsets.push(stride);
        stride += f.size * f.count;
    }
    let needed = stride * n;
    if body.len() < needed {
        return Err(CloudError::MalformedData(format!(
            "binary body has {} bytes, expected {needed}",
            body.len()
        )));
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = layout.label.map(|_| Vec::with_capacity(n));
    for i in 0..n {
        let rec = &body[i * stride..(i + 1) * stride];
        let mut c = [0.0f64; 3];
        for (slot, &fi) in layout.xyz.iter().enumerate() {
            let f = &layout.fields[fi];
            c[slot] = f
                .read_f64(&rec[offsets[fi]..offsets[fi] + f.size])
                .ok_or_else(|| CloudError::MalformedData("bad float field".into()))?;
        }
        points.push(Point3::from(c));
        if let (Some(li), Some(out)) = (layout.label, labels.as_mut()) {
            let f = &layout.fields[li];
            let v = f
                .read_int(&rec[offsets[li]..offsets[li] + f.size])
                .ok_or_else(|| CloudError::MalformedData("bad label field".into()))?;
            out.push(
                MotionLabel::from_code(v).ok_or(CloudError::InvalidLabel { index: i, value: v })?,
            );
        }
    }
    finish(points, labels)
}

fn parse_ply(bytes: &[u8]) -> Result<PointCloud, CloudError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CloudError::UnsupportedFormat("PLY must be ascii".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(CloudError::MalformedHeader("missing `ply` magic".into()));
    }
    // (name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut saw_format = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| CloudError::MalformedHeader("missing end_header".into()))?
            .trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(CloudError::UnsupportedFormat(format!(
                        "PLY format `{}` (only ascii is read)",
                        toks.get(1).unwrap_or(&"")
                    )));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = toks.get(1).unwrap_or(&"").to_string();
                let count = toks
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| CloudError::MalformedHeader(format!("bad element `{line}`")))?;
                elements.push((name, count, Vec::new()));
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| CloudError::MalformedHeader("property before element".into()))?;
                let name = if toks.get(1) == Some(&"list") {
                    toks.get(4)
                } else {
                    toks.get(2)
                };
                el.2.push(name.unwrap_or(&"").to_string());
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(CloudError::MalformedHeader(format!(
                    "unknown PLY keyword `{other}`"
                )))
            }
        }
    }
    if !saw_format {
        return Err(CloudError::MalformedHeader(
            "missing PLY format line".into(),
        ));
    }

    let mut points = Vec::new();
    let mut labels: Option<Vec<MotionLabel>> = None;
    let mut body = lines.filter(|l| !l.trim().is_empty());
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                body.next();
            }
            continue;
        }
        let col = |p: &str| props.iter().position(|q| q == p);
        let xyz = [col("x"), col("y"), col("z")];
        let [Some(xi), Some(yi), Some(zi)] = xyz else {
            return Err(CloudError::MalformedHeader(
                "vertex element lacks x/y/z".into(),
            ));
        };
        let li = col("label");
        if li.is_some() {
            labels = Some(Vec::with_capacity(*count));
        }
        for p in props {
            if !["x", "y", "z", "label"].contains(&p.as_str()) {
                log::warn!("skipping unsupported PLY property `{p}`");
            }
        }
        points.reserve(*count);
        for i in 0..*count {
            let line = body
                .next()
                .ok_or_else(|| CloudError::MalformedData(format!("expected {count} vertices")))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let get = |c: usize| -> Result<f64, CloudError> {
                toks.get(c)
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| CloudError::MalformedData(format!("vertex {i}: bad value")))
            };
            points.push(Point3::new(get(xi)?, get(yi)?, get(zi)?));
            if let (Some(li), Some(out)) = (li, labels.as_mut()) {
                let v = get(li)? as i64;
                out.push(
                    MotionLabel::from_code(v)
                        .ok_or(CloudError::InvalidLabel { index: i, value: v })?,
                );
            }
        }
    }
    finish(points, labels)
}

/// Reads a JSON array of 0/1 motion labels.
pub fn load_labels_sidecar(path: &Path) -> Result<Vec<MotionLabel>, CloudError> {
    let text = fs::read_to_string(path).map_err(|e| CloudError::io(path, e))?;
    let raw: Vec<i64> = serde_json::from_str(&text)
        .map_err(|e| CloudError::MalformedData(format!("label sidecar: {e}")))?;
    raw.into_iter()
        .enumerate()
        .map(|(index, value)| {
            MotionLabel::from_code(value).ok_or(CloudError::InvalidLabel { index, value })
        })
        .collect()
}

/// Uniform sample of `n` points without replacement, in original order.
/// Returns the input unchanged when `n >= cloud.len()`.
pub fn downsample_uniform(cloud: &PointCloud, n: usize, seed: u64) -> PointCloud {
    if n >= cloud.len() {
        return cloud.clone();
    }
    cloud.select(&downsample_indices(cloud.len(), n, seed))
}

/// The sorted index set `downsample_uniform` keeps.
pub fn downsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> PointCloud {
        PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ])
    }

    #[test]
    fn parses_ascii_pcd() {
        let text = "# comment\nVERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n\
                    WIDTH 3\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n\
                    0 0 0\n1 0 0\n0 1 0\n";
        let c = parse_pcd(text.as_bytes()).unwrap();
        assert_eq!(c, tri());
        assert!(c.labels().is_none());
    }

    #[test]
    fn parses_label_column() {
        let text = "FIELDS x y z label\nSIZE 4 4 4 1\nTYPE F F F U\nPOINTS 3\nDATA ascii\n\
                    0 0 0 0\n1 0 0 1\n0 1 0 0\n";
        let c = parse_pcd(text.as_bytes()).unwrap();
        assert_eq!(
            c.labels().unwrap(),
            &[
                MotionLabel::Static,
                MotionLabel::Dynamic,
                MotionLabel::Static
            ]
        );
    }

    #[test]
    fn skips_extra_fields() {
        let text = "FIELDS x intensity y z\nSIZE 4 4 4 4\nTYPE F F F F\nPOINTS 1\nDATA ascii\n\
                    1 99 2 3\n";
        let c = parse_pcd(text.as_bytes()).unwrap();
        assert_eq!(c.points()[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn binary_f32_with_padding_field() {
        let mut bytes =
            b"FIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F U\nCOUNT 1 1 1 1\nPOINTS 2\nDATA binary\n"
                .to_vec();
        for p in [[1.5f32, -2.0, 0.25], [3.0, 4.0, 5.0]] {
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&0xffu32.to_le_bytes());
        }
        let c = parse_pcd(&bytes).unwrap();
        assert_eq!(c.points()[0], Point3::new(1.5, -2.0, 0.25));
        assert_eq!(c.points()[1], Point3::new(3.0, 4.0, 5.0));
    }

    #[test]
    fn header_errors() {
        let missing_fields = "SIZE 4\nTYPE F\nPOINTS 0\nDATA ascii\n";
        assert!(matches!(
            parse_pcd(missing_fields.as_bytes()),
            Err(CloudError::MalformedHeader(_))
        ));
        let missing_points = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nDATA ascii\n";
        assert!(matches!(
            parse_pcd(missing_points.as_bytes()),
            Err(CloudError::MalformedHeader(_))
        ));
        let missing_data = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 0\n";
        assert!(matches!(
            parse_pcd(missing_data.as_bytes()),
            Err(CloudError::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_is_an_error() {
        let text = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 2\nDATA ascii\n0 0 0\n1 nan 0\n";
        assert!(matches!(
            parse_pcd(text.as_bytes()),
            Err(CloudError::NonFiniteCoordinate { index: 1 })
        ));
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let mut bytes = b"FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nPOINTS 2\nDATA binary\n".to_vec();
        bytes.extend_from_slice(&[0u8; 30]);
        assert!(matches!(
            parse_pcd(&bytes),
            Err(CloudError::MalformedData(_))
        ));
    }

    #[test]
    fn empty_cloud_encodes() {
        let bytes = encode_pcd(&PointCloud::default(), CloudFormat::PcdAscii).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("POINTS 0\n"));
        assert_eq!(parse_pcd(&bytes).unwrap().len(), 0);
    }

    #[test]
    fn labeled_header() {
        let c =
            PointCloud::with_labels(tri().points().to_vec(), vec![MotionLabel::Static; 3]).unwrap();
        let text = String::from_utf8(encode_pcd(&c, CloudFormat::PcdAscii).unwrap()).unwrap();
        assert!(text.contains("FIELDS x y z label\n"));
    }

    #[test]
    fn ascii_precision() {
        let p = Point3::new(123.456789123, -0.000123456789, 7.0e-12);
        let c = PointCloud::new(vec![p]);
        let back = parse_pcd(&encode_pcd(&c, CloudFormat::PcdAscii).unwrap()).unwrap();
        let q = back.points()[0];
        assert!((p.x - q.x).abs() < 1e-6);
        assert!((p.y - q.y).abs() < 1e-6);
        assert!((p.z - q.z).abs() < 1e-6);
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-2.5), "-2.5");
        assert_eq!(format_sig9(0.1 + 0.2), "0.3");
    }

    #[test]
    fn ply_ascii() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\n\
                    property float y\nproperty float z\nproperty uchar red\nelement face 1\n\
                    property list uchar int vertex_indices\nend_header\n1 2 3 255\n4 5 6 0\n3 0 1 1\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn ply_binary_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(CloudError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn downsample_cases() {
        let c = PointCloud::new((0..50).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        assert_eq!(downsample_uniform(&c, 50, 1), c);
        assert_eq!(downsample_uniform(&c, 0, 1).len(), 0);
        let a = downsample_uniform(&c, 10, 9);
        let b = downsample_uniform(&c, 10, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn label_length_mismatch() {
        assert!(matches!(
            PointCloud::with_labels(tri().points().to_vec(), vec![MotionLabel::Static]),
            Err(CloudError::LabelMismatch { .. })
        ));
    }
}
