//! Point-cloud files, synthetic shapes and voxel-grid downsampling.
//!
//! Supported formats:
//!
//! * `xyz`: ASCII, one `x y z` triple per line, `#` starts a comment. Extra
//!   columns are ignored.
//! * `ply`: ASCII or binary little-endian; `x`, `y`, `z` are read from the
//!   `vertex` element, everything else is skipped. Written as binary
//!   little-endian doubles.
//! * `kitti`: packed little-endian `f32` quadruples `(x, y, z, reflectance)`;
//!   reflectance is dropped on read and written as zero.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloudFormat {
    Xyz,
    Ply,
    KittiBin,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" | "pts" => Some(Self::Xyz),
            "ply" => Some(Self::Ply),
            "bin" => Some(Self::KittiBin),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Self::Xyz => "xyz",
            Self::Ply => "ply",
            Self::KittiBin => "bin",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(Self::Xyz),
            "ply" => Ok(Self::Ply),
            "kitti" | "bin" => Ok(Self::KittiBin),
            _ => Err(Error::InvalidArgument(format!(
                "unknown format '{s}' (expected xyz, ply or kitti)"
            ))),
        }
    }
}

/// A parsed file plus the number of rows dropped for non-finite coordinates.
#[derive(Debug, Clone)]
pub struct CloudFile {
    pub path: PathBuf,
    pub format: CloudFormat,
    pub cloud: PointCloud,
    pub rejected: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

fn resolve_format(path: &Path, format: Option<CloudFormat>) -> Result<CloudFormat> {
    format.or_else(|| CloudFormat::from_path(path)).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "cannot infer point cloud format of {}",
            path.display()
        ))
    })
}

/// Reads a cloud, inferring the format from the extension when `format` is `None`.
pub fn read_cloud_file(path: &Path, format: Option<CloudFormat>) -> Result<CloudFile> {
    let format = resolve_format(path, format)?;
    let mut points = Vec::new();
    let mut rejected = 0;
    let mut push = |p: [f64; 3]| {
        if p.iter().all(|c| c.is_finite()) {
            points.push(Vec3::from(p));
        } else {
            rejected += 1;
        }
    };
    match format {
        CloudFormat::Xyz => read_xyz(path, &mut push)?,
        CloudFormat::Ply => read_ply(path, &mut push)?,
        CloudFormat::KittiBin => read_kitti(path, &mut push)?,
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(CloudFile {
        path: path.to_path_buf(),
        format,
        cloud: PointCloud::new(points),
        rejected,
    })
}

pub fn read_cloud(path: &Path, format: Option<CloudFormat>) -> Result<PointCloud> {
    read_cloud_file(path, format).map(|f| f.cloud)
}

fn read_xyz(path: &Path, push: &mut impl FnMut([f64; 3])) -> Result<()> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut p = [0.0; 3];
        let mut fields = content.split_whitespace();
        for (axis, c) in p.iter_mut().enumerate() {
            let tok = fields.next().ok_or_else(|| {
                parse_err(path, format!("line {}", lineno + 1), "expected three coordinates")
            })?;
            *c = tok.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("line {}", lineno + 1),
                    format!("bad coordinate {axis}: '{tok}'"),
                )
            })?;
        }
        push(p);
    }
    Ok(())
}

fn read_kitti(path: &Path, push: &mut impl FnMut([f64; 3])) -> Result<()> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len() - bytes.len() % 16),
            "file size is not a multiple of 16 bytes",
        ));
    }
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        push([f(0), f(1), f(2)]);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
}

fn read_ply(path: &Path, push: &mut impl FnMut([f64; 3])) -> Result<()> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut offset = 0usize;
    let mut line = String::new();
    let next_line = |reader: &mut BufReader<fs::File>, line: &mut String, offset: &mut usize| -> Result<()> {
        line.clear();
        let n = reader.read_line(line).map_err(io_err(path))?;
        if n == 0 {
            return Err(parse_err(path, format!("byte {offset}"), "unexpected end of header"));
        }
        *offset += n;
        Ok(())
    };

    next_line(&mut reader, &mut line, &mut offset)?;
    if line.trim() != "ply" {
        return Err(parse_err(path, "byte 0".into(), "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut reader, &mut line, &mut offset)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let unsupported = |m: String| Error::UnsupportedPly {
            path: path.to_path_buf(),
            message: m,
        };
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLe),
            ["format", other, ..] => return Err(unsupported(format!("format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, format!("byte {offset}"), "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, format!("byte {offset}"), "property before element"))?;
                if el.name == "vertex" {
                    return Err(unsupported(format!("list property '{name}' on vertex")));
                }
                let (count, item) = match (Scalar::parse(count), Scalar::parse(item)) {
                    (Some(c), Some(i)) => (c, i),
                    _ => return Err(unsupported(format!("list types of '{name}'"))),
                };
                el.properties.push(Property::List {
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, format!("byte {offset}"), "property before element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| unsupported(format!("property type '{ty}'")))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => {
                return Err(parse_err(
                    path,
                    format!("byte {offset}"),
                    format!("unrecognised header line '{}'", line.trim()),
                ))
            }
        }
    }
    let encoding =
        encoding.ok_or_else(|| parse_err(path, format!("byte {offset}"), "missing format line"))?;
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(path, format!("byte {offset}"), "no vertex element"))?;
    let xyz_slots: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|axis| {
            elements[vertex]
                .properties
                .iter()
                .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
                .ok_or_else(|| parse_err(path, format!("byte {offset}"), format!("vertex has no '{axis}'")))
        })
        .collect::<Result<_>>()?;

    match encoding {
        PlyEncoding::Ascii => {
            let mut body = String::new();
            reader.read_to_string(&mut body).map_err(io_err(path))?;
            let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let (ln, l) = lines.next().ok_or_else(|| {
                        parse_err(path, format!("element '{}'", el.name), "truncated body")
                    })?;
                    if ei != vertex {
                        continue;
                    }
                    let vals: Vec<f64> = l
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(path, format!("body line {}", ln + 1), "bad number"))?;
                    if vals.len() < el.properties.len() {
                        return Err(parse_err(path, format!("body line {}", ln + 1), "too few values"));
                    }
                    push([vals[xyz_slots[0]], vals[xyz_slots[1]], vals[xyz_slots[2]]]);
                }
            }
        }
        PlyEncoding::BinaryLe => {
            let mut body = Vec::new();
            reader.read_to_end(&mut body).map_err(io_err(path))?;
            let mut pos = 0usize;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = body.get(*pos..*pos + n).ok_or_else(|| {
                    parse_err(path, format!("byte {}", offset + *pos), "truncated binary body")
                })?;
                *pos += n;
                Ok(s)
            };
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let mut p = [0.0; 3];
                    for (pi, prop) in el.properties.iter().enumerate() {
                        match prop {
                            Property::Scalar { ty, .. } => {
                                let v = ty.decode_le(take(&mut pos, ty.size())?);
                                if ei == vertex {
                                    if let Some(axis) = xyz_slots.iter().position(|&s| s == pi) {
                                        p[axis] = v;
                                    }
                                }
                            }
                            Property::List { count, item, .. } => {
                                let n = count.decode_le(take(&mut pos, count.size())?) as usize;
                                take(&mut pos, n * item.size())?;
                            }
                        }
                    }
                    if ei == vertex {
                        push(p);
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: Option<CloudFormat>) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let format = resolve_format(path, format)?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        match format {
            CloudFormat::Xyz => {
                for p in &cloud.points {
                    writeln!(w, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z)?;
                }
            }
            CloudFormat::Ply => {
                write!(
                    w,
                    "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
                     property double x\nproperty double y\nproperty double z\nend_header\n",
                    cloud.len()
                )?;
                for p in &cloud.points {
                    for c in p.iter() {
                        w.write_all(&c.to_le_bytes())?;
                    }
                }
            }
            CloudFormat::KittiBin => {
                for p in &cloud.points {
                    for c in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
                        w.write_all(&c.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Composite,
    PlaneRoom,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [Self::Sphere, Self::Box, Self::Composite, Self::PlaneRoom];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box => "box",
            Self::Composite => "composite",
            Self::PlaneRoom => "plane_room",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown shape '{s}' (valid kinds: {})",
                    names.join(", ")
                ))
            })
    }
}

/// Axis-aligned box surface sampled uniformly by area.
fn sample_box_surface(rng: &mut ChaCha8Rng, center: Vec3, half: Vec3, n: usize, out: &mut Vec<Vec3>) {
    let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
    let total: f64 = areas.iter().sum();
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut axis = 2;
        for (a, area) in areas.iter().enumerate() {
            if pick < *area {
                axis = a;
                break;
            }
            pick -= area;
        }
        let mut p = Vec3::from_fn(|i, _| rng.random_range(-half[i]..=half[i]));
        p[axis] = if rng.random_bool(0.5) { half[axis] } else { -half[axis] };
        out.push(center + p);
    }
}

fn sample_sphere(rng: &mut ChaCha8Rng, center: Vec3, radius: f64, n: usize, out: &mut Vec<Vec3>) {
    for _ in 0..n {
        let d: [f64; 3] = UnitSphere.sample(rng);
        out.push(center + Vec3::from(d) * radius);
    }
}

/// Parallelogram patch `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
fn sample_patch(rng: &mut ChaCha8Rng, origin: Vec3, u: Vec3, v: Vec3, n: usize, out: &mut Vec<Vec3>) {
    for _ in 0..n {
        let (s, t): (f64, f64) = (rng.random(), rng.random());
        out.push(origin + u * s + v * t);
    }
}

/// Splits `n` by the given weights, handing the remainder to the first part.
fn split_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (n as f64 * w / total).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    counts[0] += n - assigned;
    counts
}

/// Maps the analytic box `[lo, hi]` of a shape into `[−1, 1]³` with a uniform scale.
fn normalize(points: &mut [Vec3], lo: Vec3, hi: Vec3) {
    let center = (lo + hi) * 0.5;
    let scale = 1.0 / ((hi - lo) * 0.5).max();
    for p in points {
        *p = (*p - center) * scale;
    }
}

/// Uniform surface samples of a synthetic shape inside `[−1, 1]³`.
///
/// `Composite` joins a sphere, a box and three mutually non-parallel plane
/// patches so that no rotation maps it onto itself. `PlaneRoom` is a floor and
/// two walls with boxes standing on the floor.
pub fn generate_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 10 {
        return Err(Error::TooFewPoints { required: 10, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    match kind {
        ShapeKind::Sphere => sample_sphere(&mut rng, Vec3::zeros(), 1.0, n, &mut pts),
        ShapeKind::Box => {
            let half = Vec3::new(1.0, 0.7, 0.45);
            sample_box_surface(&mut rng, Vec3::zeros(), half, n, &mut pts);
            normalize(&mut pts, -half, half);
        }
        ShapeKind::Composite => {
            let c = split_counts(n, &[0.3, 0.3, 0.14, 0.13, 0.13]);
            sample_sphere(&mut rng, Vec3::new(-0.45, 0.3, 0.1), 0.45, c[0], &mut pts);
            sample_box_surface(
                &mut rng,
                Vec3::new(0.45, -0.25, -0.2),
                Vec3::new(0.35, 0.25, 0.4),
                c[1],
                &mut pts,
            );
            sample_patch(
                &mut rng,
                Vec3::new(-0.9, -0.9, -0.9),
                Vec3::new(1.6, 0.0, 0.2),
                Vec3::new(0.0, 0.9, 0.1),
                c[2],
                &mut pts,
            );
            sample_patch(
                &mut rng,
                Vec3::new(-0.9, 0.75, -0.6),
                Vec3::new(1.2, 0.15, 0.0),
                Vec3::new(0.2, 0.0, 1.3),
                c[3],
                &mut pts,
            );
            sample_patch(
                &mut rng,
                Vec3::new(0.9, -0.8, -0.5),
                Vec3::new(-0.1, 0.8, 0.3),
                Vec3::new(0.0, -0.1, 0.8),
                c[4],
                &mut pts,
            );
            let (lo, hi) = crate::geometry::bounding_box(&pts).expect("non-empty");
            let lo = lo.inf(&Vec3::repeat(-1.0));
            let hi = hi.sup(&Vec3::repeat(1.0));
            normalize(&mut pts, lo, hi);
        }
        ShapeKind::PlaneRoom => {
            let c = split_counts(n, &[0.3, 0.2, 0.2, 0.12, 0.1, 0.08]);
            // floor z = 0 over [0, 4] × [0, 3]; walls at x = 0 and y = 0, height 2.5
            sample_patch(&mut rng, Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0), c[0], &mut pts);
            sample_patch(&mut rng, Vec3::zeros(), Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 0.0, 2.5), c[1], &mut pts);
            sample_patch(&mut rng, Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.5), c[2], &mut pts);
            sample_box_surface(&mut rng, Vec3::new(1.2, 1.0, 0.4), Vec3::new(0.5, 0.4, 0.4), c[3], &mut pts);
            sample_box_surface(&mut rng, Vec3::new(3.0, 2.0, 0.6), Vec3::new(0.4, 0.6, 0.6), c[4], &mut pts);
            sample_box_surface(&mut rng, Vec3::new(2.4, 0.6, 0.25), Vec3::new(0.3, 0.3, 0.25), c[5], &mut pts);
            normalize(&mut pts, Vec3::zeros(), Vec3::new(4.0, 3.0, 2.5));
        }
    }
    Ok(PointCloud::new(pts))
}

/// One centroid per occupied voxel of a grid anchored at the bounding-box
/// minimum, ordered by voxel coordinates.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    let Some((lo, _)) = cloud.bounding_box() else {
        return Ok(PointCloud::default());
    };
    let mut cells: BTreeMap<[i64; 3], (Vec3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = [0, 1, 2].map(|i| ((p[i] - lo[i]) / voxel_size).floor() as i64);
        let e = cells.entry(key).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(PointCloud::new(
        cells.values().map(|(sum, n)| sum / *n as f64).collect(),
    ))
}
