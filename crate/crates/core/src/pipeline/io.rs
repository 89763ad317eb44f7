//! File formats: trajectory JSONL, PLY scans, label and ground-truth CSV.
//!
//! Trajectory lines look like
//! `{"frame": 0, "t": 0.0, "q": [w, x, y, z], "p": [x, y, z]}`; a row-major
//! `"R"` with 9 entries may replace `"q"`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde_json::{json, Value};

use super::{GroundTruth, LabelSource, PipelineError, PseudoLabelRecord};
use crate::geometry::{orthonormality_residual, Pose};
use crate::odometry::{PointCloud, TrajectoryEstimate};
use crate::simulator::DrivingLog;

/// Largest accepted deviation of a stored quaternion norm from 1.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;
/// Largest accepted `‖RᵀR − I‖_max` of a stored rotation matrix.
pub const ROTATION_TOL: f64 = 1e-6;

pub const LABELS_HEADER: [&str; 7] = [
    "frame",
    "timestamp",
    "steering_pred_rad",
    "wheel_angle_rad",
    "radius_m",
    "valid",
    "source",
];
pub const GROUND_TRUTH_HEADER: [&str; 3] = ["frame", "timestamp", "steering_truth_rad"];

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn schema(path: &Path, field: &str, frame: Option<usize>, message: impl Into<String>) -> PipelineError {
    PipelineError::Schema {
        path: path_str(path),
        field: field.into(),
        frame,
        message: message.into(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse {
        path: path_str(path),
        line,
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::io(path, e))
}

// ---------------------------------------------------------------------------
// Trajectory JSONL
// ---------------------------------------------------------------------------

pub fn write_trajectory(poses: &[Pose], timestamps: &[f64], path: &Path) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    for (frame, (pose, t)) in poses.iter().zip(timestamps).enumerate() {
        let q = pose.quaternion();
        let p = pose.translation();
        let line = json!({
            "frame": frame,
            "t": t,
            "q": [q.w, q.i, q.j, q.k],
            "p": [p.x, p.y, p.z],
        });
        writeln!(w, "{line}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

fn numbers<const N: usize>(
    v: &Value,
    path: &Path,
    field: &str,
    frame: Option<usize>,
) -> Result<[f64; N], PipelineError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| schema(path, field, frame, format!("expected an array of {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| schema(path, field, frame, "expected finite numbers"))?;
    }
    Ok(out)
}

/// Reads a trajectory file. Frames must be strictly increasing; poses are
/// re-based so the first one is the identity.
pub fn load_trajectory(path: &Path) -> Result<TrajectoryEstimate, PipelineError> {
    let (_, poses, timestamps) = read_trajectory_lines(path)?;
    TrajectoryEstimate::from_poses(poses, timestamps).map_err(PipelineError::from)
}

/// Frame numbers, poses (as stored, not re-based) and timestamps.
pub fn read_trajectory_lines(path: &Path) -> Result<(Vec<usize>, Vec<Pose>, Vec<f64>), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let (mut frames, mut poses, mut times) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| parse_err(path, line_no, "expected a JSON object"))?;
        if let Some(key) = obj
            .keys()
            .find(|k| !["frame", "t", "q", "p", "R"].contains(&k.as_str()))
        {
            return Err(schema(path, key, None, format!("unknown field on line {line_no}")));
        }
        let frame = obj.get("frame").and_then(Value::as_u64).ok_or_else(|| {
            schema(
                path,
                "frame",
                None,
                format!("missing or not a non-negative integer on line {line_no}"),
            )
        })? as usize;
        let f = Some(frame);
        if frames.last().is_some_and(|&prev| frame <= prev) {
            return Err(schema(path, "frame", f, "frame numbers must be strictly increasing"));
        }
        let t = obj
            .get("t")
            .and_then(Value::as_f64)
            .filter(|t| t.is_finite())
            .ok_or_else(|| schema(path, "t", f, "missing or not a finite number"))?;
        let p = numbers::<3>(obj.get("p").unwrap_or(&Value::Null), path, "p", f)?;
        let translation = Vector3::from(p);
        let pose = match (obj.get("q"), obj.get("R")) {
            (Some(_), Some(_)) => return Err(schema(path, "R", f, "`q` and `R` are mutually exclusive")),
            (None, None) => return Err(schema(path, "q", f, "one of `q` or `R` is required")),
            (Some(q), None) => {
                let [w, x, y, z] = numbers::<4>(q, path, "q", f)?;
                let q = Quaternion::new(w, x, y, z);
                let norm = q.norm();
                if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
                    return Err(schema(path, "q", f, format!("quaternion norm {norm} is not 1")));
                }
                Pose::from_quaternion(&UnitQuaternion::new_normalize(q), translation)
            }
            (None, Some(r)) => {
                let m = Matrix3::from_row_slice(&numbers::<9>(r, path, "R", f)?);
                let residual = orthonormality_residual(&m);
                if residual > ROTATION_TOL || m.determinant() < 0.0 {
                    return Err(schema(
                        path,
                        "R",
                        f,
                        format!("not a rotation (orthonormality residual {residual:e})"),
                    ));
                }
                Pose::from_approx(m, translation).map_err(|e| schema(path, "R", f, e.to_string()))?
            }
        };
        frames.push(frame);
        poses.push(pose);
        times.push(t);
    }
    Ok((frames, poses, times))
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// File name of the scan for `frame` inside a scans directory.
pub fn scan_file_name(frame: usize) -> String {
    format!("scan_{frame:06}.ply")
}

/// Writes x/y/z as float32.
pub fn write_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    let io = |e| PipelineError::io(path, e);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for p in cloud.points() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {}", xyz[0], xyz[1], xyz[2]).map_err(io)?,
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy)]
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
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct PlyElement {
    name: String,
    count: usize,
    /// `None` marks a list property.
    props: Vec<(String, Option<Scalar>)>,
}

/// Reads the `vertex` element's x/y/z from an ASCII or binary little-endian PLY.
pub fn read_ply(path: &Path) -> Result<PointCloud, PipelineError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| PipelineError::io(path, e))?;

    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<String> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        *pos += end + 1;
        line_no += 1;
        Some(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };

    if next_line(&mut pos).as_deref() != Some("ply") {
        return Err(parse_err(path, 1, "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_lines = 1;
    loop {
        let line =
            next_line(&mut pos).ok_or_else(|| parse_err(path, header_lines, "header ends without end_header"))?;
        header_lines += 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => {
                return Err(parse_err(
                    path,
                    header_lines,
                    format!("unsupported PLY format `{other}`"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, header_lines, format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(path, header_lines, "property before element"))?
                .props
                .push((name.to_string(), None)),
            ["property", ty, name] => {
                let ty =
                    Scalar::parse(ty).ok_or_else(|| parse_err(path, header_lines, format!("unknown type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, header_lines, "property before element"))?
                    .props
                    .push((name.to_string(), Some(ty)));
            }
            _ => {
                return Err(parse_err(
                    path,
                    header_lines,
                    format!("unrecognized header line `{line}`"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(path, header_lines, "missing format line"))?;

    let mut points = Vec::new();
    let mut data_line = header_lines;
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let index_of = |axis: &str| el.props.iter().position(|(n, _)| n == axis);
        let axes = if is_vertex {
            let xyz = [index_of("x"), index_of("y"), index_of("z")];
            if xyz.iter().any(Option::is_none) {
                return Err(schema(path, "vertex", None, "x, y and z properties are required"));
            }
            Some(xyz.map(Option::unwrap))
        } else {
            None
        };
        // Elements are read in order up to the vertex data, so any list seen
        // here precedes it and its byte length is unknown without parsing.
        if format == PlyFormat::BinaryLittleEndian && el.props.iter().any(|(_, t)| t.is_none()) {
            return Err(parse_err(
                path,
                data_line,
                "binary list properties before the vertex data are not supported",
            ));
        }
        for _ in 0..el.count {
            match format {
                PlyFormat::Ascii => {
                    data_line += 1;
                    let line =
                        next_line(&mut pos).ok_or_else(|| parse_err(path, data_line, "unexpected end of file"))?;
                    if let Some(axes) = axes {
                        let values: Vec<&str> = line.split_whitespace().collect();
                        if values.len() != el.props.len() {
                            return Err(parse_err(
                                path,
                                data_line,
                                format!("expected {} values", el.props.len()),
                            ));
                        }
                        let mut xyz = [0.0; 3];
                        for (o, &a) in xyz.iter_mut().zip(&axes) {
                            *o = values[a]
                                .parse()
                                .map_err(|_| parse_err(path, data_line, format!("bad number `{}`", values[a])))?;
                        }
                        points.push(Vector3::from(xyz));
                    }
                }
                PlyFormat::BinaryLittleEndian => {
                    let sizes: Vec<usize> = el.props.iter().map(|(_, t)| t.unwrap().size()).collect();
                    let stride: usize = sizes.iter().sum();
                    let record = bytes
                        .get(pos..pos + stride)
                        .ok_or_else(|| parse_err(path, data_line, "binary data is truncated"))?;
                    if let Some(axes) = axes {
                        let offsets: Vec<usize> = sizes
                            .iter()
                            .scan(0, |acc, s| {
                                let o = *acc;
                                *acc += s;
                                Some(o)
                            })
                            .collect();
                        let xyz = axes.map(|a| el.props[a].1.unwrap().read_le(&record[offsets[a]..]));
                        points.push(Vector3::from(xyz));
                    }
                    pos += stride;
                }
            }
        }
        if is_vertex {
            break;
        }
    }
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(schema(path, "vertex", Some(i), "non-finite coordinate"));
    }
    Ok(PointCloud::new(points)?)
}

/// Loads `scan_000000.ply`, `scan_000001.ply`, … from `dir`; the numbering
/// must start at 0 and have no gaps.
pub fn load_scans(dir: &Path) -> Result<Vec<PointCloud>, PipelineError> {
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let path = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(num) = name.strip_prefix("scan_").and_then(|n| n.strip_suffix(".ply")) {
            if let Ok(i) = num.parse::<usize>() {
                indexed.push((i, path));
            }
        }
    }
    indexed.sort();
    for (expected, (i, path)) in indexed.iter().enumerate() {
        if *i != expected {
            return Err(schema(
                path,
                "frame",
                Some(expected),
                format!("scan numbering has a gap: found {i}"),
            ));
        }
    }
    indexed.iter().map(|(_, p)| read_ply(p)).collect()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

pub fn write_labels(records: &[PseudoLabelRecord], path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(LABELS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.frame.to_string(),
            r.timestamp.to_string(),
            r.steering_pred_rad.to_string(),
            r.wheel_angle_rad.to_string(),
            r.radius_m.to_string(),
            r.valid.to_string(),
            r.source.as_str().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<(), PipelineError> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(parse_err(path, 1, format!("header must be `{}`", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T, PipelineError> {
    let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, line, format!("bad `{name}` value")))
}

pub fn read_labels(path: &Path) -> Result<Vec<PseudoLabelRecord>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    check_header(path, &mut rdr, &LABELS_HEADER)?;
    let mut out: Vec<PseudoLabelRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let source = match rec.get(6).map(str::trim) {
            Some("proposed") => LabelSource::Proposed,
            Some("pid") => LabelSource::Pid,
            other => {
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(parse_err(path, line, format!("bad `source` value {other:?}")));
            }
        };
        let r = PseudoLabelRecord {
            frame: field(path, &rec, 0, "frame")?,
            timestamp: field(path, &rec, 1, "timestamp")?,
            steering_pred_rad: field(path, &rec, 2, "steering_pred_rad")?,
            wheel_angle_rad: field(path, &rec, 3, "wheel_angle_rad")?,
            radius_m: field(path, &rec, 4, "radius_m")?,
            valid: field(path, &rec, 5, "valid")?,
            source,
        };
        if out.last().is_some_and(|prev| r.frame <= prev.frame) {
            return Err(schema(
                path,
                "frame",
                Some(r.frame),
                "frame numbers must be strictly increasing",
            ));
        }
        if !(r.timestamp.is_finite() && r.steering_pred_rad.is_finite() && r.wheel_angle_rad.is_finite())
            || r.radius_m.is_nan()
        {
            return Err(schema(path, "steering_pred_rad", Some(r.frame), "non-finite value"));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(GROUND_TRUTH_HEADER).map_err(|e| csv_err(path, e))?;
    for ((f, t), y) in truth.frames.iter().zip(&truth.timestamps).zip(&truth.steering_rad) {
        w.write_record([f.to_string(), t.to_string(), y.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    check_header(path, &mut rdr, &GROUND_TRUTH_HEADER)?;
    let mut truth = GroundTruth {
        frames: Vec::new(),
        timestamps: Vec::new(),
        steering_rad: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let frame: usize = field(path, &rec, 0, "frame")?;
        let t: f64 = field(path, &rec, 1, "timestamp")?;
        let y: f64 = field(path, &rec, 2, "steering_truth_rad")?;
        if !(t.is_finite() && y.is_finite()) {
            return Err(schema(path, "steering_truth_rad", Some(frame), "non-finite value"));
        }
        if truth.frames.last().is_some_and(|&prev| frame <= prev) {
            return Err(schema(
                path,
                "frame",
                Some(frame),
                "frame numbers must be strictly increasing",
            ));
        }
        truth.frames.push(frame);
        truth.timestamps.push(t);
        truth.steering_rad.push(y);
    }
    Ok(truth)
}

// ---------------------------------------------------------------------------
// Driving logs
// ---------------------------------------------------------------------------

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SCANS_DIR: &str = "scans";

/// Writes `trajectory.jsonl`, `ground_truth.csv` and `scans/scan_%06d.ply`.
pub fn export_log(log: &DrivingLog, dir: &Path, format: PlyFormat) -> Result<(), PipelineError> {
    write_trajectory(&log.poses, &log.timestamps, &dir.join(TRAJECTORY_FILE))?;
    write_ground_truth(
        &GroundTruth::from_sequence(&log.timestamps, &log.steering_truth),
        &dir.join(GROUND_TRUTH_FILE),
    )?;
    let scans = dir.join(SCANS_DIR);
    fs::create_dir_all(&scans).map_err(|e| PipelineError::io(&scans, e))?;
    for (i, scan) in log.scans.iter().enumerate() {
        write_ply(scan, &scans.join(scan_file_name(i)), format)?;
    }
    Ok(())
}

/// Reads back what [`export_log`] wrote.
pub fn import_log(dir: &Path) -> Result<DrivingLog, PipelineError> {
    let path = dir.join(TRAJECTORY_FILE);
    let (_, poses, timestamps) = read_trajectory_lines(&path)?;
    let truth = read_ground_truth(&dir.join(GROUND_TRUTH_FILE))?;
    let scans = load_scans(&dir.join(SCANS_DIR))?;
    if truth.steering_rad.len() != poses.len() || scans.len() != poses.len() {
        return Err(schema(
            dir,
            "frame",
            None,
            format!(
                "{} poses, {} ground-truth rows and {} scans",
                poses.len(),
                truth.steering_rad.len(),
                scans.len()
            ),
        ));
    }
    Ok(DrivingLog {
        poses,
        steering_truth: truth.steering_rad,
        scans,
        timestamps,
    })
}
