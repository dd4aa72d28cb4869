//! Line-oriented text traces.
//!
//! Every file starts with
//! `#steadipose-trace v1 kind=<gyro|landmarks|results> rate=<f64> n_landmarks=<u32> focal=<f64>`
//! followed by one `key=value` record per line. Blank lines and further
//! `#` lines are ignored. Floats are written in shortest round-trip form.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Homography, Point2, PrincipalOffset, UnitQuaternion};
use crate::gyro::{align_samples, integrate, GyroSample};
use crate::pipeline::{FrameObservation, StabilizedFrame};
use crate::trajectory::{LandmarkSet, PoseHint};

pub const TRACE_MAGIC: &str = "#steadipose-trace";
pub const TRACE_VERSION: &str = "v1";

/// Landmark coordinates outside this range are reported but accepted.
pub const LANDMARK_SANITY_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Gyro,
    Landmarks,
    Results,
}

impl TraceKind {
    fn name(self) -> &'static str {
        match self {
            TraceKind::Gyro => "gyro",
            TraceKind::Landmarks => "landmarks",
            TraceKind::Results => "results",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHeader {
    pub kind: TraceKind,
    /// Samples or frames per second.
    pub rate: f64,
    pub n_landmarks: u32,
    pub focal: f64,
}

impl fmt::Display for TraceHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{TRACE_MAGIC} {TRACE_VERSION} kind={} rate={} n_landmarks={} focal={}",
            self.kind.name(),
            self.rate,
            self.n_landmarks,
            self.focal
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GyroTrace {
    pub header: TraceHeader,
    pub samples: Vec<GyroSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub frame: u64,
    pub t: f64,
    /// `None` when the face was lost.
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrace {
    pub header: TraceHeader,
    pub records: Vec<LandmarkRecord>,
    /// Non-fatal findings such as out-of-range coordinates.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub frame: u64,
    pub t: f64,
    pub real_rotation: UnitQuaternion,
    pub pose: CameraPose,
    pub homography: Homography,
    pub head: Point2,
    pub protrusion: f64,
    pub iterations: usize,
    pub accepted: usize,
    pub fallback: bool,
}

impl From<&StabilizedFrame> for ResultRecord {
    fn from(f: &StabilizedFrame) -> Self {
        Self {
            frame: f.frame_index,
            t: f.t,
            real_rotation: f.real_rotation,
            pose: f.virtual_pose,
            homography: f.homography,
            head: f.head_center_target,
            protrusion: f.protrusion,
            iterations: f.solver_report.iterations,
            accepted: f.solver_report.accepted_steps,
            fallback: f.fallback_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTrace {
    pub header: TraceHeader,
    pub records: Vec<ResultRecord>,
}

/// Splits a record line into `key=value` fields, checking the key order.
fn fields<'a>(line: &'a str, lineno: usize, keys: &[&str]) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != keys.len() {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected {} fields, found {}", keys.len(), parts.len()),
        });
    }
    parts
        .iter()
        .zip(keys)
        .map(|(part, key)| match part.split_once('=') {
            Some((k, v)) if k == *key => Ok(v),
            _ => Err(Error::Parse {
                line: lineno,
                msg: format!("expected field '{key}=', found '{part}'"),
            }),
        })
        .collect()
}

fn num<T: std::str::FromStr>(s: &str, lineno: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line: lineno,
        msg: format!("invalid {what} '{s}'"),
    })
}

fn finite(s: &str, lineno: usize, what: &str) -> Result<f64> {
    let v: f64 = num(s, lineno, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            line: lineno,
            msg: format!("non-finite {what}"),
        })
    }
}

fn float_list<const N: usize>(s: &str, lineno: usize, what: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| finite(v, lineno, what))
        .collect::<Result<_>>()?;
    vals.try_into().map_err(|v: Vec<f64>| Error::Parse {
        line: lineno,
        msg: format!("{what} needs {N} values, found {}", v.len()),
    })
}

fn parse_header(line: &str, expected: TraceKind) -> Result<TraceHeader> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(TRACE_MAGIC) {
        return Err(bad("missing trace header".into()));
    }
    match parts.next() {
        Some(TRACE_VERSION) => {}
        other => return Err(bad(format!("unsupported trace version {other:?}"))),
    }
    let rest: Vec<&str> = parts.collect();
    let joined = rest.join(" ");
    let v = fields(&joined, 1, &["kind", "rate", "n_landmarks", "focal"])?;
    let kind = match v[0] {
        "gyro" => TraceKind::Gyro,
        "landmarks" => TraceKind::Landmarks,
        "results" => TraceKind::Results,
        k => return Err(bad(format!("unknown trace kind '{k}'"))),
    };
    if kind != expected {
        return Err(bad(format!(
            "expected a {} trace, found {}",
            expected.name(),
            kind.name()
        )));
    }
    let rate = finite(v[1], 1, "rate")?;
    if rate <= 0.0 {
        return Err(bad(format!("rate must be positive, got {rate}")));
    }
    Ok(TraceHeader {
        kind,
        rate,
        n_landmarks: num(v[2], 1, "n_landmarks")?,
        focal: finite(v[3], 1, "focal")?,
    })
}

/// Header plus `(line number, text)` of every record line.
fn records(text: &str, kind: TraceKind) -> Result<(TraceHeader, Vec<(usize, &str)>)> {
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""), kind)?;
    let body = lines
        .enumerate()
        .map(|(i, l)| (i + 2, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    Ok((header, body))
}

fn check_increasing(prev: Option<f64>, t: f64, lineno: usize) -> Result<()> {
    match prev {
        Some(p) if t <= p => Err(Error::InvalidTrace(format!(
            "timestamps not strictly increasing at line {lineno} ({t} after {p})"
        ))),
        _ => Ok(()),
    }
}

pub fn parse_gyro_trace(text: &str) -> Result<GyroTrace> {
    let (header, body) = records(text, TraceKind::Gyro)?;
    let mut samples = Vec::with_capacity(body.len());
    for (lineno, line) in body {
        let v = fields(line, lineno, &["t", "wx", "wy", "wz"])?;
        let t = finite(v[0], lineno, "t")?;
        check_increasing(samples.last().map(|s: &GyroSample| s.t), t, lineno)?;
        let omega = [
            finite(v[1], lineno, "wx")?,
            finite(v[2], lineno, "wy")?,
            finite(v[3], lineno, "wz")?,
        ];
        samples.push(GyroSample::new(t, omega));
    }
    Ok(GyroTrace { header, samples })
}

pub fn format_gyro_trace(trace: &GyroTrace) -> String {
    let mut s = format!("{}\n", trace.header);
    for g in &trace.samples {
        let _ = writeln!(
            s,
            "t={} wx={} wy={} wz={}",
            g.t, g.omega[0], g.omega[1], g.omega[2]
        );
    }
    s
}

pub fn parse_landmark_trace(text: &str) -> Result<LandmarkTrace> {
    let (header, body) = records(text, TraceKind::Landmarks)?;
    let n = header.n_landmarks as usize;
    let (lo, hi) = LANDMARK_SANITY_RANGE;
    let mut out: Vec<LandmarkRecord> = Vec::with_capacity(body.len());
    let mut warnings = Vec::new();
    for (lineno, line) in body {
        let nfields = line.split_whitespace().count();
        let (frame, t, landmarks) = if line.contains("lost=") {
            let v = fields(line, lineno, &["frame", "t", "lost"])?;
            if v[2] != "1" {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("lost flag must be 1, got '{}'", v[2]),
                });
            }
            (
                num::<u64>(v[0], lineno, "frame")?,
                finite(v[1], lineno, "t")?,
                None,
            )
        } else {
            let (v, pose) = if nfields == 4 {
                let v = fields(line, lineno, &["frame", "t", "pose", "pts"])?;
                let p = float_list::<3>(v[2], lineno, "pose")?;
                let hint = PoseHint {
                    yaw: p[0],
                    pitch: p[1],
                    roll: p[2],
                };
                (vec![v[0], v[1], v[3]], Some(hint))
            } else {
                (fields(line, lineno, &["frame", "t", "pts"])?, None)
            };
            let pts: Vec<Point2> = v[2]
                .split(';')
                .map(|p| float_list::<2>(p, lineno, "landmark").map(|[x, y]| Point2::new(x, y)))
                .collect::<Result<_>>()?;
            if pts.len() != n {
                return Err(Error::Schema {
                    line: lineno,
                    msg: format!("expected {n} landmarks, found {}", pts.len()),
                });
            }
            if pts
                .iter()
                .any(|p| p.x < lo || p.x > hi || p.y < lo || p.y > hi)
            {
                warnings.push(format!("line {lineno}: landmark outside [{lo}, {hi}]"));
            }
            let set = LandmarkSet::with_pose(pts, pose).map_err(|e| Error::Schema {
                line: lineno,
                msg: e.to_string(),
            })?;
            (
                num::<u64>(v[0], lineno, "frame")?,
                finite(v[1], lineno, "t")?,
                Some(set),
            )
        };
        check_increasing(out.last().map(|r| r.t), t, lineno)?;
        if let Some(prev) = out.last() {
            if frame <= prev.frame {
                return Err(Error::InvalidTrace(format!(
                    "frame numbers not strictly increasing at line {lineno}"
                )));
            }
        }
        out.push(LandmarkRecord {
            frame,
            t,
            landmarks,
        });
    }
    Ok(LandmarkTrace {
        header,
        records: out,
        warnings,
    })
}

pub fn format_landmark_trace(trace: &LandmarkTrace) -> String {
    let mut s = format!("{}\n", trace.header);
    for r in &trace.records {
        let _ = write!(s, "frame={} t={}", r.frame, r.t);
        match &r.landmarks {
            None => s.push_str(" lost=1"),
            Some(set) => {
                if let Some(h) = set.pose_hint {
                    let _ = write!(s, " pose={},{},{}", h.yaw, h.pitch, h.roll);
                }
                s.push_str(" pts=");
                for (i, p) in set.points.iter().enumerate() {
                    if i > 0 {
                        s.push(';');
                    }
                    let _ = write!(s, "{},{}", p.x, p.y);
                }
            }
        }
        s.push('\n');
    }
    s
}

const RESULT_KEYS: [&str; 11] = [
    "frame",
    "t",
    "real",
    "q",
    "off",
    "h",
    "head",
    "protrusion",
    "iters",
    "accepted",
    "fallback",
];

pub fn parse_results(text: &str) -> Result<ResultTrace> {
    let (header, body) = records(text, TraceKind::Results)?;
    let mut out: Vec<ResultRecord> = Vec::with_capacity(body.len());
    for (lineno, line) in body {
        let v = fields(line, lineno, &RESULT_KEYS)?;
        let frame = num::<u64>(v[0], lineno, "frame")?;
        let t = finite(v[1], lineno, "t")?;
        check_increasing(out.last().map(|r| r.t), t, lineno)?;
        let quat = |s: &str, what: &str| -> Result<UnitQuaternion> {
            UnitQuaternion::try_from(float_list::<4>(s, lineno, what)?).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })
        };
        let off = float_list::<2>(v[4], lineno, "offset")?;
        let h = float_list::<9>(v[5], lineno, "homography")?;
        let head = float_list::<2>(v[6], lineno, "head")?;
        out.push(ResultRecord {
            frame,
            t,
            real_rotation: quat(v[2], "real rotation")?,
            pose: CameraPose::new(
                quat(v[3], "rotation")?,
                PrincipalOffset::new(off[0], off[1]),
            ),
            homography: Homography::from_row_major(&h).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?,
            head: Point2::new(head[0], head[1]),
            protrusion: finite(v[7], lineno, "protrusion")?,
            iterations: num(v[8], lineno, "iters")?,
            accepted: num(v[9], lineno, "accepted")?,
            fallback: match v[10] {
                "0" => false,
                "1" => true,
                f => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("fallback flag must be 0 or 1, got '{f}'"),
                    })
                }
            },
        });
    }
    Ok(ResultTrace {
        header,
        records: out,
    })
}

pub fn format_results(trace: &ResultTrace) -> String {
    let mut s = format!("{}\n", trace.header);
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    for r in &trace.records {
        let _ = writeln!(
            s,
            "frame={} t={} real={} q={} off={},{} h={} head={},{} protrusion={} iters={} accepted={} fallback={}",
            r.frame,
            r.t,
            join(&r.real_rotation.to_array()),
            join(&r.pose.rotation.to_array()),
            r.pose.offset.tx,
            r.pose.offset.ty,
            join(&r.homography.to_row_major()),
            r.head.x,
            r.head.y,
            r.protrusion,
            r.iterations,
            r.accepted,
            u8::from(r.fallback),
        );
    }
    s
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_gyro_trace(path: &Path) -> Result<GyroTrace> {
    parse_gyro_trace(&read(path)?)
}

pub fn write_gyro_trace(path: &Path, trace: &GyroTrace) -> Result<()> {
    write(path, &format_gyro_trace(trace))
}

pub fn read_landmark_trace(path: &Path) -> Result<LandmarkTrace> {
    parse_landmark_trace(&read(path)?)
}

pub fn write_landmark_trace(path: &Path, trace: &LandmarkTrace) -> Result<()> {
    write(path, &format_landmark_trace(trace))
}

pub fn read_results(path: &Path) -> Result<ResultTrace> {
    parse_results(&read(path)?)
}

pub fn write_results(path: &Path, header: TraceHeader, frames: &[StabilizedFrame]) -> Result<()> {
    let trace = ResultTrace {
        header: TraceHeader {
            kind: TraceKind::Results,
            ..header
        },
        records: frames.iter().map(ResultRecord::from).collect(),
    };
    write(path, &format_results(&trace))
}

/// Integrates the gyro trace and samples the real rotation at each frame.
pub fn assemble_observations(
    gyro: &[GyroSample],
    frames: &[LandmarkRecord],
    alignment: &UnitQuaternion,
) -> Result<Vec<FrameObservation>> {
    let timeline = integrate(&align_samples(gyro, alignment))?;
    frames
        .iter()
        .map(|r| {
            let real_rotation = timeline.rotation_at(r.t).map_err(|e| e.at_frame(r.frame))?;
            Ok(FrameObservation {
                frame_index: r.frame,
                t: r.t,
                real_rotation,
                landmarks: r.landmarks.clone(),
            })
        })
        .collect()
}
