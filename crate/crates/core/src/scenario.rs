//! Seeded synthetic gyro and landmark traces.
//!
//! A scenario is built from a smooth camera path `R_s(t)`, a shake that the
//! gyro sees on top of it, and a face whose head center `h(t)` is fixed in
//! the smooth camera's image. Landmarks are the face template placed at
//! `h(t)` and reprojected into the real camera,
//! `L = K R_r R_s^T K^-1 [p_s; 1]`, plus pixel noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{intrinsics_matrix, Intrinsics, Point2, PrincipalOffset, UnitQuaternion};
use crate::gyro::{integrate, GyroSample};
use crate::trace::{GyroTrace, LandmarkRecord, LandmarkTrace, TraceHeader, TraceKind};
use crate::trajectory::{LandmarkSet, PoseHint, DEFAULT_LANDMARK_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Static,
    Handshake,
    Walk,
    Pan,
    HeadTurn,
    OcclusionDropout,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Static,
        ScenarioKind::Handshake,
        ScenarioKind::Walk,
        ScenarioKind::Pan,
        ScenarioKind::HeadTurn,
        ScenarioKind::OcclusionDropout,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Static => "static",
            ScenarioKind::Handshake => "handshake",
            ScenarioKind::Walk => "walk",
            ScenarioKind::Pan => "pan",
            ScenarioKind::HeadTurn => "head-turn",
            ScenarioKind::OcclusionDropout => "occlusion-dropout",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Seconds.
    pub duration: f64,
    pub frame_rate: f64,
    pub gyro_rate: f64,
    pub seed: u64,
    /// Scales the shake, bounce and pan amplitudes.
    pub amplitude: f64,
    /// Pan speed in rad/s before `amplitude` is applied.
    pub pan_rate: f64,
    pub n_landmarks: usize,
    pub focal: f64,
    /// Landmark noise standard deviation, normalized units.
    pub landmark_noise: f64,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, duration: f64, seed: u64) -> Self {
        Self {
            kind,
            duration,
            frame_rate: 30.0,
            gyro_rate: 200.0,
            seed,
            amplitude: 1.0,
            pan_rate: 0.3,
            n_landmarks: DEFAULT_LANDMARK_COUNT,
            focal: 0.8,
            landmark_noise: 0.0015,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.duration.is_finite()
            && self.duration > 0.0
            && self.frame_rate.is_finite()
            && self.frame_rate > 0.0
            && self.gyro_rate.is_finite()
            && self.gyro_rate >= self.frame_rate
            && self.amplitude.is_finite()
            && self.amplitude >= 0.0
            && self.pan_rate.is_finite()
            && self.n_landmarks >= 1
            && self.n_landmarks % 4 == 1
            && self.focal > 0.0
            && self.landmark_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid scenario config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub frame: u64,
    pub t: f64,
    /// Noise-free head center in the smooth camera's image.
    pub head: Point2,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub gyro: GyroTrace,
    pub landmarks: LandmarkTrace,
    pub truth: Vec<TruthRecord>,
}

impl Scenario {
    pub fn truth_csv(&self) -> String {
        let mut s = String::from("frame,t,head_x,head_y,yaw\n");
        for r in &self.truth {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.frame, r.t, r.head.x, r.head.y, r.yaw
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    axis: usize,
    freq: f64,
    /// Angle amplitude, radians.
    amp: f64,
    phase: f64,
}

impl Sinusoid {
    /// Angular velocity of `amp * sin(2 pi f t + phase)`.
    fn rate(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.freq;
        self.amp * w * (w * t + self.phase).cos()
    }
}

/// Template point: offset from the head center plus depth toward the camera.
#[derive(Debug, Clone, Copy)]
struct FacePoint {
    dx: f64,
    dy: f64,
    depth: f64,
}

/// Center point plus quadruples mirrored in both axes.
fn face_template(n: usize, rng: &mut ChaCha8Rng) -> Vec<FacePoint> {
    let mut pts = vec![FacePoint {
        dx: 0.0,
        dy: 0.0,
        depth: 0.03,
    }];
    for _ in 0..(n - 1) / 4 {
        let a: f64 = rng.gen_range(0.005..0.07);
        let b: f64 = rng.gen_range(0.005..0.09);
        // points near the middle of the face sit closer to the camera
        let depth = 0.03 * (1.0 - (a / 0.07).powi(2)).max(0.0) - 0.01;
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            pts.push(FacePoint {
                dx: sx * a,
                dy: sy * b,
                depth,
            });
        }
    }
    pts
}

fn shake(rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<Sinusoid> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let axis_scale = if axis == 2 { 0.5 } else { 1.0 };
        for _ in 0..3 {
            out.push(Sinusoid {
                axis,
                freq: rng.gen_range(2.0..8.0),
                amp: amplitude * axis_scale * rng.gen_range(0.001..0.003),
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
        // band-limited noise floor
        for _ in 0..12 {
            out.push(Sinusoid {
                axis,
                freq: rng.gen_range(2.0..8.0),
                amp: amplitude * axis_scale * rng.gen_range(0.0..0.0004),
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
    }
    out
}

struct Motion {
    shake: Vec<Sinusoid>,
    /// Smooth camera yaw rate, rad/s.
    pan: f64,
    head: Box<dyn Fn(f64) -> Point2>,
    yaw: Box<dyn Fn(f64) -> f64>,
    lost: Vec<(f64, f64)>,
}

fn motion(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Motion {
    let amp = config.amplitude;
    let center = Point2::new(0.5, 0.5);
    let still = Motion {
        shake: Vec::new(),
        pan: 0.0,
        head: Box::new(move |_| center),
        yaw: Box::new(|_| 0.0),
        lost: Vec::new(),
    };
    match config.kind {
        ScenarioKind::Static => still,
        ScenarioKind::Handshake => Motion {
            shake: shake(rng, amp),
            ..still
        },
        ScenarioKind::Walk => {
            let mut s = shake(rng, amp);
            let fb = rng.gen_range(1.5..2.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            s.push(Sinusoid {
                axis: 0,
                freq: fb,
                amp: amp * 0.012,
                phase,
            });
            s.push(Sinusoid {
                axis: 1,
                freq: fb / 2.0,
                amp: amp * 0.006,
                phase: phase * 0.5,
            });
            // the face bobs against the camera at the step frequency
            let lag = rng.gen_range(0.0..2.0 * PI);
            Motion {
                shake: s,
                head: Box::new(move |t| {
                    Point2::new(
                        0.5 + amp * 0.008 * (PI * fb * t + lag).sin(),
                        0.5 + amp * 0.012 * (2.0 * PI * fb * t + lag).sin(),
                    )
                }),
                ..still
            }
        }
        ScenarioKind::Pan => Motion {
            shake: shake(rng, amp),
            pan: config.pan_rate * amp,
            ..still
        },
        ScenarioKind::HeadTurn => {
            let d = config.duration;
            Motion {
                shake: shake(rng, amp),
                head: Box::new(move |t| {
                    Point2::new(
                        0.5 + 0.03 * (2.0 * PI * 0.25 * t).sin(),
                        0.5 + 0.01 * (2.0 * PI * 0.4 * t).sin(),
                    )
                }),
                yaw: Box::new(move |t| 0.8 * t / d),
                ..still
            }
        }
        ScenarioKind::OcclusionDropout => {
            let d = config.duration;
            let lost = (0..3)
                .map(|i| {
                    let start = d * (0.15 + 0.28 * i as f64) + rng.gen_range(0.0..0.05 * d);
                    (start, start + rng.gen_range(0.3..0.8))
                })
                .collect();
            Motion {
                shake: shake(rng, amp),
                lost,
                ..still
            }
        }
    }
}

pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let template = face_template(config.n_landmarks, &mut rng);
    let m = motion(config, &mut rng);

    let n_gyro = (config.duration * config.gyro_rate).ceil() as usize + 1;
    let samples: Vec<GyroSample> = (0..n_gyro)
        .map(|i| {
            let t = i as f64 / config.gyro_rate;
            let mut w = [0.0, m.pan, 0.0];
            for s in &m.shake {
                w[s.axis] += s.rate(t);
            }
            GyroSample::new(t, w)
        })
        .collect();
    let timeline = integrate(&samples)?;

    let intr = Intrinsics::new(config.focal)?;
    let k = *intrinsics_matrix(&intr, &PrincipalOffset::ZERO).matrix();
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::Singular("intrinsics".into()))?;
    let noise = Normal::new(0.0, config.landmark_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let use_noise = config.landmark_noise > 0.0 && config.kind != ScenarioKind::Static;

    let n_frames = (config.duration * config.frame_rate).round().max(1.0) as u64;
    let mut records = Vec::with_capacity(n_frames as usize);
    let mut truth = Vec::with_capacity(n_frames as usize);
    for f in 0..n_frames {
        let t = f as f64 / config.frame_rate;
        let rr = timeline.rotation_at(t)?;
        let rs = UnitQuaternion::exp(&Vector3::new(0.0, m.pan * t, 0.0));
        let warp = k * rr.to_rotation_matrix() * rs.to_rotation_matrix().transpose() * k_inv;
        let head = (m.head)(t);
        let yaw = (m.yaw)(t);
        truth.push(TruthRecord {
            frame: f,
            t,
            head,
            yaw,
        });
        if m.lost.iter().any(|(a, b)| t >= *a && t < *b) {
            records.push(LandmarkRecord {
                frame: f,
                t,
                landmarks: None,
            });
            continue;
        }
        let (c, s) = (yaw.cos(), yaw.sin());
        let pts = template
            .iter()
            .map(|p| {
                let x = head.x + p.dx * c + p.depth * s;
                let y = head.y + p.dy;
                let v = warp * Vector3::new(x, y, 1.0);
                let mut q = Point2::new(v.x / v.z, v.y / v.z);
                if use_noise {
                    q.x += noise.sample(&mut rng);
                    q.y += noise.sample(&mut rng);
                }
                q
            })
            .collect();
        let hint = PoseHint {
            yaw,
            pitch: 0.0,
            roll: 0.0,
        };
        records.push(LandmarkRecord {
            frame: f,
            t,
            landmarks: Some(LandmarkSet::with_pose(pts, Some(hint))?),
        });
    }

    Ok(Scenario {
        config: *config,
        gyro: GyroTrace {
            header: TraceHeader {
                kind: TraceKind::Gyro,
                rate: config.gyro_rate,
                n_landmarks: 0,
                focal: config.focal,
            },
            samples,
        },
        landmarks: LandmarkTrace {
            header: TraceHeader {
                kind: TraceKind::Landmarks,
                rate: config.frame_rate,
                n_landmarks: config.n_landmarks as u32,
                focal: config.focal,
            },
            records,
            warnings: Vec::new(),
        },
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{format_gyro_trace, format_landmark_trace};
    use crate::trajectory::landmark_center;

    #[test]
    fn static_scenario_is_still() {
        let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::Static, 2.0, 1)).unwrap();
        assert!(s.gyro.samples.iter().all(|g| g.omega == [0.0; 3]));
        let first = s.landmarks.records[0].landmarks.clone().unwrap();
        assert_eq!(first.len(), 133);
        assert!(s
            .landmarks
            .records
            .iter()
            .all(|r| r.landmarks.as_ref() == Some(&first)));
        let c = landmark_center(&first).unwrap();
        assert!((c.x - 0.5).abs() < 1e-15 && (c.y - 0.5).abs() < 1e-15);
        assert_eq!(s.landmarks.records.len(), 60);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in ScenarioKind::ALL {
            let config = ScenarioConfig::new(kind, 1.5, 42);
            let a = generate_scenario(&config).unwrap();
            let b = generate_scenario(&config).unwrap();
            assert_eq!(format_gyro_trace(&a.gyro), format_gyro_trace(&b.gyro));
            assert_eq!(
                format_landmark_trace(&a.landmarks),
                format_landmark_trace(&b.landmarks)
            );
            assert_eq!(a.truth_csv(), b.truth_csv());
        }
        let a = generate_scenario(&ScenarioConfig::new(ScenarioKind::Walk, 1.0, 1)).unwrap();
        let b = generate_scenario(&ScenarioConfig::new(ScenarioKind::Walk, 1.0, 2)).unwrap();
        assert_ne!(a.gyro, b.gyro);
    }

    #[test]
    fn gyro_covers_every_frame() {
        let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::Pan, 3.0, 9)).unwrap();
        let end = s.gyro.samples.last().unwrap().t;
        assert!(s.landmarks.records.iter().all(|r| r.t <= end));
    }

    #[test]
    fn dropout_has_lost_frames() {
        let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::OcclusionDropout, 6.0, 3))
            .unwrap();
        let lost = s
            .landmarks
            .records
            .iter()
            .filter(|r| r.landmarks.is_none())
            .count();
        assert!(lost > 10 && lost < 120, "{lost}");
    }

    #[test]
    fn head_turn_reports_pose() {
        let s = generate_scenario(&ScenarioConfig::new(ScenarioKind::HeadTurn, 4.0, 3)).unwrap();
        let last = s
            .landmarks
            .records
            .last()
            .unwrap()
            .landmarks
            .as_ref()
            .unwrap();
        assert!(last.pose_hint.unwrap().yaw > 0.7);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!("sideways".parse::<ScenarioKind>().is_err());
        assert_eq!(
            "head-turn".parse::<ScenarioKind>().unwrap(),
            ScenarioKind::HeadTurn
        );
        let mut config = ScenarioConfig::new(ScenarioKind::Walk, 0.0, 1);
        assert!(generate_scenario(&config).is_err());
        config.duration = 1.0;
        config.n_landmarks = 10;
        assert!(generate_scenario(&config).is_err());
    }
}
