//! Causal per-frame stabilization.
//!
//! Each frame runs: head-center smoothing, weight scheduling, warm start,
//! the LM solve, and the protrusion safeguard. All cross-frame state lives in
//! [`Stabilizer`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    projection_homography, warp_mesh, CameraPose, Homography, Intrinsics, Point2, UnitQuaternion,
    WarpMesh,
};
use crate::objective::{FrameContext, ObjectiveWeights};
use crate::protrusion::{binary_search_pose, protrude, ProtrusionConfig};
use crate::scheduler::{ScheduledWeights, SchedulerConfig, SchedulerState};
use crate::solver::{solve, SolveReport, SolverSettings};
use crate::trajectory::{landmark_center, smooth_head_center, LandmarkSet, TrajectoryParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { rows: 9, cols: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizerConfig {
    pub focal_virtual: f64,
    pub focal_real: f64,
    /// Fixed gyro-to-camera rotation, `[w, x, y, z]`.
    pub gyro_alignment: UnitQuaternion,
    pub weights: ObjectiveWeights,
    pub trajectory: TrajectoryParams,
    pub protrusion: ProtrusionConfig,
    pub solver: SolverSettings,
    pub scheduler: SchedulerConfig,
    pub mesh: MeshConfig,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        Self {
            focal_virtual: 0.8,
            focal_real: 0.8,
            gyro_alignment: UnitQuaternion::identity(),
            weights: ObjectiveWeights::default(),
            trajectory: TrajectoryParams::default(),
            protrusion: ProtrusionConfig::default(),
            solver: SolverSettings::default(),
            scheduler: SchedulerConfig::default(),
            mesh: MeshConfig::default(),
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        Intrinsics::new(self.focal_virtual)?;
        Intrinsics::new(self.focal_real)?;
        self.weights.validate()?;
        self.trajectory.validate()?;
        self.protrusion.validate()?;
        self.solver.validate()?;
        self.scheduler.validate()?;
        if self.trajectory.crop_ratio != self.protrusion.crop_ratio {
            return Err(Error::Config(format!(
                "trajectory.crop_ratio {} differs from protrusion.crop_ratio {}",
                self.trajectory.crop_ratio, self.protrusion.crop_ratio
            )));
        }
        if self.mesh.rows < 2 || self.mesh.cols < 2 {
            return Err(Error::Config("mesh needs at least 2x2 vertices".into()));
        }
        Ok(())
    }

    /// Sets the crop ratio used by both the head-center constraint and the
    /// protrusion check.
    pub fn set_crop_ratio(&mut self, r: f64) {
        self.trajectory.crop_ratio = r;
        self.protrusion.crop_ratio = r;
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn intrinsics(&self) -> Result<(Intrinsics, Intrinsics)> {
        Ok((
            Intrinsics::new(self.focal_virtual)?,
            Intrinsics::new(self.focal_real)?,
        ))
    }

    /// Zeroes the weights of one objective term.
    pub fn ablate(&mut self, term: Term) {
        let w = &mut self.weights;
        match term {
            Term::Fitting => w.w_f = 0.0,
            Term::Distortion => w.w_d = 0.0,
            Term::Following => w.w_o = 0.0,
            Term::RotationSmoothness => {
                w.w_r_c0 = 0.0;
                w.w_r_c1 = 0.0;
            }
            Term::TranslationSmoothness => {
                w.w_t_c0 = 0.0;
                w.w_t_c1 = 0.0;
            }
            Term::Smoothness => {
                self.ablate(Term::RotationSmoothness);
                self.ablate(Term::TranslationSmoothness);
            }
            Term::Protrusion => w.w_p = 0.0,
        }
    }
}

/// Objective terms that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Fitting,
    Distortion,
    Following,
    RotationSmoothness,
    TranslationSmoothness,
    /// Both smoothness terms.
    Smoothness,
    Protrusion,
}

impl Term {
    pub const ALL: [Term; 7] = [
        Term::Fitting,
        Term::Distortion,
        Term::Following,
        Term::RotationSmoothness,
        Term::TranslationSmoothness,
        Term::Smoothness,
        Term::Protrusion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Term::Fitting => "fitting",
            Term::Distortion => "distortion",
            Term::Following => "following",
            Term::RotationSmoothness => "rotation-smoothness",
            Term::TranslationSmoothness => "translation-smoothness",
            Term::Smoothness => "smoothness",
            Term::Protrusion => "protrusion",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Term::ALL.iter().map(|t| t.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown term '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub t: f64,
    pub real_rotation: UnitQuaternion,
    pub landmarks: Option<LandmarkSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedFrame {
    pub frame_index: u64,
    pub t: f64,
    pub real_rotation: UnitQuaternion,
    pub virtual_pose: CameraPose,
    pub homography: Homography,
    pub warp_mesh: WarpMesh,
    pub head_center_target: Point2,
    /// No landmarks this frame; the head target was carried over.
    pub face_lost: bool,
    pub protrusion: f64,
    pub solver_report: SolveReport,
    /// Set when the binary search pulled the pose toward the real camera.
    pub search: Option<PathSearch>,
    pub fallback_used: bool,
    pub scheduled_weights: ScheduledWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSearch {
    /// Solver output before the search.
    pub solved: CameraPose,
    /// Path parameter of the emitted pose.
    pub s: f64,
}

/// `(r_r * r_{r,-1}^-1) * r_{v,-1}` with the previous offset.
pub fn warm_start(
    prev_virtual: &CameraPose,
    prev_real: &UnitQuaternion,
    real: &UnitQuaternion,
) -> CameraPose {
    let delta = real.compose(&prev_real.inverse());
    CameraPose::new(delta.compose(&prev_virtual.rotation), prev_virtual.offset)
}

/// Stream state machine; one instance per video stream.
#[derive(Debug, Clone)]
pub struct Stabilizer {
    config: StabilizerConfig,
    intr_v: Intrinsics,
    intr_r: Intrinsics,
    frames: u64,
    last_index: Option<u64>,
    last_t: f64,
    prev_virtual: CameraPose,
    prev_prev_virtual: CameraPose,
    prev_real: Option<UnitQuaternion>,
    prev_head: Option<Point2>,
    prev_homography: Homography,
    scheduler: SchedulerState,
}

impl Stabilizer {
    pub fn new(config: StabilizerConfig) -> Result<Self> {
        config.validate()?;
        let (intr_v, intr_r) = config.intrinsics()?;
        let scheduler = SchedulerState::new(config.scheduler)?;
        Ok(Self {
            config,
            intr_v,
            intr_r,
            frames: 0,
            last_index: None,
            last_t: f64::NEG_INFINITY,
            prev_virtual: CameraPose::identity(),
            prev_prev_virtual: CameraPose::identity(),
            prev_real: None,
            prev_head: None,
            prev_homography: Homography::identity(),
            scheduler,
        })
    }

    pub fn config(&self) -> &StabilizerConfig {
        &self.config
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    /// Most recent and second most recent virtual poses.
    pub fn history(&self) -> (CameraPose, CameraPose) {
        (self.prev_virtual, self.prev_prev_virtual)
    }

    pub fn process_frame(&mut self, obs: &FrameObservation) -> Result<StabilizedFrame> {
        if let Some(last) = self.last_index {
            if obs.frame_index <= last {
                return Err(Error::Stream(format!(
                    "frame index {} does not follow {last}",
                    obs.frame_index
                )));
            }
        }
        if !obs.t.is_finite() || obs.t <= self.last_t {
            return Err(Error::Stream(format!(
                "frame {} timestamp {} does not follow {}",
                obs.frame_index, obs.t, self.last_t
            )));
        }
        self.step(obs).map_err(|e| e.at_frame(obs.frame_index))
    }

    fn step(&mut self, obs: &FrameObservation) -> Result<StabilizedFrame> {
        let cfg = &self.config;
        let rr = obs.real_rotation;
        let real_pose = CameraPose::real(rr);

        let face_lost = obs.landmarks.is_none();
        let head = match (&obs.landmarks, self.prev_head) {
            (Some(l), Some(prev)) => Some(smooth_head_center(
                prev,
                landmark_center(l)?,
                &cfg.trajectory,
            )),
            (Some(l), None) => Some(landmark_center(l)?),
            (None, prev) => prev,
        };

        let omega = match self.prev_real {
            Some(prev) => rr.angle_to(&prev) / (obs.t - self.last_t),
            None => 0.0,
        };
        let scheduled =
            self.scheduler
                .update_and_schedule(omega, obs.landmarks.as_ref(), &cfg.weights);

        let mut w = scheduled.weights;
        if head.is_none() {
            w.w_f = 0.0;
        }
        let (landmarks, target) = match (&obs.landmarks, head) {
            (Some(l), Some(h)) => (Some(l.clone()), h),
            _ => {
                w.w_f = 0.0;
                (None, head.unwrap_or(Point2::new(0.5, 0.5)))
            }
        };
        if self.frames == 0 {
            w.w_r_c0 = 0.0;
            w.w_t_c0 = 0.0;
        }
        if self.frames <= 1 {
            w.w_r_c1 = 0.0;
            w.w_t_c1 = 0.0;
        }

        let init = match self.prev_real {
            Some(prev) => warm_start(&self.prev_virtual, &prev, &rr),
            None => CameraPose::identity(),
        };
        let ctx = FrameContext {
            real_pose,
            landmarks,
            target,
            prev_virtual: self.prev_virtual,
            prev_prev_virtual: self.prev_prev_virtual,
            intr_v: self.intr_v,
            intr_r: self.intr_r,
            protrusion: cfg.protrusion,
        };
        let (mut pose, solver_report) = solve(&init, &ctx, &w, &cfg.solver)?;

        let pc = &cfg.protrusion;
        let mut protrusion = protrude(&pose, &real_pose, &self.intr_v, &self.intr_r, pc);
        let mut search = None;
        let mut fallback_used = false;
        let homography = if protrusion <= pc.tolerance {
            projection_homography(&pose, &real_pose, &self.intr_v, &self.intr_r)?
        } else {
            match binary_search_pose(&pose, &real_pose, &self.intr_v, &self.intr_r, pc) {
                Some(found) => {
                    search = Some(PathSearch {
                        solved: pose,
                        s: found.s,
                    });
                    pose = found.pose;
                    protrusion = found.protrusion;
                    projection_homography(&pose, &real_pose, &self.intr_v, &self.intr_r)?
                }
                None => {
                    fallback_used = true;
                    // the pose that reproduces the previous homography under the new real rotation
                    let rot = match self.prev_real {
                        Some(prev) => self
                            .prev_virtual
                            .rotation
                            .compose(&prev.inverse())
                            .compose(&rr),
                        None => rr,
                    };
                    pose = CameraPose::new(rot, self.prev_virtual.offset);
                    protrusion = protrude(&pose, &real_pose, &self.intr_v, &self.intr_r, pc);
                    self.prev_homography
                }
            }
        };
        let mesh = warp_mesh(&homography, cfg.mesh.rows, cfg.mesh.cols)?;

        self.prev_prev_virtual = self.prev_virtual;
        self.prev_virtual = pose;
        self.prev_real = Some(rr);
        self.prev_head = head;
        self.prev_homography = homography;
        self.last_index = Some(obs.frame_index);
        self.last_t = obs.t;
        self.frames += 1;

        Ok(StabilizedFrame {
            frame_index: obs.frame_index,
            t: obs.t,
            real_rotation: rr,
            virtual_pose: pose,
            homography,
            warp_mesh: mesh,
            head_center_target: target,
            face_lost,
            protrusion,
            solver_report,
            search,
            fallback_used,
            scheduled_weights: ScheduledWeights {
                weights: w,
                multipliers: scheduled.multipliers,
            },
        })
    }

    pub fn process_stream(
        &mut self,
        observations: &[FrameObservation],
    ) -> Result<Vec<StabilizedFrame>> {
        observations.iter().map(|o| self.process_frame(o)).collect()
    }
}

/// Runs a fresh stabilizer over a whole stream.
pub fn process_stream(
    observations: &[FrameObservation],
    config: &StabilizerConfig,
) -> Result<Vec<StabilizedFrame>> {
    Stabilizer::new(config.clone())?.process_stream(observations)
}
