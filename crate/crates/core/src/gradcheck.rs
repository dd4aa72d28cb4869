//! Finite-difference check of the analytic residual Jacobian on random frames.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, Point2, PrincipalOffset, UnitQuaternion};
use crate::objective::{
    jacobian_relative_error, numeric_jacobian, residuals_and_jacobian, retract, FrameContext,
    ObjectiveWeights, PARAM_DIM,
};
use crate::protrusion::{protrude, ProtrusionConfig};
use crate::trajectory::LandmarkSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub frames: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Frames whose virtual/real angle is below this are redrawn.
    pub min_deviation: f64,
    /// Column scale floor for the relative error.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            step: 1e-6,
            tolerance: 1e-4,
            min_deviation: 1e-4,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCheck {
    pub index: usize,
    pub deviation: f64,
    pub residuals: usize,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub checks: Vec<FrameCheck>,
    /// Candidates redrawn because a probe straddled the protrusion hinge.
    pub redrawn: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.len() == self.config.frames && self.worst() < self.config.tolerance
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> UnitQuaternion {
    let v: Vector3<f64> = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let n = v.norm().max(1e-12);
    UnitQuaternion::exp(&(v * (rng.gen_range(0.0..max_angle) / n)))
}

fn random_offset(rng: &mut ChaCha8Rng, r: f64) -> PrincipalOffset {
    PrincipalOffset::new(rng.gen_range(-r..r), rng.gen_range(-r..r))
}

/// A random frame context and an evaluation pose near the real camera.
///
/// Odd draws use larger virtual/real angles so that the protrusion and the
/// distortion terms are active.
pub fn random_frame(
    rng: &mut ChaCha8Rng,
    n_landmarks: usize,
) -> Result<(CameraPose, FrameContext)> {
    let intr = Intrinsics::new(0.8)?;
    let rr = random_rotation(rng, 0.4);
    let prev = CameraPose::new(
        random_rotation(rng, 0.05).compose(&rr),
        random_offset(rng, 0.05),
    );
    let prev2 = CameraPose::new(
        random_rotation(rng, 0.05).compose(&prev.rotation),
        random_offset(rng, 0.05),
    );
    let c = Point2::new(rng.gen_range(0.35..0.65), rng.gen_range(0.35..0.65));
    let pts = (0..n_landmarks)
        .map(|_| c + Point2::new(rng.gen_range(-0.08..0.08), rng.gen_range(-0.1..0.1)))
        .collect();
    let ctx = FrameContext {
        real_pose: CameraPose::real(rr),
        landmarks: Some(LandmarkSet::new(pts)?),
        target: c + Point2::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)),
        prev_virtual: prev,
        prev_prev_virtual: prev2,
        intr_v: intr,
        intr_r: intr,
        protrusion: ProtrusionConfig::default(),
    };
    let spread = if rng.gen_bool(0.5) { 0.05 } else { 0.25 };
    let pv = CameraPose::new(
        random_rotation(rng, spread).compose(&rr),
        random_offset(rng, 0.1),
    );
    Ok((pv, ctx))
}

/// True when every probe pose agrees with `pv` on whether protrusion is clipped.
fn off_hinge(pv: &CameraPose, ctx: &FrameContext, h: f64) -> bool {
    let clipped = |p: &CameraPose| {
        protrude(p, &ctx.real_pose, &ctx.intr_v, &ctx.intr_r, &ctx.protrusion) == 0.0
    };
    let base = clipped(pv);
    (0..PARAM_DIM).all(|p| {
        [h, -h].into_iter().all(|s| {
            let mut d = [0.0; PARAM_DIM];
            d[p] = s;
            clipped(&retract(pv, &d)) == base
        })
    })
}

pub fn run_gradcheck(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.frames == 0
        || cfg.step.is_nan()
        || cfg.step <= 0.0
        || cfg.tolerance.is_nan()
        || cfg.tolerance <= 0.0
    {
        return Err(Error::InvalidArgument(format!(
            "invalid gradcheck config {cfg:?}"
        )));
    }
    let w = ObjectiveWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::with_capacity(cfg.frames);
    let mut redrawn = 0;
    let max_draws = cfg.frames * 20;
    let mut draws = 0;
    while checks.len() < cfg.frames {
        draws += 1;
        if draws > max_draws {
            return Err(Error::InvalidArgument(
                "could not draw enough usable frames".into(),
            ));
        }
        let (pv, ctx) = random_frame(&mut rng, 133)?;
        let deviation = pv.rotation.angle_to(&ctx.real_pose.rotation);
        if deviation <= cfg.min_deviation {
            continue;
        }
        if !off_hinge(&pv, &ctx, 2.0 * cfg.step) {
            redrawn += 1;
            continue;
        }
        let lin = residuals_and_jacobian(&pv, &ctx, &w)?;
        let fd = numeric_jacobian(&pv, &ctx, &w, cfg.step)?;
        checks.push(FrameCheck {
            index: checks.len(),
            deviation,
            residuals: lin.residuals.len(),
            relative_error: jacobian_relative_error(&lin.jacobian, &fd, cfg.floor),
        });
    }
    Ok(GradcheckReport {
        config: *cfg,
        checks,
        redrawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let rep = run_gradcheck(7, &GradcheckConfig::default()).unwrap();
        assert!(rep.passed(), "worst {}", rep.worst());
        assert!(rep.checks.iter().all(|c| c.deviation > 1e-4));
    }

    #[test]
    fn broken_tolerance_fails() {
        let cfg = GradcheckConfig {
            frames: 5,
            tolerance: 1e-16,
            ..Default::default()
        };
        assert!(!run_gradcheck(1, &cfg).unwrap().passed());
    }

    #[test]
    fn deterministic() {
        let cfg = GradcheckConfig {
            frames: 10,
            ..Default::default()
        };
        assert_eq!(
            run_gradcheck(3, &cfg).unwrap(),
            run_gradcheck(3, &cfg).unwrap()
        );
    }

    #[test]
    fn rejects_empty_config() {
        let cfg = GradcheckConfig {
            frames: 0,
            ..Default::default()
        };
        assert!(run_gradcheck(3, &cfg).is_err());
    }
}
