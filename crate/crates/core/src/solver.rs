//! Levenberg-Marquardt over the five pose parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::objective::{
    residuals_and_jacobian, retract, FrameContext, Linearization, Matrix5, ObjectiveWeights,
    Vector5, PARAM_DIM,
};

/// Lower bound on the Marquardt scaling diagonal.
const DIAG_FLOOR: f64 = 1e-12;
const MAX_DAMPING_ESCALATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Infinity norm of the step below which the solve stops.
    pub step_tolerance: f64,
    /// Relative energy decrease below which the solve stops.
    pub energy_tolerance: f64,
    /// Keep the rotation fixed and optimize the offset only.
    pub lock_rotation: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.5,
            step_tolerance: 1e-8,
            energy_tolerance: 1e-10,
            lock_rotation: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.step_tolerance,
            self.energy_tolerance,
        ];
        let ok = self.max_iterations >= 1
            && pos.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.damping_up > 1.0
            && self.damping_down < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    /// Linearizations performed, each followed by at most one trial step.
    pub iterations: usize,
    /// Trial steps that lowered the energy.
    pub accepted_steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub converged: bool,
    /// Infinity norms of the accepted steps.
    pub step_norms: Vec<f64>,
}

/// Solves `(JtJ + damping * D) x = -Jtr` with `D = diag(max(JtJ_ii, floor))`.
///
/// When the damped matrix is not positive definite the damping is raised
/// and the factorization retried.
pub fn solve_normal_equations(jtj: &Matrix5, jtr: &Vector5, damping: f64) -> Result<Vector5> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::InvalidArgument(format!("damping {damping}")));
    }
    let mut lambda = damping;
    for _ in 0..=MAX_DAMPING_ESCALATIONS {
        let mut a = *jtj;
        for i in 0..PARAM_DIM {
            a[(i, i)] += lambda * jtj[(i, i)].max(DIAG_FLOOR);
        }
        if let Some(chol) = a.cholesky() {
            let x = chol.solve(&(-jtr));
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        lambda = if lambda == 0.0 { 1e-9 } else { lambda * 10.0 };
    }
    Err(Error::Singular(format!(
        "normal equations not positive definite after {MAX_DAMPING_ESCALATIONS} damping escalations"
    )))
}

fn normal_equations(lin: &Linearization, lock_rotation: bool) -> (Matrix5, Vector5) {
    let (mut jtj, mut jtr) = lin.normal_equations();
    if lock_rotation {
        for i in 0..3 {
            for j in 0..PARAM_DIM {
                jtj[(i, j)] = 0.0;
                jtj[(j, i)] = 0.0;
            }
            jtj[(i, i)] = 1.0;
            jtr[i] = 0.0;
        }
    }
    (jtj, jtr)
}

pub fn solve(
    initial: &CameraPose,
    ctx: &FrameContext,
    w: &ObjectiveWeights,
    settings: &SolverSettings,
) -> Result<(CameraPose, SolveReport)> {
    let fail = |msg: String, pose: &CameraPose| Error::Solver {
        msg,
        last_pose: Box::new(*pose),
    };
    let mut pose = *initial;
    let mut lin = residuals_and_jacobian(&pose, ctx, w)
        .map_err(|e| fail(format!("initial linearization: {e}"), &pose))?;
    let mut energy = lin.energy();
    let mut report = SolveReport {
        initial_energy: energy,
        ..Default::default()
    };
    let mut lambda = settings.initial_damping;

    for iter in 1..=settings.max_iterations {
        report.iterations = iter;
        if energy == 0.0 {
            report.converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(&lin, settings.lock_rotation);
        let step =
            solve_normal_equations(&jtj, &jtr, lambda).map_err(|e| fail(e.to_string(), &pose))?;
        let step_norm = step.amax();
        if step_norm < settings.step_tolerance {
            report.converged = true;
            break;
        }
        let delta: [f64; PARAM_DIM] = step.into();
        let candidate = retract(&pose, &delta);
        // a trial pose that pushes landmarks to infinity is treated as a rejected step
        match residuals_and_jacobian(&candidate, ctx, w) {
            Ok(next) if next.energy() < energy => {
                let next_energy = next.energy();
                let rel = (energy - next_energy) / energy;
                pose = candidate;
                lin = next;
                energy = next_energy;
                lambda *= settings.damping_down;
                report.accepted_steps += 1;
                report.step_norms.push(step_norm);
                if rel < settings.energy_tolerance {
                    report.converged = true;
                    break;
                }
            }
            _ => lambda *= settings.damping_up,
        }
    }
    report.final_energy = energy;
    Ok((pose, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Point2, UnitQuaternion};
    use crate::objective::total_energy;
    use crate::protrusion::ProtrusionConfig;
    use crate::trajectory::LandmarkSet;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx_with(points: Vec<Point2>, target: Point2, real: CameraPose) -> FrameContext {
        let k = Intrinsics::new(0.8).unwrap();
        FrameContext {
            real_pose: real,
            landmarks: Some(LandmarkSet::new(points).unwrap()),
            target,
            prev_virtual: CameraPose::identity(),
            prev_prev_virtual: CameraPose::identity(),
            intr_v: k,
            intr_r: k,
            protrusion: ProtrusionConfig::default(),
        }
    }

    #[test]
    fn normal_equation_examples() {
        let x = solve_normal_equations(&Matrix5::identity(), &Vector5::x(), 0.0).unwrap();
        assert_eq!(x, -Vector5::x());

        let d = Matrix5::from_diagonal(&Vector5::new(2.0, 4.0, 0.5, 8.0, 1.0));
        let b = Vector5::new(1.0, -2.0, 3.0, 0.5, -1.0);
        let x = solve_normal_equations(&d, &b, 0.1).unwrap();
        for i in 0..5 {
            assert_relative_eq!(x[i], -b[i] / (d[(i, i)] * 1.1), max_relative = 1e-14);
        }

        // dense inverse oracle
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = Matrix5::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let spd = m * m.transpose() + Matrix5::identity() * 0.1;
            let b = Vector5::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let lambda = rng.gen_range(0.0..0.01);
            let mut damped = spd;
            for i in 0..5 {
                damped[(i, i)] += lambda * spd[(i, i)];
            }
            let oracle = -(damped.try_inverse().unwrap() * b);
            let x = solve_normal_equations(&spd, &b, lambda).unwrap();
            assert!((x - oracle).amax() <= 1e-10 * oracle.amax().max(1.0));
        }
    }

    #[test]
    fn indefinite_system_escalates_then_fails() {
        let mut a = Matrix5::identity();
        a[(0, 0)] = -1.0;
        // damping grows until the negative diagonal is overcome: -1 + lambda * 1e-12 stays negative
        assert!(matches!(
            solve_normal_equations(&a, &Vector5::x(), 0.0),
            Err(Error::Singular(_))
        ));
        // a merely singular matrix is rescued by the first escalation
        let mut s = Matrix5::identity();
        s[(4, 4)] = 0.0;
        assert!(solve_normal_equations(&s, &Vector5::x(), 0.0).is_ok());
    }

    #[test]
    fn zero_energy_start_is_returned_unchanged() {
        let ctx = ctx_with(
            vec![Point2::new(0.5, 0.5)],
            Point2::new(0.5, 0.5),
            CameraPose::identity(),
        );
        let w = ObjectiveWeights::default();
        let (pose, rep) = solve(
            &CameraPose::identity(),
            &ctx,
            &w,
            &SolverSettings::default(),
        )
        .unwrap();
        assert_eq!(pose, CameraPose::identity());
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert_eq!(rep.final_energy, 0.0);
    }

    #[test]
    fn offset_only_quadratic_is_solved_exactly() {
        // one landmark, rotation frozen, only fitting: the optimum puts the landmark on H
        let w = ObjectiveWeights {
            w_d: 0.0,
            w_o: 0.0,
            w_r_c0: 0.0,
            w_r_c1: 0.0,
            w_t_c0: 0.0,
            w_t_c1: 0.0,
            w_p: 0.0,
            ..Default::default()
        };
        let ctx = ctx_with(
            vec![Point2::new(0.53, 0.46)],
            Point2::new(0.5, 0.5),
            CameraPose::identity(),
        );
        // two linearizations, the remaining gap is the default damping squared
        let settings = SolverSettings {
            lock_rotation: true,
            max_iterations: 2,
            ..Default::default()
        };
        let (pose, rep) = solve(&CameraPose::identity(), &ctx, &w, &settings).unwrap();
        assert_eq!(rep.accepted_steps, 2);
        assert_eq!(pose.rotation, UnitQuaternion::identity());
        assert_relative_eq!(pose.offset.tx, -0.03, epsilon = 1e-7);
        assert_relative_eq!(pose.offset.ty, 0.04, epsilon = 1e-7);
    }

    #[test]
    fn accepted_steps_decrease_energy_and_pose_stays_unit() {
        let w = ObjectiveWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let rr = UnitQuaternion::exp(&nalgebra::Vector3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ));
            let c = Point2::new(rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6));
            let pts = (0..60)
                .map(|_| c + Point2::new(rng.gen_range(-0.07..0.07), rng.gen_range(-0.09..0.09)))
                .collect();
            let ctx = ctx_with(pts, Point2::new(0.5, 0.5), CameraPose::real(rr));
            let init = CameraPose::identity();
            let (pose, rep) = solve(&init, &ctx, &w, &SolverSettings::default()).unwrap();
            let e0 = total_energy(&init, &ctx, &w).unwrap();
            let e1 = total_energy(&pose, &ctx, &w).unwrap();
            assert!(e1 <= e0);
            assert_relative_eq!(rep.final_energy, e1, max_relative = 1e-10);
            assert!((pose.rotation.norm() - 1.0).abs() < 1e-12);
            assert!(rep.iterations <= 10);
            assert_eq!(rep.step_norms.len(), rep.accepted_steps);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let ctx = ctx_with(
            vec![
                Point2::new(0.41, 0.52),
                Point2::new(0.58, 0.47),
                Point2::new(0.5, 0.6),
            ],
            Point2::new(0.5, 0.5),
            CameraPose::real(UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.05).unwrap()),
        );
        let w = ObjectiveWeights::default();
        let s = SolverSettings::default();
        let a = solve(&CameraPose::identity(), &ctx, &w, &s).unwrap();
        let b = solve(&CameraPose::identity(), &ctx, &w, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::default().validate().is_ok());
        let bad = SolverSettings {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverSettings {
            damping_down: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
