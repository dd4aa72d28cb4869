//! Per-frame virtual camera objective.
//!
//! The energy is the weighted sum of six terms: landmark fitting, rotation
//! distortion against the real camera, rotation following, rotation C0/C1
//! smoothness, offset C0/C1 smoothness and crop protrusion. Every term is a
//! sum of squares, so the energy is exposed both as scalars (for reporting)
//! and as a stacked residual vector with its Jacobian (for the solver).
//!
//! The solver parameter block is `(d_rot[3], tx, ty)`, where the rotation is
//! updated by left multiplication: `r <- exp(d_rot) * r`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_of, conj4, dot4, hamilton, intrinsics_inverse, projection_homography, CameraPose,
    Intrinsics, Point2, PrincipalOffset, UnitQuaternion, MIN_HOMOGENEOUS_W,
};
use crate::protrusion::{boundary_samples, max_exceedance, protrude, ProtrusionConfig};
use crate::trajectory::LandmarkSet;

pub const PARAM_DIM: usize = 5;
pub type Matrix5 = SMatrix<f64, PARAM_DIM, PARAM_DIM>;
pub type Vector5 = SVector<f64, PARAM_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub w_f: f64,
    pub w_d: f64,
    pub w_o: f64,
    pub w_r_c0: f64,
    pub w_r_c1: f64,
    pub w_t_c0: f64,
    pub w_t_c1: f64,
    pub w_p: f64,
    /// Tolerated protrusion, normalized units.
    pub alpha: f64,
    /// Logistic threshold on the virtual/real angle, radians.
    pub logistic_theta: f64,
    /// Logistic steepness, 1/radians.
    pub logistic_k: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_f: 1.0,
            w_d: 50.0,
            w_o: 2.0,
            w_r_c0: 200.0,
            w_r_c1: 500.0,
            w_t_c0: 200.0,
            w_t_c1: 500.0,
            w_p: 100.0,
            alpha: 0.02,
            logistic_theta: 0.05,
            logistic_k: 200.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.w_f,
            self.w_d,
            self.w_o,
            self.w_r_c0,
            self.w_r_c1,
            self.w_t_c0,
            self.w_t_c1,
            self.w_p,
            self.logistic_theta,
        ];
        let ok = w.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.alpha.is_finite()
            && self.alpha > 0.0
            && self.logistic_k.is_finite()
            && self.logistic_k > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid objective weights {self:?}")))
        }
    }

    pub fn logistic(&self, omega: f64) -> f64 {
        1.0 / (1.0 + (-self.logistic_k * (omega - self.logistic_theta)).exp())
    }
}

/// Everything the objective needs besides the pose being optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    pub real_pose: CameraPose,
    /// `None` on frames where the face was lost; the fitting term is dropped.
    pub landmarks: Option<LandmarkSet>,
    pub target: Point2,
    pub prev_virtual: CameraPose,
    pub prev_prev_virtual: CameraPose,
    pub intr_v: Intrinsics,
    pub intr_r: Intrinsics,
    pub protrusion: ProtrusionConfig,
}

/// Unweighted-by-top-level values of each term, plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub fitting: f64,
    pub distortion: f64,
    pub following: f64,
    /// Already includes the C0/C1 sub-weights.
    pub rotation_smoothness: f64,
    /// Already includes the C0/C1 sub-weights.
    pub translation_smoothness: f64,
    pub protrusion: f64,
    pub total: f64,
}

pub fn term_fitting(pv: &CameraPose, ctx: &FrameContext) -> Result<f64> {
    let lms = ctx
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("fitting term needs landmarks".into()))?;
    let h = projection_homography(pv, &ctx.real_pose, &ctx.intr_v, &ctx.intr_r)?;
    let mut sum = 0.0;
    for l in &lms.points {
        sum += (h.project(*l)? - ctx.target).norm_squared();
    }
    Ok(sum)
}

pub fn term_distortion(rv: &UnitQuaternion, rr: &UnitQuaternion, w: &ObjectiveWeights) -> f64 {
    let omega = rv.angle_to(rr);
    let rho = w.logistic(omega) * omega;
    rho * rho
}

/// Squared 4-vector difference after aligning `b` to the hemisphere of `a`.
fn aligned_distance_sq(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let s = if dot4(a, b) >= 0.0 { 1.0 } else { -1.0 };
    (0..4).map(|k| (a[k] - s * b[k]).powi(2)).sum()
}

pub fn term_following(rv: &UnitQuaternion, rr: &UnitQuaternion) -> f64 {
    aligned_distance_sq(&rv.to_array(), &rr.to_array())
}

pub fn term_rotation_smoothness(
    rv: &UnitQuaternion,
    rv_prev1: &UnitQuaternion,
    rv_prev2: &UnitQuaternion,
    w: &ObjectiveWeights,
) -> f64 {
    let (q, q1, q2) = (rv.to_array(), rv_prev1.to_array(), rv_prev2.to_array());
    let c0 = aligned_distance_sq(&q, &q1);
    let step = hamilton(&q, &conj4(&q1));
    let prev_step = hamilton(&q1, &conj4(&q2));
    let c1 = aligned_distance_sq(&step, &prev_step);
    w.w_r_c0 * c0 + w.w_r_c1 * c1
}

pub fn term_translation_smoothness(
    t: &PrincipalOffset,
    t_prev1: &PrincipalOffset,
    t_prev2: &PrincipalOffset,
    w: &ObjectiveWeights,
) -> f64 {
    let c0 = (t.tx - t_prev1.tx).powi(2) + (t.ty - t_prev1.ty).powi(2);
    let c1 = (2.0 * t_prev1.tx - (t.tx + t_prev2.tx)).powi(2)
        + (2.0 * t_prev1.ty - (t.ty + t_prev2.ty)).powi(2);
    w.w_t_c0 * c0 + w.w_t_c1 * c1
}

pub fn term_protrusion(pv: &CameraPose, ctx: &FrameContext, w: &ObjectiveWeights) -> f64 {
    let p = protrude(
        pv,
        &ctx.real_pose,
        &ctx.intr_v,
        &ctx.intr_r,
        &ctx.protrusion,
    ) / w.alpha;
    p * p
}

pub fn energy_breakdown(
    pv: &CameraPose,
    ctx: &FrameContext,
    w: &ObjectiveWeights,
) -> Result<EnergyBreakdown> {
    let fitting = if w.w_f > 0.0 && ctx.landmarks.is_some() {
        term_fitting(pv, ctx)?
    } else {
        0.0
    };
    let rr = &ctx.real_pose.rotation;
    let distortion = term_distortion(&pv.rotation, rr, w);
    let following = term_following(&pv.rotation, rr);
    let rotation_smoothness = term_rotation_smoothness(
        &pv.rotation,
        &ctx.prev_virtual.rotation,
        &ctx.prev_prev_virtual.rotation,
        w,
    );
    let translation_smoothness = term_translation_smoothness(
        &pv.offset,
        &ctx.prev_virtual.offset,
        &ctx.prev_prev_virtual.offset,
        w,
    );
    let protrusion = term_protrusion(pv, ctx, w);
    let total = w.w_f * fitting
        + w.w_d * distortion
        + w.w_o * following
        + rotation_smoothness
        + translation_smoothness
        + w.w_p * protrusion;
    Ok(EnergyBreakdown {
        fitting,
        distortion,
        following,
        rotation_smoothness,
        translation_smoothness,
        protrusion,
        total,
    })
}

pub fn total_energy(pv: &CameraPose, ctx: &FrameContext, w: &ObjectiveWeights) -> Result<f64> {
    energy_breakdown(pv, ctx, w).map(|b| b.total)
}

/// Stacked residuals and their Jacobian rows at one pose.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Linearization {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<[f64; PARAM_DIM]>,
}

impl Linearization {
    pub fn energy(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// `(J^T J, J^T r)`.
    pub fn normal_equations(&self) -> (Matrix5, Vector5) {
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (row, r) in self.jacobian.iter().zip(&self.residuals) {
            for a in 0..PARAM_DIM {
                if row[a] == 0.0 {
                    continue;
                }
                jtr[a] += row[a] * r;
                for b in a..PARAM_DIM {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..PARAM_DIM {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }
        (jtj, jtr)
    }
}

struct Sink {
    residuals: Vec<f64>,
    jacobian: Option<Vec<[f64; PARAM_DIM]>>,
}

impl Sink {
    #[inline]
    fn push(&mut self, r: f64, row: impl FnOnce() -> [f64; PARAM_DIM]) {
        self.residuals.push(r);
        if let Some(j) = self.jacobian.as_mut() {
            j.push(row());
        }
    }
}

/// `d(exp(delta) * q)/d(delta_j)` at `delta = 0`, for j = 0..3.
fn tangent_basis(q: &[f64; 4]) -> [[f64; 4]; 3] {
    let e = |j: usize| {
        let mut u = [0.0; 4];
        u[j + 1] = 0.5;
        hamilton(&u, q)
    };
    [e(0), e(1), e(2)]
}

/// Residual rows for `a - s*b`, `s` aligning hemispheres, with `a` moving.
fn push_quat_difference(sink: &mut Sink, scale: f64, a: &[f64; 4], b: &[f64; 4]) {
    let s = if dot4(a, b) >= 0.0 { 1.0 } else { -1.0 };
    let basis = tangent_basis(a);
    for k in 0..4 {
        sink.push(scale * (a[k] - s * b[k]), || {
            [
                scale * basis[0][k],
                scale * basis[1][k],
                scale * basis[2][k],
                0.0,
                0.0,
            ]
        });
    }
}

fn evaluate(
    pv: &CameraPose,
    ctx: &FrameContext,
    w: &ObjectiveWeights,
    with_jacobian: bool,
) -> Result<Linearization> {
    let n_lm = ctx.landmarks.as_ref().map_or(0, |l| l.len());
    let cap = 2 * n_lm + 22;
    let mut sink = Sink {
        residuals: Vec::with_capacity(cap),
        jacobian: with_jacobian.then(|| Vec::with_capacity(cap)),
    };
    let rv = pv.rotation.to_array();
    let rr = ctx.real_pose.rotation.to_array();

    if let (true, Some(lms)) = (w.w_f > 0.0, ctx.landmarks.as_ref()) {
        let s = w.w_f.sqrt();
        let m: Matrix3<f64> = pv.rotation.to_rotation_matrix()
            * ctx.real_pose.rotation.to_rotation_matrix().transpose()
            * intrinsics_inverse(&ctx.intr_r, &ctx.real_pose.offset);
        let f = ctx.intr_v.focal;
        let cx = ctx.intr_v.cx + pv.offset.tx;
        let cy = ctx.intr_v.cy + pv.offset.ty;
        for l in &lms.points {
            let b = m * Vector3::new(l.x, l.y, 1.0);
            if b.z < MIN_HOMOGENEOUS_W {
                return Err(Error::PointAtInfinity { w: b.z });
            }
            let iz = 1.0 / b.z;
            let px = f * b.x * iz + cx;
            let py = f * b.y * iz + cy;
            // db/d(rot) = -[b]x, so each row is b x (d proj / db)
            sink.push(s * (px - ctx.target.x), || {
                let r = b.cross(&Vector3::new(f * iz, 0.0, -f * b.x * iz * iz));
                [s * r.x, s * r.y, s * r.z, s, 0.0]
            });
            sink.push(s * (py - ctx.target.y), || {
                let r = b.cross(&Vector3::new(0.0, f * iz, -f * b.y * iz * iz));
                [s * r.x, s * r.y, s * r.z, 0.0, s]
            });
        }
    }

    if w.w_d > 0.0 {
        let s = w.w_d.sqrt();
        let mut d = hamilton(&rv, &conj4(&rr));
        if d[0] < 0.0 {
            d = [-d[0], -d[1], -d[2], -d[3]];
        }
        let omega = angle_of(&d);
        let sigma = w.logistic(omega);
        sink.push(s * sigma * omega, || {
            // d(omega)/d(delta) is the unit rotation axis of rv * rr^-1
            let vn = (d[1] * d[1] + d[2] * d[2] + d[3] * d[3]).sqrt();
            if vn < 1e-300 {
                return [0.0; PARAM_DIM];
            }
            let drho = sigma + w.logistic_k * sigma * (1.0 - sigma) * omega;
            let k = s * drho / vn;
            [k * d[1], k * d[2], k * d[3], 0.0, 0.0]
        });
    }

    if w.w_o > 0.0 {
        push_quat_difference(&mut sink, w.w_o.sqrt(), &rv, &rr);
    }

    let r1 = ctx.prev_virtual.rotation.to_array();
    if w.w_r_c0 > 0.0 {
        push_quat_difference(&mut sink, w.w_r_c0.sqrt(), &rv, &r1);
    }
    if w.w_r_c1 > 0.0 {
        let r2 = ctx.prev_prev_virtual.rotation.to_array();
        let step = hamilton(&rv, &conj4(&r1));
        let prev_step = hamilton(&r1, &conj4(&r2));
        push_quat_difference(&mut sink, w.w_r_c1.sqrt(), &step, &prev_step);
    }

    let (t, t1, t2) = (
        pv.offset,
        ctx.prev_virtual.offset,
        ctx.prev_prev_virtual.offset,
    );
    if w.w_t_c0 > 0.0 {
        let s = w.w_t_c0.sqrt();
        sink.push(s * (t.tx - t1.tx), || [0.0, 0.0, 0.0, s, 0.0]);
        sink.push(s * (t.ty - t1.ty), || [0.0, 0.0, 0.0, 0.0, s]);
    }
    if w.w_t_c1 > 0.0 {
        let s = w.w_t_c1.sqrt();
        sink.push(s * (2.0 * t1.tx - (t.tx + t2.tx)), || {
            [0.0, 0.0, 0.0, -s, 0.0]
        });
        sink.push(s * (2.0 * t1.ty - (t.ty + t2.ty)), || {
            [0.0, 0.0, 0.0, 0.0, -s]
        });
    }

    if w.w_p > 0.0 {
        let s = w.w_p.sqrt() / w.alpha;
        let samples = boundary_samples(&ctx.protrusion);
        let e = max_exceedance(
            pv,
            &ctx.real_pose,
            &ctx.intr_v,
            &ctx.intr_r,
            &ctx.protrusion,
            &samples,
            with_jacobian,
        );
        if e.value > 0.0 {
            sink.push(s * e.value, || e.grad.map(|g| s * g));
        } else {
            sink.push(0.0, || [0.0; PARAM_DIM]);
        }
    }

    Ok(Linearization {
        residuals: sink.residuals,
        jacobian: sink.jacobian.unwrap_or_default(),
    })
}

/// Weighted residual vector whose squared norm is the total energy.
pub fn residuals(pv: &CameraPose, ctx: &FrameContext, w: &ObjectiveWeights) -> Result<Vec<f64>> {
    evaluate(pv, ctx, w, false).map(|l| l.residuals)
}

/// Residuals and the Jacobian with respect to `(d_rot[3], tx, ty)` at `pv`.
pub fn residuals_and_jacobian(
    pv: &CameraPose,
    ctx: &FrameContext,
    w: &ObjectiveWeights,
) -> Result<Linearization> {
    evaluate(pv, ctx, w, true)
}

/// Central finite-difference Jacobian over the same parameterization.
pub fn numeric_jacobian(
    pv: &CameraPose,
    ctx: &FrameContext,
    w: &ObjectiveWeights,
    h: f64,
) -> Result<Vec<[f64; PARAM_DIM]>> {
    let base = residuals(pv, ctx, w)?;
    let mut jac = vec![[0.0; PARAM_DIM]; base.len()];
    for p in 0..PARAM_DIM {
        let mut delta = [0.0; PARAM_DIM];
        delta[p] = h;
        let plus = residuals(&retract(pv, &delta), ctx, w)?;
        delta[p] = -h;
        let minus = residuals(&retract(pv, &delta), ctx, w)?;
        if plus.len() != base.len() || minus.len() != base.len() {
            return Err(Error::InvalidArgument("residual layout changed".into()));
        }
        for (row, (a, b)) in jac.iter_mut().zip(plus.iter().zip(&minus)) {
            row[p] = (a - b) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Applies a parameter-space step to a pose.
pub fn retract(pv: &CameraPose, delta: &[f64; PARAM_DIM]) -> CameraPose {
    pv.retract(
        &Vector3::new(delta[0], delta[1], delta[2]),
        delta[3],
        delta[4],
    )
}

/// Largest column-relative deviation between two Jacobians:
/// `max_col |a - b|_inf / max(|b|_inf, floor)`.
pub fn jacobian_relative_error(a: &[[f64; PARAM_DIM]], b: &[[f64; PARAM_DIM]], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..PARAM_DIM {
        let scale = b.iter().map(|r| r[p].abs()).fold(floor, f64::max);
        let err = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x[p] - y[p]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    worst
}
