//! How far the stabilized crop reaches outside the real frame.
//!
//! The crop rectangle `[r, 1 - r]^2` of the virtual frame is sampled along
//! its boundary and mapped back into the real frame with `Pi^-1`. Any sample
//! that lands outside the shrunk real frame `[s, 1 - s]^2` protrudes; the
//! protrusion is the largest per-axis exceedance.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intrinsics_inverse, CameraPose, Intrinsics, Point2, MIN_HOMOGENEOUS_W};

/// Reported when a crop sample maps to infinity in the real frame.
pub const INFINITE_PROTRUSION: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtrusionConfig {
    pub crop_ratio: f64,
    pub boundary_shrink: f64,
    pub samples_per_edge: usize,
    pub binary_search_steps: u32,
    pub tolerance: f64,
}

impl Default for ProtrusionConfig {
    fn default() -> Self {
        Self {
            crop_ratio: 0.15,
            boundary_shrink: 0.01,
            samples_per_edge: 8,
            binary_search_steps: 16,
            tolerance: 1e-4,
        }
    }
}

impl ProtrusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.crop_ratio > 0.0
            && self.crop_ratio < 0.5
            && (0.0..=0.1).contains(&self.boundary_shrink)
            && self.binary_search_steps >= 1
            && self.tolerance >= 0.0
            && self.tolerance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid protrusion config {self:?}")))
        }
    }
}

/// Corners first, then `samples_per_edge` interior points on each edge.
pub fn boundary_samples(cfg: &ProtrusionConfig) -> Vec<Point2> {
    let (lo, hi) = (cfg.crop_ratio, 1.0 - cfg.crop_ratio);
    let mut pts = vec![
        Point2::new(lo, lo),
        Point2::new(hi, lo),
        Point2::new(hi, hi),
        Point2::new(lo, hi),
    ];
    let n = cfg.samples_per_edge;
    for k in 1..=n {
        let u = lo + (hi - lo) * k as f64 / (n + 1) as f64;
        pts.push(Point2::new(u, lo));
        pts.push(Point2::new(hi, u));
        pts.push(Point2::new(u, hi));
        pts.push(Point2::new(lo, u));
    }
    pts
}

/// Largest signed exceedance over the crop samples; negative means inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Exceedance {
    pub value: f64,
    pub at_infinity: bool,
    /// d(value)/d(rotation tangent, tx, ty) of the maximizing sample.
    pub grad: [f64; 5],
}

pub(crate) fn max_exceedance(
    pv: &CameraPose,
    pr: &CameraPose,
    intr_v: &Intrinsics,
    intr_r: &Intrinsics,
    cfg: &ProtrusionConfig,
    samples: &[Point2],
    with_grad: bool,
) -> Exceedance {
    let s = cfg.boundary_shrink;
    // d = R_r R_v^T K_v^-1 [p; 1]; real point = dehomog(K_r d)
    let n: Matrix3<f64> =
        pr.rotation.to_rotation_matrix() * pv.rotation.to_rotation_matrix().transpose();
    let kv_inv = intrinsics_inverse(intr_v, &pv.offset);
    let fr = intr_r.focal;
    let (cxr, cyr) = (intr_r.cx + pr.offset.tx, intr_r.cy + pr.offset.ty);

    let mut best = f64::NEG_INFINITY;
    let mut arg: Option<(Vector3<f64>, Vector3<f64>, usize)> = None;
    for p in samples {
        let c = kv_inv * Vector3::new(p.x, p.y, 1.0);
        let d = n * c;
        if d.z < MIN_HOMOGENEOUS_W {
            return Exceedance {
                value: INFINITE_PROTRUSION,
                at_infinity: true,
                grad: [0.0; 5],
            };
        }
        let x = fr * d.x / d.z + cxr;
        let y = fr * d.y / d.z + cyr;
        let sides = [s - x, x - (1.0 - s), s - y, y - (1.0 - s)];
        for (k, e) in sides.into_iter().enumerate() {
            if e > best {
                best = e;
                arg = Some((c, d, k));
            }
        }
    }
    let mut grad = [0.0; 5];
    if let (true, Some((c, d, side))) = (with_grad, arg) {
        // d(point)/dd for the axis this side constrains, signed by the side
        let (axis_row, sign) = match side {
            0 => (0, -1.0),
            1 => (0, 1.0),
            2 => (1, -1.0),
            _ => (1, 1.0),
        };
        let iz = 1.0 / d.z;
        let g = if axis_row == 0 {
            Vector3::new(fr * iz, 0.0, -fr * d.x * iz * iz)
        } else {
            Vector3::new(0.0, fr * iz, -fr * d.y * iz * iz)
        } * sign;
        // dd/d(rot) = N [c]x, so the row is (N^T g) x c; dd/dt = N (-e_axis / f_v)
        let gn = n.transpose() * g;
        let grot = gn.cross(&c);
        let fv = intr_v.focal;
        grad = [grot.x, grot.y, grot.z, -gn.x / fv, -gn.y / fv];
    }
    Exceedance {
        value: best,
        at_infinity: false,
        grad,
    }
}

/// Protrusion amount; 0 when every crop sample lies inside the shrunk frame.
pub fn protrude(
    pv: &CameraPose,
    pr: &CameraPose,
    intr_v: &Intrinsics,
    intr_r: &Intrinsics,
    cfg: &ProtrusionConfig,
) -> f64 {
    let samples = boundary_samples(cfg);
    let e = max_exceedance(pv, pr, intr_v, intr_r, cfg, &samples, false);
    if e.at_infinity {
        INFINITE_PROTRUSION
    } else {
        e.value.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub pose: CameraPose,
    /// Path parameter: 0 is the optimized pose, 1 the real pose.
    pub s: f64,
    pub protrusion: f64,
}

/// Pulls `pv` toward `pr` until the protrusion is within tolerance.
///
/// Returns `None` when even the real pose protrudes.
pub fn binary_search_pose(
    pv: &CameraPose,
    pr: &CameraPose,
    intr_v: &Intrinsics,
    intr_r: &Intrinsics,
    cfg: &ProtrusionConfig,
) -> Option<SearchResult> {
    let at = |s: f64| {
        let pose = pv.interpolate(pr, s);
        (pose, protrude(&pose, pr, intr_v, intr_r, cfg))
    };
    let p0 = protrude(pv, pr, intr_v, intr_r, cfg);
    if p0 <= cfg.tolerance {
        return Some(SearchResult {
            pose: *pv,
            s: 0.0,
            protrusion: p0,
        });
    }
    let (mut best_pose, mut best_p) = at(1.0);
    if best_p > cfg.tolerance {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..cfg.binary_search_steps {
        let mid = 0.5 * (lo + hi);
        let (pose, p) = at(mid);
        if p <= cfg.tolerance {
            hi = mid;
            best_pose = pose;
            best_p = p;
        } else {
            lo = mid;
        }
    }
    Some(SearchResult {
        pose: best_pose,
        s: hi,
        protrusion: best_p,
    })
}
