//! Smooth target head center.
//!
//! Each frame picks the target `H` minimizing
//! `w1 |H - H_prev|^2 + w2 (max(|H - C|_x, |H - C|_y) / d_ref)^2`
//! subject to `|H - C|_x < r` and `|H - C|_y < r`, where `C` is the mean
//! landmark position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Conventional dense landmark count of the face model.
pub const DEFAULT_LANDMARK_COUNT: usize = 133;

/// Gap kept between the target and the crop constraint so it holds strictly.
pub const CONSTRAINT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseHint {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Point2>,
    pub pose_hint: Option<PoseHint>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        Self::with_pose(points, None)
    }

    pub fn with_pose(points: Vec<Point2>, pose_hint: Option<PoseHint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("landmark set is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite landmark".into()));
        }
        Ok(Self { points, pose_hint })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Larger side of the landmark bounding box.
    pub fn scale(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        (x1 - x0).max(y1 - y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub w1: f64,
    pub w2: f64,
    pub d_ref: f64,
    pub crop_ratio: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            w1: 5000.0,
            w2: 1.0,
            d_ref: 0.03,
            crop_ratio: 0.15,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w1 >= 0.0
            && self.w2 >= 0.0
            && self.w1 + self.w2 > 0.0
            && self.d_ref > 0.0
            && self.crop_ratio > CONSTRAINT_MARGIN
            && self.crop_ratio < 0.5
            && [self.w1, self.w2, self.d_ref].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid trajectory parameters {self:?}"
            )))
        }
    }
}

pub fn landmark_center(lms: &LandmarkSet) -> Result<Point2> {
    if lms.points.is_empty() {
        return Err(Error::InvalidArgument("landmark set is empty".into()));
    }
    let n = lms.points.len() as f64;
    let (sx, sy) = lms
        .points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Ok(Point2::new(sx / n, sy / n))
}

/// Value of the head-center objective (constraint not included).
pub fn head_energy(h: Point2, prev: Point2, center: Point2, params: &TrajectoryParams) -> f64 {
    let dev = (h - center).max_abs() / params.d_ref;
    params.w1 * (h - prev).norm_squared() + params.w2 * dev * dev
}

/// Exact minimizer of the head-center objective over the feasible box.
///
/// For a fixed Chebyshev radius `m = |H - C|_inf` the best `H` is the
/// projection of `H_prev` onto the box of radius `m` around `C`, so the
/// problem reduces to the 1D convex piecewise quadratic
/// `w1 * sum_i (|p_i| - m)_+^2 + (w2 / d_ref^2) m^2`, with `p = H_prev - C`,
/// whose stationary point is found by case analysis on the active axes.
pub fn smooth_head_center(prev: Point2, center: Point2, params: &TrajectoryParams) -> Point2 {
    let p = prev - center;
    let a = params.w2 / (params.d_ref * params.d_ref);
    let w1 = params.w1;
    let (hi, lo) = {
        let (ax, ay) = (p.x.abs(), p.y.abs());
        if ax >= ay {
            (ax, ay)
        } else {
            (ay, ax)
        }
    };
    let radius = if w1 == 0.0 || hi == 0.0 {
        0.0
    } else {
        let both = w1 * (hi + lo) / (2.0 * w1 + a);
        if both <= lo {
            both
        } else {
            w1 * hi / (w1 + a)
        }
    };
    let limit = params.crop_ratio - CONSTRAINT_MARGIN;
    let m = radius.min(limit);
    Point2::new(center.x + p.x.clamp(-m, m), center.y + p.y.clamp(-m, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense grid search over the feasible box around `C`.
    fn grid_oracle(prev: Point2, c: Point2, params: &TrajectoryParams, n: usize) -> (Point2, f64) {
        let r = params.crop_ratio - CONSTRAINT_MARGIN;
        let mut best = (c, f64::MAX);
        for i in 0..n {
            let x = c.x - r + 2.0 * r * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let y = c.y - r + 2.0 * r * j as f64 / (n - 1) as f64;
                let h = Point2::new(x, y);
                let e = head_energy(h, prev, c, params);
                if e < best.1 {
                    best = (h, e);
                }
            }
        }
        best
    }

    #[test]
    fn center_examples() {
        let s = LandmarkSet::new(vec![Point2::new(0.4, 0.6)]).unwrap();
        assert_eq!(landmark_center(&s).unwrap(), Point2::new(0.4, 0.6));
        let s = LandmarkSet::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)]).unwrap();
        assert_eq!(landmark_center(&s).unwrap(), Point2::new(0.5, 0.5));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..133)
            .map(|_| Point2::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)))
            .collect();
        let mut sx = 0.0;
        let mut sy = 0.0;
        for p in &pts {
            sx += p.x;
            sy += p.y;
        }
        let c = landmark_center(&LandmarkSet::new(pts).unwrap()).unwrap();
        assert!((c.x - sx / 133.0).abs() < 1e-15 && (c.y - sy / 133.0).abs() < 1e-15);
        assert!(LandmarkSet::new(vec![]).is_err());
    }

    #[test]
    fn fixed_point_and_degenerate_weights() {
        let params = TrajectoryParams::default();
        let c = Point2::new(0.5, 0.5);
        assert_eq!(smooth_head_center(c, c, &params), c);

        let params0 = TrajectoryParams { w1: 0.0, ..params };
        let c = Point2::new(0.43, 0.61);
        assert_eq!(smooth_head_center(Point2::new(0.5, 0.5), c, &params0), c);
    }

    #[test]
    fn constraint_activates() {
        let params = TrajectoryParams {
            crop_ratio: 0.02,
            ..Default::default()
        };
        let c = Point2::new(0.5, 0.5);
        let h = smooth_head_center(Point2::new(0.8, 0.45), c, &params);
        assert!(((h - c).max_abs() - (0.02 - CONSTRAINT_MARGIN)).abs() < 1e-15);
    }

    #[test]
    fn matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = TrajectoryParams::default();
        for _ in 0..10 {
            let c = Point2::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
            let prev = c + Point2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let h = smooth_head_center(prev, c, &params);
            let (g, ge) = grid_oracle(prev, c, &params, 1000);
            assert!((h - g).max_abs() < 2e-3);
            assert!(head_energy(h, prev, c, &params) <= ge + 1e-12);
        }
    }

    #[test]
    fn stationary_center_converges_geometrically() {
        let params = TrajectoryParams::default();
        let c = Point2::new(0.55, 0.47);
        let mut h = Point2::new(0.62, 0.40);
        let mut d = (h - c).norm();
        for _ in 0..200 {
            if d < 1e-6 {
                break;
            }
            h = smooth_head_center(h, c, &params);
            let nd = (h - c).norm();
            assert!(nd < d);
            d = nd;
        }
        assert!(d < 1e-6);
    }

    proptest! {
        #[test]
        fn output_feasible_and_optimal_against_neighbors(
            cx in 0.2f64..0.8, cy in 0.2f64..0.8,
            dx in -0.5f64..0.5, dy in -0.5f64..0.5,
            w1 in 0.0f64..1e4, w2 in 0.01f64..10.0, d_ref in 0.005f64..0.1, r in 0.01f64..0.45,
        ) {
            let params = TrajectoryParams { w1, w2, d_ref, crop_ratio: r };
            let c = Point2::new(cx, cy);
            let prev = c + Point2::new(dx, dy);
            let h = smooth_head_center(prev, c, &params);
            prop_assert!((h.x - c.x).abs() < r && (h.y - c.y).abs() < r);
            let e = head_energy(h, prev, c, &params);
            let lim = r - CONSTRAINT_MARGIN;
            for (ex, ey) in [(1e-5, 0.0), (-1e-5, 0.0), (0.0, 1e-5), (0.0, -1e-5), (1e-5, 1e-5), (-1e-5, 1e-5)] {
                let q = Point2::new(h.x + ex, h.y + ey);
                if (q - c).max_abs() <= lim {
                    prop_assert!(e <= head_energy(q, prev, c, &params) * (1.0 + 1e-12) + 1e-15);
                }
            }
        }

        #[test]
        fn more_inertia_never_moves_further(
            dx in -0.3f64..0.3, dy in -0.3f64..0.3, w1 in 0.0f64..1e4, extra in 0.0f64..1e4,
        ) {
            let c = Point2::new(0.5, 0.5);
            let prev = c + Point2::new(dx, dy);
            let base = TrajectoryParams { w1, ..Default::default() };
            let heavy = TrajectoryParams { w1: w1 + extra, ..Default::default() };
            let a = (smooth_head_center(prev, c, &base) - prev).norm();
            let b = (smooth_head_center(prev, c, &heavy) - prev).norm();
            prop_assert!(b <= a + 1e-15);
        }
    }
}
