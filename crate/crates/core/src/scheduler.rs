//! Per-frame weight adjustment from gyro activity, head pose and landmark
//! stability.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::objective::ObjectiveWeights;
use crate::trajectory::{landmark_center, LandmarkSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Averaging window in frames.
    pub window: usize,
    /// Angular speed (rad/s) at which fitting runs at full weight.
    pub omega_ref: f64,
    pub m_min: f64,
    /// Head pose (rad) above which fitting is relaxed.
    pub pose_ref: f64,
    /// Head pose (rad) where falloff and boost reach their limits.
    pub pose_full: f64,
    pub pose_falloff_min: f64,
    pub pose_boost_max: f64,
    pub center_ref: f64,
    pub scale_ref: f64,
    pub v_min: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            window: 30,
            omega_ref: 0.3,
            m_min: 0.05,
            pose_ref: 0.35,
            pose_full: 0.9,
            pose_falloff_min: 0.1,
            pose_boost_max: 3.0,
            center_ref: 0.01,
            scale_ref: 0.02,
            v_min: 0.1,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.omega_ref,
            self.m_min,
            self.pose_full,
            self.pose_falloff_min,
            self.center_ref,
            self.scale_ref,
            self.v_min,
        ];
        let ok = self.window >= 2
            && pos.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.m_min <= 1.0
            && self.v_min <= 1.0
            && self.pose_falloff_min <= 1.0
            && self.pose_boost_max >= 1.0
            && self.pose_ref >= 0.0
            && self.pose_ref < self.pose_full;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid scheduler config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub gyro: f64,
    pub pose_fitting: f64,
    pub pose_smoothness: f64,
    pub landmark: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledWeights {
    pub weights: ObjectiveWeights,
    pub multipliers: Multipliers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    config: SchedulerConfig,
    omega: VecDeque<f64>,
    centers: VecDeque<Point2>,
    scales: VecDeque<f64>,
}

fn push_bounded<T>(buf: &mut VecDeque<T>, v: T, cap: usize) {
    if buf.len() == cap {
        buf.pop_front();
    }
    buf.push_back(v);
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    // shifting by the first value keeps constant windows exactly zero
    let first = values.clone().next().unwrap_or(0.0);
    let mean = values.clone().map(|v| v - first).sum::<f64>() / n as f64;
    (values.map(|v| (v - first - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Linear ramp from 1 at `p <= lo` to `end` at `p >= hi`.
fn ramp(p: f64, lo: f64, hi: f64, end: f64) -> f64 {
    let s = ((p - lo) / (hi - lo)).clamp(0.0, 1.0);
    (1.0 - s) + s * end
}

/// Approximate yaw from the left/right width asymmetry around the center.
pub fn asymmetry_yaw(lms: &LandmarkSet) -> f64 {
    let Ok(c) = landmark_center(lms) else {
        return 0.0;
    };
    let left = lms.points.iter().map(|p| c.x - p.x).fold(0.0, f64::max);
    let right = lms.points.iter().map(|p| p.x - c.x).fold(0.0, f64::max);
    if left + right <= 0.0 {
        return 0.0;
    }
    ((right - left) / (right + left)).clamp(-1.0, 1.0).asin()
}

impl SchedulerState {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            omega: VecDeque::with_capacity(config.window),
            centers: VecDeque::with_capacity(config.window),
            scales: VecDeque::with_capacity(config.window),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Pushes this frame's observations and derives its weights.
    ///
    /// Landmark buffers only advance on frames with a face.
    pub fn update_and_schedule(
        &mut self,
        omega_mag: f64,
        lms: Option<&LandmarkSet>,
        base: &ObjectiveWeights,
    ) -> ScheduledWeights {
        let cfg = self.config;
        push_bounded(&mut self.omega, omega_mag.abs(), cfg.window);
        if let Some(l) = lms {
            if let Ok(c) = landmark_center(l) {
                push_bounded(&mut self.centers, c, cfg.window);
                push_bounded(&mut self.scales, l.scale(), cfg.window);
            }
        }

        let mean_omega = self.omega.iter().sum::<f64>() / self.omega.len() as f64;
        let gyro = (mean_omega / cfg.omega_ref).clamp(cfg.m_min, 1.0);

        let pose = lms
            .map(|l| match l.pose_hint {
                Some(h) => h.yaw.abs().max(h.pitch.abs()),
                None => asymmetry_yaw(l).abs(),
            })
            .unwrap_or(0.0);
        let pose_fitting = ramp(pose, cfg.pose_ref, cfg.pose_full, cfg.pose_falloff_min);
        let pose_smoothness = ramp(pose, cfg.pose_ref, cfg.pose_full, cfg.pose_boost_max);

        let center_std = {
            let sx = std_dev(self.centers.iter().map(|c| c.x));
            let sy = std_dev(self.centers.iter().map(|c| c.y));
            (sx * sx + sy * sy).sqrt()
        };
        let scale_std = std_dev(self.scales.iter().copied());
        let v = center_std / cfg.center_ref + scale_std / cfg.scale_ref;
        let landmark = (1.0 / (1.0 + v)).clamp(cfg.v_min, 1.0);

        let mut w = *base;
        w.w_f *= gyro * pose_fitting * landmark;
        w.w_r_c0 *= pose_smoothness;
        w.w_r_c1 *= pose_smoothness;
        w.w_t_c0 *= pose_smoothness;
        w.w_t_c1 *= pose_smoothness;
        ScheduledWeights {
            weights: w,
            multipliers: Multipliers {
                gyro,
                pose_fitting,
                pose_smoothness,
                landmark,
            },
        }
    }
}
