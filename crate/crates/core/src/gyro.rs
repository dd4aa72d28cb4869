//! Gyroscope integration into a per-timestamp rotation timeline.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitQuaternion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroSample {
    /// Seconds, strictly increasing within a trace.
    pub t: f64,
    /// Angular velocity in rad/s, device axes.
    pub omega: [f64; 3],
}

impl GyroSample {
    pub const fn new(t: f64, omega: [f64; 3]) -> Self {
        Self { t, omega }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationTimeline {
    entries: Vec<(f64, UnitQuaternion)>,
}

impl RotationTimeline {
    pub fn entries(&self) -> &[(f64, UnitQuaternion)] {
        &self.entries
    }

    pub fn start(&self) -> f64 {
        self.entries[0].0
    }

    pub fn end(&self) -> f64 {
        self.entries[self.entries.len() - 1].0
    }

    pub fn last_rotation(&self) -> UnitQuaternion {
        self.entries[self.entries.len() - 1].1
    }

    /// Slerp between the bracketing entries.
    pub fn rotation_at(&self, t: f64) -> Result<UnitQuaternion> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let i = self.entries.partition_point(|(ti, _)| *ti <= t);
        // i >= 1 since t >= start
        let (t0, q0) = self.entries[i - 1];
        if t0 == t || i == self.entries.len() {
            return Ok(q0);
        }
        let (t1, q1) = self.entries[i];
        Ok(q0.slerp(&q1, (t - t0) / (t1 - t0)))
    }
}

pub fn validate_samples(samples: &[GyroSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidTrace("gyro trace has no samples".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if !s.t.is_finite() || s.omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidTrace(format!("non-finite gyro sample {i}")));
        }
        if i > 0 && s.t <= samples[i - 1].t {
            return Err(Error::InvalidTrace(format!(
                "gyro timestamps not strictly increasing at sample {i} ({} after {})",
                s.t,
                samples[i - 1].t
            )));
        }
    }
    Ok(())
}

/// Integrates angular velocity starting from identity at the first sample.
///
/// Each step right-multiplies the exact exponential of the midpoint angular
/// velocity times the step length.
pub fn integrate(samples: &[GyroSample]) -> Result<RotationTimeline> {
    integrate_from(UnitQuaternion::identity(), samples)
}

pub fn integrate_from(initial: UnitQuaternion, samples: &[GyroSample]) -> Result<RotationTimeline> {
    validate_samples(samples)?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut q = initial;
    entries.push((samples[0].t, q));
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        let mid = Vector3::new(
            0.5 * (a.omega[0] + b.omega[0]),
            0.5 * (a.omega[1] + b.omega[1]),
            0.5 * (a.omega[2] + b.omega[2]),
        );
        q = q.compose(&UnitQuaternion::exp(&(mid * dt)));
        entries.push((b.t, q));
    }
    Ok(RotationTimeline { entries })
}

/// Expresses device-axis angular velocities in camera axes.
pub fn align_samples(samples: &[GyroSample], alignment: &UnitQuaternion) -> Vec<GyroSample> {
    let r = alignment.to_rotation_matrix();
    samples
        .iter()
        .map(|s| {
            let w = r * Vector3::from(s.omega);
            GyroSample::new(s.t, [w.x, w.y, w.z])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn omega_profile(t: f64) -> [f64; 3] {
        [
            0.8 * (2.0 * PI * 1.3 * t).sin() + 0.2,
            -0.5 * (2.0 * PI * 0.7 * t + 0.4).cos(),
            0.3 * (2.0 * PI * 2.1 * t).sin() * (2.0 * PI * 0.5 * t).cos(),
        ]
    }

    fn sampled(rate: f64, duration: f64) -> Vec<GyroSample> {
        let n = (duration * rate).round() as usize;
        (0..=n)
            .map(|i| {
                let t = i as f64 / rate;
                GyroSample::new(t, omega_profile(t))
            })
            .collect()
    }

    #[test]
    fn zero_omega_stays_identity() {
        let s: Vec<_> = (0..50)
            .map(|i| GyroSample::new(i as f64 * 0.005, [0.0; 3]))
            .collect();
        let tl = integrate(&s).unwrap();
        assert!(tl
            .entries()
            .iter()
            .all(|(_, q)| *q == UnitQuaternion::identity()));
    }

    #[test]
    fn constant_rate_half_turn() {
        let s: Vec<_> = (0..=200)
            .map(|i| GyroSample::new(i as f64 / 200.0, [0.0, 0.0, PI]))
            .collect();
        let q = integrate(&s).unwrap().last_rotation();
        let expected = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], PI).unwrap();
        assert!(q.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn matches_fine_step_oracle() {
        // Oracle: 10 kHz fine-step exponential integration of the piecewise-linear
        // angular velocity defined by the 200 Hz samples.
        let samples = sampled(200.0, 2.0);
        let sub = 50;
        let mut oracle = UnitQuaternion::identity();
        for pair in samples.windows(2) {
            let dt = (pair[1].t - pair[0].t) / sub as f64;
            for j in 0..sub {
                let s = (j as f64 + 0.5) / sub as f64;
                let w = Vector3::from(pair[0].omega) * (1.0 - s) + Vector3::from(pair[1].omega) * s;
                oracle = oracle.compose(&UnitQuaternion::exp(&(w * dt)));
            }
        }
        let q = integrate(&samples).unwrap().last_rotation();
        assert!(q.angle_to(&oracle) < 1e-5, "error {}", q.angle_to(&oracle));
    }

    #[test]
    fn rejects_non_monotonic() {
        let s = vec![
            GyroSample::new(0.0, [0.0; 3]),
            GyroSample::new(0.1, [0.0; 3]),
            GyroSample::new(0.1, [0.0; 3]),
        ];
        assert!(matches!(integrate(&s), Err(Error::InvalidTrace(_))));
        assert!(integrate(&[]).is_err());
    }

    #[test]
    fn rotation_at_examples() {
        let s = vec![
            GyroSample::new(0.0, [0.0, 0.0, 0.2]),
            GyroSample::new(1.0, [0.0, 0.0, 0.2]),
            GyroSample::new(2.0, [0.3, 0.0, 0.2]),
        ];
        let tl = integrate(&s).unwrap();
        assert_eq!(tl.rotation_at(1.0).unwrap(), tl.entries()[1].1);
        assert_eq!(tl.rotation_at(2.0).unwrap(), tl.entries()[2].1);
        let mid = tl.rotation_at(0.5).unwrap();
        let expected = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 0.1).unwrap();
        assert!(mid.angle_to(&expected) < 1e-14);

        // slerp closed form on the second segment
        let (q0, q1) = (tl.entries()[1].1, tl.entries()[2].1);
        let s = 0.37;
        let theta = q0.dot(&q1).acos();
        let a = q0.to_array();
        let b = q1.to_array();
        let ka = ((1.0 - s) * theta).sin() / theta.sin();
        let kb = (s * theta).sin() / theta.sin();
        let oracle = UnitQuaternion::from_wxyz(
            ka * a[0] + kb * b[0],
            ka * a[1] + kb * b[1],
            ka * a[2] + kb * b[2],
            ka * a[3] + kb * b[3],
        )
        .unwrap();
        assert!(tl.rotation_at(1.37).unwrap().angle_to(&oracle) < 1e-12);

        assert!(matches!(tl.rotation_at(2.5), Err(Error::OutOfRange { .. })));
        assert!(tl.rotation_at(-0.1).is_err());
    }

    #[test]
    fn reversed_negated_trace_returns_to_identity() {
        let fwd = sampled(200.0, 3.0);
        let end = fwd.last().unwrap().t;
        let rev: Vec<_> = fwd
            .iter()
            .rev()
            .map(|s| GyroSample::new(end - s.t, [-s.omega[0], -s.omega[1], -s.omega[2]]))
            .collect();
        let a = integrate(&fwd).unwrap().last_rotation();
        let b = integrate(&rev).unwrap().last_rotation();
        assert!(a.compose(&b).angle() < 1e-6);
    }

    #[test]
    fn split_integration_composes() {
        let all = sampled(200.0, 3.0);
        let whole = integrate(&all).unwrap().last_rotation();
        for split in [1, 77, 300, 599] {
            let first = integrate(&all[..=split]).unwrap().last_rotation();
            let second = integrate(&all[split..]).unwrap().last_rotation();
            assert!(first.compose(&second).angle_to(&whole) < 1e-8);
        }
    }

    #[test]
    fn long_trace_stays_unit() {
        let n = 1_000_000;
        let s: Vec<_> = (0..n)
            .map(|i| {
                let t = i as f64 / 1000.0;
                GyroSample::new(t, omega_profile(t))
            })
            .collect();
        let tl = integrate(&s).unwrap();
        let worst = tl
            .entries()
            .iter()
            .map(|(_, q)| (q.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9);
    }
}
