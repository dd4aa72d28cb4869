//! Stability diagnostics over completed runs.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraPose, Point2, UnitQuaternion};
use crate::trace::{LandmarkRecord, ResultRecord};
use crate::trajectory::landmark_center;

pub const MIN_SPECTRUM_LEN: usize = 8;
pub const TREMOR_BAND: (f64, f64) = (1.0, 8.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Hz.
    pub frequencies: Vec<f64>,
    pub powers: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    /// Sum of bin powers with `lo <= f <= hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.powers)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p)
            .sum()
    }
}

/// One-sided power spectrum of the mean-removed series.
///
/// Interior bins are doubled so that the powers sum to the energy of the
/// mean-removed series.
pub fn power_spectrum(series: &[f64], frame_rate: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs at least {MIN_SPECTRUM_LEN} samples, got {n}"
        )));
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("frame rate {frame_rate}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample in series".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let bins = n / 2 + 1;
    let powers = (0..bins)
        .map(|k| {
            let p = buf[k].norm_sqr() / n as f64;
            if k == 0 || 2 * k == n {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let frequencies = (0..bins)
        .map(|k| k as f64 * frame_rate / n as f64)
        .collect();
    Ok(Spectrum {
        frequencies,
        powers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSeries {
    pub raw: Vec<Point2>,
    pub stabilized: Vec<Point2>,
}

/// Landmark centers before and after each frame's homography.
///
/// Frames without a face repeat the last available center; leading gaps take
/// the first one.
pub fn head_center_series(
    results: &[ResultRecord],
    landmarks: &[LandmarkRecord],
) -> Result<HeadSeries> {
    if results.len() != landmarks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} result records but {} landmark records",
            results.len(),
            landmarks.len()
        )));
    }
    let mut raw = Vec::with_capacity(results.len());
    let mut stabilized = Vec::with_capacity(results.len());
    let mut last: Option<(Point2, Point2)> = None;
    let mut leading = 0;
    for (r, l) in results.iter().zip(landmarks) {
        if r.frame != l.frame {
            return Err(Error::InvalidArgument(format!(
                "frame index mismatch: result {} vs landmarks {}",
                r.frame, l.frame
            )));
        }
        match &l.landmarks {
            Some(set) => {
                let c = landmark_center(set)?;
                let s = project_point(c, &r.homography)?;
                if last.is_none() {
                    raw.extend(std::iter::repeat_n(c, leading));
                    stabilized.extend(std::iter::repeat_n(s, leading));
                }
                last = Some((c, s));
                raw.push(c);
                stabilized.push(s);
            }
            None => match last {
                Some((c, s)) => {
                    raw.push(c);
                    stabilized.push(s);
                }
                None => leading += 1,
            },
        }
    }
    if last.is_none() && !results.is_empty() {
        return Err(Error::InvalidArgument("no frame contains landmarks".into()));
    }
    Ok(HeadSeries { raw, stabilized })
}

/// Per-frame rotation angle between virtual and real camera.
pub fn deviation_series(
    virtual_rotations: &[UnitQuaternion],
    real: &[UnitQuaternion],
) -> Result<Vec<f64>> {
    if virtual_rotations.len() != real.len() {
        return Err(Error::InvalidArgument(format!(
            "{} virtual rotations but {} real rotations",
            virtual_rotations.len(),
            real.len()
        )));
    }
    Ok(virtual_rotations
        .iter()
        .zip(real)
        .map(|(v, r)| v.angle_to(r))
        .collect())
}

/// Rotation angle and offset distance between consecutive poses.
pub fn first_differences(poses: &[CameraPose]) -> (Vec<f64>, Vec<f64>) {
    poses
        .windows(2)
        .map(|w| {
            let dt = Point2::new(
                w[1].offset.tx - w[0].offset.tx,
                w[1].offset.ty - w[0].offset.ty,
            );
            (w[1].rotation.angle_to(&w[0].rotation), dt.norm())
        })
        .unzip()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub frame_rate: f64,
    pub frames: Vec<u64>,
    pub head: HeadSeries,
    pub spectrum_x: Spectrum,
    pub spectrum_y: Spectrum,
    pub raw_spectrum_x: Spectrum,
    pub raw_spectrum_y: Spectrum,
    /// Stabilized head power in the tremor band, both axes.
    pub band_power: f64,
    pub raw_band_power: f64,
    pub deviation: Vec<f64>,
    pub rotation_diff: Vec<f64>,
    pub offset_diff: Vec<f64>,
    pub fallback_frames: usize,
}

impl StabilityReport {
    pub fn build(
        results: &[ResultRecord],
        landmarks: &[LandmarkRecord],
        frame_rate: f64,
    ) -> Result<Self> {
        let head = head_center_series(results, landmarks)?;
        let xs = |s: &[Point2]| s.iter().map(|p| p.x).collect::<Vec<_>>();
        let ys = |s: &[Point2]| s.iter().map(|p| p.y).collect::<Vec<_>>();
        let spectrum_x = power_spectrum(&xs(&head.stabilized), frame_rate)?;
        let spectrum_y = power_spectrum(&ys(&head.stabilized), frame_rate)?;
        let raw_spectrum_x = power_spectrum(&xs(&head.raw), frame_rate)?;
        let raw_spectrum_y = power_spectrum(&ys(&head.raw), frame_rate)?;
        let (lo, hi) = TREMOR_BAND;
        let band_power = spectrum_x.band_power(lo, hi) + spectrum_y.band_power(lo, hi);
        let raw_band_power = raw_spectrum_x.band_power(lo, hi) + raw_spectrum_y.band_power(lo, hi);

        let virt: Vec<_> = results.iter().map(|r| r.pose.rotation).collect();
        let real: Vec<_> = results.iter().map(|r| r.real_rotation).collect();
        let deviation = deviation_series(&virt, &real)?;
        let poses: Vec<_> = results.iter().map(|r| r.pose).collect();
        let (rotation_diff, offset_diff) = first_differences(&poses);

        Ok(Self {
            frame_rate,
            frames: results.iter().map(|r| r.frame).collect(),
            head,
            spectrum_x,
            spectrum_y,
            raw_spectrum_x,
            raw_spectrum_y,
            band_power,
            raw_band_power,
            deviation,
            rotation_diff,
            offset_diff,
            fallback_frames: results.iter().filter(|r| r.fallback).count(),
        })
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_rotation_diff(&self) -> f64 {
        mean(&self.rotation_diff)
    }

    pub fn mean_offset_diff(&self) -> f64 {
        mean(&self.offset_diff)
    }

    pub fn head_csv(&self) -> String {
        let mut s = String::from("frame,raw_x,raw_y,stabilized_x,stabilized_y\n");
        for ((f, r), st) in self
            .frames
            .iter()
            .zip(&self.head.raw)
            .zip(&self.head.stabilized)
        {
            s.push_str(&format!("{f},{},{},{},{}\n", r.x, r.y, st.x, st.y));
        }
        s
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("frequency_hz,power_x,power_y,raw_power_x,raw_power_y\n");
        for i in 0..self.spectrum_x.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.spectrum_x.frequencies[i],
                self.spectrum_x.powers[i],
                self.spectrum_y.powers[i],
                self.raw_spectrum_x.powers[i],
                self.raw_spectrum_y.powers[i]
            ));
        }
        s
    }

    pub fn deviation_csv(&self) -> String {
        let mut s = String::from("frame,deviation_rad\n");
        for (f, d) in self.frames.iter().zip(&self.deviation) {
            s.push_str(&format!("{f},{d}\n"));
        }
        s
    }

    pub fn smoothness_csv(&self) -> String {
        let mut s = String::from("frame,rotation_diff_rad,offset_diff\n");
        for ((f, r), o) in self
            .frames
            .iter()
            .skip(1)
            .zip(&self.rotation_diff)
            .zip(&self.offset_diff)
        {
            s.push_str(&format!("{f},{r},{o}\n"));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "metric,value\nframes,{}\nband_power,{}\nraw_band_power,{}\nmax_deviation_rad,{}\n\
             mean_rotation_diff_rad,{}\nmean_offset_diff,{}\nfallback_frames,{}\n",
            self.frames.len(),
            self.band_power,
            self.raw_band_power,
            self.max_deviation(),
            self.mean_rotation_diff(),
            self.mean_offset_diff(),
            self.fallback_frames
        )
    }

    /// Writes one CSV table per series into `dir`, creating it if needed.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("head.csv"), self.head_csv())?;
        fs::write(dir.join("spectrum.csv"), self.spectrum_csv())?;
        fs::write(dir.join("deviation.csv"), self.deviation_csv())?;
        fs::write(dir.join("smoothness.csv"), self.smoothness_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Homography, PrincipalOffset};
    use crate::trajectory::LandmarkSet;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * j % n) as f64 / n as f64;
                    re += (v - m) * a.cos();
                    im += (v - m) * a.sin();
                }
                let p = (re * re + im * im) / n as f64;
                if k == 0 || 2 * k == n {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect()
    }

    #[test]
    fn constant_series_has_no_power() {
        let s = power_spectrum(&[3.25; 64], 30.0).unwrap();
        assert_eq!(s.len(), 33);
        assert!(s.powers.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn sinusoid_peaks_at_its_frequency() {
        let x: Vec<f64> = (0..300)
            .map(|i| (2.0 * PI * 4.0 * i as f64 / 30.0).sin())
            .collect();
        let s = power_spectrum(&x, 30.0).unwrap();
        let (k, peak) =
            s.powers
                .iter()
                .enumerate()
                .fold((0, 0.0), |a, (i, p)| if *p > a.1 { (i, *p) } else { a });
        assert!((s.frequencies[k] - 4.0).abs() < 1e-12);
        for (i, p) in s.powers.iter().enumerate() {
            if i != k {
                assert!(peak >= 100.0 * p);
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [8, 9, 31, 64, 300, 301] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = power_spectrum(&x, 30.0).unwrap();
            let o = naive_dft_power(&x);
            let scale = o.iter().cloned().fold(0.0, f64::max);
            for (a, b) in s.powers.iter().zip(&o) {
                assert!((a - b).abs() <= 1e-9 * scale, "n={n} {a} {b}");
            }
        }
    }

    #[test]
    fn rejects_short_series() {
        assert!(power_spectrum(&[0.0; 7], 30.0).is_err());
        assert!(power_spectrum(&[0.0; 8], 0.0).is_err());
    }

    #[test]
    fn band_power_counts_inclusive_bins() {
        let s = Spectrum {
            frequencies: vec![0.0, 1.0, 4.0, 8.0, 9.0],
            powers: vec![10.0, 1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(s.band_power(1.0, 8.0), 6.0);
    }

    proptest! {
        #[test]
        fn parseval(x in prop::collection::vec(-10.0f64..10.0, 8..200)) {
            let s = power_spectrum(&x, 30.0).unwrap();
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let e: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
            prop_assert!(s.powers.iter().all(|p| *p >= 0.0));
            prop_assert!((s.total() - e).abs() <= 1e-6 * e.max(1e-300));
        }

        #[test]
        fn deviation_invariant_under_pre_rotation(
            a in prop::array::uniform3(-1.0f64..1.0),
            b in prop::array::uniform3(-1.0f64..1.0),
            g in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let v = UnitQuaternion::exp(&Vector3::from(a));
            let r = UnitQuaternion::exp(&Vector3::from(b));
            let p = UnitQuaternion::exp(&Vector3::from(g));
            let d0 = deviation_series(&[v], &[r]).unwrap()[0];
            let d1 = deviation_series(&[p.compose(&v)], &[p.compose(&r)]).unwrap()[0];
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn deviation_matches_acos_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = Vec::new();
        let mut r = Vec::new();
        for _ in 0..50 {
            v.push(UnitQuaternion::exp(&Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.3,
            )));
            r.push(UnitQuaternion::exp(&Vector3::new(
                0.1,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )));
        }
        let d = deviation_series(&v, &r).unwrap();
        for ((a, b), got) in v.iter().zip(&r).zip(&d) {
            let dot: f64 = a
                .to_array()
                .iter()
                .zip(b.to_array())
                .map(|(x, y)| x * y)
                .sum();
            let want = (2.0 * dot * dot - 1.0).clamp(-1.0, 1.0).acos();
            assert!((got - want).abs() < 1e-6, "{got} {want}");
        }
    }

    #[test]
    fn deviation_trivial_cases() {
        let q = UnitQuaternion::exp(&Vector3::new(0.2, -0.1, 0.4));
        assert!(deviation_series(&[q; 4], &[q; 4])
            .unwrap()
            .iter()
            .all(|d| *d < 1e-15));
        let y = UnitQuaternion::exp(&Vector3::new(0.0, 0.1, 0.0));
        for d in deviation_series(&[y.compose(&q)], &[q]).unwrap() {
            assert!((d - 0.1).abs() < 1e-12);
        }
        assert!(deviation_series(&[q], &[]).is_err());
    }

    fn record(frame: u64, h: Homography) -> ResultRecord {
        ResultRecord {
            frame,
            t: frame as f64 / 30.0,
            real_rotation: UnitQuaternion::identity(),
            pose: CameraPose::identity(),
            homography: h,
            head: Point2::new(0.5, 0.5),
            protrusion: 0.0,
            iterations: 1,
            accepted: 0,
            fallback: false,
        }
    }

    fn lms(frame: u64, c: Option<Point2>) -> LandmarkRecord {
        LandmarkRecord {
            frame,
            t: frame as f64 / 30.0,
            landmarks: c.map(|c| {
                LandmarkSet::new(vec![
                    Point2::new(c.x - 0.01, c.y),
                    Point2::new(c.x + 0.01, c.y),
                ])
                .unwrap()
            }),
        }
    }

    #[test]
    fn identity_homographies_give_identical_series() {
        let res: Vec<_> = (0..10).map(|f| record(f, Homography::identity())).collect();
        let lm: Vec<_> = (0..10)
            .map(|f| lms(f, Some(Point2::new(0.4 + 0.01 * f as f64, 0.5))))
            .collect();
        let s = head_center_series(&res, &lm).unwrap();
        assert_eq!(s.raw, s.stabilized);
    }

    #[test]
    fn projected_series_matches_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut res = Vec::new();
        let mut lm = Vec::new();
        let mut want = Vec::new();
        for f in 0..20 {
            let m = Matrix3::new(
                1.0 + rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                1.0 + rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                1.0,
            );
            let c = Point2::new(rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
            let v = m * Vector3::new(c.x, c.y, 1.0);
            want.push(Point2::new(v.x / v.z, v.y / v.z));
            res.push(record(f, Homography::new(m).unwrap()));
            lm.push(lms(f, Some(c)));
        }
        let s = head_center_series(&res, &lm).unwrap();
        for (a, b) in s.stabilized.iter().zip(&want) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn gaps_hold_neighbouring_values() {
        let res: Vec<_> = (0..5).map(|f| record(f, Homography::identity())).collect();
        let c = |x| Some(Point2::new(x, 0.5));
        let lm = vec![
            lms(0, None),
            lms(1, c(0.3)),
            lms(2, None),
            lms(3, c(0.6)),
            lms(4, None),
        ];
        let s = head_center_series(&res, &lm).unwrap();
        let xs: Vec<f64> = s.raw.iter().map(|p| p.x).collect();
        assert_eq!(xs.len(), 5);
        for (a, b) in xs.iter().zip([0.3, 0.3, 0.3, 0.6, 0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_indices_are_rejected() {
        let res = vec![
            record(0, Homography::identity()),
            record(1, Homography::identity()),
        ];
        let lm = vec![lms(0, Some(Point2::new(0.5, 0.5))), lms(2, None)];
        assert!(head_center_series(&res, &lm).is_err());
        assert!(head_center_series(&res, &lm[..1]).is_err());
    }

    #[test]
    fn first_differences_of_a_ramp() {
        let poses: Vec<_> = (0..5)
            .map(|i| {
                CameraPose::new(
                    UnitQuaternion::exp(&Vector3::new(0.0, 0.0, 0.01 * i as f64)),
                    PrincipalOffset::new(0.003 * i as f64, 0.004 * i as f64),
                )
            })
            .collect();
        let (r, o) = first_differences(&poses);
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|d| (d - 0.01).abs() < 1e-9));
        assert!(o.iter().all(|d| (d - 0.005).abs() < 1e-12));
    }

    #[test]
    fn report_writes_all_tables() {
        let res: Vec<_> = (0..16).map(|f| record(f, Homography::identity())).collect();
        let lm: Vec<_> = (0..16)
            .map(|f| lms(f, Some(Point2::new(0.5, 0.5))))
            .collect();
        let rep = StabilityReport::build(&res, &lm, 30.0).unwrap();
        assert_eq!(rep.spectrum_x.len(), 9);
        assert_eq!(rep.band_power, 0.0);
        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(dir.path()).unwrap();
        for f in [
            "head.csv",
            "spectrum.csv",
            "deviation.csv",
            "smoothness.csv",
            "summary.csv",
        ] {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.lines().count() >= 2, "{f}");
        }
    }
}
