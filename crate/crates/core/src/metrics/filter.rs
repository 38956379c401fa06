use crate::{Error, Result};

/// Second-order Butterworth low-pass section, bilinear transform with
/// frequency prewarping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Butterworth2 {
    pub b: [f64; 3],
    /// Feedback coefficients `a1, a2` (with `a0 = 1`).
    pub a: [f64; 2],
}

pub const DEFAULT_CUTOFF_HZ: f64 = 1.5;

impl Butterworth2 {
    pub fn new(cutoff_hz: f64, sample_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0) || !(sample_hz > 0.0) {
            return Err(Error::Config(format!("filter frequencies must be positive (cutoff {cutoff_hz}, rate {sample_hz})")));
        }
        if cutoff_hz >= sample_hz / 2.0 {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz is at or above the Nyquist frequency {} Hz",
                sample_hz / 2.0
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Self { b: [b0, 2.0 * b0, b0], a: [2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm] })
    }

    /// Causal filtering; the state starts at rest on `x[0]`, so a constant
    /// input passes through unchanged from the first sample.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else { return Vec::new() };
        let (mut x1, mut x2, mut y1, mut y2) = (x0, x0, x0, x0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = v;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Remove jumps larger than π between consecutive angles.
pub fn unwrap_angles(a: &[f64]) -> Vec<f64> {
    use std::f64::consts::TAU;
    let mut out = Vec::with_capacity(a.len());
    let mut offset = 0.0;
    for (i, &v) in a.iter().enumerate() {
        if i > 0 {
            let d = v - a[i - 1];
            offset -= TAU * (d / TAU).round();
        }
        out.push(v + offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn dc_gain_is_one_and_constant_passes() {
        let f = Butterworth2::new(1.5, 30.0).unwrap();
        assert!(((f.b.iter().sum::<f64>()) / (1.0 + f.a[0] + f.a[1]) - 1.0).abs() < 1e-12);
        let y = f.apply(&[0.37; 200]);
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn step_response_settles_without_large_overshoot() {
        let f = Butterworth2::new(1.5, 30.0).unwrap();
        let mut x = vec![0.0; 10];
        x.extend(std::iter::repeat_n(1.0, 300));
        let y = f.apply(&x);
        let peak = y.iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak > 1.0 && peak < 1.05, "peak {peak}");
        assert!((y.last().unwrap() - 1.0).abs() < 1e-6);
        assert!(y[..10].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_noise_is_attenuated() {
        let f = Butterworth2::new(1.0, 30.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = f.apply(&x);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64
        };
        let ratio = var(&y[100..]) / var(&x[100..]);
        assert!(ratio < 0.15, "variance ratio {ratio}");
    }

    #[test]
    fn filter_is_linear() {
        let f = Butterworth2::new(1.5, 30.0).unwrap();
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.3).sin()).collect();
        let z: Vec<f64> = (0..300).map(|i| ((i * 7 % 13) as f64).sqrt()).collect();
        let mix: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let (fx, fz, fm) = (f.apply(&x), f.apply(&z), f.apply(&mix));
        for i in 0..300 {
            assert!((fm[i] - (2.5 * fx[i] - 0.75 * fz[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn nyquist_and_nonpositive_cutoffs_rejected() {
        assert!(Butterworth2::new(15.0, 30.0).is_err());
        assert!(Butterworth2::new(20.0, 30.0).is_err());
        assert!(Butterworth2::new(0.0, 30.0).is_err());
        assert!(Butterworth2::new(14.9, 30.0).is_ok());
    }

    #[test]
    fn unwrap_restores_continuity() {
        use std::f64::consts::PI;
        let raw: Vec<f64> = (0..50).map(|i| crate::kinematics::wrap_angle(i as f64 * 0.3)).collect();
        let u = unwrap_angles(&raw);
        for (i, v) in u.iter().enumerate() {
            assert!((v - i as f64 * 0.3).abs() < 1e-12);
        }
        assert!((unwrap_angles(&[PI - 0.1, -PI + 0.1])[1] - (PI + 0.1)).abs() < 1e-12);
    }
}
