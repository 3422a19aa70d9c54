//! Interpolation primitives: trigonometric interpolation of periodic samples
//! and monotone cubic Hermite interpolation with bisection inversion.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Trigonometric interpolant of `n` equispaced samples of a `period`-periodic
/// real function.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    period: f64,
    /// `coeffs[k]` multiplies `exp(i k w x)` for `k = 0..=kmax`; negative
    /// modes are the conjugates.
    coeffs: Vec<Complex64>,
    /// Real Nyquist term `nyq * cos(n/2 * w x)` for even `n`.
    nyquist: Option<(f64, f64)>,
}

impl TrigInterpolant {
    pub fn from_samples(samples: &[f64], period: f64) -> Self {
        let n = samples.len();
        assert!(n >= 1, "need at least one sample");
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        let kmax = (n - 1) / 2;
        let coeffs: Vec<Complex64> = buf[..=kmax].iter().map(|c| c * scale).collect();
        let nyquist = if n % 2 == 0 && n > 1 {
            Some((buf[n / 2].re * scale, (n / 2) as f64))
        } else {
            None
        };
        Self {
            period,
            coeffs,
            nyquist,
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Fourier coefficient of `exp(i k w x)`, `|k| <= kmax`.
    pub fn coeff(&self, k: i64) -> Complex64 {
        let idx = k.unsigned_abs() as usize;
        if idx >= self.coeffs.len() {
            return Complex64::new(0.0, 0.0);
        }
        if k >= 0 {
            self.coeffs[idx]
        } else {
            self.coeffs[idx].conj()
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn kmax(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Value and first three derivatives at `x`.
    pub fn eval_derivs(&self, x: f64) -> [f64; 4] {
        let w = 2.0 * std::f64::consts::PI / self.period;
        let mut out = [self.coeffs[0].re, 0.0, 0.0, 0.0];
        let step = Complex64::new((w * x).cos(), (w * x).sin());
        let mut rot = Complex64::new(1.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate().skip(1) {
            rot *= step;
            let z = c * rot;
            let kw = k as f64 * w;
            // 2 Re(c e^{ikwx}) and its derivatives
            out[0] += 2.0 * z.re;
            out[1] -= 2.0 * kw * z.im;
            out[2] -= 2.0 * kw * kw * z.re;
            out[3] += 2.0 * kw * kw * kw * z.im;
        }
        if let Some((a, m)) = self.nyquist {
            let mw = m * w;
            let (s, c) = (mw * x).sin_cos();
            out[0] += a * c;
            out[1] -= a * mw * s;
            out[2] -= a * mw * mw * c;
            out[3] += a * mw * mw * mw * s;
        }
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_derivs(x)[0]
    }

    /// Antiderivative of the zero-mean part, i.e. `int (f - mean)`, up to an
    /// additive constant.
    pub fn antiderivative_zero_mean(&self, x: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI / self.period;
        let step = Complex64::new((w * x).cos(), (w * x).sin());
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1) {
            rot *= step;
            // 2 Re(c e^{ikwx} / (i k w)) = 2 Im(c e^{ikwx}) / (k w)
            acc += 2.0 * (c * rot).im / (k as f64 * w);
        }
        if let Some((a, m)) = self.nyquist {
            acc += a * (m * w * x).sin() / (m * w);
        }
        acc
    }
}

/// Piecewise cubic Hermite interpolant of increasing data with the
/// Fritsch–Carlson slope limiter applied to the supplied node slopes.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` and `ys` strictly increasing; `slopes` the derivative at each node
    /// (must be positive).
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || slopes.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "monotone cubic needs matching arrays of length >= 2 (got {}, {}, {})",
                n,
                ys.len(),
                slopes.len()
            )));
        }
        for i in 0..n - 1 {
            if !(xs[i + 1] > xs[i]) || !(ys[i + 1] > ys[i]) {
                return Err(Error::Inversion(format!(
                    "data not strictly increasing at node {i}"
                )));
            }
        }
        let mut ms = slopes;
        for i in 0..n - 1 {
            let delta = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
            let a = ms[i] / delta;
            let b = ms[i + 1] / delta;
            if a < 0.0 {
                ms[i] = 0.0;
            }
            if b < 0.0 {
                ms[i + 1] = 0.0;
            }
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                ms[i] = tau * a * delta;
                ms[i + 1] = tau * b * delta;
            }
        }
        Ok(Self { xs, ys, ms })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    fn eval_in(&self, i: usize, x: f64) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[i] + h10 * h * self.ms[i] + h01 * self.ys[i + 1] + h11 * h * self.ms[i + 1]
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.segment(x), x)
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    /// Solves `eval(x) = y` by bisection to absolute tolerance `tol` in `x`.
    /// `y` must lie in the data range.
    pub fn inverse(&self, y: f64, tol: f64) -> Result<f64> {
        let n = self.ys.len();
        if !(y >= self.ys[0] && y <= self.ys[n - 1]) {
            return Err(Error::Inversion(format!(
                "value {y} outside [{}, {}]",
                self.ys[0],
                self.ys[n - 1]
            )));
        }
        let i = match self.ys.partition_point(|&v| v <= y) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (mut lo, mut hi) = (self.xs[i], self.xs[i + 1]);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.eval_in(i, mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if mid == lo && mid == hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trig_interpolant_is_exact_on_trig_polynomials() {
        let n = 32;
        let f = |x: f64| 0.3 + (2.0 * x).cos() - 0.5 * (5.0 * x).sin();
        let samples: Vec<f64> = (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).collect();
        let ti = TrigInterpolant::from_samples(&samples, 2.0 * PI);
        for &x in &[0.1, 1.3, 4.0, 6.0] {
            let d = ti.eval_derivs(x);
            assert!((d[0] - f(x)).abs() < 1e-13);
            let fp = -2.0 * (2.0 * x).sin() - 2.5 * (5.0 * x).cos();
            assert!((d[1] - fp).abs() < 1e-12);
            let fpp = -4.0 * (2.0 * x).cos() + 12.5 * (5.0 * x).sin();
            assert!((d[2] - fpp).abs() < 1e-11);
        }
        assert!((ti.mean() - 0.3).abs() < 1e-15);
        // antiderivative of zero-mean part
        let big_f = |x: f64| 0.5 * (2.0 * x).sin() + 0.1 * (5.0 * x).cos();
        let x = 2.2;
        let got = ti.antiderivative_zero_mean(x) - ti.antiderivative_zero_mean(0.0);
        assert!((got - (big_f(x) - big_f(0.0))).abs() < 1e-13);
    }

    #[test]
    fn monotone_cubic_inverse_roundtrip() {
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + 0.2 * x.sin()).collect();
        let ms: Vec<f64> = xs.iter().map(|x| 1.0 + 0.2 * x.cos()).collect();
        let mc = MonotoneCubic::new(xs, ys, ms).unwrap();
        for &x in &[0.0, 0.05, 0.77, 1.999, 2.0] {
            let y = mc.eval(x);
            let back = mc.inverse(y, 1e-13).unwrap();
            assert!((back - x).abs() < 1e-12, "{x} {back}");
            assert!((y - (x + 0.2 * x.sin())).abs() < 1e-6);
        }
        assert!(mc.inverse(10.0, 1e-12).is_err());
    }

    #[test]
    fn monotone_cubic_rejects_decreasing_data() {
        let r = MonotoneCubic::new(vec![0.0, 1.0], vec![1.0, 0.5], vec![1.0, 1.0]);
        assert!(r.is_err());
    }
}
