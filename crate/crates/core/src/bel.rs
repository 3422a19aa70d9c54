//! Transport field, Gaussian mollification, Fourier-inverted Girsanov
//! weights and the remainder of the approximate Bismut–Elworthy–Li formula.
//!
//! Fourier coefficients follow `c_k(A) = (1/2pi) int_0^{2pi} A(y) e^{iky} dy`,
//! so `A(y) = sum_k c_k e^{-iky}`. Only `k >= 0` is stored; `c_{-k}` is the
//! conjugate.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::functional::{Direction, GradientReport, Moments, TestFunctional};
use crate::geometry::{x_grid, PerturbationDirection, QuantileState, TWO_PI};
use crate::interp::{MonotoneCubic, TrigInterpolant};
use crate::montecarlo::{
    effective_direction, fd_samples, gaussian_multipliers, report, run, Problem, RunOutput,
    SimParams, StreamSpec,
};
use crate::noise::{CommonNoise, FourierProfile, NoiseKey, NoisePath};
use crate::sde::{
    eval_series, steps_for, FieldCoeffs, FieldValues, MomentSink, Particles, PathState, Stepper,
    TrigScratch,
};
use crate::stats;

/// Fourier coefficients `c_0..=c_{K_A}` of a real 2pi-periodic field.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportField {
    coeffs: Vec<Complex64>,
    step: usize,
}

impl TransportField {
    pub fn from_coeffs(coeffs: Vec<Complex64>, step: usize) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("coeffs", "need at least the mean"));
        }
        if coeffs[0].im != 0.0 {
            return Err(invalid("coeffs", "c_0 of a real field must be real"));
        }
        Ok(Self { coeffs, step })
    }

    /// Coefficients of grid samples `A(2 pi j / n)`, `K_A = n/2 - 1`.
    pub fn from_grid_values(values: &[f64], step: usize) -> Result<Self> {
        let n = values.len();
        if n < 4 {
            return Err(invalid("N_x", "need at least four grid points"));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        let k_a = n / 2 - 1;
        let mut coeffs: Vec<Complex64> = buf[..=k_a].iter().map(|c| c / n as f64).collect();
        coeffs[0].im = 0.0;
        Ok(Self { coeffs, step })
    }

    /// Change of variables `y = x_s(u)`:
    /// `c_k = (1/2pi) int_0^1 (d_u x)^2 h e^{ik x} du`, trapezoid on the open grid.
    pub fn from_particles(x: &[f64], d1: &[f64], h: &[f64], k_a: usize, step: usize) -> Result<Self> {
        let n = x.len();
        if d1.len() < n || h.len() < n {
            return Err(Error::ShapeMismatch("particle arrays differ in length".into()));
        }
        let w: Vec<f64> = (0..n).map(|j| d1[j] * d1[j] * h[j]).collect();
        let (re, im) = weighted_moments(x, &w, k_a, &mut TrigScratch::new(n));
        let norm = 1.0 / (TWO_PI * n as f64);
        let coeffs = (0..=k_a)
            .map(|k| Complex64::new(re[k] * norm, if k == 0 { 0.0 } else { im[k] * norm }))
            .collect();
        Ok(Self { coeffs, step })
    }

    pub fn k_a(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `c_k` for any integer `k` (zero beyond `K_A`).
    pub fn coeff(&self, k: i64) -> Complex64 {
        let i = k.unsigned_abs() as usize;
        match self.coeffs.get(i) {
            None => Complex64::new(0.0, 0.0),
            Some(c) if k >= 0 => *c,
            Some(c) => c.conj(),
        }
    }

    /// Keeps modes `|k| <= k_max`.
    pub fn truncated(&self, k_max: usize) -> Self {
        Self {
            coeffs: self.coeffs[..=k_max.min(self.k_a())].to_vec(),
            step: self.step,
        }
    }

    /// Real cosine/sine coefficients of `A(y) = a_0 + sum a_k cos ky + b_k sin ky`.
    pub fn real_series(&self) -> (Vec<f64>, Vec<f64>) {
        let a = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 { c.re } else { 2.0 * c.re })
            .collect();
        let b = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 { 0.0 } else { 2.0 * c.im })
            .collect();
        (a, b)
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.eval_many(&[y])[0]
    }

    pub fn eval_many(&self, ys: &[f64]) -> Vec<f64> {
        let (a, b) = self.real_series();
        let mut out = vec![Vec::new()];
        eval_series(ys, &[(&a, &b)], &mut out, &mut TrigScratch::new(ys.len()));
        out.pop().unwrap()
    }

    /// `d/dy A` on the same points.
    pub fn eval_deriv_many(&self, ys: &[f64]) -> Vec<f64> {
        let (a, b) = self.real_series();
        let da: Vec<f64> = (0..a.len()).map(|k| k as f64 * b[k]).collect();
        let db: Vec<f64> = (0..a.len()).map(|k| -(k as f64) * a[k]).collect();
        let mut out = vec![Vec::new()];
        eval_series(ys, &[(&da, &db)], &mut out, &mut TrigScratch::new(ys.len()));
        out.pop().unwrap()
    }

    /// Sup norm on an `n`-point grid.
    pub fn sup_norm(&self, n: usize) -> f64 {
        self.eval_many(&x_grid(n)).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn deriv_sup_norm(&self, n: usize) -> f64 {
        self.eval_deriv_many(&x_grid(n))
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_{|k| <= K_A} |c_k|^2`.
    pub fn energy(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
            .sum()
    }

    /// Energy of the modes `k_max < |k| <= K_A`.
    pub fn tail_energy(&self, k_max: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(k_max + 1)
            .map(|(_, c)| 2.0 * c.norm_sqr())
            .sum()
    }
}

/// Weighted trigonometric sums `sum_j w_j cos(k x_j)`, `sum_j w_j sin(k x_j)`.
fn weighted_moments(x: &[f64], w: &[f64], k: usize, scratch: &mut TrigScratch) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; k + 1];
    let mut im = vec![0.0; k + 1];
    FieldValues::new(x.len()).eval(
        x,
        &FieldCoeffs::new(k.max(1)),
        1,
        scratch,
        Some(MomentSink {
            weights: w,
            re: &mut re,
            im: &mut im,
        }),
    );
    (re, im)
}

/// `A_t = (d_u x_t)(F_t) h(F_t)` sampled on an `n_x`-point grid by inverting
/// `u -> x_t(u)`, then transformed; `K_A = n_x/2 - 1`.
pub fn compute_a(
    path: &PathState,
    h: &PerturbationDirection,
    t_index: usize,
    n_x: usize,
) -> Result<TransportField> {
    if t_index > path.n_steps() {
        return Err(invalid("t_index", "beyond the stored path"));
    }
    if h.n_u() != path.n_u() {
        return Err(Error::ShapeMismatch("direction and path grids differ".into()));
    }
    let inv = PathInverse::new(path.x_open(t_index), &path.d1_at(t_index), h.values())?;
    let vals = x_grid(n_x)
        .iter()
        .map(|&y| inv.field_at(y))
        .collect::<Result<Vec<_>>>()?;
    TransportField::from_grid_values(&vals, t_index)
}

/// Spectral inverse of `u -> x(u)` with the slope and direction interpolated
/// alongside.
pub struct PathInverse {
    x0: f64,
    periodic: TrigInterpolant,
    slope: TrigInterpolant,
    h: TrigInterpolant,
    coarse: MonotoneCubic,
}

impl PathInverse {
    /// `x` on the open grid, `d1` and `h` on the open or closed grid.
    pub fn new(x: &[f64], d1: &[f64], h: &[f64]) -> Result<Self> {
        let n = x.len();
        let u: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let per: Vec<f64> = (0..n).map(|j| x[j] - TWO_PI * u[j]).collect();
        let mut xs = x.to_vec();
        xs.push(x[0] + TWO_PI);
        let mut sl = d1[..n].to_vec();
        sl.push(d1[0]);
        let coarse = MonotoneCubic::new(u, xs, sl)
            .map_err(|e| Error::Inversion(format!("path is not increasing in u: {e}")))?;
        Ok(Self {
            x0: x[0],
            periodic: TrigInterpolant::from_samples(&per, 1.0),
            slope: TrigInterpolant::from_samples(&d1[..n], 1.0),
            h: TrigInterpolant::from_samples(&h[..n], 1.0),
            coarse,
        })
    }

    fn x_of(&self, u: f64) -> (f64, f64) {
        let d = self.periodic.eval_derivs(u);
        (d[0] + TWO_PI * u, d[1] + TWO_PI)
    }

    /// `F(y)` in `[0, 1)` after shifting `y` into `[x(0), x(0) + 2 pi)`.
    pub fn invert(&self, y: f64) -> Result<f64> {
        let y = self.x0 + (y - self.x0).rem_euclid(TWO_PI);
        let mut u = self.coarse.inverse(y, 1e-12)?;
        for _ in 0..8 {
            let (xv, dx) = self.x_of(u);
            let step = (xv - y) / dx;
            u -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        if !u.is_finite() {
            return Err(Error::Inversion(format!("Newton polish diverged at y = {y}")));
        }
        Ok(u)
    }

    /// `A(y) = d_u x(F(y)) h(F(y))`.
    pub fn field_at(&self, y: f64) -> Result<f64> {
        let u = self.invert(y)?;
        Ok(self.slope.eval(u) * self.h.eval(u))
    }
}

/// Gaussian mollifier of width `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    eps: f64,
}

impl MollifierSpec {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("eps", "must be positive"));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn multiplier(&self, k: i64) -> f64 {
        let k = k as f64;
        (-k * k * self.eps * self.eps / 2.0).exp()
    }
}

/// `c_k -> c_k exp(-k^2 eps^2 / 2)`.
pub fn mollify(field: &TransportField, moll: &MollifierSpec) -> TransportField {
    TransportField {
        coeffs: field
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * moll.multiplier(k as i64))
            .collect(),
        step: field.step,
    }
}

/// Circular convolution of grid samples with the wrapped Gaussian of
/// standard deviation `eps`, computed in grid space.
pub fn convolve_wrapped_gaussian(values: &[f64], eps: f64) -> Vec<f64> {
    let n = values.len();
    let dx = TWO_PI / n as f64;
    let kernel: Vec<f64> = (0..n)
        .map(|j| crate::functional::wrapped_gaussian(j as f64 * dx, eps * eps) * dx)
        .collect();
    (0..n)
        .map(|i| {
            let terms: Vec<f64> = (0..n).map(|j| values[(i + n - j) % n] * kernel[j]).collect();
            stats::pairwise_sum(&terms)
        })
        .collect()
}

/// `lambda_k = c_k(A^eps) / f_k` for `k <= K_max`, with the energy of the
/// modes the profile cannot carry.
#[derive(Debug, Clone, PartialEq)]
pub struct Lambda {
    pub values: Vec<Complex64>,
    pub dropped_energy: f64,
}

impl Lambda {
    /// `sum_{|k| <= K_max} f_k e^{-iky} lambda_k`.
    pub fn reconstruct(&self, profile: &FourierProfile, ys: &[f64]) -> Vec<f64> {
        let c: Vec<Complex64> = self
            .values
            .iter()
            .enumerate()
            .map(|(k, l)| l * profile.f(k as i64))
            .collect();
        TransportField { coeffs: c, step: 0 }.eval_many(ys)
    }

    /// `sum_k |lambda_k|^2` over both signs.
    pub fn norm_sqr(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(k, l)| if k == 0 { l.norm_sqr() } else { 2.0 * l.norm_sqr() })
            .sum()
    }
}

pub fn compute_lambda(field_eps: &TransportField, profile: &FourierProfile) -> Result<Lambda> {
    let k = profile.k_max().min(field_eps.k_a());
    let mut values = Vec::with_capacity(k + 1);
    for kk in 0..=k {
        let f = profile.f(kk as i64);
        if f == 0.0 {
            return Err(invalid(
                "profile",
                format!("coefficient f_{kk} is zero, lambda is undefined"),
            ));
        }
        values.push(field_eps.coeffs[kk] / f);
    }
    Ok(Lambda {
        values,
        dropped_energy: field_eps.tail_energy(profile.k_max()),
    })
}

/// Girsanov weight of one stored path.
#[derive(Debug, Clone, PartialEq)]
pub struct BelWeight {
    /// `lambda_s^k` at the left endpoint of every step.
    pub lambda: Vec<Vec<Complex64>>,
    /// `sum_k int Re(conj(lambda) dW)`.
    pub stochastic_integral: f64,
    /// `sum_k int |lambda|^2 ds`.
    pub l2_norm: f64,
    /// Largest dropped-mode energy over the steps.
    pub dropped_energy: f64,
}

/// Weight of a stored path, `A` by the change of variables with `K_A` modes.
pub fn bel_weight(
    path: &PathState,
    noise: &CommonNoise,
    h: &PerturbationDirection,
    profile: &FourierProfile,
    eps: f64,
    k_a: usize,
) -> Result<BelWeight> {
    let moll = MollifierSpec::new(eps)?;
    if noise.n_steps() < path.n_steps() || noise.key() != path.noise_key() {
        return Err(Error::NoiseMismatch("path was not driven by this noise".into()));
    }
    let n = path.n_u();
    let km = noise.k_max();
    let (mut si, mut l2, mut dropped) = (0.0, 0.0, 0.0f64);
    let mut lambda = Vec::with_capacity(path.n_steps());
    for s in 0..path.n_steps() {
        let d1 = path.d1_at(s);
        let field = TransportField::from_particles(path.x_open(s), &d1[..n], h.values(), k_a.max(profile.k_max()), s)?;
        let lam = compute_lambda(&mollify(&field, &moll), profile)?;
        let (re, im) = (noise.re_row(s), noise.im_row(s));
        let mut inc = lam.values[0].re * re[km];
        for k in 1..lam.values.len() {
            let l = lam.values[k];
            inc += l.re * (re[km + k] + re[km - k]) + l.im * (im[km + k] - im[km - k]);
        }
        si += inc;
        l2 += lam.norm_sqr() * path.dt();
        dropped = dropped.max(lam.dropped_energy);
        lambda.push(lam.values);
    }
    Ok(BelWeight {
        lambda,
        stochastic_integral: si,
        l2_norm: l2,
        dropped_energy: dropped,
    })
}

/// `H = (A - A^eps)(x) / d_u x = h - A^eps(x) / d_u x` at the particles, with
/// `A^eps` truncated at `k_trunc` modes.
pub fn remainder_integrand(
    x: &[f64],
    d1: &[f64],
    h: &[f64],
    eps: f64,
    k_trunc: usize,
    scratch: &mut TrigScratch,
) -> Vec<f64> {
    let n = x.len();
    let w: Vec<f64> = (0..n).map(|j| d1[j] * d1[j] * h[j]).collect();
    let (re, im) = weighted_moments(x, &w, k_trunc, scratch);
    let norm = 1.0 / (TWO_PI * n as f64);
    let m = gaussian_multipliers(eps, k_trunc);
    let a: Vec<f64> = (0..=k_trunc)
        .map(|k| re[k] * norm * m[k] * if k == 0 { 1.0 } else { 2.0 })
        .collect();
    let b: Vec<f64> = (0..=k_trunc)
        .map(|k| if k == 0 { 0.0 } else { 2.0 * im[k] * norm * m[k] })
        .collect();
    let mut out = vec![Vec::new()];
    eval_series(x, &[(&a, &b)], &mut out, scratch);
    (0..n).map(|j| h[j] - out[0][j] / d1[j]).collect()
}

/// `K(u) = int_0^t H_s(u) (1/(t-s)) int_s^t d_u x_r(u) dbeta_r ds` on the
/// open grid, with the omitted last step reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct KField {
    pub values: Vec<f64>,
    /// Sup over `u` of the contribution the dropped step `[t - dt, t]` would add.
    pub omitted: f64,
}

impl KField {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn compute_k(
    path: &PathState,
    h: &PerturbationDirection,
    eps: f64,
    k_trunc: usize,
    t_index: usize,
) -> Result<KField> {
    if t_index == 0 {
        return Err(invalid("t_index", "K needs a positive horizon"));
    }
    if t_index > path.n_steps() {
        return Err(invalid("t_index", "beyond the stored path"));
    }
    MollifierSpec::new(eps)?;
    let n = path.n_u();
    let dt = path.dt();
    let t = t_index as f64 * dt;
    let db = path.dbeta();
    let mut scratch = TrigScratch::new(n);
    let hs: Vec<Vec<f64>> = (0..t_index)
        .map(|s| {
            let d1 = path.d1_at(s);
            remainder_integrand(path.x_open(s), &d1[..n], &h.values()[..n], eps, k_trunc, &mut scratch)
        })
        .collect();
    // R_s(u) = sum_{r >= s} d_u x_r(u) dbeta_r, built backwards
    let mut r = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut omitted = vec![0.0; n];
    for s in (0..t_index).rev() {
        let d1 = path.d1_at(s);
        for j in 0..n {
            r[j] += d1[j] * db[s];
        }
        let w = dt / (t - s as f64 * dt);
        let target = if s + 1 == t_index { &mut omitted } else { &mut k };
        for j in 0..n {
            target[j] += hs[s][j] * r[j] * w;
        }
    }
    Ok(KField {
        values: k,
        omitted: omitted.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

/// Summary of one `(t, eps)` cell of a BEL run.
#[derive(Debug, Clone, PartialEq)]
pub struct BelSummary {
    pub t: f64,
    pub eps: f64,
    pub i1: f64,
    pub i1_se: f64,
    pub i2: f64,
    pub i2_se: f64,
    pub total: f64,
    pub total_se: f64,
    pub direct: f64,
    pub direct_se: f64,
    /// Standard error of the per-W difference `I1 + I2 - direct`.
    pub split_se: f64,
    pub weight_mean: f64,
    pub weight_se: f64,
    pub weight_l2: f64,
    pub dropped_energy: f64,
    pub dropped_rel: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl BelSummary {
    pub const CSV_HEADER: &'static str =
        "t,eps,I1,I1_se,I2,I2_se,total,direct,direct_se,weight_l2,dropped_energy,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{}",
            self.t,
            self.eps,
            self.i1,
            self.i1_se,
            self.i2,
            self.i2_se,
            self.total,
            self.direct,
            self.direct_se,
            self.weight_l2,
            self.dropped_energy,
            self.seed
        )
    }

    pub fn write_csv<W: Write>(rows: &[BelSummary], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Inputs of a BEL run.
#[derive(Debug, Clone, Copy)]
pub struct BelSetup<'a> {
    pub g: &'a QuantileState,
    pub h: &'a PerturbationDirection,
    pub phi: &'a TestFunctional,
    pub profile: &'a FourierProfile,
    pub direction: Direction,
    /// Highest mode of the dropped-energy diagnostic (`N_x / 2 - 1`).
    pub k_a: usize,
}

/// Streams one simulation serving every `(t, eps)` pair.
pub fn bel_run(setup: &BelSetup<'_>, t_grid: &[f64], eps: &[f64], params: &SimParams) -> Result<RunOutput> {
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(invalid("t", "must be positive"));
    }
    if eps.is_empty() {
        return Err(invalid("eps", "need at least one width"));
    }
    let h_eff = effective_direction(setup.g, setup.h, setup.direction)?;
    let snapshots = t_grid
        .iter()
        .map(|&t| steps_for(t, params.dt))
        .collect::<Result<Vec<_>>>()?;
    let prob = Problem {
        g: setup.g,
        h: &h_eff,
        phi: setup.phi,
        profile: setup.profile,
    };
    let streams = StreamSpec {
        snapshots,
        eps: eps.to_vec(),
        k_a: setup.k_a,
    };
    run(&prob, params, &streams)
}

/// Reduces snapshot `s` and width index `e` of a run.
pub fn summarize(out: &RunOutput, s: usize, e: usize) -> BelSummary {
    let (i1, i1_se) = out.stat(s, |r| r.i1[e]);
    let (i2, i2_se) = out.stat(s, |r| r.i2[e]);
    let (total, total_se) = out.stat(s, |r| r.i1[e] + r.i2[e]);
    let (direct, direct_se) = out.stat(s, |r| r.direct_own);
    let (_, split_se) = out.stat(s, |r| r.i1[e] + r.i2[e] - r.direct_own);
    let (weight_mean, weight_se) = out.stat(s, |r| r.weight[e]);
    let (weight_l2, _) = out.stat(s, |r| r.l2[e]);
    let dropped = out.max_over(s, |r| r.dropped[e]);
    let dropped_rel = out.max_over(s, |r| r.dropped_rel[e]);
    let mut warnings = Vec::new();
    if weight_l2 > 0.0 && dropped > 0.01 * weight_l2 {
        warnings.push(format!(
            "dropped-mode energy {dropped:.3e} exceeds 1% of the weight norm {weight_l2:.3e}"
        ));
    }
    BelSummary {
        t: out.time(s),
        eps: out.streams.eps[e],
        i1,
        i1_se,
        i2,
        i2_se,
        total,
        total_se,
        direct,
        direct_se,
        split_se,
        weight_mean,
        weight_se,
        weight_l2,
        dropped_energy: dropped,
        dropped_rel,
        seed: out.params.seed,
        warnings,
    }
}

fn bel_report(name: &str, setup: &BelSetup<'_>, sm: &BelSummary, value: f64, se: f64, params: &SimParams) -> GradientReport {
    let mut r = report(name, setup.direction, sm.t, Some(sm.eps), None, value, se, params);
    r.warnings = sm.warnings.clone();
    r
}

/// `I1 + I2` with shared noise, plus the summary carrying both components.
pub fn estimate_gradient_bel(
    setup: &BelSetup<'_>,
    t: f64,
    eps: f64,
    params: &SimParams,
) -> Result<(GradientReport, BelSummary)> {
    let out = bel_run(setup, &[t], &[eps], params)?;
    let sm = summarize(&out, 0, 0);
    Ok((bel_report("bel", setup, &sm, sm.total, sm.total_se, params), sm))
}

/// `(1/t) E[phi(mu_t) sum_k int Re(conj(lambda) dW)]`.
pub fn estimate_i1(setup: &BelSetup<'_>, t: f64, eps: f64, params: &SimParams) -> Result<GradientReport> {
    let out = bel_run(setup, &[t], &[eps], params)?;
    let sm = summarize(&out, 0, 0);
    Ok(bel_report("I1", setup, &sm, sm.i1, sm.i1_se, params))
}

/// `(1/t) E int int d_mu phi(x_t) (d_u x_t / d_u x_s) (A_s - A_s^eps)(x_s) ds du`.
pub fn estimate_i2(setup: &BelSetup<'_>, t: f64, eps: f64, params: &SimParams) -> Result<GradientReport> {
    let out = bel_run(setup, &[t], &[eps], params)?;
    let sm = summarize(&out, 0, 0);
    Ok(bel_report("I2", setup, &sm, sm.i2, sm.i2_se, params))
}

/// One row per width at a fixed horizon.
pub fn eps_sweep(setup: &BelSetup<'_>, t: f64, eps: &[f64], params: &SimParams) -> Result<Vec<BelSummary>> {
    let out = bel_run(setup, &[t], eps, params)?;
    Ok((0..eps.len()).map(|e| summarize(&out, 0, e)).collect())
}

/// Width as a function of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsRule {
    Constant(f64),
    /// `eps = c * t^p`.
    Power { c: f64, p: f64 },
}

impl EpsRule {
    pub fn eps(&self, t: f64) -> f64 {
        match *self {
            EpsRule::Constant(e) => e,
            EpsRule::Power { c, p } => c * t.powf(p),
        }
    }
}

/// One horizon of a rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub bel: BelSummary,
    pub fd: f64,
    pub fd_se: f64,
    /// `t^{2 + theta} |I1 + I2|`.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub theta: f64,
    pub rho: f64,
    pub rows: Vec<RateRow>,
    /// Largest scaled gradient over the grid.
    pub c_empirical: f64,
}

impl RateTable {
    pub const CSV_HEADER: &'static str = "t,eps,I1,I1_se,I2,I2_se,total,direct,direct_se,weight_l2,dropped_energy,seed,total_se,fd,fd_se,scaled";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.bel.csv_row(),
                r.bel.total_se,
                r.fd,
                r.fd_se,
                r.scaled
            )?;
        }
        Ok(())
    }

    /// True when the scaled gradient grows at every step towards small `t`.
    pub fn monotone_blow_up(&self) -> bool {
        self.rows.len() > 1 && self.rows.windows(2).all(|w| w[0].scaled > w[1].scaled)
    }
}

/// BEL estimates and central differences over a grid of horizons. One
/// simulation per distinct width serves every horizon.
pub fn rate_sweep(
    setup: &BelSetup<'_>,
    t_grid: &[f64],
    rule: EpsRule,
    theta: f64,
    rho: f64,
    params: &SimParams,
) -> Result<RateTable> {
    let mut ts = t_grid.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if ts.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("t_grid", "horizons must be distinct"));
    }
    let widths: Vec<f64> = ts.iter().map(|&t| rule.eps(t)).collect();
    let mut distinct = widths.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let out = bel_run(setup, &ts, &distinct, params)?;
    let snaps = ts
        .iter()
        .map(|&t| steps_for(t, params.dt))
        .collect::<Result<Vec<_>>>()?;
    let fd = fd_samples(setup.g, setup.h, setup.phi, setup.profile, &snaps, rho, params, setup.direction)?;
    let mut rows = Vec::with_capacity(ts.len());
    for (s, &t) in ts.iter().enumerate() {
        let e = distinct.iter().position(|&d| d == widths[s]).unwrap();
        let bel = summarize(&out, s, e);
        let col: Vec<f64> = fd.iter().map(|r| r[s]).collect();
        let (fdv, fd_se) = stats::mean_se(&col);
        let scaled = t.powf(2.0 + theta) * bel.total.abs();
        rows.push(RateRow {
            bel,
            fd: fdv,
            fd_se,
            scaled,
        });
    }
    let c_empirical = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    Ok(RateTable {
        theta,
        rho,
        rows,
        c_empirical,
    })
}

/// Both sides of the idiosyncratic integration by parts at one `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct IbpReport {
    pub s: f64,
    pub t: f64,
    pub u_index: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// Standard error of the per-W difference.
    pub combined_se: f64,
    pub samples: usize,
}

impl IbpReport {
    pub const CSV_HEADER: &'static str = "s,t,u_index,lhs,lhs_se,rhs,rhs_se,combined_se,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            self.s, self.t, self.u_index, self.lhs, self.lhs_se, self.rhs, self.rhs_se, self.combined_se, self.samples
        )
    }
}

struct IbpReplica {
    x_t: Vec<f64>,
    d1_t: f64,
    h_s: f64,
    weight: f64,
}

/// `E[d_u {[dphi/dm](mu_t)(x_t(.))}(u) H_s(u)]` against
/// `E[[dphi/dm](mu_t)(x_t(u)) H_s(u) (1/(t-s)) int_s^t d_u x_r(u) dbeta_r]`.
///
/// `mu_t` is the leave-one-out measure of the other beta-replicas, so it does
/// not depend on the beta path being integrated by parts; `M_beta >= 2`.
#[allow(clippy::too_many_arguments)]
pub fn check_idiosyncratic_ibp(
    g: &QuantileState,
    h: &PerturbationDirection,
    phi: &TestFunctional,
    profile: &FourierProfile,
    s: f64,
    t: f64,
    u_index: usize,
    eps: f64,
    params: &SimParams,
) -> Result<IbpReport> {
    if !(0.0 <= s && s < t) {
        return Err(invalid("s", "need 0 <= s < t"));
    }
    if params.m_beta < 2 {
        return Err(invalid("M_beta", "the leave-one-out measure needs at least two beta-replicas"));
    }
    if u_index >= g.n_u() {
        return Err(invalid("u_index", "outside the open grid"));
    }
    MollifierSpec::new(eps)?;
    let ns = steps_for(s, params.dt)?;
    let nt = steps_for(t, params.dt)?;
    let per_w = (0..params.m_w)
        .into_par_iter()
        .map(|w| -> Result<(f64, f64)> {
            let common = Arc::new(CommonNoise::sample(
                NoiseKey::new(params.seed, w as u64),
                profile.k_max(),
                nt,
                params.dt,
            )?);
            let reps = (0..params.m_beta)
                .map(|j| ibp_replica(g, h, profile, &common.with_beta(j as u64), ns, nt, u_index, eps))
                .collect::<Result<Vec<_>>>()?;
            let own: Vec<Moments> = reps.iter().map(|r| phi.moments(&r.x_t)).collect();
            let mut total = own[0].clone();
            for m in &own[1..] {
                total = total.plus(m);
            }
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for (j, rep) in reps.iter().enumerate() {
                let m = total.minus(&own[j]);
                let v = rep.x_t[u_index];
                l.push(phi.lions_m(v, &m) * rep.d1_t * rep.h_s);
                r.push(phi.bracket_m(v, &m) * rep.h_s * rep.weight / (t - s));
            }
            Ok((stats::mean(&l), stats::mean(&r)))
        })
        .collect::<Result<Vec<_>>>()?;
    let lv: Vec<f64> = per_w.iter().map(|p| p.0).collect();
    let rv: Vec<f64> = per_w.iter().map(|p| p.1).collect();
    let dv: Vec<f64> = per_w.iter().map(|p| p.0 - p.1).collect();
    let (lhs, lhs_se) = stats::mean_se(&lv);
    let (rhs, rhs_se) = stats::mean_se(&rv);
    let (_, combined_se) = stats::mean_se(&dv);
    Ok(IbpReport {
        s,
        t,
        u_index,
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        combined_se,
        samples: params.m_w * params.m_beta,
    })
}

#[allow(clippy::too_many_arguments)]
fn ibp_replica(
    g: &QuantileState,
    h: &PerturbationDirection,
    profile: &FourierProfile,
    noise: &NoisePath,
    ns: usize,
    nt: usize,
    u: usize,
    eps: f64,
) -> Result<IbpReplica> {
    let mut p = Particles::from_quantile(g, 1)?;
    let n = p.len();
    let mut stepper = Stepper::new(profile.k_max(), n);
    let mut scratch = TrigScratch::new(n);
    let (mut h_s, mut weight) = (0.0, 0.0);
    for step in 0..nt {
        if step == ns {
            let d1 = p.d1();
            h_s = remainder_integrand(&p.x, &d1, &h.values()[..n], eps, profile.k_max(), &mut scratch)[u];
        }
        if step >= ns {
            weight += p.base_slope[u] * p.log_factor[u].exp() * noise.dbeta()[step];
        }
        stepper.advance(&mut p, profile, noise)?;
    }
    let d1_t = p.base_slope[u] * p.log_factor[u].exp();
    Ok(IbpReplica {
        x_t: p.x,
        d1_t,
        h_s,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::u_grid;
    use crate::noise::sample_noise;
    use crate::sde::evolve;

    fn uniform(n: usize) -> QuantileState {
        QuantileState::sine_perturbed(n, 0.0).unwrap()
    }

    #[test]
    fn constant_direction_on_uniform_state() {
        let g = uniform(64);
        let x = &g.values()[..64];
        let d1 = g.deriv1().unwrap();
        let h = vec![1.0; 65];
        let f = TransportField::from_particles(x, d1, &h, 8, 0).unwrap();
        assert!((f.coeff(0).re - TWO_PI).abs() < 1e-12);
        for k in 1..=8 {
            assert!(f.coeff(k).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_direction() {
        let g = uniform(64);
        let h = PerturbationDirection::cosine(64, 1.0, 1).unwrap();
        let f = TransportField::from_particles(&g.values()[..64], g.deriv1().unwrap(), h.values(), 8, 0).unwrap();
        assert!((f.coeff(1).re - std::f64::consts::PI).abs() < 1e-12);
        assert!((f.coeff(-1).re - std::f64::consts::PI).abs() < 1e-12);
        assert!(f.coeff(0).norm() < 1e-12 && f.coeff(2).norm() < 1e-12);
        let prof = FourierProfile::build(4.0, 1.0, 8).unwrap();
        let lam = compute_lambda(&mollify(&f, &MollifierSpec::new(0.2).unwrap()), &prof).unwrap();
        let want = std::f64::consts::PI * (-0.02f64).exp() / prof.f(1);
        assert!((lam.values[1].re - want).abs() < 1e-10);
    }

    #[test]
    fn mollifier_multiplier_values() {
        let m = MollifierSpec::new(1.0).unwrap();
        assert_eq!(m.multiplier(0), 1.0);
        assert!((m.multiplier(1) - 0.60653).abs() < 1e-5);
    }

    fn evolved(n_u: usize, steps: usize) -> (PathState, PerturbationDirection) {
        let g = QuantileState::sine_perturbed(n_u, 0.3).unwrap();
        let h = PerturbationDirection::cosine(n_u, 1.0, 1).unwrap();
        let prof = FourierProfile::build(4.0, 1.0, 16).unwrap();
        let noise = sample_noise(&prof, 3, steps, 1e-3).unwrap();
        (evolve(&g, &prof, &noise, 1).unwrap(), h)
    }

    #[test]
    fn grid_and_particle_routes_agree_at_start() {
        let (path, h) = evolved(128, 10);
        let grid = compute_a(&path, &h, 0, 256).unwrap();
        let part = TransportField::from_particles(path.x_open(0), &path.d1_at(0), h.values(), 40, 0).unwrap();
        for k in 0..=40 {
            assert!((grid.coeff(k) - part.coeff(k)).norm() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn grid_and_particle_routes_close_after_evolution() {
        // the stored slope is the exponential form, the stored positions are
        // Euler iterates; the two Jacobians differ at discretization order
        let (path, h) = evolved(128, 100);
        let grid = compute_a(&path, &h, 100, 256).unwrap();
        let part = TransportField::from_particles(path.x_open(100), &path.d1_at(100), h.values(), 40, 100).unwrap();
        let scale = grid.coeff(0).norm();
        for k in 0..=40 {
            assert!((grid.coeff(k) - part.coeff(k)).norm() < 1e-3 * scale, "k = {k}");
        }
    }

    #[test]
    fn grid_route_reconstructs_pointwise_definition() {
        let (path, h) = evolved(128, 100);
        let field = compute_a(&path, &h, 100, 512).unwrap();
        let inv = PathInverse::new(path.x_open(100), &path.d1_at(100), h.values()).unwrap();
        for i in 0..97 {
            let y = 0.123 + 0.0647 * i as f64;
            let want = inv.field_at(y).unwrap();
            assert!((field.eval(y) - want).abs() < 1e-8, "y = {y}");
        }
    }

    #[test]
    fn remainder_vanishes_for_zero_direction() {
        let x = u_grid(16)[..16].iter().map(|u| TWO_PI * u).collect::<Vec<_>>();
        let d1 = vec![TWO_PI; 16];
        let h = vec![0.0; 16];
        let r = remainder_integrand(&x, &d1, &h, 0.2, 8, &mut TrigScratch::new(16));
        assert!(r.iter().all(|&v| v == 0.0));
    }
}
