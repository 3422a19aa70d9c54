//! Spectral solver for the density equation
//! `dp = -d_v(p sum_k f_k Re(e^{-ikv} dW^k)) + lambda p'' dt` driven by the same
//! common noise as the particle system, and the wrapped-Gaussian kernel
//! density estimate used to compare the two.
//!
//! Modes follow `p(v) = sum_k p_k e^{ikv}`, `p_0 = 1/(2 pi)`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::geometry::{quantile_to_density, x_grid, QuantileState, TorusDensity, TWO_PI};
use crate::montecarlo::SimParams;
use crate::noise::{CommonNoise, FourierProfile, NoiseKey};
use crate::sde::{steps_for, FieldCoeffs, FieldValues, MomentSink, Particles, Stepper, TrigScratch};

/// Mass drift above which a run is rejected.
pub const MASS_TOL: f64 = 1e-12;

/// Diffusion constant of the density equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    /// `(1 + sum f_k^2) / 2`: the particle system with its idiosyncratic noise.
    Super,
    /// `sum f_k^2 / 2`: no idiosyncratic noise.
    Critical,
}

impl LambdaMode {
    pub fn value(&self, profile: &FourierProfile) -> f64 {
        match self {
            LambdaMode::Super => profile.qv_rate() / 2.0,
            LambdaMode::Critical => profile.sum_sq() / 2.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LambdaMode::Super => "super",
            LambdaMode::Critical => "critical",
        }
    }
}

/// Modes `p_0..=p_{K_p}` of a real density at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub t: f64,
    modes: Vec<Complex64>,
}

impl SpectralDensity {
    pub fn from_modes(t: f64, mut modes: Vec<Complex64>) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("K_p", "need at least the mean mode"));
        }
        modes[0] = Complex64::new(1.0 / TWO_PI, 0.0);
        Ok(Self { t, modes })
    }

    /// Modes of grid samples, truncated at `k_p`.
    pub fn from_density(p: &TorusDensity, k_p: usize) -> Result<Self> {
        let n = p.len();
        if 2 * k_p >= n {
            return Err(invalid("K_p", format!("{k_p} modes need more than {n} grid points")));
        }
        let mut buf: Vec<Complex64> = p.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let modes = buf[..=k_p].iter().map(|c| c / n as f64).collect();
        Self::from_modes(0.0, modes)
    }

    pub fn k_p(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    pub fn mode(&self, k: i64) -> Complex64 {
        let i = k.unsigned_abs() as usize;
        match self.modes.get(i) {
            None => Complex64::new(0.0, 0.0),
            Some(c) if k >= 0 => *c,
            Some(c) => c.conj(),
        }
    }

    /// Density values on an `n`-point grid (not clipped).
    pub fn grid_values(&self, n: usize) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, c) in self.modes.iter().enumerate().take(n / 2) {
            buf[k] += c;
            if k > 0 {
                buf[n - k] += c.conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    pub fn to_density(&self, n: usize) -> Result<TorusDensity> {
        TorusDensity::new(self.grid_values(n))
    }

    /// `sum_{|k| <= K_p} |p_k|^2`.
    pub fn energy(&self) -> f64 {
        self.energy_from(0)
    }

    /// `sum_{from <= |k| <= K_p} |p_k|^2`.
    pub fn energy_from(&self, from: usize) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .skip(from)
            .map(|(k, c)| if k == 0 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
            .sum()
    }

    /// Trapezoid mass of the grid values minus one.
    pub fn mass_drift(&self, n: usize) -> f64 {
        let v = self.grid_values(n);
        crate::stats::pairwise_sum(&v) * TWO_PI / n as f64 - 1.0
    }
}

/// Stored density evolution.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub lambda: f64,
    pub mode: LambdaMode,
    pub snapshots: Vec<SpectralDensity>,
    /// Smallest grid value seen over all steps (positivity monitor).
    pub min_value: f64,
}

impl DensityPath {
    pub fn last(&self) -> &SpectralDensity {
        self.snapshots.last().unwrap()
    }

    /// Rows `t,x,p` for every snapshot.
    pub fn write_csv<W: Write>(&self, n_x: usize, mut w: W) -> Result<()> {
        writeln!(w, "t,x,p")?;
        let xs = x_grid(n_x);
        for s in &self.snapshots {
            for (x, p) in xs.iter().zip(s.grid_values(n_x)) {
                writeln!(w, "{},{:.12e},{:.12e}", s.t, x, p)?;
            }
        }
        Ok(())
    }
}

/// Integrating-factor Euler scheme: the transport noise is applied
/// explicitly (pseudo-spectrally on an `n_grid` grid, which must exceed
/// `2 K_p + K_max` to keep the retained modes alias-free), then the
/// diffusion factor `exp(-lambda k^2 dt)` is applied exactly.
pub fn evolve_density(
    p0: &TorusDensity,
    profile: &FourierProfile,
    noise: &CommonNoise,
    mode: LambdaMode,
    k_p: usize,
    n_grid: usize,
    stride: usize,
) -> Result<DensityPath> {
    if profile.k_max() > noise.k_max() {
        return Err(Error::NoiseMismatch("profile has more modes than the noise".into()));
    }
    if n_grid <= 2 * k_p + profile.k_max() {
        return Err(invalid("N_x", "grid too coarse for alias-free products"));
    }
    let stride = stride.max(1);
    let lambda = mode.value(profile);
    let dt = noise.dt();
    let mut p = SpectralDensity::from_density(p0, k_p)?;
    let damp: Vec<f64> = (0..=k_p)
        .map(|k| (-lambda * (k * k) as f64 * dt).exp())
        .collect();
    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n_grid);
    let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n_grid);
    let mut coeffs = FieldCoeffs::new(profile.k_max());
    let mut vgrid = vec![Complex64::new(0.0, 0.0); n_grid];
    let mut pgrid = vec![Complex64::new(0.0, 0.0); n_grid];
    let mut snapshots = vec![p.clone()];
    let mut min_value = p.grid_values(n_grid).iter().cloned().fold(f64::INFINITY, f64::min);
    for step in 0..noise.n_steps() {
        coeffs.load(profile, noise, step);
        // V on the grid from its real series
        vgrid.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        vgrid[0] = Complex64::new(coeffs.a[0], 0.0);
        for k in 1..coeffs.a.len() {
            let c = Complex64::new(coeffs.a[k], -coeffs.b[k]) * 0.5;
            vgrid[k] += c;
            vgrid[n_grid - k] += c.conj();
        }
        inv.process(&mut vgrid);
        pgrid.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (k, c) in p.modes.iter().enumerate() {
            pgrid[k] += c;
            if k > 0 {
                pgrid[n_grid - k] += c.conj();
            }
        }
        inv.process(&mut pgrid);
        let mut lo = f64::INFINITY;
        for j in 0..n_grid {
            lo = lo.min(pgrid[j].re);
            pgrid[j] = Complex64::new(pgrid[j].re * vgrid[j].re, 0.0);
        }
        min_value = min_value.min(lo);
        fwd.process(&mut pgrid);
        let scale = 1.0 / n_grid as f64;
        for k in 1..=k_p {
            let q = pgrid[k] * scale;
            let next = p.modes[k] - Complex64::new(0.0, k as f64) * q;
            if !(next.re.is_finite() && next.im.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "density mode",
                    step: step + 1,
                });
            }
            p.modes[k] = next * damp[k];
        }
        p.t = (step + 1) as f64 * dt;
        if (step + 1) % stride == 0 || step + 1 == noise.n_steps() {
            let drift = p.mass_drift(n_grid);
            if drift.abs() > MASS_TOL {
                return Err(Error::MassDrift {
                    drift,
                    step: step + 1,
                });
            }
            snapshots.push(p.clone());
        }
    }
    let last = p.grid_values(n_grid);
    min_value = min_value.min(last.iter().cloned().fold(f64::INFINITY, f64::min));
    Ok(DensityPath {
        lambda,
        mode,
        snapshots,
        min_value,
    })
}

/// Wrapped-Gaussian kernel density estimate on an `n_x`-point grid.
///
/// Evaluated through the empirical Fourier coefficients of the samples up to
/// `n_x / 2 - 1`, each damped by `exp(-k^2 b^2 / 2)`; the omitted modes carry
/// at most `exp(-(n_x/2)^2 b^2 / 2)` per mode.
pub fn kde_wrapped(samples: &[f64], bandwidth: f64, n_x: usize) -> Result<TorusDensity> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(invalid("bandwidth", "must be positive"));
    }
    if samples.is_empty() {
        return Err(invalid("samples", "need at least one sample"));
    }
    if n_x < 8 {
        return Err(invalid("N_x", "need at least eight grid points"));
    }
    let kk = n_x / 2 - 1;
    let m = samples.len();
    let w = vec![1.0; m];
    let mut re = vec![0.0; kk + 1];
    let mut im = vec![0.0; kk + 1];
    FieldValues::new(m).eval(
        samples,
        &FieldCoeffs::new(kk),
        1,
        &mut TrigScratch::new(m),
        Some(MomentSink {
            weights: &w,
            re: &mut re,
            im: &mut im,
        }),
    );
    let mut buf = vec![Complex64::new(0.0, 0.0); n_x];
    for k in 0..=kk {
        let damp = (-((k * k) as f64) * bandwidth * bandwidth / 2.0).exp();
        // (1/2pi) mean e^{-iks}
        let c = Complex64::new(re[k], -im[k]) * (damp / (TWO_PI * m as f64));
        buf[k] += c;
        if k > 0 {
            buf[n_x - k] += c.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n_x).process(&mut buf);
    let vals: Vec<f64> = buf.iter().map(|c| c.re.max(f64::MIN_POSITIVE)).collect();
    TorusDensity::normalized(vals)
}

/// Particle/SPDE comparison on one common-noise replica.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityComparison {
    pub t: f64,
    pub l1_distance: f64,
    pub bandwidth: f64,
    pub w_replica: u64,
    pub m_beta: usize,
    pub spde_min: f64,
}

impl DensityComparison {
    pub const CSV_HEADER: &'static str = "t,L1_distance,bandwidth";

    pub fn csv_row(&self) -> String {
        format!("{},{:.12e},{}", self.t, self.l1_distance, self.bandwidth)
    }
}

/// Runs `M_beta` particle replicas and the density equation on the same
/// common noise and compares the kernel estimate with the spectral density.
#[allow(clippy::too_many_arguments)]
pub fn density_compare(
    g: &QuantileState,
    profile: &FourierProfile,
    params: &SimParams,
    w_replica: u64,
    t: f64,
    bandwidth: f64,
    k_p: usize,
    n_x: usize,
) -> Result<(DensityComparison, DensityPath, TorusDensity)> {
    let n = steps_for(t, params.dt)?;
    let common = Arc::new(CommonNoise::sample(
        NoiseKey::new(params.seed, w_replica),
        profile.k_max(),
        n,
        params.dt,
    )?);
    let p0 = quantile_to_density(g, n_x)?;
    let spde = evolve_density(&p0, profile, &common, LambdaMode::Super, k_p, n_x, n.max(1))?;
    use rayon::prelude::*;
    let samples: Vec<Vec<f64>> = (0..params.m_beta)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let path = common.with_beta(j as u64);
            let mut p = Particles::from_quantile(g, 1)?;
            let mut st = Stepper::new(profile.k_max(), p.len());
            for _ in 0..n {
                st.advance(&mut p, profile, &path)?;
            }
            Ok(p.x)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = samples.concat();
    let kde = kde_wrapped(&flat, bandwidth, n_x)?;
    let realized = TorusDensity::normalized(
        spde.last()
            .grid_values(n_x)
            .into_iter()
            .map(|v| v.max(f64::MIN_POSITIVE))
            .collect(),
    )?;
    let l1 = realized.l1_distance(&kde)?;
    Ok((
        DensityComparison {
            t,
            l1_distance: l1,
            bandwidth,
            w_replica,
            m_beta: params.m_beta,
            spde_min: spde.min_value,
        },
        spde,
        kde,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::wrapped_gaussian;

    fn bump(n: usize) -> TorusDensity {
        TorusDensity::from_fn(n, |x| 1.0 + 0.5 * x.cos() + 0.2 * (3.0 * x).sin()).unwrap()
    }

    #[test]
    fn heat_flow_without_noise() {
        let prof = FourierProfile::build(4.0, 1.0, 8).unwrap();
        let noise = CommonNoise::zero(8, 200, 1e-3).unwrap();
        let p0 = bump(128);
        let path = evolve_density(&p0, &prof, &noise, LambdaMode::Super, 16, 128, 50).unwrap();
        let lam = LambdaMode::Super.value(&prof);
        let s0 = &path.snapshots[0];
        let s1 = path.last();
        for k in 0..=16 {
            let want = s0.mode(k) * (-lam * (k * k) as f64 * 0.2).exp();
            assert!((s1.mode(k) - want).norm() < 1e-8);
        }
        let e: Vec<f64> = path.snapshots.iter().map(|s| s.energy()).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn uniform_is_fixed_without_common_noise() {
        let prof = FourierProfile::zero(8);
        let noise = CommonNoise::sample(NoiseKey::new(1, 0), 8, 50, 1e-3).unwrap();
        let path = evolve_density(&TorusDensity::uniform(64), &prof, &noise, LambdaMode::Super, 16, 64, 10).unwrap();
        assert!(path.last().modes()[1..].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn mass_is_exact_under_noise() {
        let prof = FourierProfile::build(4.0, 1.0, 16).unwrap();
        let noise = CommonNoise::sample(NoiseKey::new(2, 0), 16, 100, 1e-3).unwrap();
        let path = evolve_density(&bump(128), &prof, &noise, LambdaMode::Super, 32, 128, 10).unwrap();
        for s in &path.snapshots {
            assert_eq!(s.modes()[0], Complex64::new(1.0 / TWO_PI, 0.0));
            assert!(s.mass_drift(128).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_of_single_point() {
        let kde = kde_wrapped(&[0.0], 0.3, 256).unwrap();
        for (x, v) in kde.grid().iter().zip(kde.values()) {
            assert!((v - wrapped_gaussian(*x, 0.09)).abs() < 1e-10);
        }
        let mass = crate::geometry::trapezoid_periodic(kde.values(), TWO_PI);
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kde_of_grid_points_is_flat() {
        let s: Vec<f64> = x_grid(1000);
        let kde = kde_wrapped(&s, 0.05, 256).unwrap();
        assert!(kde.l1_distance(&TorusDensity::uniform(256)).unwrap() < 0.02);
    }

    #[test]
    fn kde_recovers_wrapped_gaussian() {
        let noise = Arc::new(CommonNoise::zero(0, 1_000_000, 1.0).unwrap());
        let path = noise.with_beta(7);
        let s: Vec<f64> = path.dbeta().iter().map(|z| (0.5 * z).rem_euclid(TWO_PI)).collect();
        let kde = kde_wrapped(&s, 0.1, 512).unwrap();
        let truth = TorusDensity::from_fn(512, |x| wrapped_gaussian(x, 0.25)).unwrap();
        let d = kde.l1_distance(&truth).unwrap();
        assert!(d <= 0.02, "{d}");
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(kde_wrapped(&[0.0], 0.0, 64).is_err());
    }
}
