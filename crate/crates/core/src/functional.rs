//! Measure functionals with closed-form flat and Lions derivatives, empirical
//! measures of the particle system and the Monte Carlo gradient reports.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::geometry::{TorusDensity, TWO_PI};
use crate::sde::PathState;
use crate::stats;

pub const MAX_DEGREE: usize = 8;

/// Real trigonometric polynomial `a_0 + sum_{k=1}^d a_k cos kx + b_k sin kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TrigPoly {
    /// `a[0]` is the constant term; `b[0]` is ignored.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(invalid("profile", "cosine and sine coefficient lists must match"));
        }
        if a.len() > MAX_DEGREE + 1 {
            return Err(invalid("profile", format!("degree must be at most {MAX_DEGREE}")));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(invalid("profile", "non-finite coefficient"));
        }
        let mut b = b;
        b[0] = 0.0;
        Ok(Self { a, b })
    }

    pub fn cosine() -> Self {
        Self {
            a: vec![0.0, 1.0],
            b: vec![0.0, 0.0],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            a: vec![c],
            b: vec![0.0],
        }
    }

    pub fn degree(&self) -> usize {
        self.a.len() - 1
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.a
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.b
    }

    pub fn mean(&self) -> f64 {
        self.a[0]
    }

    pub fn is_even(&self) -> bool {
        self.b.iter().all(|&v| v == 0.0)
    }

    /// Value and first derivative.
    pub fn eval2(&self, x: f64) -> (f64, f64) {
        let x = x.rem_euclid(TWO_PI);
        let (mut v, mut d) = (self.a[0], 0.0);
        for k in 1..self.a.len() {
            let kf = k as f64;
            let (s, c) = (kf * x).sin_cos();
            v += self.a[k] * c + self.b[k] * s;
            d += kf * (self.b[k] * c - self.a[k] * s);
        }
        (v, d)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval2(x).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.eval2(x).1
    }

    /// `sum |a_k| + |b_k|`, an upper bound on the sup norm.
    pub fn abs_sum(&self) -> f64 {
        self.a.iter().chain(&self.b).map(|v| v.abs()).sum()
    }
}

/// Unnormalized trigonometric moments `sum_i e^{ik x_i}`, `k = 0..=d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub count: f64,
}

impl Moments {
    pub fn of(samples: &[f64], degree: usize) -> Self {
        let mut re = vec![0.0; degree + 1];
        let mut im = vec![0.0; degree + 1];
        re[0] = samples.len() as f64;
        let mut tr = vec![0.0; samples.len()];
        let mut ti = vec![0.0; samples.len()];
        for k in 1..=degree {
            let kf = k as f64;
            for (i, x) in samples.iter().enumerate() {
                let (s, c) = (kf * x.rem_euclid(TWO_PI)).sin_cos();
                tr[i] = c;
                ti[i] = s;
            }
            re[k] = stats::pairwise_sum(&tr);
            im[k] = stats::pairwise_sum(&ti);
        }
        Self {
            re,
            im,
            count: samples.len() as f64,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            re: self.re.iter().zip(&other.re).map(|(a, b)| a + b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a + b).collect(),
            count: self.count + other.count,
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self {
            re: self.re.iter().zip(&other.re).map(|(a, b)| a - b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a - b).collect(),
            count: self.count - other.count,
        }
    }

    /// Normalized moment `int e^{ikx} dmu` as `(re, im)`.
    pub fn mean(&self, k: usize) -> (f64, f64) {
        (self.re[k] / self.count, self.im[k] / self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalKind {
    /// `phi(mu) = int h dmu`
    Linear,
    /// `phi(mu) = int int h(x - y) dmu(x) dmu(y)` with even `h`
    Interaction,
}

/// Built-in functional with analytic `delta phi / delta m` and `d_mu phi`.
///
/// The flat derivative is normalized to have zero mean against the uniform
/// measure on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctional {
    kind: FunctionalKind,
    profile: TrigPoly,
}

impl TestFunctional {
    pub fn linear(profile: TrigPoly) -> Self {
        Self {
            kind: FunctionalKind::Linear,
            profile,
        }
    }

    pub fn interaction(profile: TrigPoly) -> Result<Self> {
        if !profile.is_even() {
            return Err(invalid("profile", "interaction profile must be even (no sine terms)"));
        }
        Ok(Self {
            kind: FunctionalKind::Interaction,
            profile,
        })
    }

    /// `phi(mu) = int cos dmu`.
    pub fn cosine() -> Self {
        Self::linear(TrigPoly::cosine())
    }

    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }

    pub fn profile(&self) -> &TrigPoly {
        &self.profile
    }

    pub fn degree(&self) -> usize {
        self.profile.degree()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FunctionalKind::Linear => "linear",
            FunctionalKind::Interaction => "interaction",
        }
    }

    /// Bound on `sup |phi|`.
    pub fn sup_bound(&self) -> f64 {
        self.profile.abs_sum()
    }

    pub fn is_constant(&self) -> bool {
        self.profile.degree() == 0
            || self.profile.a[1..].iter().chain(&self.profile.b[1..]).all(|&v| v == 0.0)
    }

    pub fn moments(&self, samples: &[f64]) -> Moments {
        Moments::of(samples, self.degree())
    }

    pub fn value_m(&self, m: &Moments) -> f64 {
        let p = &self.profile;
        let mut v = p.a[0];
        for k in 1..=p.degree() {
            let (re, im) = m.mean(k);
            v += match self.kind {
                FunctionalKind::Linear => p.a[k] * re + p.b[k] * im,
                FunctionalKind::Interaction => p.a[k] * (re * re + im * im),
            };
        }
        v
    }

    /// `delta phi / delta m (mu)(v)`, zero mean against the uniform measure.
    pub fn lfd_m(&self, v: f64, m: &Moments) -> f64 {
        let p = &self.profile;
        match self.kind {
            FunctionalKind::Linear => p.eval(v) - p.a[0],
            FunctionalKind::Interaction => {
                let v = v.rem_euclid(TWO_PI);
                let mut acc = 0.0;
                for k in 1..=p.degree() {
                    let (s, c) = (k as f64 * v).sin_cos();
                    let (re, im) = m.mean(k);
                    acc += p.a[k] * (c * re + s * im);
                }
                2.0 * acc
            }
        }
    }

    /// `d_mu phi (mu)(v)`.
    pub fn lions_m(&self, v: f64, m: &Moments) -> f64 {
        let p = &self.profile;
        match self.kind {
            FunctionalKind::Linear => p.deriv(v),
            FunctionalKind::Interaction => {
                let v = v.rem_euclid(TWO_PI);
                let mut acc = 0.0;
                for k in 1..=p.degree() {
                    let kf = k as f64;
                    let (s, c) = (kf * v).sin_cos();
                    let (re, im) = m.mean(k);
                    acc += p.a[k] * kf * (c * im - s * re);
                }
                2.0 * acc
            }
        }
    }

    /// `int delta phi / delta m (mu) dmu`.
    pub fn lfd_mean_m(&self, m: &Moments) -> f64 {
        match self.kind {
            FunctionalKind::Linear => self.value_m(m) - self.profile.a[0],
            FunctionalKind::Interaction => 2.0 * (self.value_m(m) - self.profile.a[0]),
        }
    }

    /// Centered flat derivative `[delta phi / delta m](mu)(v)`.
    pub fn bracket_m(&self, v: f64, m: &Moments) -> f64 {
        self.lfd_m(v, m) - self.lfd_mean_m(m)
    }

    pub fn value(&self, samples: &[f64]) -> f64 {
        self.value_m(&self.moments(samples))
    }

    pub fn lfd(&self, v: f64, samples: &[f64]) -> f64 {
        self.lfd_m(v, &self.moments(samples))
    }

    pub fn lions(&self, v: f64, samples: &[f64]) -> f64 {
        self.lions_m(v, &self.moments(samples))
    }

    /// Moments of a measure with a density, by quadrature on its grid.
    pub fn density_moments(&self, p: &TorusDensity) -> Moments {
        let n = p.len();
        let d = self.degree();
        let mut re = vec![0.0; d + 1];
        let mut im = vec![0.0; d + 1];
        for k in 0..=d {
            let (tr, ti): (Vec<f64>, Vec<f64>) = p
                .grid()
                .iter()
                .zip(p.values())
                .map(|(x, w)| {
                    let (s, c) = (k as f64 * x).sin_cos();
                    (w * c, w * s)
                })
                .unzip();
            re[k] = stats::pairwise_sum(&tr) * TWO_PI / n as f64;
            im[k] = stats::pairwise_sum(&ti) * TWO_PI / n as f64;
        }
        Moments { re, im, count: 1.0 }
    }
}

/// Particle positions of one common-noise realization stacked over
/// beta-replicas: `samples[r * n + j]` is node `j` of replica `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
    replicas: usize,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<f64>, replicas: usize) -> Result<Self> {
        if replicas == 0 || samples.is_empty() || samples.len() % replicas != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} samples cannot be split into {replicas} replicas",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "empirical sample",
                step: 0,
            });
        }
        Ok(Self { samples, replicas })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn per_replica(&self) -> usize {
        self.samples.len() / self.replicas
    }

    pub fn replica(&self, r: usize) -> &[f64] {
        let n = self.per_replica();
        &self.samples[r * n..(r + 1) * n]
    }
}

/// Stacks the positions at time `t` of paths that share one common-noise
/// realization; the open grid nodes carry equal weight.
pub fn build_empirical(paths: &[PathState], t: f64) -> Result<EmpiricalMeasure> {
    let first = paths
        .first()
        .ok_or_else(|| invalid("paths", "need at least one path"))?;
    let n = crate::sde::steps_for(t, first.dt())?;
    let mut samples = Vec::with_capacity(paths.len() * first.n_u());
    for p in paths {
        if p.noise_key() != first.noise_key() {
            return Err(Error::NoiseMismatch(format!(
                "{:?} vs {:?}",
                p.noise_key(),
                first.noise_key()
            )));
        }
        if p.n_u() != first.n_u() || p.dt() != first.dt() {
            return Err(Error::ShapeMismatch("paths on different grids".into()));
        }
        if n > p.n_steps() {
            return Err(invalid("t", "beyond the simulated horizon"));
        }
        samples.extend_from_slice(p.x_open(n));
    }
    EmpiricalMeasure::new(samples, paths.len())
}

/// Quadrature over `[0, 2 pi)` of `v -> d_mu phi (mu)(v)` for the measure with
/// density `p`, using `n` equispaced nodes.
pub fn zero_average_check(phi: &TestFunctional, p: &TorusDensity, n: usize) -> f64 {
    let m = phi.density_moments(p);
    let vals: Vec<f64> = (0..n)
        .map(|i| phi.lions_m(TWO_PI * i as f64 / n as f64, &m))
        .collect();
    stats::pairwise_sum(&vals) * TWO_PI / n as f64
}

/// Which perturbation a gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `g + rho h`
    Plain,
    /// `g + rho g' h`
    SlopeWeighted,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Plain => "h",
            Direction::SlopeWeighted => "g'h",
        }
    }
}

/// Monte Carlo estimate of one gradient quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub estimator: String,
    pub direction: Direction,
    pub t: f64,
    pub eps: Option<f64>,
    pub rho: Option<f64>,
    pub value: f64,
    pub std_error: f64,
    pub m_w: usize,
    pub m_beta: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl GradientReport {
    pub const CSV_HEADER: &'static str = "estimator,t,eps,rho,value,std_error,M_W,M_beta,seed";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.12e},{:.12e},{},{},{}",
            self.estimator,
            self.t,
            opt(self.eps),
            opt(self.rho),
            self.value,
            self.std_error,
            self.m_w,
            self.m_beta,
            self.seed
        )
    }

    pub fn write_csv<W: Write>(reports: &[GradientReport], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in reports {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Heat-semigroup reference `e^{-t/2} int_0^1 cos g(u) du` for the cosine
/// functional without common noise (trapezoid on the closed grid).
pub fn heat_reference_value(g_values: &[f64], t: f64) -> f64 {
    let n = g_values.len() - 1;
    let v: Vec<f64> = g_values[..n].iter().map(|x| x.cos()).collect();
    (-t / 2.0).exp() * stats::mean(&v)
}

/// `-e^{-t/2} int_0^1 sin g(u) h(u) du`, the matching gradient reference.
pub fn heat_reference_gradient(g_values: &[f64], h_values: &[f64], t: f64) -> f64 {
    let n = g_values.len() - 1;
    let v: Vec<f64> = (0..n).map(|j| g_values[j].sin() * h_values[j]).collect();
    -(-t / 2.0).exp() * stats::mean(&v)
}

/// Wrapped heat kernel with variance `var` evaluated at `x`.
pub fn wrapped_gaussian(x: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let reach = (8.0 * sd / TWO_PI).ceil() as i64 + 1;
    let mut acc = 0.0;
    for m in -reach..=reach {
        let d = x - TWO_PI * m as f64;
        acc += (-d * d / (2.0 * var)).exp();
    }
    acc / (2.0 * PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<f64> {
        (0..50).map(|i| 0.37 * i as f64 + 0.05 * (i as f64).sin()).collect()
    }

    #[test]
    fn cosine_functional_derivatives() {
        let phi = TestFunctional::cosine();
        let xs = sample_points();
        let mean_cos: f64 = xs.iter().map(|x| x.cos()).sum::<f64>() / xs.len() as f64;
        assert!((phi.value(&xs) - mean_cos).abs() < 1e-13);
        assert!((phi.lions(0.7, &xs) + 0.7f64.sin()).abs() < 1e-14);
        assert!((phi.lfd(0.7, &xs) - 0.7f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn interaction_matches_pairwise_sum() {
        let prof = TrigPoly::new(vec![0.2, 0.5, -0.3], vec![0.0; 3]).unwrap();
        let phi = TestFunctional::interaction(prof.clone()).unwrap();
        let xs = sample_points();
        let n = xs.len() as f64;
        let mut direct = 0.0;
        for a in &xs {
            for b in &xs {
                direct += prof.eval(a - b);
            }
        }
        direct /= n * n;
        assert!((phi.value(&xs) - direct).abs() < 1e-12);
        let v = 1.1;
        let lfd: f64 = 2.0 * xs.iter().map(|y| prof.eval(v - y)).sum::<f64>() / n - 2.0 * 0.2;
        assert!((phi.lfd(v, &xs) - lfd).abs() < 1e-12);
        let lions: f64 = 2.0 * xs.iter().map(|y| prof.deriv(v - y)).sum::<f64>() / n;
        assert!((phi.lions(v, &xs) - lions).abs() < 1e-12);
        assert!(TestFunctional::interaction(TrigPoly::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn bracket_integrates_to_zero_against_measure() {
        let prof = TrigPoly::new(vec![0.1, 0.5, -0.3, 0.2], vec![0.0; 4]).unwrap();
        let xs = sample_points();
        for phi in [TestFunctional::interaction(prof.clone()).unwrap(), TestFunctional::linear(prof)] {
            let m = phi.moments(&xs);
            let avg: f64 = xs.iter().map(|&x| phi.bracket_m(x, &m)).sum::<f64>() / xs.len() as f64;
            assert!(avg.abs() < 1e-12, "{avg}");
        }
    }

    #[test]
    fn zero_average_for_cosine() {
        let p = TorusDensity::from_fn(256, |x| (1.0 + 0.4 * x.cos()) / TWO_PI).unwrap();
        assert!(zero_average_check(&TestFunctional::cosine(), &p, 2048).abs() < 1e-12);
    }

    #[test]
    fn wrapped_gaussian_has_unit_mass() {
        let n = 400;
        let s: f64 = (0..n).map(|i| wrapped_gaussian(TWO_PI * i as f64 / n as f64, 1.0)).sum();
        assert!((s * TWO_PI / n as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_csv_row_layout() {
        let r = GradientReport {
            estimator: "direct".into(),
            direction: Direction::Plain,
            t: 0.5,
            eps: None,
            rho: Some(0.01),
            value: 1.0,
            std_error: 0.1,
            m_w: 10,
            m_beta: 2,
            seed: 7,
            warnings: vec![],
        };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), GradientReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("direct,0.5,,0.01,"));
    }
}
