//! Euler–Maruyama stepping of the particle system and its derivative processes.
//!
//! With `Delta W^k = Delta W^{Re,k} + i Delta W^{Im,k}` the increment of a
//! particle at `x` is the trigonometric field
//!
//! `V(x) = sum_{|k| <= K} f_k Re(e^{-ikx} Delta W^k) = sum_{k >= 0} a_k cos kx + b_k sin kx`
//!
//! plus `Delta beta`. Only the open grid `u_j = j / N_u`, `j < N_u`, is
//! evolved; the closing node is `x(0) + 2 pi` by definition.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{QuantileState, TWO_PI};
use crate::noise::{CommonNoise, FourierProfile, NoisePath};
use crate::stats;

/// Real coefficients `a_k, b_k` (`k = 0..=K_max`) of one noise increment field.
#[derive(Debug, Clone)]
pub struct FieldCoeffs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FieldCoeffs {
    pub fn new(k_max: usize) -> Self {
        Self {
            a: vec![0.0; k_max + 1],
            b: vec![0.0; k_max + 1],
        }
    }

    /// Loads step `n` of `noise` weighted by `profile`.
    pub fn load(&mut self, profile: &FourierProfile, noise: &CommonNoise, n: usize) {
        let km = noise.k_max();
        let re = noise.re_row(n);
        let im = noise.im_row(n);
        let f = profile.coeffs();
        self.a[0] = f[0] * re[km];
        self.b[0] = 0.0;
        for k in 1..self.a.len() {
            self.a[k] = f[k] * (re[km + k] + re[km - k]);
            self.b[k] = f[k] * (im[km + k] - im[km - k]);
        }
    }
}

/// Scratch rows for the angle-addition recurrence `e^{i(k+1)x} = e^{ikx} e^{ix}`.
#[derive(Debug, Clone)]
pub struct TrigScratch {
    c: Vec<f64>,
    s: Vec<f64>,
    c1: Vec<f64>,
    s1: Vec<f64>,
}

impl TrigScratch {
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            s: vec![0.0; n],
            c1: vec![0.0; n],
            s1: vec![0.0; n],
        }
    }

    fn start(&mut self, x: &[f64]) {
        let n = x.len();
        if self.c.len() != n {
            *self = Self::new(n);
        }
        for (j, xj) in x.iter().enumerate() {
            let (sn, cs) = xj.sin_cos();
            self.c1[j] = cs;
            self.s1[j] = sn;
            self.c[j] = cs;
            self.s[j] = sn;
        }
    }

    fn rotate(&mut self) {
        let n = self.c.len();
        let (c, s, c1, s1) = (&mut self.c[..n], &mut self.s[..n], &self.c1[..n], &self.s1[..n]);
        for j in 0..n {
            let nc = c[j] * c1[j] - s[j] * s1[j];
            let ns = s[j] * c1[j] + c[j] * s1[j];
            c[j] = nc;
            s[j] = ns;
        }
    }
}

const LANES: usize = 8;

/// `sum_j w_j v_j` with a fixed lane split (vectorizable and deterministic).
#[inline]
pub(crate) fn dot_lanes(w: &[f64], v: &[f64]) -> f64 {
    let n = w.len().min(v.len());
    let mut acc = [0.0; LANES];
    let chunks = n / LANES;
    for q in 0..chunks {
        let (wq, vq) = (&w[q * LANES..q * LANES + LANES], &v[q * LANES..q * LANES + LANES]);
        for l in 0..LANES {
            acc[l] += wq[l] * vq[l];
        }
    }
    let mut tail = 0.0;
    for j in chunks * LANES..n {
        tail += w[j] * v[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Weighted trigonometric moments `sum_j w_j cos kx_j`, `sum_j w_j sin kx_j`
/// for `k = 0..=K`, filled alongside a field evaluation.
pub struct MomentSink<'a> {
    pub weights: &'a [f64],
    pub re: &'a mut [f64],
    pub im: &'a mut [f64],
}

/// Field value and derivatives at the particle positions, up to `order`.
#[derive(Debug, Clone)]
pub struct FieldValues {
    pub v: [Vec<f64>; 4],
}

impl FieldValues {
    pub fn new(n: usize) -> Self {
        Self {
            v: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Evaluates `V` and its first `order` derivatives at `x`, optionally
    /// accumulating weighted trigonometric moments in the same sweep.
    pub fn eval(
        &mut self,
        x: &[f64],
        coeffs: &FieldCoeffs,
        order: usize,
        scratch: &mut TrigScratch,
        mut sink: Option<MomentSink<'_>>,
    ) {
        let n = x.len();
        let [v0, v1, v2, v3] = &mut self.v;
        v0.fill(coeffs.a[0]);
        v1.fill(0.0);
        if order >= 2 {
            v2.fill(0.0);
        }
        if order >= 3 {
            v3.fill(0.0);
        }
        if let Some(sk) = sink.as_mut() {
            sk.re[0] = crate::stats::pairwise_sum(&sk.weights[..n]);
            sk.im[0] = 0.0;
        }
        let k_max = coeffs.a.len() - 1;
        let active = coeffs.a[1..].iter().chain(&coeffs.b[1..]).any(|&c| c != 0.0);
        if k_max == 0 || (!active && sink.is_none()) {
            return;
        }
        scratch.start(x);
        for k in 1..=k_max {
            if k > 1 {
                scratch.rotate();
            }
            let (ak, bk) = (coeffs.a[k], coeffs.b[k]);
            let (c, s) = (&scratch.c[..n], &scratch.s[..n]);
            if let Some(sk) = sink.as_mut() {
                if k < sk.re.len() {
                    sk.re[k] = dot_lanes(sk.weights, c);
                    sk.im[k] = dot_lanes(sk.weights, s);
                }
            }
            if ak == 0.0 && bk == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (v0, v1) = (&mut v0[..n], &mut v1[..n]);
            match order {
                0 | 1 => {
                    for j in 0..n {
                        let t0 = ak * c[j] + bk * s[j];
                        let t1 = bk * c[j] - ak * s[j];
                        v0[j] += t0;
                        v1[j] += kf * t1;
                    }
                }
                2 => {
                    let k2 = kf * kf;
                    let v2 = &mut v2[..n];
                    for j in 0..n {
                        let t0 = ak * c[j] + bk * s[j];
                        let t1 = bk * c[j] - ak * s[j];
                        v0[j] += t0;
                        v1[j] += kf * t1;
                        v2[j] -= k2 * t0;
                    }
                }
                _ => {
                    let k2 = kf * kf;
                    let k3 = k2 * kf;
                    let (v2, v3) = (&mut v2[..n], &mut v3[..n]);
                    for j in 0..n {
                        let t0 = ak * c[j] + bk * s[j];
                        let t1 = bk * c[j] - ak * s[j];
                        v0[j] += t0;
                        v1[j] += kf * t1;
                        v2[j] -= k2 * t0;
                        v3[j] -= k3 * t1;
                    }
                }
            }
        }
    }
}

/// Evaluates several real trigonometric series `sum_k a_k cos kx + b_k sin kx`
/// at the points `x` in one sweep; `sets[i] = (a, b)` fills `outs[i]`.
pub fn eval_series(
    x: &[f64],
    sets: &[(&[f64], &[f64])],
    outs: &mut [Vec<f64>],
    scratch: &mut TrigScratch,
) {
    let n = x.len();
    let k_max = sets.iter().map(|(a, _)| a.len()).max().unwrap_or(1) - 1;
    for ((a, _), out) in sets.iter().zip(outs.iter_mut()) {
        out.resize(n, 0.0);
        out.fill(a[0]);
    }
    if k_max == 0 {
        return;
    }
    scratch.start(x);
    for k in 1..=k_max {
        if k > 1 {
            scratch.rotate();
        }
        let (c, s) = (&scratch.c[..n], &scratch.s[..n]);
        for ((a, b), out) in sets.iter().zip(outs.iter_mut()) {
            if k >= a.len() {
                continue;
            }
            let (ak, bk) = (a[k], b[k]);
            let out = &mut out[..n];
            for j in 0..n {
                out[j] += ak * c[j] + bk * s[j];
            }
        }
    }
}

/// Mutable particle state on the open grid.
#[derive(Debug, Clone)]
pub struct Particles {
    pub x: Vec<f64>,
    /// `log(d_u x / g')`, shared with the parametric flow.
    pub log_factor: Vec<f64>,
    /// `g'` at the nodes (1 for the parametric flow).
    pub base_slope: Vec<f64>,
    pub d2: Option<Vec<f64>>,
    pub d3: Option<Vec<f64>>,
    pub step: usize,
}

impl Particles {
    pub fn from_quantile(g: &QuantileState, order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(invalid("order", format!("must be 1, 2 or 3, got {order}")));
        }
        if g.order() < order {
            return Err(Error::InvalidQuantile(format!(
                "order {order} requested but only {} derivatives available",
                g.order()
            )));
        }
        let n = g.n_u();
        let d1 = g.require_deriv1()?;
        Ok(Self {
            x: g.values()[..n].to_vec(),
            log_factor: vec![0.0; n],
            base_slope: d1[..n].to_vec(),
            d2: (order >= 2).then(|| g.deriv2().unwrap()[..n].to_vec()),
            d3: (order >= 3).then(|| g.deriv3().unwrap()[..n].to_vec()),
            step: 0,
        })
    }

    pub fn from_points(x0: &[f64]) -> Self {
        Self {
            x: x0.to_vec(),
            log_factor: vec![0.0; x0.len()],
            base_slope: vec![1.0; x0.len()],
            d2: None,
            d3: None,
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn order(&self) -> usize {
        match (&self.d2, &self.d3) {
            (Some(_), Some(_)) => 3,
            (Some(_), None) => 2,
            _ => 1,
        }
    }

    /// `d_u x = g' exp(log_factor)`.
    pub fn d1(&self) -> Vec<f64> {
        self.log_factor
            .iter()
            .zip(&self.base_slope)
            .map(|(l, g)| g * l.exp())
            .collect()
    }

    pub fn d1_into(&self, out: &mut [f64]) {
        for ((o, l), g) in out.iter_mut().zip(&self.log_factor).zip(&self.base_slope) {
            *o = g * l.exp();
        }
    }

    /// Ratio `d_u x / g'`, identical to `d_x Z` of the parametric flow.
    pub fn factor(&self) -> Vec<f64> {
        self.log_factor.iter().map(|l| l.exp()).collect()
    }
}

/// Reusable buffers for [`Stepper::advance`].
#[derive(Debug, Clone)]
pub struct Stepper {
    pub coeffs: FieldCoeffs,
    pub scratch: TrigScratch,
    pub field: FieldValues,
    d1: Vec<f64>,
}

impl Stepper {
    pub fn new(k_max: usize, n: usize) -> Self {
        Self {
            coeffs: FieldCoeffs::new(k_max),
            scratch: TrigScratch::new(n),
            field: FieldValues::new(n),
            d1: vec![0.0; n],
        }
    }

    /// Evaluates the field of step `n` at the current positions, optionally
    /// collecting weighted trigonometric moments of the positions.
    pub fn prepare(
        &mut self,
        p: &Particles,
        profile: &FourierProfile,
        noise: &CommonNoise,
        n: usize,
        sink: Option<MomentSink<'_>>,
    ) {
        self.coeffs.load(profile, noise, n);
        self.field
            .eval(&p.x, &self.coeffs, p.order(), &mut self.scratch, sink);
    }

    /// Applies the Euler update using the field from [`Stepper::prepare`].
    pub fn update(&mut self, p: &mut Particles, dbeta: f64, profile: &FourierProfile, dt: f64) -> Result<()> {
        let [v0, v1, v2, v3] = &self.field.v;
        let drift = 0.5 * dt * profile.sum_k2();
        let need_d1 = p.d2.is_some();
        if need_d1 {
            p.d1_into(&mut self.d1);
        }
        if let Some(d3) = p.d3.as_mut() {
            let d2 = p.d2.as_ref().unwrap();
            for j in 0..d3.len() {
                let d1 = self.d1[j];
                d3[j] += v3[j] * d1 * d1 * d1 + 3.0 * v2[j] * d1 * d2[j] + v1[j] * d3[j];
            }
        }
        if let Some(d2) = p.d2.as_mut() {
            for j in 0..d2.len() {
                let d1 = self.d1[j];
                d2[j] += v2[j] * d1 * d1 + v1[j] * d2[j];
            }
        }
        for j in 0..p.x.len() {
            p.x[j] += v0[j] + dbeta;
            p.log_factor[j] += v1[j] - drift;
        }
        p.step += 1;
        check_finite(p)
    }

    pub fn advance(
        &mut self,
        p: &mut Particles,
        profile: &FourierProfile,
        noise: &NoisePath,
    ) -> Result<()> {
        let n = p.step;
        self.prepare(p, profile, noise.common(), n, None);
        self.update(p, noise.dbeta()[n], profile, noise.dt())
    }
}

fn check_finite(p: &Particles) -> Result<()> {
    let step = p.step;
    if p.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { quantity: "x", step });
    }
    if p.log_factor.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { quantity: "log d_u x", step });
    }
    if let Some(d2) = &p.d2 {
        if d2.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { quantity: "d_u^2 x", step });
        }
    }
    if let Some(d3) = &p.d3 {
        if d3.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { quantity: "d_u^3 x", step });
        }
    }
    Ok(())
}

pub(crate) fn check_compatible(profile: &FourierProfile, noise: &CommonNoise) -> Result<()> {
    if profile.k_max() > noise.k_max() {
        return Err(Error::NoiseMismatch(format!(
            "profile truncation {} exceeds noise truncation {}",
            profile.k_max(),
            noise.k_max()
        )));
    }
    Ok(())
}

/// Stored trajectory of the particle system on the closed u-grid.
#[derive(Debug, Clone)]
pub struct PathState {
    dt: f64,
    n_u: usize,
    order: usize,
    /// `[n_steps + 1] x [N_u]` open-grid rows.
    x: Vec<f64>,
    log_factor: Vec<f64>,
    base_slope: Vec<f64>,
    d2: Option<Vec<f64>>,
    d3: Option<Vec<f64>>,
    dbeta: Vec<f64>,
    noise_key: crate::noise::NoiseKey,
    beta_replica: u64,
}

impl PathState {
    pub fn n_steps(&self) -> usize {
        self.x.len() / self.n_u - 1
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn noise_key(&self) -> crate::noise::NoiseKey {
        self.noise_key
    }

    pub fn beta_replica(&self) -> u64 {
        self.beta_replica
    }

    pub fn dbeta(&self) -> &[f64] {
        &self.dbeta
    }

    fn row<'a>(&self, data: &'a [f64], n: usize) -> &'a [f64] {
        &data[n * self.n_u..(n + 1) * self.n_u]
    }

    /// Open-grid positions at step `n`.
    pub fn x_open(&self, n: usize) -> &[f64] {
        self.row(&self.x, n)
    }

    /// Closed-grid positions at step `n` (last node `x(0) + 2 pi`).
    pub fn x_at(&self, n: usize) -> Vec<f64> {
        let mut v = self.x_open(n).to_vec();
        v.push(v[0] + TWO_PI);
        v
    }

    pub fn log_factor_open(&self, n: usize) -> &[f64] {
        self.row(&self.log_factor, n)
    }

    fn close(mut v: Vec<f64>) -> Vec<f64> {
        v.push(v[0]);
        v
    }

    /// `d_u x` on the closed grid.
    pub fn d1_at(&self, n: usize) -> Vec<f64> {
        Self::close(
            self.log_factor_open(n)
                .iter()
                .zip(&self.base_slope)
                .map(|(l, g)| g * l.exp())
                .collect(),
        )
    }

    /// `log d_u x` on the closed grid.
    pub fn log_d1_at(&self, n: usize) -> Vec<f64> {
        Self::close(
            self.log_factor_open(n)
                .iter()
                .zip(&self.base_slope)
                .map(|(l, g)| g.ln() + l)
                .collect(),
        )
    }

    /// `d_u x / g'` on the closed grid, computed from the shared log-factor.
    pub fn factor_at(&self, n: usize) -> Vec<f64> {
        Self::close(self.log_factor_open(n).iter().map(|l| l.exp()).collect())
    }

    pub fn d2_at(&self, n: usize) -> Option<Vec<f64>> {
        self.d2.as_ref().map(|d| Self::close(self.row(d, n).to_vec()))
    }

    pub fn d3_at(&self, n: usize) -> Option<Vec<f64>> {
        self.d3.as_ref().map(|d| Self::close(self.row(d, n).to_vec()))
    }

    /// Pseudo-periodic extension: `x_t(u + m) = x_t(u) + 2 pi m` at grid index
    /// `j` (any integer).
    pub fn x_extended(&self, n: usize, j: i64) -> f64 {
        let nu = self.n_u as i64;
        let m = j.div_euclid(nu);
        let r = j.rem_euclid(nu) as usize;
        self.x_open(n)[r] + TWO_PI * m as f64
    }

    /// State at step `n` as a quantile representation.
    pub fn quantile_at(&self, n: usize) -> Result<QuantileState> {
        QuantileState::new(
            self.x_at(n),
            Some(self.d1_at(n)),
            self.d2_at(n),
            self.d3_at(n),
        )
    }

    /// Trajectory dump `(t, u, x, d_u x)` every `stride` steps.
    pub fn write_trajectory_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        writeln!(w, "t,u,x,dx_du")?;
        let stride = stride.max(1);
        for n in (0..=self.n_steps()).step_by(stride) {
            let x = self.x_at(n);
            let d1 = self.d1_at(n);
            for j in 0..=self.n_u {
                writeln!(
                    w,
                    "{:.6},{:.17e},{:.17e},{:.17e}",
                    self.time(n),
                    j as f64 / self.n_u as f64,
                    x[j],
                    d1[j]
                )?;
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama trajectory of the particle system started at `g`.
pub fn evolve(
    g: &QuantileState,
    profile: &FourierProfile,
    noise: &NoisePath,
    order: usize,
) -> Result<PathState> {
    check_compatible(profile, noise.common())?;
    let mut p = Particles::from_quantile(g, order)?;
    let n_u = g.n_u();
    let n_steps = noise.n_steps();
    let mut x = Vec::with_capacity((n_steps + 1) * n_u);
    let mut lf = Vec::with_capacity((n_steps + 1) * n_u);
    let mut d2 = (order >= 2).then(|| Vec::with_capacity((n_steps + 1) * n_u));
    let mut d3 = (order >= 3).then(|| Vec::with_capacity((n_steps + 1) * n_u));
    let mut stepper = Stepper::new(profile.k_max(), n_u);
    let record = |p: &Particles,
                  x: &mut Vec<f64>,
                  lf: &mut Vec<f64>,
                  d2: &mut Option<Vec<f64>>,
                  d3: &mut Option<Vec<f64>>| {
        x.extend_from_slice(&p.x);
        lf.extend_from_slice(&p.log_factor);
        if let (Some(s), Some(v)) = (d2.as_mut(), p.d2.as_ref()) {
            s.extend_from_slice(v);
        }
        if let (Some(s), Some(v)) = (d3.as_mut(), p.d3.as_ref()) {
            s.extend_from_slice(v);
        }
    };
    record(&p, &mut x, &mut lf, &mut d2, &mut d3);
    for _ in 0..n_steps {
        stepper.advance(&mut p, profile, noise)?;
        record(&p, &mut x, &mut lf, &mut d2, &mut d3);
    }
    Ok(PathState {
        dt: noise.dt(),
        n_u,
        order,
        x,
        log_factor: lf,
        base_slope: p.base_slope,
        d2,
        d3,
        dbeta: noise.dbeta().to_vec(),
        noise_key: noise.key(),
        beta_replica: noise.beta_replica(),
    })
}

/// Trajectory of the parametric flow `Z^x` and `d_x Z`.
#[derive(Debug, Clone)]
pub struct ParametricPath {
    n_points: usize,
    z: Vec<f64>,
    log_dz: Vec<f64>,
}

impl ParametricPath {
    pub fn n_steps(&self) -> usize {
        self.z.len() / self.n_points - 1
    }

    pub fn z_at(&self, n: usize) -> &[f64] {
        &self.z[n * self.n_points..(n + 1) * self.n_points]
    }

    pub fn log_dz_at(&self, n: usize) -> &[f64] {
        &self.log_dz[n * self.n_points..(n + 1) * self.n_points]
    }

    pub fn dz_at(&self, n: usize) -> Vec<f64> {
        self.log_dz_at(n).iter().map(|l| l.exp()).collect()
    }
}

/// Parametric flow from arbitrary starting points under the same update rule.
pub fn evolve_parametric(
    x0: &[f64],
    profile: &FourierProfile,
    noise: &NoisePath,
) -> Result<ParametricPath> {
    check_compatible(profile, noise.common())?;
    if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "need finite starting points"));
    }
    let mut p = Particles::from_points(x0);
    let n_steps = noise.n_steps();
    let mut z = Vec::with_capacity((n_steps + 1) * x0.len());
    let mut ld = Vec::with_capacity((n_steps + 1) * x0.len());
    z.extend_from_slice(&p.x);
    ld.extend_from_slice(&p.log_factor);
    let mut stepper = Stepper::new(profile.k_max(), x0.len());
    for _ in 0..n_steps {
        stepper.advance(&mut p, profile, noise)?;
        z.extend_from_slice(&p.x);
        ld.extend_from_slice(&p.log_factor);
    }
    Ok(ParametricPath {
        n_points: x0.len(),
        z,
        log_dz: ld,
    })
}

/// Sum of squared increments of `x(., u_j)`.
pub fn realized_qv(path: &PathState, u_index: usize) -> f64 {
    let j = u_index % path.n_u;
    let mut acc = 0.0;
    for n in 0..path.n_steps() {
        let d = path.x_open(n + 1)[j] - path.x_open(n)[j];
        acc += d * d;
    }
    acc
}

/// Terminal `d_u x` from the log-space representation and from a direct Euler
/// step of the linear variation equation on the same particle path.
pub fn variation_log_vs_euler(
    g: &QuantileState,
    profile: &FourierProfile,
    noise: &NoisePath,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_compatible(profile, noise.common())?;
    let mut p = Particles::from_quantile(g, 1)?;
    let mut z = p.base_slope.clone();
    let mut stepper = Stepper::new(profile.k_max(), p.len());
    for _ in 0..noise.n_steps() {
        let n = p.step;
        stepper.prepare(&p, profile, noise.common(), n, None);
        for (zj, v1) in z.iter_mut().zip(&stepper.field.v[1]) {
            *zj *= 1.0 + v1;
        }
        stepper.update(&mut p, noise.dbeta()[n], profile, noise.dt())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "direct variation",
                step: p.step,
            });
        }
    }
    Ok((p.d1(), z))
}

/// The five sup-in-time moment statistics of the particle derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentStatistic {
    /// `E sup_t ||d_u x_t||_{L_p}^p`
    DerivLp,
    /// `E sup_t |d_u x_t(0)|^p`
    DerivAtZero,
    /// `E sup_t ||d_u^j x_t||_{L_p}^p`
    HigherLp,
    /// `E sup_t ||d_u^j x_t||_{L_inf}^p`
    HigherSup,
    /// `E sup_t ||1 / d_u x_t||_{L_inf}^p`
    InverseSup,
}

impl MomentStatistic {
    pub const ALL: [MomentStatistic; 5] = [
        MomentStatistic::DerivLp,
        MomentStatistic::DerivAtZero,
        MomentStatistic::HigherLp,
        MomentStatistic::HigherSup,
        MomentStatistic::InverseSup,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MomentStatistic::DerivLp => "sup_t ||d_u x||_Lp^p",
            MomentStatistic::DerivAtZero => "sup_t |d_u x(0)|^p",
            MomentStatistic::HigherLp => "sup_t ||d_u^j x||_Lp^p",
            MomentStatistic::HigherSup => "sup_t ||d_u^j x||_Linf^p",
            MomentStatistic::InverseSup => "sup_t ||1/d_u x||_Linf^p",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub statistic: MomentStatistic,
    pub p: f64,
    pub j: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub paths: usize,
    /// Initial-condition functional on the right of the bound.
    pub reference: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

impl MomentReport {
    pub const CSV_HEADER: &'static str = "statistic,p,j,estimate,std_error,paths,reference,ratio,ratio_se";

    pub fn write_csv<W: Write>(rows: &[MomentReport], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(
                w,
                "\"{}\",{},{},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e}",
                r.statistic.name(),
                r.p,
                r.j,
                r.estimate,
                r.std_error,
                r.paths,
                r.reference,
                r.ratio,
                r.ratio_se
            )?;
        }
        Ok(())
    }
}

fn lp_pow(v: &[f64], p: f64) -> f64 {
    let t: Vec<f64> = v.iter().map(|x| x.abs().powf(p)).collect();
    stats::mean(&t)
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Reference functionals of the initial quantile, one per statistic.
fn moment_references(g: &QuantileState, p: f64, j: usize) -> Result<[f64; 5]> {
    let n = g.n_u();
    let d = [
        g.require_deriv1()?[..n].to_vec(),
        g.deriv2().map(|v| v[..n].to_vec()).unwrap_or_default(),
        g.deriv3().map(|v| v[..n].to_vec()).unwrap_or_default(),
    ];
    let dj = |i: usize| -> Result<&Vec<f64>> {
        d.get(i - 1)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::InvalidQuantile(format!("derivative of order {i} is required")))
    };
    let a2 = lp_pow(&d[0], p);
    let a3 = d[0][0].powf(p);
    let jp = j as f64 * p;
    let mut a4 = 1.0 + lp_pow(dj(j)?, p);
    for k in 1..j {
        a4 += sup_abs(dj(k)?).powf(jp);
    }
    let jh = j.min(2);
    let mut a5 = 1.0 + lp_pow(dj(jh + 1)?, p);
    for k in 1..=jh {
        a5 += sup_abs(dj(k)?).powf((jh as f64 + 1.0) * p);
    }
    let inv: Vec<f64> = d[0].iter().map(|v| 1.0 / v).collect();
    let a6 = 1.0 + d[0][0].powf(-p) + lp_pow(&inv, 4.0 * p) + lp_pow(dj(2)?, 2.0 * p) + sup_abs(&d[0]).powf(4.0 * p);
    Ok([a2, a3, a4, a5, a6])
}

/// Per-path sup-in-time values of the five statistics.
fn moment_path(
    g: &QuantileState,
    profile: &FourierProfile,
    noise: &NoisePath,
    p: f64,
    j: usize,
) -> Result<[f64; 5]> {
    let jh = j.min(2);
    let mut parts = Particles::from_quantile(g, j.max(jh).max(1))?;
    let mut stepper = Stepper::new(profile.k_max(), parts.len());
    let mut sup = [0.0f64; 5];
    let mut d1 = vec![0.0; parts.len()];
    let mut observe = |parts: &Particles, sup: &mut [f64; 5]| {
        parts.d1_into(&mut d1);
        let pick = |i: usize| -> &[f64] {
            match i {
                1 => &d1,
                2 => parts.d2.as_deref().unwrap(),
                _ => parts.d3.as_deref().unwrap(),
            }
        };
        let vals = [
            lp_pow(&d1, p),
            d1[0].abs().powf(p),
            lp_pow(pick(j), p),
            sup_abs(pick(jh)).powf(p),
            d1.iter().fold(0.0f64, |m, v| m.max(1.0 / v)).powf(p),
        ];
        for (s, v) in sup.iter_mut().zip(vals) {
            *s = s.max(v);
        }
    };
    observe(&parts, &mut sup);
    for _ in 0..noise.n_steps() {
        stepper.advance(&mut parts, profile, noise)?;
        observe(&parts, &mut sup);
    }
    Ok(sup)
}

/// Monte Carlo estimates of the five moment statistics over `m_paths`
/// independent paths `(seed, W-replica m, beta-replica 0)`.
#[allow(clippy::too_many_arguments)]
pub fn moment_suite(
    g: &QuantileState,
    profile: &FourierProfile,
    m_paths: usize,
    p: f64,
    j: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<MomentReport>> {
    let samples = moment_samples(g, profile, 0..m_paths, p, j, horizon, dt, seed)?;
    summarize_moments(g, &samples, p, j)
}

/// Per-path statistics for path indices `range` (for nested replication).
#[allow(clippy::too_many_arguments)]
pub fn moment_samples(
    g: &QuantileState,
    profile: &FourierProfile,
    range: std::ops::Range<usize>,
    p: f64,
    j: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<[f64; 5]>> {
    if !(1..=3).contains(&j) {
        return Err(invalid("j", "must be 1, 2 or 3"));
    }
    if !(p >= 1.0) {
        return Err(invalid("p", "must be at least 1"));
    }
    if g.order() < j.min(2) + 1 {
        return Err(Error::InvalidQuantile("not enough derivatives for the moment suite".into()));
    }
    let n_steps = steps_for(horizon, dt)?;
    range
        .into_par_iter()
        .map(|m| {
            let common = std::sync::Arc::new(CommonNoise::sample(
                crate::noise::NoiseKey::new(seed, m as u64),
                profile.k_max(),
                n_steps,
                dt,
            )?);
            moment_path(g, profile, &common.with_beta(0), p, j)
        })
        .collect()
}

pub fn summarize_moments(
    g: &QuantileState,
    samples: &[[f64; 5]],
    p: f64,
    j: usize,
) -> Result<Vec<MomentReport>> {
    let refs = moment_references(g, p, j)?;
    let mut out = Vec::with_capacity(5);
    for (i, stat) in MomentStatistic::ALL.iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "moment statistic",
                step: 0,
            });
        }
        let (est, se) = stats::mean_se(&col);
        out.push(MomentReport {
            statistic: *stat,
            p,
            j,
            estimate: est,
            std_error: se,
            paths: samples.len(),
            reference: refs[i],
            ratio: est / refs[i],
            ratio_se: se / refs[i],
        });
    }
    Ok(out)
}

/// Number of steps for a horizon that must be a multiple of `dt`.
pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(invalid("dt", "need dt > 0 and a nonnegative horizon"));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(invalid("t", format!("{horizon} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_noise, NoiseKey};
    use std::sync::Arc;

    fn standard_g(n_u: usize) -> QuantileState {
        QuantileState::sine_perturbed(n_u, 0.3).unwrap()
    }

    #[test]
    fn zero_profile_is_pure_translation() {
        let g = standard_g(32);
        let prof = FourierProfile::zero(4);
        let noise = sample_noise(&prof, 3, 100, 1e-3).unwrap();
        let path = evolve(&g, &prof, &noise, 3).unwrap();
        let beta: f64 = noise.dbeta().iter().sum();
        let x = path.x_at(100);
        for j in 0..=32 {
            assert!((x[j] - g.values()[j] - beta).abs() < 1e-12);
        }
        assert_eq!(path.d1_at(100), {
            let mut v = g.deriv1().unwrap()[..32].to_vec();
            v.push(v[0]);
            v
        });
    }

    #[test]
    fn zero_noise_gives_deterministic_log_drift() {
        let g = standard_g(16);
        let prof = FourierProfile::build(4.0, 1.0, 8).unwrap();
        let common = Arc::new(CommonNoise::zero(8, 50, 1e-3).unwrap());
        let noise = common.without_beta();
        let path = evolve(&g, &prof, &noise, 1).unwrap();
        assert_eq!(path.x_at(50), path.x_at(0));
        let expect = -0.5 * 50.0 * 1e-3 * prof.sum_k2();
        for l in path.log_factor_open(50) {
            assert!((l - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_unrolled_two_steps() {
        let n_u = 4;
        let g = standard_g(n_u);
        let prof = FourierProfile::build(4.0, 1.0, 1).unwrap();
        let common = Arc::new(CommonNoise::sample(NoiseKey::new(11, 0), 1, 2, 1e-2).unwrap());
        let noise = common.with_beta(0);
        let path = evolve(&g, &prof, &noise, 2).unwrap();
        let f = |k: i64| prof.f(k);
        for j in 0..n_u {
            let mut x = g.values()[j];
            let mut l = 0.0;
            let mut d2 = g.deriv2().unwrap()[j];
            let g1 = g.deriv1().unwrap()[j];
            for n in 0..2 {
                let re = common.re_row(n);
                let im = common.im_row(n);
                let (mut v, mut v1, mut v2) = (0.0, 0.0, 0.0);
                for k in -1i64..=1 {
                    let (wr, wi) = (re[(k + 1) as usize], im[(k + 1) as usize]);
                    let kf = k as f64;
                    // Re(e^{-ikx}(wr + i wi)) and its x-derivatives
                    v += f(k) * ((kf * x).cos() * wr + (kf * x).sin() * wi);
                    v1 += f(k) * kf * (-(kf * x).sin() * wr + (kf * x).cos() * wi);
                    v2 += f(k) * kf * kf * (-(kf * x).cos() * wr - (kf * x).sin() * wi);
                }
                let d1 = g1 * f64::exp(l);
                d2 += v2 * d1 * d1 + v1 * d2;
                x += v + noise.dbeta()[n];
                l += v1 - 0.5 * 1e-2 * prof.sum_k2();
            }
            assert!((path.x_open(2)[j] - x).abs() < 1e-14);
            assert!((path.log_factor_open(2)[j] - l).abs() < 1e-14);
            assert!((path.d2_at(2).unwrap()[j] - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn kunita_identity_is_bitwise() {
        let g = standard_g(64);
        let prof = FourierProfile::build(4.0, 1.0, 16).unwrap();
        let noise = sample_noise(&prof, 5, 200, 1e-3).unwrap();
        let path = evolve(&g, &prof, &noise, 1).unwrap();
        let par = evolve_parametric(&g.values()[..64], &prof, &noise).unwrap();
        for n in [0, 1, 100, 200] {
            assert_eq!(par.z_at(n), path.x_open(n));
            assert_eq!(par.dz_at(n), path.factor_at(n)[..64].to_vec());
        }
        assert!(par.dz_at(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn qv_zero_horizon() {
        let g = standard_g(8);
        let prof = FourierProfile::build(4.0, 1.0, 2).unwrap();
        let noise = sample_noise(&prof, 5, 1, 1e-3).unwrap();
        let path = evolve(&g, &prof, &noise, 1).unwrap();
        assert!(realized_qv(&path, 0) > 0.0);
        let trimmed = PathState {
            x: path.x[..8].to_vec(),
            log_factor: path.log_factor[..8].to_vec(),
            ..path.clone()
        };
        assert_eq!(realized_qv(&trimmed, 0), 0.0);
    }

    #[test]
    fn moments_ratio_one_without_common_noise() {
        let g = standard_g(32);
        let prof = FourierProfile::zero(4);
        let r = moment_suite(&g, &prof, 4, 2.0, 1, 0.05, 1e-3, 1).unwrap();
        assert_eq!(r[0].ratio, 1.0);
        assert_eq!(r[0].std_error, 0.0);
    }

    #[test]
    fn rejects_bad_order_and_mismatched_noise() {
        let g = QuantileState::new(
            crate::geometry::u_grid(8).iter().map(|u| TWO_PI * u).collect(),
            Some(vec![TWO_PI; 9]),
            None,
            None,
        )
        .unwrap();
        let prof = FourierProfile::build(4.0, 1.0, 2).unwrap();
        let noise = sample_noise(&prof, 1, 4, 1e-3).unwrap();
        assert!(evolve(&g, &prof, &noise, 2).is_err());
        let big = FourierProfile::build(4.0, 1.0, 3).unwrap();
        assert!(matches!(evolve(&g, &big, &noise, 1), Err(Error::NoiseMismatch(_))));
    }
}
