//! Torus metric, circular W2 and the density/quantile correspondence.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::interp::{MonotoneCubic, TrigInterpolant};

pub const TWO_PI: f64 = 2.0 * PI;

const NORMALIZATION_TOL: f64 = 1e-10;
const PERIODICITY_TOL: f64 = 1e-10;
const INVERSION_TOL: f64 = 1e-12;

/// Geodesic distance on `R / 2 pi Z`.
pub fn torus_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(TWO_PI);
    d.min(TWO_PI - d)
}

/// Open uniform grid `2 pi i / n`, `i = 0..n`.
pub fn x_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| TWO_PI * i as f64 / n as f64).collect()
}

/// Closed uniform grid `j / n`, `j = 0..=n`.
pub fn u_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|j| j as f64 / n as f64).collect()
}

/// Strictly positive probability density sampled on the open grid of `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusDensity {
    values: Vec<f64>,
}

impl TorusDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidDensity("need at least two grid values".into()));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidDensity(format!(
                "value {} at node {i} is not strictly positive",
                values[i]
            )));
        }
        let mass = trapezoid_periodic(&values, TWO_PI);
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDensity(format!("total mass {mass} differs from 1")));
        }
        Ok(Self { values })
    }

    /// Samples `f` on the grid and rescales to unit mass.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw: Vec<f64> = x_grid(n).into_iter().map(f).collect();
        Self::normalized(raw)
    }

    /// Rescales positive values to unit mass.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let mass = trapezoid_periodic(&values, TWO_PI);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidDensity(format!("cannot normalize mass {mass}")));
        }
        for v in &mut values {
            *v /= mass;
        }
        Self::new(values)
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0 / TWO_PI; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> Vec<f64> {
        x_grid(self.values.len())
    }

    pub fn interpolant(&self) -> TrigInterpolant {
        TrigInterpolant::from_samples(&self.values, TWO_PI)
    }

    /// Density rotated by `shift` (evaluated spectrally).
    pub fn rotated(&self, shift: f64) -> Result<Self> {
        let ti = self.interpolant();
        Self::from_fn(self.len(), |x| ti.eval(x - shift))
    }

    pub fn l1_distance(&self, other: &TorusDensity) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "densities on grids of size {} and {}",
                self.len(),
                other.len()
            )));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(trapezoid_periodic(&diff, TWO_PI))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "TorusDensity,{}", self.len())?;
        for (x, v) in self.grid().iter().zip(&self.values) {
            writeln!(w, "{x:.17e},{v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (n, rows) = read_two_column(r, "TorusDensity")?;
        if rows.len() != n {
            return Err(Error::Config(format!("expected {n} rows, found {}", rows.len())));
        }
        Self::normalized(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Increasing pseudo-periodic map `g` sampled on the closed grid `j / n_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileState {
    values: Vec<f64>,
    deriv1: Option<Vec<f64>>,
    deriv2: Option<Vec<f64>>,
    deriv3: Option<Vec<f64>>,
}

impl QuantileState {
    pub fn new(
        values: Vec<f64>,
        deriv1: Option<Vec<f64>>,
        deriv2: Option<Vec<f64>>,
        deriv3: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = values.len();
        if n < 3 {
            return Err(Error::InvalidQuantile("need at least three grid nodes".into()));
        }
        for d in [&deriv1, &deriv2, &deriv3].into_iter().flatten() {
            if d.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "derivative length {} vs {} nodes",
                    d.len(),
                    n
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQuantile("non-finite value".into()));
        }
        let gap = values[n - 1] - values[0] - TWO_PI;
        if gap.abs() > PERIODICITY_TOL {
            return Err(Error::InvalidQuantile(format!(
                "g(1) - g(0) - 2pi = {gap:e}"
            )));
        }
        if let Some(d1) = &deriv1 {
            if let Some(j) = d1.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidQuantile(format!(
                    "derivative {} at node {j} is not positive",
                    d1[j]
                )));
            }
            if (d1[n - 1] - d1[0]).abs() > PERIODICITY_TOL {
                return Err(Error::InvalidQuantile("derivative is not 1-periodic".into()));
            }
        }
        for d in [&deriv2, &deriv3].into_iter().flatten() {
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidQuantile("non-finite derivative".into()));
            }
        }
        Ok(Self {
            values,
            deriv1,
            deriv2,
            deriv3,
        })
    }

    /// Samples `g` and its first three derivatives from closures.
    pub fn from_fns(
        n_u: usize,
        g: impl Fn(f64) -> f64,
        g1: impl Fn(f64) -> f64,
        g2: impl Fn(f64) -> f64,
        g3: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let u = u_grid(n_u);
        Self::new(
            u.iter().map(|&v| g(v)).collect(),
            Some(u.iter().map(|&v| g1(v)).collect()),
            Some(u.iter().map(|&v| g2(v)).collect()),
            Some(u.iter().map(|&v| g3(v)).collect()),
        )
    }

    /// `g(u) = 2 pi u + amp sin(2 pi u)`; `amp = 0` is the uniform quantile.
    pub fn sine_perturbed(n_u: usize, amp: f64) -> Result<Self> {
        if amp.abs() >= 1.0 {
            return Err(crate::error::invalid("amp", "|amp| must be < 1 for monotonicity"));
        }
        let w = TWO_PI;
        Self::from_fns(
            n_u,
            |u| w * u + amp * (w * u).sin(),
            |u| w + amp * w * (w * u).cos(),
            |u| -amp * w * w * (w * u).sin(),
            |u| -amp * w * w * w * (w * u).cos(),
        )
    }

    /// `g + rho k` with first derivative; rejects a `rho` that breaks
    /// monotonicity.
    pub fn perturbed(&self, k: &PerturbationDirection, rho: f64) -> Result<Self> {
        let d1 = self.require_deriv1()?;
        if k.n_u() != self.n_u() {
            return Err(Error::ShapeMismatch("direction and quantile grids differ".into()));
        }
        let v = self.values.iter().zip(k.values()).map(|(g, h)| g + rho * h).collect();
        let dv: Vec<f64> = d1.iter().zip(k.deriv1()).map(|(g, h)| g + rho * h).collect();
        let min = dv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(crate::error::invalid(
                "rho",
                format!("g' + rho k' reaches {min:e}, the perturbed quantile is not increasing"),
            ));
        }
        Self::new(v, Some(dv), None, None)
    }

    /// Builds derivatives by spectral differentiation of the periodic part.
    pub fn from_values_spectral(values: Vec<f64>) -> Result<Self> {
        let n = values.len() - 1;
        let per: Vec<f64> = (0..n)
            .map(|j| values[j] - TWO_PI * j as f64 / n as f64)
            .collect();
        let ti = TrigInterpolant::from_samples(&per, 1.0);
        let mut d = [vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]];
        for j in 0..=n {
            let e = ti.eval_derivs(j as f64 / n as f64);
            d[0][j] = e[1] + TWO_PI;
            d[1][j] = e[2];
            d[2][j] = e[3];
        }
        let [d1, d2, d3] = d;
        Self::new(values, Some(d1), Some(d2), Some(d3))
    }

    pub fn n_u(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn deriv1(&self) -> Option<&[f64]> {
        self.deriv1.as_deref()
    }

    pub fn deriv2(&self) -> Option<&[f64]> {
        self.deriv2.as_deref()
    }

    pub fn deriv3(&self) -> Option<&[f64]> {
        self.deriv3.as_deref()
    }

    /// Highest available derivative order.
    pub fn order(&self) -> usize {
        match (&self.deriv1, &self.deriv2, &self.deriv3) {
            (Some(_), Some(_), Some(_)) => 3,
            (Some(_), Some(_), None) => 2,
            (Some(_), None, _) => 1,
            _ => 0,
        }
    }

    pub fn require_deriv1(&self) -> Result<&[f64]> {
        self.deriv1
            .as_deref()
            .ok_or_else(|| Error::InvalidQuantile("first derivative is required".into()))
    }

    /// Value at an arbitrary `u`, using the pseudo-periodic extension and
    /// trigonometric interpolation of `g(u) - 2 pi u`.
    pub fn eval(&self, u: f64) -> f64 {
        self.periodic_part().eval(u) + TWO_PI * u
    }

    fn periodic_part(&self) -> TrigInterpolant {
        let n = self.n_u();
        let per: Vec<f64> = (0..n)
            .map(|j| self.values[j] - TWO_PI * j as f64 / n as f64)
            .collect();
        TrigInterpolant::from_samples(&per, 1.0)
    }

    /// Representative `u -> g(u + c) - 2 pi m` of the same class.
    pub fn shifted(&self, c: f64, m: i64) -> Result<Self> {
        let n = self.n_u();
        let per = self.periodic_part();
        let d1 = self.require_deriv1()?;
        let tis: Vec<TrigInterpolant> = [Some(d1), self.deriv2(), self.deriv3()]
            .into_iter()
            .flatten()
            .map(|d| TrigInterpolant::from_samples(&d[..n], 1.0))
            .collect();
        let u = u_grid(n);
        let values: Vec<f64> = u
            .iter()
            .map(|&v| per.eval(v + c) + TWO_PI * (v + c) - TWO_PI * m as f64)
            .collect();
        let mut ds: Vec<Option<Vec<f64>>> = tis
            .iter()
            .map(|ti| {
                let mut d: Vec<f64> = u.iter().map(|&v| ti.eval(v + c)).collect();
                d[n] = d[0];
                Some(d)
            })
            .collect();
        ds.resize(3, None);
        let mut values = values;
        values[n] = values[0] + TWO_PI;
        Self::new(values, ds[0].take(), ds[1].take(), ds[2].take())
    }

    /// Canonical representative: `g(0)` is a multiple of `2 pi` shifted into
    /// `[0, 2 pi)`, i.e. the quantile anchored at `x0 = 0`.
    pub fn canonical(&self) -> Result<Self> {
        let d1 = self.require_deriv1()?;
        let g0 = self.values[0];
        let target = TWO_PI * (g0 / TWO_PI).ceil();
        let n = self.n_u();
        let mc = MonotoneCubic::new(
            u_grid(n),
            self.values.clone(),
            d1.to_vec(),
        )?;
        let mut c = mc.inverse(target.min(self.values[n]), INVERSION_TOL)?;
        // Newton polish on the spectral representation
        let per = self.periodic_part();
        for _ in 0..3 {
            let e = per.eval_derivs(c);
            let f = e[0] + TWO_PI * c - target;
            c -= f / (e[1] + TWO_PI);
        }
        let m = (target / TWO_PI).round() as i64;
        self.shifted(c, m)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "QuantileState,{}", self.n_u())?;
        for (u, v) in u_grid(self.n_u()).iter().zip(&self.values) {
            writeln!(w, "{u:.17e},{v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (n, rows) = read_two_column(r, "QuantileState")?;
        if rows.len() != n + 1 {
            return Err(Error::Config(format!(
                "expected {} rows, found {}",
                n + 1,
                rows.len()
            )));
        }
        Self::from_values_spectral(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// 1-periodic direction `h` with its derivative on the closed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDirection {
    values: Vec<f64>,
    deriv1: Vec<f64>,
}

impl PerturbationDirection {
    pub fn new(values: Vec<f64>, deriv1: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 3 || deriv1.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "direction arrays of length {} and {}",
                n,
                deriv1.len()
            )));
        }
        if values.iter().chain(&deriv1).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDirection("non-finite entry".into()));
        }
        if (values[n - 1] - values[0]).abs() > PERIODICITY_TOL
            || (deriv1[n - 1] - deriv1[0]).abs() > PERIODICITY_TOL
        {
            return Err(Error::InvalidDirection("h is not 1-periodic".into()));
        }
        Ok(Self { values, deriv1 })
    }

    pub fn from_fns(n_u: usize, h: impl Fn(f64) -> f64, h1: impl Fn(f64) -> f64) -> Result<Self> {
        let u = u_grid(n_u);
        let mut values: Vec<f64> = u.iter().map(|&v| h(v)).collect();
        let mut deriv1: Vec<f64> = u.iter().map(|&v| h1(v)).collect();
        // enforce exact periodicity of the closed-grid endpoint
        values[n_u] = values[0];
        deriv1[n_u] = deriv1[0];
        Self::new(values, deriv1)
    }

    /// `h(u) = amp cos(2 pi m u)`.
    pub fn cosine(n_u: usize, amp: f64, m: u32) -> Result<Self> {
        let w = TWO_PI * m as f64;
        Self::from_fns(n_u, |u| amp * (w * u).cos(), |u| -amp * w * (w * u).sin())
    }

    pub fn zero(n_u: usize) -> Self {
        Self {
            values: vec![0.0; n_u + 1],
            deriv1: vec![0.0; n_u + 1],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn deriv1(&self) -> &[f64] {
        &self.deriv1
    }

    pub fn n_u(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch("directions on different grids".into()));
        }
        let lin = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
        };
        Self::new(lin(&self.values, &other.values), lin(&self.deriv1, &other.deriv1))
    }

    /// Direction `g' h`, with derivative `g'' h + g' h'`.
    pub fn multiplied_by(&self, g: &QuantileState) -> Result<Self> {
        let d1 = g.require_deriv1()?;
        let d2 = g
            .deriv2()
            .ok_or_else(|| Error::InvalidQuantile("second derivative is required".into()))?;
        if d1.len() != self.values.len() {
            return Err(Error::ShapeMismatch("direction and quantile grids differ".into()));
        }
        let v = (0..d1.len()).map(|j| d1[j] * self.values[j]).collect();
        let dv = (0..d1.len())
            .map(|j| d2[j] * self.values[j] + d1[j] * self.deriv1[j])
            .collect();
        Self::new(v, dv)
    }

    /// Direction `h / g'` (so that `g' * (h / g') = h`), with derivative.
    pub fn divided_by(&self, g: &QuantileState) -> Result<Self> {
        let d1 = g.require_deriv1()?;
        let d2 = g
            .deriv2()
            .ok_or_else(|| Error::InvalidQuantile("second derivative is required".into()))?;
        if d1.len() != self.values.len() {
            return Err(Error::ShapeMismatch("direction and quantile grids differ".into()));
        }
        let mut v = Vec::with_capacity(d1.len());
        let mut dv = Vec::with_capacity(d1.len());
        for j in 0..d1.len() {
            v.push(self.values[j] / d1[j]);
            dv.push((self.deriv1[j] * d1[j] - self.values[j] * d2[j]) / (d1[j] * d1[j]));
        }
        let n = v.len() - 1;
        v[n] = v[0];
        dv[n] = dv[0];
        Self::new(v, dv)
    }
}

/// Trapezoid rule for a periodic integrand sampled on an open grid of the
/// given period.
pub fn trapezoid_periodic(values: &[f64], period: f64) -> f64 {
    crate::stats::pairwise_sum(values) * period / values.len() as f64
}

/// `F_0(x) = int_{x0}^x p` as a spectral antiderivative.
struct Cdf {
    p: TrigInterpolant,
    x0: f64,
    mass: f64,
    offset: f64,
}

impl Cdf {
    fn new(p: &TorusDensity, x0: f64) -> Self {
        let ti = p.interpolant();
        let mass = ti.mean() * TWO_PI;
        let offset = ti.antiderivative_zero_mean(x0);
        Self {
            p: ti,
            x0,
            mass,
            offset,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let raw = self.p.mean() * (x - self.x0) + self.p.antiderivative_zero_mean(x) - self.offset;
        raw / self.mass
    }

    fn density(&self, x: f64) -> [f64; 4] {
        let mut d = self.p.eval_derivs(x);
        for v in &mut d {
            *v /= self.mass;
        }
        d
    }
}

/// Quantile function of `p` anchored at `x0` (`g(0) = x0`) on the closed
/// grid with `n_u` cells, with first three derivatives.
pub fn density_to_quantile(p: &TorusDensity, x0: f64, n_u: usize) -> Result<QuantileState> {
    if p.values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidDensity("non-positive value".into()));
    }
    if n_u < 2 {
        return Err(crate::error::invalid("n_u", "need at least two cells"));
    }
    let cdf = Cdf::new(p, x0);
    let nx = p.len();
    let xs: Vec<f64> = (0..=nx).map(|i| x0 + TWO_PI * i as f64 / nx as f64).collect();
    let mut fs: Vec<f64> = xs.iter().map(|&x| cdf.eval(x)).collect();
    fs[0] = 0.0;
    fs[nx] = 1.0;
    let slopes: Vec<f64> = xs.iter().map(|&x| cdf.density(x)[0]).collect();
    let mc = MonotoneCubic::new(xs, fs, slopes)?;

    let mut values = Vec::with_capacity(n_u + 1);
    let mut d1 = Vec::with_capacity(n_u + 1);
    let mut d2 = Vec::with_capacity(n_u + 1);
    let mut d3 = Vec::with_capacity(n_u + 1);
    for j in 0..=n_u {
        let u = j as f64 / n_u as f64;
        let x = if j == 0 {
            x0
        } else if j == n_u {
            x0 + TWO_PI
        } else {
            let mut x = mc.inverse(u, INVERSION_TOL)?;
            for _ in 0..2 {
                let r = cdf.eval(x) - u;
                x -= r / cdf.density(x)[0];
            }
            x
        };
        let pd = cdf.density(x);
        if !(pd[0] > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "interpolated density {} is not positive",
                pd[0]
            )));
        }
        let g1 = 1.0 / pd[0];
        let g2 = -pd[1] * g1 * g1 * g1;
        let g3 = -pd[2] * g1.powi(4) - 3.0 * pd[1] * g1 * g1 * g2;
        values.push(x);
        d1.push(g1);
        d2.push(g2);
        d3.push(g3);
    }
    d1[n_u] = d1[0];
    d2[n_u] = d2[0];
    d3[n_u] = d3[0];
    QuantileState::new(values, Some(d1), Some(d2), Some(d3))
}

/// Density `p(x) = 1 / g'(g^{-1}(x))` on the open grid with `n_x` nodes.
pub fn quantile_to_density(g: &QuantileState, n_x: usize) -> Result<TorusDensity> {
    let d1 = g.require_deriv1()?;
    let n = g.n_u();
    let mc = MonotoneCubic::new(u_grid(n), g.values.clone(), d1.to_vec())?;
    let per = g.periodic_part();
    let d1i = TrigInterpolant::from_samples(&d1[..n], 1.0);
    let g0 = g.values[0];
    let mut out = Vec::with_capacity(n_x);
    for x in x_grid(n_x) {
        // lift x into [g(0), g(0) + 2 pi)
        let xl = x + TWO_PI * ((g0 - x) / TWO_PI).ceil();
        let xl = if xl >= g0 + TWO_PI { xl - TWO_PI } else { xl };
        let mut u = mc.inverse(xl.clamp(g0, g.values[n]), INVERSION_TOL)?;
        for _ in 0..2 {
            let e = per.eval_derivs(u);
            u -= (e[0] + TWO_PI * u - xl) / (e[1] + TWO_PI);
        }
        let slope = d1i.eval(u);
        if !(slope > 0.0) {
            return Err(Error::InvalidQuantile(format!(
                "interpolated derivative {slope} is not positive"
            )));
        }
        out.push(1.0 / slope);
    }
    TorusDensity::normalized(out)
}

/// Quantile function of a density represented by monotone cubic pieces with
/// knots at the CDF values of the x-grid, so steep regions stay resolved.
struct KnotQuantile {
    cubic: MonotoneCubic,
}

impl KnotQuantile {
    fn new(p: &TorusDensity) -> Result<Self> {
        let cdf = Cdf::new(p, 0.0);
        let nx = p.len();
        let xs: Vec<f64> = (0..=nx).map(|i| TWO_PI * i as f64 / nx as f64).collect();
        let mut us: Vec<f64> = xs.iter().map(|&x| cdf.eval(x)).collect();
        us[0] = 0.0;
        us[nx] = 1.0;
        let slopes: Vec<f64> = xs.iter().map(|&x| 1.0 / cdf.density(x)[0]).collect();
        Ok(Self {
            cubic: MonotoneCubic::new(us, xs, slopes)?,
        })
    }

    fn eval(&self, u: f64) -> f64 {
        let k = u.floor();
        self.cubic.eval(u - k) + TWO_PI * k
    }

    fn knots(&self) -> &[f64] {
        self.cubic.knots()
    }
}

/// Circular 2-Wasserstein distance via the shift reduction
/// `W2^2 = min_c int_0^1 |g_mu(u) - g_nu(u + c)|^2 du`.
///
/// Both quantiles are piecewise cubic, so the integral is evaluated exactly
/// on the merged knot set with 4-point Gauss–Legendre per piece.
pub fn circular_wasserstein2(mu: &TorusDensity, nu: &TorusDensity) -> Result<f64> {
    TorusDensity::new(mu.values.clone())?;
    TorusDensity::new(nu.values.clone())?;
    let qm = KnotQuantile::new(mu)?;
    let qn = KnotQuantile::new(nu)?;
    const GL_X: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const GL_W: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let cost = |c: f64| {
        let mut breaks: Vec<f64> = qm.knots().to_vec();
        for &v in qn.knots() {
            let w = v - c;
            let w = w - w.floor();
            breaks.push(w);
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut terms = Vec::with_capacity(breaks.len());
        for win in breaks.windows(2) {
            let (a, b) = (win[0], win[1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = 0.0;
            for (x, w) in GL_X.iter().zip(GL_W) {
                let u = mid + half * x;
                let d = qm.eval(u) - qn.eval(u + c);
                acc += w * d * d;
            }
            terms.push(acc * half);
        }
        crate::stats::pairwise_sum(&terms)
    };
    // coarse scan over [-1, 1], then golden section around the best cell
    let scan = 64;
    let step = 2.0 / scan as f64;
    let (mut best_c, mut best) = (0.0, f64::INFINITY);
    for i in 0..=scan {
        let c = -1.0 + i as f64 * step;
        let v = cost(c);
        if v < best {
            best = v;
            best_c = c;
        }
    }
    let (mut a, mut b) = (best_c - step, best_c + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    while b - a > 1e-12 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = cost(x2);
        }
    }
    let v = best.min(f1).min(f2);
    Ok(v.max(0.0).sqrt())
}

fn read_two_column<R: BufRead>(r: R, kind: &str) -> Result<(usize, Vec<(f64, f64)>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty file".into()))??;
    let mut parts = header.trim().split(',');
    if parts.next() != Some(kind) {
        return Err(Error::Config(format!("expected header `{kind},<n>`, got `{header}`")));
    }
    let n: usize = parts
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Config(format!("bad grid size in header `{header}`")))?;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("malformed row `{line}`")))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        rows.push((a, b));
    }
    Ok((n, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(torus_distance(0.0, 0.0), 0.0);
        assert!((torus_distance(0.1, TWO_PI - 0.1) - 0.2).abs() < 1e-14);
        assert!((torus_distance(1.0, 4.0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_density_gives_linear_quantile() {
        let p = TorusDensity::uniform(512);
        let g = density_to_quantile(&p, 0.0, 256).unwrap();
        for (j, v) in g.values().iter().enumerate() {
            assert!((v - TWO_PI * j as f64 / 256.0).abs() < 1e-12);
        }
        for d in g.deriv1().unwrap() {
            assert!((d - TWO_PI).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_quantile_gives_uniform_density() {
        let g = QuantileState::sine_perturbed(256, 0.0).unwrap();
        let p = quantile_to_density(&g, 512).unwrap();
        for v in p.values() {
            assert!((v - 1.0 / TWO_PI).abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_density_round_trip() {
        let p = TorusDensity::from_fn(512, |x| (1.0 + 0.5 * x.cos()) / TWO_PI).unwrap();
        let g = density_to_quantile(&p, 0.0, 512).unwrap();
        // g' = 1 / p(g)
        for (v, d) in g.values().iter().zip(g.deriv1().unwrap()) {
            let pv = (1.0 + 0.5 * v.cos()) / TWO_PI;
            assert!((d - 1.0 / pv).abs() < 1e-9);
        }
        let back = quantile_to_density(&g, 512).unwrap();
        let err = p
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "round-trip sup error {err}");
    }

    #[test]
    fn shifted_base_point_is_a_u_translation() {
        let p = TorusDensity::from_fn(512, |x| (1.0 + 0.5 * x.cos()) / TWO_PI).unwrap();
        let g0 = density_to_quantile(&p, 0.0, 256).unwrap();
        let g1 = density_to_quantile(&p, 1.3, 256).unwrap();
        let c0 = g0.canonical().unwrap();
        let c1 = g1.canonical().unwrap();
        for (a, b) in c0.values().iter().zip(c1.values()) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn sine_quantile_round_trip_through_density() {
        let g = QuantileState::sine_perturbed(512, 0.3).unwrap();
        let p = quantile_to_density(&g, 512).unwrap();
        let back = density_to_quantile(&p, 0.0, 512).unwrap();
        let err = g
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn w2_identity_and_rotated_uniform() {
        let p = TorusDensity::from_fn(256, |x| (1.0 + 0.5 * x.cos()) / TWO_PI).unwrap();
        assert!(circular_wasserstein2(&p, &p).unwrap() < 1e-6);
        let u = TorusDensity::uniform(256);
        let ur = u.rotated(1.234).unwrap();
        assert!(circular_wasserstein2(&u, &ur).unwrap() < 1e-6);
    }

    #[test]
    fn w2_translation_of_bump() {
        let bump = |c: f64| {
            move |x: f64| {
                let d = torus_distance(x, c);
                (-d * d / (2.0 * 0.1 * 0.1)).exp() + 1e-6
            }
        };
        let a = TorusDensity::from_fn(512, bump(0.0)).unwrap();
        let b = TorusDensity::from_fn(512, bump(0.5)).unwrap();
        let w = circular_wasserstein2(&a, &b).unwrap();
        assert!((w - 0.5).abs() < 1e-3, "{w}");
        let w_ba = circular_wasserstein2(&b, &a).unwrap();
        assert!((w - w_ba).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let p = TorusDensity::from_fn(64, |x| (1.0 + 0.2 * x.sin()) / TWO_PI).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = TorusDensity::read_csv(buf.as_slice()).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = QuantileState::sine_perturbed(64, 0.3).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let h = QuantileState::read_csv(buf.as_slice()).unwrap();
        for (a, b) in g.deriv1().unwrap().iter().zip(h.deriv1().unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(TorusDensity::new(vec![0.5, -0.1, 0.2]).is_err());
        assert!(TorusDensity::new(vec![1.0; 8]).is_err());
        let bad = QuantileState::new(vec![0.0, 1.0, 5.0], None, None, None);
        assert!(bad.is_err());
        assert!(PerturbationDirection::new(vec![0.0, 1.0, 0.5], vec![0.0; 3]).is_err());
        let g = QuantileState::new(vec![0.0, 1.0, TWO_PI], None, None, None).unwrap();
        assert!(quantile_to_density(&g, 16).is_err());
    }
}
