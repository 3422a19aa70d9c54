//! Plain-text `key = value` experiment configuration and run manifests.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
//! Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::bel::{BelSetup, EpsRule};
use crate::error::{Error, Result};
use crate::functional::{Direction, TestFunctional, TrigPoly};
use crate::geometry::{density_to_quantile, PerturbationDirection, QuantileState, TorusDensity};
use crate::montecarlo::SimParams;
use crate::noise::FourierProfile;
use crate::sde::steps_for;

/// Reference truncation for the manifest tail bound.
pub const TAIL_REFERENCE_K: usize = 4096;

/// Initial condition.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// `g(u) = 2 pi u + amp sin(2 pi u)`.
    Sine(f64),
    Uniform,
    /// Density CSV `x,p` on the open grid.
    DensityFile(PathBuf),
    /// Quantile CSV as written by `QuantileState::write_csv`.
    QuantileFile(PathBuf),
}

impl InitialSpec {
    fn parse(s: &str) -> Result<Self> {
        let (head, rest) = split_head(s);
        match (head, rest) {
            ("uniform", None) => Ok(Self::Uniform),
            ("sine", Some(a)) => Ok(Self::Sine(parse_f64("initial", a)?)),
            ("density", Some(p)) => Ok(Self::DensityFile(PathBuf::from(p))),
            ("quantile", Some(p)) => Ok(Self::QuantileFile(PathBuf::from(p))),
            _ => Err(cfg(format!(
                "initial: expected uniform, sine:AMP, density:FILE or quantile:FILE, got `{s}`"
            ))),
        }
    }

    fn render(&self) -> String {
        match self {
            Self::Sine(a) => format!("sine:{a}"),
            Self::Uniform => "uniform".into(),
            Self::DensityFile(p) => format!("density:{}", p.display()),
            Self::QuantileFile(p) => format!("quantile:{}", p.display()),
        }
    }
}

/// Perturbation direction `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionSpec {
    /// `amp cos(2 pi m u)`.
    Cos { amp: f64, m: u32 },
    Zero,
}

impl DirectionSpec {
    fn parse(s: &str) -> Result<Self> {
        if s == "zero" {
            return Ok(Self::Zero);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["cos", a, m] => Ok(Self::Cos {
                amp: parse_f64("direction", a)?,
                m: m.trim().parse().map_err(|_| cfg(format!("direction: bad mode `{m}`")))?,
            }),
            _ => Err(cfg(format!("direction: expected zero or cos:AMP:M, got `{s}`"))),
        }
    }

    fn render(&self) -> String {
        match self {
            Self::Cos { amp, m } => format!("cos:{amp}:{m}"),
            Self::Zero => "zero".into(),
        }
    }
}

/// Which built-in functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionalKind {
    Linear,
    Interaction,
}

/// All knobs of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub alpha: f64,
    pub c: f64,
    pub k_max: usize,
    pub theta: f64,
    pub n_u: usize,
    pub n_x: usize,
    pub dt: f64,
    /// Fixed horizon; every time knob must lie in `(0, T]`.
    pub horizon: f64,
    pub t: f64,
    pub eps: f64,
    pub rho: f64,
    pub m_w: usize,
    pub m_beta: usize,
    pub seed: u64,
    pub functional: FunctionalKind,
    /// Cosine coefficients `a_0, a_1, ...` of the functional profile.
    pub phi_a: Vec<f64>,
    /// Sine coefficients `b_1, b_2, ...`.
    pub phi_b: Vec<f64>,
    pub initial: InitialSpec,
    pub direction: DirectionSpec,
    pub direction_mode: Direction,
    pub eps_sweep: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub eps_rule: EpsRule,
    pub bandwidth: f64,
    pub k_p: usize,
    pub ibp_s: f64,
    pub ibp_u: usize,
    pub moments_p: f64,
    pub moments_j: usize,
    pub moments_paths: usize,
    /// Scale factor on the Monte Carlo sizes of the acceptance suite.
    pub validate_scale: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::standard()
    }
}

const KEYS: &[&str] = &[
    "scenario",
    "alpha",
    "C",
    "K_max",
    "theta",
    "N_u",
    "N_x",
    "dt",
    "T",
    "t",
    "eps",
    "rho",
    "M_W",
    "M_beta",
    "seed",
    "functional",
    "phi_a",
    "phi_b",
    "initial",
    "direction",
    "direction_mode",
    "eps_sweep",
    "t_grid",
    "eps_rule",
    "bandwidth",
    "K_p",
    "ibp_s",
    "ibp_u",
    "moments_p",
    "moments_j",
    "moments_paths",
    "validate_scale",
    "output_dir",
];

impl ExperimentConfig {
    /// The scenario shared by all cross-module checks.
    pub fn standard() -> Self {
        Self {
            scenario: "standard".into(),
            alpha: 4.0,
            c: 1.0,
            k_max: 64,
            theta: 0.5,
            n_u: 256,
            n_x: 512,
            dt: 1e-3,
            horizon: 1.0,
            t: 0.5,
            eps: 0.2,
            rho: 1e-2,
            m_w: 2000,
            m_beta: 4,
            seed: 20240601,
            functional: FunctionalKind::Linear,
            phi_a: vec![0.0, 1.0],
            phi_b: vec![],
            initial: InitialSpec::Sine(0.3),
            direction: DirectionSpec::Cos { amp: 1.0, m: 1 },
            direction_mode: Direction::SlopeWeighted,
            eps_sweep: vec![0.4, 0.283, 0.2, 0.141, 0.1, 0.071, 0.05],
            t_grid: vec![0.05, 0.1, 0.2, 0.4, 0.8],
            eps_rule: EpsRule::Constant(0.2),
            bandwidth: 0.15,
            k_p: 64,
            ibp_s: 0.2,
            ibp_u: 0,
            moments_p: 2.0,
            moments_j: 2,
            moments_paths: 200,
            validate_scale: 1.0,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parses a config; keys not present keep their standard values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::standard();
        let mut seen = BTreeMap::new();
        let mut theta_given = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(cfg(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if seen.insert(k.to_string(), lineno).is_some() {
                return Err(cfg(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
            theta_given |= k == "theta";
            c.set(k, v)?;
        }
        if !theta_given {
            c.theta = c.alpha - 3.5;
        }
        c.validate()?;
        Ok(c)
    }

    /// Parses `text` with `overrides` replacing or adding keys.
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut out = String::new();
        for line in text.lines() {
            let key = line.split('#').next().unwrap().split_once('=').map(|(k, _)| k.trim());
            if key.is_some_and(|k| overrides.iter().any(|(o, _)| o == k)) {
                continue;
            }
            out.push_str(line);
            out.push('\n');
        }
        for (k, v) in overrides {
            let _ = writeln!(out, "{k} = {v}");
        }
        Self::parse(&out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "scenario" => self.scenario = v.to_string(),
            "alpha" => self.alpha = parse_f64(k, v)?,
            "C" => self.c = parse_f64(k, v)?,
            "K_max" => self.k_max = parse_usize(k, v)?,
            "theta" => self.theta = parse_f64(k, v)?,
            "N_u" => self.n_u = parse_usize(k, v)?,
            "N_x" => self.n_x = parse_usize(k, v)?,
            "dt" => self.dt = parse_f64(k, v)?,
            "T" => self.horizon = parse_f64(k, v)?,
            "t" => self.t = parse_f64(k, v)?,
            "eps" => self.eps = parse_f64(k, v)?,
            "rho" => self.rho = parse_f64(k, v)?,
            "M_W" => self.m_w = parse_usize(k, v)?,
            "M_beta" => self.m_beta = parse_usize(k, v)?,
            "seed" => self.seed = v.parse().map_err(|_| cfg(format!("seed: bad integer `{v}`")))?,
            "functional" => {
                self.functional = match v {
                    "linear" => FunctionalKind::Linear,
                    "interaction" => FunctionalKind::Interaction,
                    "cosine" => {
                        self.phi_a = vec![0.0, 1.0];
                        self.phi_b = vec![];
                        FunctionalKind::Linear
                    }
                    _ => return Err(cfg(format!("functional: expected cosine, linear or interaction, got `{v}`"))),
                }
            }
            "phi_a" => self.phi_a = parse_list(k, v)?,
            "phi_b" => self.phi_b = parse_list(k, v)?,
            "initial" => self.initial = InitialSpec::parse(v)?,
            "direction" => self.direction = DirectionSpec::parse(v)?,
            "direction_mode" => {
                self.direction_mode = match v {
                    "plain" => Direction::Plain,
                    "slope_weighted" => Direction::SlopeWeighted,
                    _ => return Err(cfg(format!("direction_mode: expected plain or slope_weighted, got `{v}`"))),
                }
            }
            "eps_sweep" => self.eps_sweep = parse_list(k, v)?,
            "t_grid" => self.t_grid = parse_list(k, v)?,
            "eps_rule" => self.eps_rule = parse_rule(v)?,
            "bandwidth" => self.bandwidth = parse_f64(k, v)?,
            "K_p" => self.k_p = parse_usize(k, v)?,
            "ibp_s" => self.ibp_s = parse_f64(k, v)?,
            "ibp_u" => self.ibp_u = parse_usize(k, v)?,
            "moments_p" => self.moments_p = parse_f64(k, v)?,
            "moments_j" => self.moments_j = parse_usize(k, v)?,
            "moments_paths" => self.moments_paths = parse_usize(k, v)?,
            "validate_scale" => self.validate_scale = parse_f64(k, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Checks every knob against the operations it feeds.
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(cfg(format!("{name} must be positive, got {v}")))
            }
        };
        pos("alpha", self.alpha)?;
        pos("C", self.c)?;
        pos("dt", self.dt)?;
        pos("T", self.horizon)?;
        pos("eps", self.eps)?;
        pos("rho", self.rho)?;
        pos("bandwidth", self.bandwidth)?;
        pos("validate_scale", self.validate_scale)?;
        if (self.theta - (self.alpha - 3.5)).abs() > 1e-9 {
            return Err(cfg(format!(
                "theta = {} is inconsistent with alpha = 7/2 + theta = {}",
                self.theta, self.alpha
            )));
        }
        if self.n_u < 4 {
            return Err(cfg("N_u must be at least 4".into()));
        }
        if self.n_x < 8 || 2 * self.k_p + self.k_max >= self.n_x {
            return Err(cfg("N_x must exceed 2 K_p + K_max".into()));
        }
        if self.m_w == 0 || self.m_beta == 0 {
            return Err(cfg("M_W and M_beta must be positive".into()));
        }
        let in_horizon = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v <= self.horizon) {
                return Err(cfg(format!("{name} = {v} must lie in (0, T = {}]", self.horizon)));
            }
            steps_for(v, self.dt).map_err(|_| cfg(format!("{name} = {v} is not a multiple of dt = {}", self.dt)))?;
            Ok(())
        };
        in_horizon("t", self.t)?;
        for &t in &self.t_grid {
            in_horizon("t_grid", t)?;
        }
        if self.t_grid.is_empty() || self.eps_sweep.is_empty() {
            return Err(cfg("t_grid and eps_sweep must be non-empty".into()));
        }
        for &e in &self.eps_sweep {
            pos("eps_sweep", e)?;
        }
        for &t in &self.t_grid {
            pos("eps_rule", self.eps_rule.eps(t))?;
        }
        if !(self.ibp_s >= 0.0 && self.ibp_s < self.t) {
            return Err(cfg("ibp_s must lie in [0, t)".into()));
        }
        if self.ibp_s > 0.0 {
            steps_for(self.ibp_s, self.dt).map_err(|_| cfg("ibp_s is not a multiple of dt".into()))?;
        }
        if self.ibp_u >= self.n_u {
            return Err(cfg("ibp_u must index the open u-grid".into()));
        }
        if !(self.moments_p >= 1.0) || !(1..=3).contains(&self.moments_j) || self.moments_paths < 2 {
            return Err(cfg("moments: need p >= 1, j in 1..=3 and at least two paths".into()));
        }
        self.functional()?;
        if let InitialSpec::Sine(a) = self.initial {
            if !(a.abs() < 1.0) {
                return Err(cfg("initial: sine amplitude must be below 1 in modulus".into()));
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<FourierProfile> {
        FourierProfile::build(self.alpha, self.c, self.k_max)
    }

    pub fn functional(&self) -> Result<TestFunctional> {
        let mut b = vec![0.0];
        b.extend_from_slice(&self.phi_b);
        let n = self.phi_a.len().max(b.len());
        let mut a = self.phi_a.clone();
        a.resize(n, 0.0);
        b.resize(n, 0.0);
        let p = TrigPoly::new(a, b).map_err(|e| cfg(format!("phi: {e}")))?;
        match self.functional {
            FunctionalKind::Linear => Ok(TestFunctional::linear(p)),
            FunctionalKind::Interaction => TestFunctional::interaction(p).map_err(|e| cfg(format!("phi: {e}"))),
        }
    }

    pub fn quantile(&self) -> Result<QuantileState> {
        match &self.initial {
            InitialSpec::Sine(a) => QuantileState::sine_perturbed(self.n_u, *a),
            InitialSpec::Uniform => QuantileState::sine_perturbed(self.n_u, 0.0),
            InitialSpec::DensityFile(p) => {
                let f = fs::File::open(p).map_err(|e| cfg(format!("{}: {e}", p.display())))?;
                let d = TorusDensity::read_csv(BufReader::new(f))?;
                density_to_quantile(&d, 0.0, self.n_u)
            }
            InitialSpec::QuantileFile(p) => {
                let f = fs::File::open(p).map_err(|e| cfg(format!("{}: {e}", p.display())))?;
                let q = QuantileState::read_csv(BufReader::new(f))?;
                if q.n_u() != self.n_u {
                    return Err(cfg(format!("quantile file has N_u = {}, config says {}", q.n_u(), self.n_u)));
                }
                Ok(q)
            }
        }
    }

    pub fn direction(&self) -> Result<PerturbationDirection> {
        match self.direction {
            DirectionSpec::Cos { amp, m } => PerturbationDirection::cosine(self.n_u, amp, m),
            DirectionSpec::Zero => Ok(PerturbationDirection::zero(self.n_u)),
        }
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        SimParams::new(self.dt, self.m_w, self.m_beta, self.seed)
    }

    /// Every model object the subcommands need.
    pub fn build(&self) -> Result<Scenario> {
        Ok(Scenario {
            g: self.quantile()?,
            h: self.direction()?,
            phi: self.functional()?,
            profile: self.profile()?,
            params: self.sim_params()?,
            direction: self.direction_mode,
            k_a: self.n_x / 2 - 1,
        })
    }

    /// Canonical `key = value` form; parsing it gives back `self`.
    pub fn render(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scenario", self.scenario.clone());
        kv("alpha", self.alpha.to_string());
        kv("C", self.c.to_string());
        kv("K_max", self.k_max.to_string());
        kv("theta", self.theta.to_string());
        kv("N_u", self.n_u.to_string());
        kv("N_x", self.n_x.to_string());
        kv("dt", self.dt.to_string());
        kv("T", self.horizon.to_string());
        kv("t", self.t.to_string());
        kv("eps", self.eps.to_string());
        kv("rho", self.rho.to_string());
        kv("M_W", self.m_w.to_string());
        kv("M_beta", self.m_beta.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "functional",
            match self.functional {
                FunctionalKind::Linear => "linear".into(),
                FunctionalKind::Interaction => "interaction".into(),
            },
        );
        kv("phi_a", list(&self.phi_a));
        kv("phi_b", list(&self.phi_b));
        kv("initial", self.initial.render());
        kv("direction", self.direction.render());
        kv(
            "direction_mode",
            match self.direction_mode {
                Direction::Plain => "plain".into(),
                Direction::SlopeWeighted => "slope_weighted".into(),
            },
        );
        kv("eps_sweep", list(&self.eps_sweep));
        kv("t_grid", list(&self.t_grid));
        kv(
            "eps_rule",
            match self.eps_rule {
                EpsRule::Constant(e) => format!("constant:{e}"),
                EpsRule::Power { c, p } => format!("power:{c}:{p}"),
            },
        );
        kv("bandwidth", self.bandwidth.to_string());
        kv("K_p", self.k_p.to_string());
        kv("ibp_s", self.ibp_s.to_string());
        kv("ibp_u", self.ibp_u.to_string());
        kv("moments_p", self.moments_p.to_string());
        kv("moments_j", self.moments_j.to_string());
        kv("moments_paths", self.moments_paths.to_string());
        kv("validate_scale", self.validate_scale.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}

/// Model objects built from a config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub g: QuantileState,
    pub h: PerturbationDirection,
    pub phi: TestFunctional,
    pub profile: FourierProfile,
    pub params: SimParams,
    pub direction: Direction,
    pub k_a: usize,
}

impl Scenario {
    pub fn bel_setup(&self) -> BelSetup<'_> {
        BelSetup {
            g: &self.g,
            h: &self.h,
            phi: &self.phi,
            profile: &self.profile,
            direction: self.direction,
            k_a: self.k_a,
        }
    }
}

/// Run manifest: the echoed config, derived quantities and result lines.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    /// Header block for `subcommand` under `config`.
    pub fn new(subcommand: &str, config: &ExperimentConfig) -> Result<Self> {
        let mut m = Self::default();
        m.push("subcommand", subcommand);
        m.push("version", env!("CARGO_PKG_VERSION"));
        for line in config.render().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            m.push(k, v);
        }
        let prof = config.profile()?;
        m.push("sum_sq", format!("{:.17e}", prof.sum_sq()));
        m.push("sum_k2", format!("{:.17e}", prof.sum_k2()));
        m.push("qv_rate", format!("{:.17e}", prof.qv_rate()));
        m.push("tail_bound", format!("{:.6e}", tail_bound(config.alpha, config.c, config.k_max)?));
        m.push("n_steps", steps_for(config.t, config.dt)?.to_string());
        m.push("noise_stream_layout", "chacha8 per (seed, W replica); stream 2(2|k| - [k<0]) + imag for W^k, 2^40 + j for beta_j");
        Ok(m)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(Error::from)
    }
}

/// `sum_k2(K = 4096) - sum_k2(K_max)`, bounding the neglected tail of
/// `sum f_k^2 k^2`.
pub fn tail_bound(alpha: f64, c: f64, k_max: usize) -> Result<f64> {
    if k_max >= TAIL_REFERENCE_K {
        return Ok(0.0);
    }
    let full = FourierProfile::build(alpha, c, TAIL_REFERENCE_K)?;
    let cut = FourierProfile::build(alpha, c, k_max)?;
    Ok((full.sum_k2() - cut.sum_k2()).max(0.0))
}

fn cfg(msg: String) -> Error {
    Error::Config(msg)
}

fn split_head(s: &str) -> (&str, Option<&str>) {
    match s.split_once(':') {
        Some((h, r)) => (h.trim(), Some(r.trim())),
        None => (s.trim(), None),
    }
}

fn parse_f64(k: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| cfg(format!("{k}: bad number `{v}`")))
}

fn parse_usize(k: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| cfg(format!("{k}: bad integer `{v}`")))
}

fn parse_list(k: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|x| parse_f64(k, x)).collect()
}

fn parse_rule(v: &str) -> Result<EpsRule> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        ["constant", e] => Ok(EpsRule::Constant(parse_f64("eps_rule", e)?)),
        ["power", c, p] => Ok(EpsRule::Power {
            c: parse_f64("eps_rule", c)?,
            p: parse_f64("eps_rule", p)?,
        }),
        _ => Err(cfg(format!("eps_rule: expected constant:EPS or power:C:P, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let c = ExperimentConfig::standard();
        assert_eq!(ExperimentConfig::parse(&c.render()).unwrap(), c);
        let mut d = c.clone();
        d.initial = InitialSpec::Uniform;
        d.direction = DirectionSpec::Zero;
        d.eps_rule = EpsRule::Power { c: 0.3, p: 0.1 };
        d.functional = FunctionalKind::Interaction;
        d.phi_a = vec![0.0, 0.5, 0.25];
        assert_eq!(ExperimentConfig::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn empty_text_is_standard() {
        assert_eq!(ExperimentConfig::parse("# nothing\n").unwrap(), ExperimentConfig::standard());
    }

    #[test]
    fn theta_follows_alpha() {
        let c = ExperimentConfig::parse("alpha = 4.25").unwrap();
        assert!((c.theta - 0.75).abs() < 1e-15);
        assert!(ExperimentConfig::parse("alpha = 4.25\ntheta = 0.5").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nonsense = 1",
            "dt = -1",
            "t = 0.5005",
            "t = 2",
            "M_W = 0",
            "initial = blob",
            "eps_rule = power:1",
            "dt",
            "seed = 1\nseed = 2",
            "N_x = 64",
        ] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_replace_keys() {
        let c = ExperimentConfig::parse_with_overrides("seed = 5\nt = 0.3", &[("seed".into(), "9".into())]).unwrap();
        assert_eq!((c.seed, c.t), (9, 0.3));
        assert!(ExperimentConfig::parse_with_overrides("", &[("bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn manifest_echoes_config() {
        let c = ExperimentConfig::standard();
        let m = Manifest::new("gradient", &c).unwrap();
        let text = m.render();
        for line in c.render().lines() {
            assert!(text.contains(line));
        }
        let tb: f64 = m.get("tail_bound").unwrap().parse().unwrap();
        assert!(tb > 0.0 && tb < 1e-2);
    }
}
