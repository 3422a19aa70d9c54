//! Coefficient profiles `f_k` and reproducible sampling of the driving noises.
//!
//! Every scalar Gaussian stream is a ChaCha8 stream keyed by `(seed, W-replica)`
//! and selected by a stream id, with step `n` living at word position `4 n`.
//! The layout is fixed:
//!
//! * `W^{Re,k}` uses stream `2 z(k)`, `W^{Im,k}` uses stream `2 z(k) + 1`,
//!   where `z(k) = 2k` for `k >= 0` and `z(k) = -2k - 1` for `k < 0`;
//! * the idiosyncratic motion of beta-replica `j` uses stream `2^40 + j`.
//!
//! Mode streams do not depend on the truncation level, so raising `K_max`
//! keeps the low modes of a path unchanged.

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{invalid, Error, Result};

/// `f_k = C / (1 + k^2)^{alpha/2}` for `|k| <= K_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierProfile {
    alpha: f64,
    scale: f64,
    k_max: usize,
    /// `coeffs[k] = f_k = f_{-k}`, `k = 0..=K_max`.
    coeffs: Vec<f64>,
    sum_sq: f64,
    sum_k2: f64,
}

impl FourierProfile {
    pub fn build(alpha: f64, scale: f64, k_max: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be positive, got {alpha}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("C", format!("must be positive, got {scale}")));
        }
        let coeffs: Vec<f64> = (0..=k_max)
            .map(|k| scale / (1.0 + (k * k) as f64).powf(alpha / 2.0))
            .collect();
        Ok(Self::from_coeffs(alpha, scale, coeffs))
    }

    /// All coefficients zero: the particles only feel the idiosyncratic noise.
    pub fn zero(k_max: usize) -> Self {
        Self::from_coeffs(0.0, 0.0, vec![0.0; k_max + 1])
    }

    fn from_coeffs(alpha: f64, scale: f64, coeffs: Vec<f64>) -> Self {
        let mut sum_sq = coeffs[0] * coeffs[0];
        let mut sum_k2 = 0.0;
        for (k, f) in coeffs.iter().enumerate().skip(1) {
            sum_sq += 2.0 * f * f;
            sum_k2 += 2.0 * f * f * (k * k) as f64;
        }
        Self {
            alpha,
            scale,
            k_max: coeffs.len() - 1,
            coeffs,
            sum_sq,
            sum_k2,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn f(&self, k: i64) -> f64 {
        self.coeffs
            .get(k.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// `f_0, f_1, ..., f_{K_max}`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `sum_{|k| <= K_max} f_k^2`.
    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    /// `sum_{|k| <= K_max} f_k^2 k^2`.
    pub fn sum_k2(&self) -> f64 {
        self.sum_k2
    }

    /// Quadratic-variation rate of a particle, `1 + sum f_k^2`.
    pub fn qv_rate(&self) -> f64 {
        1.0 + self.sum_sq
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&f| f == 0.0)
    }

    /// Bound on the neglected tail `sum_{|k| > K_max} f_k^2 k^2`, measured
    /// against the `K = 4096` truncation.
    pub fn tail_bound(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let reference = Self::build(self.alpha, self.scale, 4096.max(self.k_max))
            .map(|p| p.sum_k2)
            .unwrap_or(f64::NAN);
        (reference - self.sum_k2).max(0.0)
    }
}

/// Identifies one realization of the common noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub w_replica: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, w_replica: u64) -> Self {
        Self { seed, w_replica }
    }

    fn chacha_seed(&self) -> [u8; 32] {
        let mut state = self.seed ^ splitmix64(self.w_replica.wrapping_add(0x5851_F42D_4C95_7F2D));
        let mut out = [0u8; 32];
        for chunk in out.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BETA_STREAM_BASE: u64 = 1 << 40;

fn mode_stream(k: i64, imaginary: bool) -> u64 {
    let z = if k >= 0 { 2 * k as u64 } else { (-2 * k - 1) as u64 };
    2 * z + imaginary as u64
}

/// Fills `out` with standard normals from `(key, stream)` starting at `first_step`.
fn fill_standard_normals(key: &NoiseKey, stream: u64, first_step: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::from_seed(key.chacha_seed());
    rng.set_stream(stream);
    rng.set_word_pos(4 * first_step as u128);
    for v in out.iter_mut() {
        let a = rng.next_u64();
        let b = rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Increments of the complex modes `W^k`, `|k| <= K_max`, for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonNoise {
    key: NoiseKey,
    n_steps: usize,
    dt: f64,
    k_max: usize,
    /// `[n_steps x (2 K_max + 1)]`, column `k + K_max`.
    dw_re: Vec<f64>,
    dw_im: Vec<f64>,
}

impl CommonNoise {
    pub fn sample(key: NoiseKey, k_max: usize, n_steps: usize, dt: f64) -> Result<Self> {
        check_grid(n_steps, dt)?;
        let width = 2 * k_max + 1;
        let mut dw_re = vec![0.0; n_steps * width];
        let mut dw_im = vec![0.0; n_steps * width];
        let sd = dt.sqrt();
        let mut col = vec![0.0; n_steps];
        for (c, k) in (-(k_max as i64)..=k_max as i64).enumerate() {
            for (imag, target) in [(false, &mut dw_re), (true, &mut dw_im)] {
                fill_standard_normals(&key, mode_stream(k, imag), 0, &mut col);
                for (n, z) in col.iter().enumerate() {
                    target[n * width + c] = z * sd;
                }
            }
        }
        Ok(Self {
            key,
            n_steps,
            dt,
            k_max,
            dw_re,
            dw_im,
        })
    }

    pub fn zero(k_max: usize, n_steps: usize, dt: f64) -> Result<Self> {
        check_grid(n_steps, dt)?;
        let width = 2 * k_max + 1;
        Ok(Self {
            key: NoiseKey::new(0, u64::MAX),
            n_steps,
            dt,
            k_max,
            dw_re: vec![0.0; n_steps * width],
            dw_im: vec![0.0; n_steps * width],
        })
    }

    pub fn key(&self) -> NoiseKey {
        self.key
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn width(&self) -> usize {
        2 * self.k_max + 1
    }

    /// Real parts of `Delta W^k` at step `n`, indexed by `k + K_max`.
    pub fn re_row(&self, n: usize) -> &[f64] {
        let w = self.width();
        &self.dw_re[n * w..(n + 1) * w]
    }

    pub fn im_row(&self, n: usize) -> &[f64] {
        let w = self.width();
        &self.dw_im[n * w..(n + 1) * w]
    }

    pub fn dw_re(&self) -> &[f64] {
        &self.dw_re
    }

    pub fn dw_im(&self) -> &[f64] {
        &self.dw_im
    }

    /// Sums consecutive increments in blocks of `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(invalid("factor", format!("must divide n_steps = {}", self.n_steps)));
        }
        let w = self.width();
        let n = self.n_steps / factor;
        let mut re = vec![0.0; n * w];
        let mut im = vec![0.0; n * w];
        for m in 0..n {
            for s in 0..factor {
                let src = (m * factor + s) * w;
                for c in 0..w {
                    re[m * w + c] += self.dw_re[src + c];
                    im[m * w + c] += self.dw_im[src + c];
                }
            }
        }
        Ok(Self {
            key: self.key,
            n_steps: n,
            dt: self.dt * factor as f64,
            k_max: self.k_max,
            dw_re: re,
            dw_im: im,
        })
    }

    /// Attaches the idiosyncratic increments of beta-replica `j`.
    pub fn with_beta(self: &Arc<Self>, j: u64) -> NoisePath {
        let mut dbeta = vec![0.0; self.n_steps];
        fill_standard_normals(&self.key, BETA_STREAM_BASE + j, 0, &mut dbeta);
        let sd = self.dt.sqrt();
        for v in &mut dbeta {
            *v *= sd;
        }
        NoisePath {
            common: Arc::clone(self),
            beta_replica: j,
            dbeta,
        }
    }

    /// Attaches zero idiosyncratic increments.
    pub fn without_beta(self: &Arc<Self>) -> NoisePath {
        NoisePath {
            common: Arc::clone(self),
            beta_replica: u64::MAX,
            dbeta: vec![0.0; self.n_steps],
        }
    }
}

fn check_grid(n_steps: usize, dt: f64) -> Result<()> {
    if n_steps == 0 {
        return Err(invalid("n_steps", "must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    Ok(())
}

/// Common-noise increments together with one idiosyncratic path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    common: Arc<CommonNoise>,
    beta_replica: u64,
    dbeta: Vec<f64>,
}

impl NoisePath {
    /// Explicit increments (used by tests and hand-built scenarios).
    pub fn from_parts(common: Arc<CommonNoise>, dbeta: Vec<f64>) -> Result<Self> {
        if dbeta.len() != common.n_steps {
            return Err(Error::ShapeMismatch(format!(
                "{} beta increments for {} steps",
                dbeta.len(),
                common.n_steps
            )));
        }
        Ok(Self {
            common,
            beta_replica: u64::MAX,
            dbeta,
        })
    }

    pub fn common(&self) -> &CommonNoise {
        &self.common
    }

    pub fn common_arc(&self) -> &Arc<CommonNoise> {
        &self.common
    }

    pub fn key(&self) -> NoiseKey {
        self.common.key
    }

    pub fn beta_replica(&self) -> u64 {
        self.beta_replica
    }

    pub fn seed(&self) -> u64 {
        self.common.key.seed
    }

    pub fn n_steps(&self) -> usize {
        self.common.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.common.dt
    }

    pub fn dbeta(&self) -> &[f64] {
        &self.dbeta
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let common = Arc::new(self.common.coarsen(factor)?);
        let dbeta = self
            .dbeta
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        Ok(Self {
            common,
            beta_replica: self.beta_replica,
            dbeta,
        })
    }
}

/// Samples W-replica 0 with beta-replica 0 for the given seed.
pub fn sample_noise(profile: &FourierProfile, seed: u64, n_steps: usize, dt: f64) -> Result<NoisePath> {
    let common = Arc::new(CommonNoise::sample(
        NoiseKey::new(seed, 0),
        profile.k_max(),
        n_steps,
        dt,
    )?);
    Ok(common.with_beta(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_examples() {
        let p = FourierProfile::build(4.0, 1.0, 2).unwrap();
        assert_eq!(p.f(0), 1.0);
        assert!((p.f(1) - 0.25).abs() < 1e-15);
        assert!((p.f(-2) - 0.04).abs() < 1e-15);
        assert!((p.qv_rate() - 2.1282).abs() < 1e-12);
        let p0 = FourierProfile::build(4.0, 1.0, 0).unwrap();
        assert_eq!(p0.sum_sq(), 1.0);
        assert_eq!(p0.qv_rate(), 2.0);
        assert!(FourierProfile::build(0.0, 1.0, 3).is_err());
        assert!(FourierProfile::build(4.0, -1.0, 3).is_err());
    }

    #[test]
    fn sum_k2_converged_at_default_truncation() {
        let p = FourierProfile::build(4.0, 1.0, 64).unwrap();
        let r = FourierProfile::build(4.0, 1.0, 2048).unwrap();
        assert!((p.sum_k2() - r.sum_k2()).abs() / r.sum_k2() < 0.01);
        assert!(p.tail_bound() > 0.0 && p.tail_bound() < 1e-3);
    }

    #[test]
    fn sampling_is_deterministic_and_layout_stable() {
        let p = FourierProfile::build(4.0, 1.0, 3).unwrap();
        let a = sample_noise(&p, 42, 50, 1e-3).unwrap();
        let b = sample_noise(&p, 42, 50, 1e-3).unwrap();
        assert_eq!(a, b);
        // low modes do not depend on the truncation level
        let q = FourierProfile::build(4.0, 1.0, 5).unwrap();
        let c = sample_noise(&q, 42, 50, 1e-3).unwrap();
        for n in 0..50 {
            for k in -3i64..=3 {
                assert_eq!(a.common().re_row(n)[(k + 3) as usize], c.common().re_row(n)[(k + 5) as usize]);
                assert_eq!(a.common().im_row(n)[(k + 3) as usize], c.common().im_row(n)[(k + 5) as usize]);
            }
        }
        assert_eq!(a.dbeta(), c.dbeta());
    }

    #[test]
    fn coarsen_sums_blocks() {
        let p = FourierProfile::build(4.0, 1.0, 1).unwrap();
        let a = sample_noise(&p, 7, 8, 1e-3).unwrap();
        let c = a.coarsen(4).unwrap();
        assert_eq!(c.n_steps(), 2);
        assert!((c.dt() - 4e-3).abs() < 1e-18);
        let s: f64 = a.dbeta()[4..8].iter().sum();
        assert_eq!(c.dbeta()[1], s);
        assert!(a.coarsen(3).is_err());
    }
}
