//! wasm-bindgen entry points for the static browser demo in `www/`.
//!
//! Each export wraps a plain function returning `Result<_, String>` so the
//! same code runs under native tests. Sizes are kept small for interactive use.

use wasm_bindgen::prelude::*;

use wdiff::bel::{mollify, BelSetup, MollifierSpec, TransportField, estimate_gradient_bel};
use wdiff::functional::{Direction, TestFunctional};
use wdiff::geometry::{x_grid, PerturbationDirection, QuantileState};
use wdiff::montecarlo::{gradient_direct, gradient_fd, SimParams};
use wdiff::noise::FourierProfile;
use wdiff::spde::density_compare;

const N_U: usize = 64;
const N_X: usize = 128;
const K_MAX: usize = 16;
const K_P: usize = 32;
const DT: f64 = 1e-3;

fn err(e: wdiff::Error) -> String {
    e.to_string()
}

fn horizon(t: f64) -> Result<f64, String> {
    if !(t > 0.0 && t <= 2.0) {
        return Err("t must lie in (0, 2]".into());
    }
    Ok((t / DT).round().max(1.0) * DT)
}

/// `[x..., spectral p..., particle KDE p..., L1]` at time `t` on one
/// common-noise replica.
pub fn density_snapshot_native(alpha: f64, amp: f64, t: f64, seed: u64, replicas: usize) -> Result<Vec<f64>, String> {
    let t = horizon(t)?;
    let g = QuantileState::sine_perturbed(N_U, amp).map_err(err)?;
    let prof = FourierProfile::build(alpha, 1.0, K_MAX).map_err(err)?;
    let params = SimParams::new(DT, 1, replicas.clamp(2, 512), seed).map_err(err)?;
    let (cmp, spde, kde) = density_compare(&g, &prof, &params, 0, t, 0.2, K_P, N_X).map_err(err)?;
    let mut out = x_grid(N_X);
    out.extend(spde.last().grid_values(N_X));
    out.extend_from_slice(kde.values());
    out.push(cmp.l1_distance);
    Ok(out)
}

/// `[direct, se, fd, se, bel, se, I1, I2]` for `phi = int cos`, `h = cos 2 pi u`.
pub fn gradients_native(alpha: f64, amp: f64, t: f64, eps: f64, m_w: usize, seed: u64) -> Result<Vec<f64>, String> {
    let t = horizon(t)?;
    let g = QuantileState::sine_perturbed(N_U, amp).map_err(err)?;
    let h = PerturbationDirection::cosine(N_U, 1.0, 1).map_err(err)?;
    let phi = TestFunctional::cosine();
    let prof = FourierProfile::build(alpha, 1.0, K_MAX).map_err(err)?;
    let params = SimParams::new(DT, m_w.clamp(2, 400), 2, seed).map_err(err)?;
    let dir = Direction::SlopeWeighted;
    let d = gradient_direct(&g, &h, &phi, &prof, t, &params, dir).map_err(err)?;
    let fd = gradient_fd(&g, &h, &phi, &prof, t, 1e-2, &params, dir).map_err(err)?;
    let setup = BelSetup {
        g: &g,
        h: &h,
        phi: &phi,
        profile: &prof,
        direction: dir,
        k_a: N_X / 2 - 1,
    };
    let (b, sm) = estimate_gradient_bel(&setup, t, eps, &params).map_err(err)?;
    Ok(vec![d.value, d.std_error, fd.value, fd.std_error, b.value, b.std_error, sm.i1, sm.i2])
}

/// `[x..., A..., A^eps...]` for the initial transport field `A = g' h` pushed
/// to the torus.
pub fn mollified_field_native(amp: f64, eps: f64) -> Result<Vec<f64>, String> {
    let g = QuantileState::sine_perturbed(N_U, amp).map_err(err)?;
    let h = PerturbationDirection::cosine(N_U, 1.0, 1).map_err(err)?;
    let d1 = g.require_deriv1().map_err(err)?;
    let field = TransportField::from_particles(&g.values()[..N_U], &d1[..N_U], h.values(), N_U / 2 - 1, 0).map_err(err)?;
    let smooth = mollify(&field, &MollifierSpec::new(eps).map_err(err)?);
    let xs = x_grid(N_X);
    let mut out = xs.clone();
    out.extend(field.eval_many(&xs));
    out.extend(smooth.eval_many(&xs));
    Ok(out)
}

#[wasm_bindgen]
pub fn density_snapshot(alpha: f64, amp: f64, t: f64, seed: u32, replicas: u32) -> Result<Vec<f64>, JsValue> {
    density_snapshot_native(alpha, amp, t, seed as u64, replicas as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn gradients(alpha: f64, amp: f64, t: f64, eps: f64, m_w: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
    gradients_native(alpha, amp, t, eps, m_w as usize, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mollified_field(amp: f64, eps: f64) -> Result<Vec<f64>, JsValue> {
    mollified_field_native(amp, eps).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_snapshot_layout() {
        let v = density_snapshot_native(4.0, 0.3, 0.1, 1, 32).unwrap();
        assert_eq!(v.len(), 3 * N_X + 1);
        let l1 = v[3 * N_X];
        assert!(l1.is_finite() && l1 < 0.5);
    }

    #[test]
    fn gradients_are_finite_and_split() {
        let v = gradients_native(4.0, 0.3, 0.05, 0.3, 8, 2).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[4] - (v[6] + v[7])).abs() < 1e-12);
    }

    #[test]
    fn mollifier_preserves_mean() {
        let v = mollified_field_native(0.3, 0.4).unwrap();
        let (a, s) = (&v[N_X..2 * N_X], &v[2 * N_X..]);
        let ma: f64 = a.iter().sum::<f64>() / N_X as f64;
        let ms: f64 = s.iter().sum::<f64>() / N_X as f64;
        assert!((ma - ms).abs() < 1e-12);
        let (pa, ps) = (a.iter().fold(0.0f64, |m, x| m.max(x.abs())), s.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        assert!(ps < pa);
    }

    #[test]
    fn rejects_bad_horizon() {
        assert!(density_snapshot_native(4.0, 0.3, -1.0, 1, 8).is_err());
        assert!(mollified_field_native(0.3, 0.0).is_err());
    }
}
