//! Closed-form kernels of the subordination integrals and their exact partial
//! derivatives. Space derivatives of Gaussians use the Hermite recurrence; the
//! Cauchy kernel is differentiated through its complex form
//! `s/(pi(s^2+x^2)) = Im[(x - i s)^{-1}] / pi`.

use std::f64::consts::PI;

use num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::ProcessKind;

/// Highest x-derivative exposed for Gaussian kernels.
pub const MAX_GAUSS_DX: u32 = 8;
/// Highest derivative in the integration variable.
pub const MAX_DS: u32 = 2;
/// Highest total order for the Cauchy kernel.
pub const MAX_CAUCHY_ORDER: u32 = 6;

const GUARD: f64 = 1e-14;

/// A kernel value together with the derivative orders it represents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub dx: u32,
    pub ds: u32,
}

/// Probabilists' Hermite polynomial `He_k(z)`.
pub fn hermite(k: u32, z: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, z);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = z * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[inline]
pub(crate) fn phi(x: f64, v: f64) -> f64 {
    (-x * x / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

/// `d^k/dx^k` of the centered Gaussian density with variance `v`; no order check.
#[inline]
pub(crate) fn gauss_dx(x: f64, v: f64, k: u32) -> f64 {
    let sd = v.sqrt();
    let base = phi(x, v);
    if k == 0 {
        return base;
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * hermite(k, x / sd) * base / sd.powi(k as i32)
}

fn check_variance(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "variance must be positive, got {v}"
        )))
    }
}

fn check_order(name: &str, order: u32, limit: u32) -> Result<()> {
    if order > limit {
        Err(Error::OrderUnsupported(format!(
            "{name} order {order} exceeds {limit}"
        )))
    } else {
        Ok(())
    }
}

/// `d^k/dx^k` of `exp(-x^2/2v)/sqrt(2 pi v)`.
pub fn gauss_kernel(x: f64, v: f64, dx_order: u32) -> Result<f64> {
    check_order("x-derivative", dx_order, MAX_GAUSS_DX)?;
    check_variance(v)?;
    Ok(gauss_dx(x, v, dx_order))
}

#[inline]
pub(crate) fn drift_partial(x: f64, s: f64, mu: f64, diffusion: f64, k: u32, m: u32) -> f64 {
    let u = x - mu * s;
    let v = diffusion * s;
    let g = |j: u32| gauss_dx(u, v, j);
    // d/ds acts as (D/2) d_xx - mu d_x on this kernel.
    match m {
        0 => g(k),
        1 => 0.5 * diffusion * g(k + 2) - mu * g(k + 1),
        _ => {
            0.25 * diffusion * diffusion * g(k + 4) - diffusion * mu * g(k + 3) + mu * mu * g(k + 2)
        }
    }
}

/// Partials of `exp(-(x - mu s)^2 / 2 D s) / sqrt(2 pi D s)` in `x` (order `k`) and `s` (order `m`).
pub fn gauss_drift_kernel(
    x: f64,
    s: f64,
    mu: f64,
    diffusion: f64,
    dx_order: u32,
    ds_order: u32,
) -> Result<f64> {
    check_order("x-derivative", dx_order, MAX_GAUSS_DX)?;
    check_order("s-derivative", ds_order, MAX_DS)?;
    check_variance(diffusion * s)?;
    Ok(drift_partial(x, s, mu, diffusion, dx_order, ds_order))
}

#[inline]
pub(crate) fn fbm_partial(x: f64, s: f64, hurst: f64, k: u32, m: u32) -> f64 {
    let v = s.powf(2.0 * hurst);
    let g = |j: u32| gauss_dx(x, v, j);
    match m {
        0 => g(k),
        1 => hurst * s.powf(2.0 * hurst - 1.0) * g(k + 2),
        _ => {
            hurst * (2.0 * hurst - 1.0) * s.powf(2.0 * hurst - 2.0) * g(k + 2)
                + hurst * hurst * s.powf(4.0 * hurst - 2.0) * g(k + 4)
        }
    }
}

/// Partials of the fractional Brownian marginal `exp(-x^2/2s^{2H})/sqrt(2 pi s^{2H})`.
pub fn fbm_kernel(x: f64, s: f64, hurst: f64, dx_order: u32, ds_order: u32) -> Result<f64> {
    check_order("x-derivative", dx_order, MAX_GAUSS_DX)?;
    check_order("s-derivative", ds_order, MAX_DS)?;
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hurst index must lie in (0,1), got {hurst}"
        )));
    }
    check_variance(s.powf(2.0 * hurst))?;
    Ok(fbm_partial(x, s, hurst, dx_order, ds_order))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

#[inline]
pub(crate) fn cauchy_partial(x: f64, s: f64, m: u32, k: u32) -> f64 {
    let n = k + m;
    let z = Complex64::new(x, -s);
    let coeff = if k % 2 == 0 { 1.0 } else { -1.0 } * factorial(n);
    let i_pow = match m % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    (i_pow * z.powi(-(n as i32 + 1))).im * coeff / PI
}

/// Partials of `s / (pi (s^2 + x^2))` in `s` (order `m`) and `x` (order `k`).
pub fn cauchy_kernel(x: f64, s: f64, ds_order: u32, dx_order: u32) -> Result<f64> {
    check_order("total", ds_order + dx_order, MAX_CAUCHY_ORDER)?;
    if x.abs() < GUARD && s.abs() < GUARD {
        return Err(Error::SingularPoint(format!(
            "Cauchy kernel at (x, s) = ({x}, {s})"
        )));
    }
    Ok(cauchy_partial(x, s, ds_order, dx_order))
}

#[inline]
pub(crate) fn first_passage(s: f64, w: f64) -> f64 {
    s * (-s * s / (2.0 * w)).exp() / (2.0 * PI * w * w * w).sqrt()
}

/// Density in `w` of the first time a standard Brownian motion reaches level `s`.
pub fn first_passage_kernel(s: f64, w: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "passage time must be positive, got {w}"
        )));
    }
    if s < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "level must be nonnegative, got {s}"
        )));
    }
    Ok(first_passage(s, w))
}

/// `P(N(mu t, t) > 0) = Phi(mu sqrt t)`, the mass kept when a drifted Gaussian clock
/// is restricted to positive values.
pub fn half_normal_normalizer(t: f64, mu: f64) -> f64 {
    0.5 * erfc(-mu * t.sqrt() / std::f64::consts::SQRT_2)
}

/// Outer kernel of one coordinate at clock value `s`, differentiated `dx` times in
/// space and `ds` times in the clock.
#[inline]
pub(crate) fn outer_partial(p: &ProcessKind, x: f64, s: f64, dx: u32, ds: u32) -> f64 {
    match *p {
        ProcessKind::Brownian { drift, diffusion } => drift_partial(x, s, drift, diffusion, dx, ds),
        ProcessKind::FractionalBrownian { hurst } => fbm_partial(x, s, hurst, dx, ds),
        ProcessKind::Cauchy { location, scale } => {
            scale.powi(ds as i32) * cauchy_partial(x - location, scale * s, ds, dx)
        }
    }
}

/// Checked form of the outer kernel dispatch.
pub fn outer_kernel(p: &ProcessKind, x: f64, s: f64, dx: u32, ds: u32) -> Result<KernelEval> {
    let value = match *p {
        ProcessKind::Brownian { drift, diffusion } => {
            gauss_drift_kernel(x, s, drift, diffusion, dx, ds)?
        }
        ProcessKind::FractionalBrownian { hurst } => fbm_kernel(x, s, hurst, dx, ds)?,
        ProcessKind::Cauchy { location, scale } => {
            scale.powi(ds as i32) * cauchy_kernel(x - location, scale * s, ds, dx)?
        }
    };
    Ok(KernelEval { value, dx, ds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    fn central(f: &dyn Fn(f64) -> f64, x: f64, h: f64, order: u32) -> f64 {
        match order {
            1 => (f(x + h) - f(x - h)) / (2.0 * h),
            2 => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
            _ => unreachable!(),
        }
    }

    /// Slope of log(error) against log(h) over the three standard steps.
    fn observed_order(exact: f64, f: &dyn Fn(f64) -> f64, x: f64, order: u32) -> f64 {
        let hs = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| (central(f, x, h, order) - exact).abs())
            .collect();
        if errs.iter().all(|&e| e < 1e-13) {
            // Differences are exact by symmetry.
            return f64::INFINITY;
        }
        let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / 3.0;
        let my = ly.iter().sum::<f64>() / 3.0;
        let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
        num / den
    }

    #[test]
    fn gaussian_values() {
        assert!((gauss_kernel(0.0, 1.0, 0).unwrap() - INV_SQRT_2PI).abs() < 1e-15);
        assert!((gauss_kernel(0.0, 1.0, 2).unwrap() + INV_SQRT_2PI).abs() < 1e-15);
        assert_eq!(gauss_kernel(0.0, 1.0, 1).unwrap(), 0.0);
        assert!(matches!(
            gauss_kernel(0.0, 1.0, 9),
            Err(Error::OrderUnsupported(_))
        ));
        assert!(gauss_kernel(0.0, 0.0, 0).is_err());
    }

    #[test]
    fn gaussian_second_derivative_closed_form() {
        for &(x, v) in &[(0.3, 0.7), (-1.2, 2.0), (2.5, 1.1)] {
            let exact = (x * x - v) / (v * v) * phi(x, v);
            assert!((gauss_kernel(x, v, 2).unwrap() - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_finite_difference_order() {
        for k in 0..MAX_GAUSS_DX - 1 {
            for &(x, v) in &[(0.4, 0.8), (-1.3, 1.7)] {
                for d in 1..=2 {
                    let f = |y: f64| gauss_kernel(y, v, k).unwrap();
                    let exact = gauss_kernel(x, v, k + d).unwrap();
                    let p = observed_order(exact, &f, x, d);
                    assert!(p >= 1.8, "k={k} d={d} order {p}");
                }
            }
        }
    }

    #[test]
    fn drift_free_limit_is_gaussian() {
        for &(x, s) in &[(0.1, 0.5), (1.7, 2.0), (-0.8, 1.3)] {
            for k in 0..=4 {
                let a = gauss_drift_kernel(x, s, 0.0, 1.0, k, 0).unwrap();
                let b = gauss_kernel(x, s, k).unwrap();
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn drift_kernel_time_derivative_matches_direct_differentiation() {
        let (x, s, mu) = (0.7, 1.3, 0.5);
        // Direct: d/ds of exp(-q)/sqrt(2 pi s) with q = (x - mu s)^2 / 2s.
        let u = x - mu * s;
        let dq = -mu * u / s - u * u / (2.0 * s * s);
        let direct = phi(u, s) * (-dq - 0.5 / s);
        let lhs = gauss_drift_kernel(x, s, mu, 1.0, 0, 1).unwrap();
        let rhs = 0.5 * gauss_drift_kernel(x, s, mu, 1.0, 2, 0).unwrap()
            - mu * gauss_drift_kernel(x, s, mu, 1.0, 1, 0).unwrap();
        assert!((lhs - direct).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn drift_kernel_finite_difference_orders() {
        let (mu, d) = (0.5, 1.4);
        for &(x, s) in &[(0.7, 1.3), (mu * 1.1, 1.1)] {
            for k in 0..=2 {
                let fx = |y: f64| gauss_drift_kernel(y, s, mu, d, k, 0).unwrap();
                assert!(
                    observed_order(
                        gauss_drift_kernel(x, s, mu, d, k + 1, 0).unwrap(),
                        &fx,
                        x,
                        1
                    ) >= 1.8
                );
                let fs = |r: f64| gauss_drift_kernel(x, r, mu, d, k, 0).unwrap();
                assert!(
                    observed_order(gauss_drift_kernel(x, s, mu, d, k, 1).unwrap(), &fs, s, 1)
                        >= 1.8
                );
                assert!(
                    observed_order(gauss_drift_kernel(x, s, mu, d, k, 2).unwrap(), &fs, s, 2)
                        >= 1.8
                );
            }
        }
    }

    #[test]
    fn fbm_kernel_properties() {
        assert!((fbm_kernel(0.0, 1.0, 0.7, 0, 0).unwrap() - INV_SQRT_2PI).abs() < 1e-15);
        for k in 0..=4 {
            let a = fbm_kernel(0.6, 1.7, 0.5, k, 0).unwrap();
            let b = gauss_kernel(0.6, 1.7, k).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        let (x, s, h) = (0.9, 1.1, 0.3);
        let lhs = fbm_kernel(x, s, h, 0, 1).unwrap();
        // Direct: variance v = s^{2H}, d/ds phi(x; v) = v' (x^2 - v) / (2 v^2) phi.
        let v = s.powf(2.0 * h);
        let dv = 2.0 * h * s.powf(2.0 * h - 1.0);
        let direct = dv * (x * x - v) / (2.0 * v * v) * phi(x, v);
        assert!((lhs - direct).abs() < 1e-11);
        let rhs = h * s.powf(2.0 * h - 1.0) * fbm_kernel(x, s, h, 2, 0).unwrap();
        assert!((lhs - rhs).abs() < 1e-11);
    }

    #[test]
    fn fbm_finite_difference_orders() {
        for &hurst in &[0.3, 0.7] {
            let (x, s) = (0.8, 1.2);
            let fs = |r: f64| fbm_kernel(x, r, hurst, 1, 0).unwrap();
            assert!(observed_order(fbm_kernel(x, s, hurst, 1, 1).unwrap(), &fs, s, 1) >= 1.8);
            assert!(observed_order(fbm_kernel(x, s, hurst, 1, 2).unwrap(), &fs, s, 2) >= 1.8);
        }
    }

    #[test]
    fn cauchy_values() {
        assert!((cauchy_kernel(0.0, 1.0, 0, 0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((cauchy_kernel(1.0, 0.0, 1, 0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(matches!(
            cauchy_kernel(0.0, 0.0, 0, 0),
            Err(Error::SingularPoint(_))
        ));
        // Rational closed forms.
        let (x, s) = (0.6, 1.4);
        let r2 = x * x + s * s;
        let dx = -2.0 * x * s / (PI * r2 * r2);
        let ds = (x * x - s * s) / (PI * r2 * r2);
        assert!((cauchy_kernel(x, s, 0, 1).unwrap() - dx).abs() < 1e-15);
        assert!((cauchy_kernel(x, s, 1, 0).unwrap() - ds).abs() < 1e-15);
    }

    #[test]
    fn cauchy_finite_difference_orders() {
        for &(x, s) in &[(0.5, 0.8), (-1.5, 0.4), (2.0, 3.0)] {
            for base in 0..=1 {
                let fx = |y: f64| cauchy_kernel(y, s, 0, base).unwrap();
                assert!(
                    observed_order(cauchy_kernel(x, s, 0, base + 1).unwrap(), &fx, x, 1) >= 1.8
                );
                assert!(
                    observed_order(cauchy_kernel(x, s, 0, base + 2).unwrap(), &fx, x, 2) >= 1.8
                );
                let fs = |r: f64| cauchy_kernel(x, r, base, 0).unwrap();
                assert!(
                    observed_order(cauchy_kernel(x, s, base + 1, 0).unwrap(), &fs, s, 1) >= 1.8
                );
                assert!(
                    observed_order(cauchy_kernel(x, s, base + 2, 0).unwrap(), &fs, s, 2) >= 1.8
                );
            }
        }
    }

    #[test]
    fn cauchy_harmonic_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: f64 = rng.random_range(0.1..5.0);
            let s: f64 = rng.random_range(0.1..5.0);
            let lap = cauchy_kernel(x, s, 2, 0).unwrap() + cauchy_kernel(x, s, 0, 2).unwrap();
            assert!(lap.abs() < 1e-12, "({x}, {s}) -> {lap}");
        }
        let lap = cauchy_kernel(0.5, 0.8, 2, 0).unwrap() + cauchy_kernel(0.5, 0.8, 0, 2).unwrap();
        assert!(lap.abs() < 1e-12);
    }

    #[test]
    fn first_passage_values_and_mass() {
        assert_eq!(first_passage_kernel(0.0, 1.0).unwrap(), 0.0);
        let direct = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((first_passage_kernel(1.0, 1.0).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.241971).abs() < 1e-6);
        let cfg = crate::model::QuadratureConfig::default();
        for &s in &[0.5, 1.0, 2.0] {
            let m = crate::quad::integrate_semi_infinite_scaled(
                |w| first_passage(s, w),
                0.0,
                s * s,
                &cfg,
            )
            .unwrap();
            assert!((m.value - 1.0).abs() < 1e-9, "level {s}: {}", m.value);
        }
    }

    #[test]
    fn normalizer_values() {
        for &t in &[0.1, 1.0, 7.0] {
            assert!((half_normal_normalizer(t, 0.0) - 0.5).abs() < 1e-15);
        }
        assert!((half_normal_normalizer(1.0, 40.0) - 1.0).abs() < 1e-15);
        let cfg = crate::model::QuadratureConfig::default();
        let q = crate::quad::integrate_semi_infinite(|y| phi(y - 1.0, 1.0), &cfg)
            .unwrap()
            .value;
        assert!((half_normal_normalizer(1.0, 1.0) - q).abs() < 1e-10);
        assert!((half_normal_normalizer(1.0, 1.0) - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn outer_dispatch_matches_direct_kernels() {
        let c = ProcessKind::Cauchy {
            location: 0.7,
            scale: 2.0,
        };
        let direct = 2.0 * 1.3 / (PI * ((2.0f64 * 1.3).powi(2) + (0.2f64 - 0.7).powi(2)));
        assert!((outer_kernel(&c, 0.2, 1.3, 0, 0).unwrap().value - direct).abs() < 1e-15);
        let fs = |r: f64| outer_partial(&c, 0.2, r, 0, 0);
        assert!((central(&fs, 1.3, 1e-5, 1) - outer_partial(&c, 0.2, 1.3, 0, 1)).abs() < 1e-8);
    }
}
