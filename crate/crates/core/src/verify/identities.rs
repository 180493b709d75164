//! Exact identities checked pointwise against quadrature.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::densities::{
    cc_closed_form, cc_closed_form_printed, iterated_density_pn, pn_zero_formula, DensityField,
    DensityModel, DerivOrder,
};
use crate::error::{Error, Result};
use crate::fractional::{
    riesz_deriv_centered_scaled, riesz_deriv_definition_scaled, riesz_deriv_fourier, FracOrder,
};
use crate::kernels::{cauchy_partial, first_passage, phi};
use crate::model::{CompositionSpec, EquationId, Grid, Inner, ProcessKind, QuadratureConfig};
use crate::quad::{integrate_semi_infinite_scaled, IntegralResult, QuadValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCase {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub error: f64,
    pub tolerance: f64,
    /// Cases recorded for comparison only do not affect `passed`.
    pub asserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: EquationId,
    pub citation: String,
    pub cases: Vec<IdentityCase>,
    pub max_error: f64,
    pub passed: bool,
}

impl IdentityReport {
    fn new(identity: EquationId, cases: Vec<IdentityCase>) -> Self {
        let asserted = cases.iter().filter(|c| c.asserted);
        let max_error = asserted.clone().map(|c| c.error).fold(0.0, f64::max);
        let passed = asserted
            .clone()
            .all(|c| c.error.is_finite() && c.error <= c.tolerance);
        IdentityReport {
            identity,
            citation: identity.citation().to_string(),
            cases,
            max_error,
            passed,
        }
    }
}

fn case(label: String, lhs: f64, rhs: f64, error: f64, tolerance: f64) -> IdentityCase {
    IdentityCase {
        label,
        lhs,
        rhs,
        error,
        tolerance,
        asserted: true,
    }
}

fn abs_case(label: String, lhs: f64, rhs: f64, tolerance: f64) -> IdentityCase {
    case(label, lhs, rhs, (lhs - rhs).abs(), tolerance)
}

fn rel_case(label: String, lhs: f64, rhs: f64, tolerance: f64) -> IdentityCase {
    case(
        label,
        lhs,
        rhs,
        (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE),
        tolerance,
    )
}

fn value<T: QuadValue>(r: IntegralResult<T>) -> Result<T> {
    r.checked()
        .map(|r| r.value)
        .map_err(|e| Error::QuadratureFailure(e.to_string()))
}

/// Laplace transform in `t` of the characteristic function in `x` of `B^mu(|B(t)|)`,
/// by quadrature, against `eta^{-1/2} / (beta^2/2^{3/2} - i beta mu/sqrt 2 + sqrt eta)`.
pub fn fourier_laplace_check(
    mu: f64,
    beta: f64,
    eta: f64,
    cfg: &QuadratureConfig,
) -> Result<(Complex64, Complex64)> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Laplace variable must be positive, got {eta}"
        )));
    }
    let symbol = Complex64::new(-0.5 * beta * beta, beta * mu);
    let inner_cfg = cfg.inner_level();
    // The Gaussian characteristic function leaves a one-dimensional clock integral.
    let char_fn = |t: f64| -> Result<Complex64> {
        let r = integrate_semi_infinite_scaled(
            |s| (symbol * s).exp() * (2.0 * phi(s, t)),
            0.0,
            t.sqrt(),
            &inner_cfg,
        )?;
        value(r)
    };
    let failure = std::cell::Cell::new(None);
    let outer = integrate_semi_infinite_scaled(
        |t| match char_fn(t) {
            Ok(v) => v * (-eta * t).exp(),
            Err(e) => {
                failure.set(Some(e));
                Complex64::default()
            }
        },
        0.0,
        1.0 / eta,
        cfg,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let lhs = value(outer)?;
    let rhs = eta.powf(-0.5)
        / Complex64::new(
            beta * beta / 2f64.powf(1.5) + eta.sqrt(),
            -beta * mu / SQRT_2,
        );
    Ok((lhs, rhs))
}

/// `t / (pi (t^2 + s^2))` against `int_0^inf phi(s; w) T_t(w) dw` with `T_t` the
/// first-passage density of level `t`.
pub fn subordination_identity_check(s: f64, t: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    if !(t > 0.0) || s < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need s >= 0 and t > 0, got ({s}, {t})"
        )));
    }
    let lhs = t / (PI * (t * t + s * s));
    let scale = (t * t + s * s).max(1e-300);
    let rhs = value(integrate_semi_infinite_scaled(
        |w| {
            if w > 0.0 {
                phi(s, w) * first_passage(t, w)
            } else {
                0.0
            }
        },
        0.0,
        scale,
        cfg,
    )?)?;
    Ok((lhs, rhs))
}

/// `(numeric, formula)` for the density of the `n`-fold iterated Brownian motion at
/// the origin; `numeric` comes from the nested quadrature.
pub fn pn_zero_constant_check(n: u32, t: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    if !(1..=3).contains(&n) {
        return Err(Error::DepthUnsupported {
            depth: n as usize,
            limit: 3,
        });
    }
    Ok((iterated_density_pn(n, 0.0, t, cfg)?, pn_zero_formula(n, t)))
}

fn i1(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let points = [
        (0.0, 0.0, 1.0),
        (0.0, 1.0, 1.0),
        (0.5, 1.0, 1.0),
        (0.5, 2.0, 0.5),
        (-0.3, 0.7, 2.0),
        (1.0, 1.5, 1.0),
    ];
    points
        .iter()
        .map(|&(mu, beta, eta)| {
            let (l, r) = fourier_laplace_check(mu, beta, eta, cfg)?;
            Ok(case(
                format!(
                    "mu={mu} beta={beta} eta={eta} (re, im diff {:.3e})",
                    (l - r).im.abs()
                ),
                l.re,
                r.re,
                (l - r).norm(),
                1e-6,
            ))
        })
        .collect()
}

fn i2(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &s in &[0.5, 1.0, 2.0] {
        for &t in &[0.5, 1.0, 2.0] {
            pts.push((s, t));
        }
    }
    pts.push((0.0, 1.0));
    pts.iter()
        .map(|&(s, t)| {
            let (l, r) = subordination_identity_check(s, t, cfg)?;
            Ok(abs_case(format!("s={s} t={t}"), l, r, 1e-8))
        })
        .collect()
}

fn i3(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let mut out = Vec::new();
    for n in 1..=2u32 {
        let (at_one, _) = pn_zero_constant_check(n, 1.0, cfg)?;
        for &t in &[0.5, 1.0, 2.0] {
            let (num, formula) = pn_zero_constant_check(n, t, cfg)?;
            out.push(abs_case(format!("n={n} t={t}"), num, formula, 1e-6));
            if t != 1.0 {
                let law = t.powf(-0.5f64.powi(n as i32 + 1));
                out.push(abs_case(
                    format!("n={n} t={t} scaling"),
                    num / at_one,
                    law,
                    1e-8,
                ));
            }
        }
    }
    Ok(out)
}

fn i4() -> Vec<IdentityCase> {
    let mut out = Vec::new();
    for &t in &[0.5, 1.0, 2.0] {
        for &x in &[0.0, 0.1, 0.5, 1.0, 2.0, 3.0] {
            let ptt = cauchy_partial(x, t, 2, 0);
            let pxx = cauchy_partial(x, t, 0, 2);
            out.push(case(
                format!("x={x} t={t}"),
                ptt,
                -pxx,
                (ptt + pxx).abs() / (ptt.abs() + pxx.abs()),
                1e-12,
            ));
        }
    }
    out
}

fn i5(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let mut out = Vec::new();
    for &t in &[0.5, 1.0, 2.0] {
        let p = |x: f64| cauchy_partial(x, t, 0, 0);
        let px = |x: f64| cauchy_partial(x, t, 0, 1);
        for &x in &[0.0, 0.3, 1.0, 2.5] {
            let target = -cauchy_partial(x, t, 1, 0);
            let def = riesz_deriv_definition_scaled(p, Some(px), x, 0.0, t, cfg)?;
            out.push(abs_case(
                format!("definition x={x} t={t}"),
                def,
                target,
                1e-6,
            ));
            let cen = riesz_deriv_centered_scaled(p, x, FracOrder::ONE, t, cfg)?;
            out.push(abs_case(format!("centered x={x} t={t}"), cen, target, 1e-6));
        }
    }
    Ok(out)
}

fn field(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> DensityField {
    DensityField {
        grid: grid.clone(),
        t: 1.0,
        values: grid.points().map(|x| f(&x)).collect(),
        derivatives: Default::default(),
    }
}

fn i6(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let mut out = Vec::new();
    let grid = Grid::cube(-12.0, 12.0, 241, 2)?;
    let fields = [
        (
            "gauss x sech",
            field(&grid, |x| (-0.5 * x[0] * x[0]).exp() / x[1].cosh().powi(4)),
        ),
        (
            "skewed mixture",
            field(&grid, |x| {
                (-(x[0] - 1.0).powi(2) - 0.5 * (x[1] + 0.5).powi(2) - 0.3 * x[0] * x[1]).exp()
                    + 0.5 * (-2.0 * (x[0] + 1.5).powi(2) - 3.0 * (x[1] - 1.0).powi(2)).exp()
            }),
        ),
    ];
    for (label, f) in &fields {
        let a = riesz_deriv_fourier(
            &riesz_deriv_fourier(f, FracOrder::ONE, 0)?,
            FracOrder::ONE,
            1,
        )?;
        let b = riesz_deriv_fourier(
            &riesz_deriv_fourier(f, FracOrder::ONE, 1)?,
            FracOrder::ONE,
            0,
        )?;
        let scale = a.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let (i, diff) = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(u, v)| (u - v).abs())
            .enumerate()
            .fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        out.push(case(
            format!("spectral {label}"),
            a.values[i],
            b.values[i],
            diff / scale,
            1e-10,
        ));
    }
    // Under the clock the two Cauchy factors are differentiated in either order.
    let spec = CompositionSpec::new(
        ProcessKind::standard_cauchy(),
        2,
        Inner::Process(ProcessKind::standard_brownian()),
    );
    let model = DensityModel::new(&spec, cfg)?;
    for x in [[0.8, 1.2], [-0.5, 2.0], [1.5, -0.7]] {
        let kj = model.deriv(&x, 1.0, &DerivOrder::value(2).with_riesz(0).with_riesz(1))?;
        let jk = model.deriv(&x, 1.0, &DerivOrder::value(2).with_riesz(1).with_riesz(0))?;
        out.push(case(
            format!("analytic x=({}, {})", x[0], x[1]),
            kj,
            jk,
            (kj - jk).abs() / kj.abs(),
            1e-10,
        ));
    }
    Ok(out)
}

fn i7(cfg: &QuadratureConfig) -> Result<Vec<IdentityCase>> {
    let spec = CompositionSpec::new(
        ProcessKind::standard_cauchy(),
        1,
        Inner::Process(ProcessKind::standard_cauchy()),
    );
    let model = DensityModel::new(&spec, cfg)?;
    let mut out = Vec::new();
    for &t in &[0.5, 1.0, 2.0] {
        for k in 0..=29 {
            let x = 0.1 + 0.1 * k as f64;
            if (x - t).abs() < 1e-2 {
                continue;
            }
            let quad = model.value(&[x], t)?;
            out.push(rel_case(
                format!("x={x:.1} t={t}"),
                cc_closed_form(x, t, 0.0)?,
                quad,
                1e-6,
            ));
            let mut printed = rel_case(
                format!("printed x={x:.1} t={t}"),
                cc_closed_form_printed(x, t, 0.0)?,
                quad,
                f64::INFINITY,
            );
            printed.asserted = false;
            out.push(printed);
        }
    }
    Ok(out)
}

/// Runs one identity over its fixed set of cases.
pub fn check_identity(id: EquationId, cfg: &QuadratureConfig) -> Result<IdentityReport> {
    use EquationId::*;
    let cases = match id {
        I1 => i1(cfg)?,
        I2 => i2(cfg)?,
        I3 => i3(cfg)?,
        I4 => i4(),
        I5 => i5(cfg)?,
        I6 => i6(cfg)?,
        I7 => i7(cfg)?,
        other => {
            return Err(Error::UnknownEquation(format!(
                "{other} is an equation, not an identity"
            )))
        }
    };
    Ok(IdentityReport::new(id, cases))
}

pub fn identity_suite(cfg: &QuadratureConfig) -> Result<Vec<IdentityReport>> {
    use EquationId::*;
    [I1, I2, I3, I4, I5, I6, I7]
        .iter()
        .map(|&id| check_identity(id, cfg))
        .collect()
}
