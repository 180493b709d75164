//! Densities of composed processes as one-dimensional subordination integrals
//! `p(x, t) = int_0^inf prod_j K_j(x_j; s) g(s; t) ds`, with every space, clock and
//! time derivative taken analytically under the integral sign.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::kernels::{cauchy_partial, drift_partial, fbm_partial, gauss_dx, outer_partial, phi};
use crate::model::{validate_spec, CompositionSpec, Grid, Inner, ProcessKind, QuadratureConfig};
use crate::quad::{integrate_semi_infinite_scaled, IntegralResult};

/// Which partial derivative of a density to evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivOrder {
    /// Ordinary derivative order per space axis.
    pub dx: Vec<u32>,
    /// First-order Riesz derivative `d/d|x_j|` per axis (Cauchy coordinates only).
    pub riesz: Vec<bool>,
    /// Ordinary time derivative order.
    pub dt: u32,
}

impl DerivOrder {
    pub fn value(dim: usize) -> Self {
        DerivOrder {
            dx: vec![0; dim],
            riesz: vec![false; dim],
            dt: 0,
        }
    }

    pub fn x(dim: usize, axis: usize, order: u32) -> Self {
        Self::value(dim).with_x(axis, order)
    }

    pub fn t(dim: usize, order: u32) -> Self {
        Self::value(dim).with_t(order)
    }

    pub fn with_x(mut self, axis: usize, order: u32) -> Self {
        self.dx[axis] += order;
        self
    }

    pub fn with_t(mut self, order: u32) -> Self {
        self.dt += order;
        self
    }

    pub fn with_riesz(mut self, axis: usize) -> Self {
        self.riesz[axis] = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.dx.len()
    }

    pub fn is_value(&self) -> bool {
        self.dt == 0 && self.dx.iter().all(|&k| k == 0) && !self.riesz.iter().any(|&r| r)
    }

    /// Column label, e.g. `d_x0^2`, `d_t`, `R_x0 R_x1`.
    pub fn label(&self) -> String {
        if self.is_value() {
            return "value".into();
        }
        let mut parts = Vec::new();
        for (j, &k) in self.dx.iter().enumerate() {
            match k {
                0 => {}
                1 => parts.push(format!("d_x{j}")),
                _ => parts.push(format!("d_x{j}^{k}")),
            }
        }
        for (j, &r) in self.riesz.iter().enumerate() {
            if r {
                parts.push(format!("R_x{j}"));
            }
        }
        match self.dt {
            0 => {}
            1 => parts.push("d_t".into()),
            k => parts.push(format!("d_t^{k}")),
        }
        parts.join(" ")
    }
}

impl fmt::Display for DerivOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Law of the random clock, with its analytic time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Clock {
    /// Deterministic time.
    Fixed,
    /// `|N(0, rate * t)|`.
    HalfNormal { rate: f64 },
    /// `|B_H(t)|`.
    AbsFbm { hurst: f64 },
    /// `N(mu t, D t)` restricted to `(0, inf)` and renormalized.
    DriftedGaussian { mu: f64, diffusion: f64 },
    /// `|a + scale * C(t)|`.
    AbsCauchy { location: f64, scale: f64 },
    /// `|I_n(t)|`, density `2 p_n(s, t)`.
    Iterated { n: u32 },
    /// Product of the `n - 1` coordinates of the joint clock law of the order-`1/n`
    /// time-fractional diffusion.
    Product { n: u32 },
}

fn clock_of(spec: &CompositionSpec) -> Clock {
    match spec.inner {
        Inner::None => Clock::Fixed,
        Inner::Process(ProcessKind::Brownian { drift, diffusion }) => {
            if let Some(lambda) = spec.time_scale {
                Clock::HalfNormal {
                    rate: 8.0 * lambda.powi(4),
                }
            } else if drift == 0.0 {
                Clock::HalfNormal { rate: diffusion }
            } else {
                Clock::DriftedGaussian {
                    mu: drift,
                    diffusion,
                }
            }
        }
        Inner::Process(ProcessKind::FractionalBrownian { hurst }) => Clock::AbsFbm { hurst },
        Inner::Process(ProcessKind::Cauchy { location, scale }) => {
            Clock::AbsCauchy { location, scale }
        }
        Inner::IteratedBrownian { n } => Clock::Iterated { n },
        Inner::FracTimeProduct { n } => Clock::Product { n },
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `C(t) = P(N(mu t, D t) > 0)` and its first two time derivatives.
fn drift_normalizer(t: f64, mu: f64, diffusion: f64) -> [f64; 3] {
    let z = mu * (t / diffusion).sqrt();
    let z1 = mu / (2.0 * (diffusion * t).sqrt());
    let z2 = -mu / (4.0 * diffusion.sqrt() * t.powf(1.5));
    let pz = phi(z, 1.0);
    [std_normal_cdf(z), pz * z1, pz * (-z * z1 * z1 + z2)]
}

/// Value of `p_0 = phi(.; t)` or one of its partials.
#[inline]
fn p0(x: f64, t: f64, kx: u32, kt: u32) -> f64 {
    0.5f64.powi(kt as i32) * gauss_dx(x, t, kx + 2 * kt)
}

/// Typical size of `|I_n(t)|`.
fn iterated_scale(n: u32, t: f64) -> f64 {
    t.powf(0.5f64.powi(n as i32 + 1))
}

fn quad_failure(e: Error) -> Error {
    match e {
        Error::BudgetExceeded { value, error } => {
            Error::QuadratureFailure(format!("estimate {value:e} with error {error:e}"))
        }
        other => other,
    }
}

/// Runs an adaptive semi-infinite integral whose integrand may itself fail.
fn integrate_fallible<F>(f: F, scale: f64, cfg: &QuadratureConfig) -> Result<IntegralResult>
where
    F: Fn(f64) -> Result<f64>,
{
    let failure = std::cell::RefCell::new(None);
    let r = integrate_semi_infinite_scaled(
        |s| match f(s) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        scale,
        cfg,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    r.and_then(IntegralResult::checked).map_err(quad_failure)
}

/// `d^kx/dx^kx d^kt/dt^kt p_n(x, t)` for the n-times iterated Brownian motion
/// (`n + 1` Brownian motions), by recursion `p_n(x,t) = 2 int phi(x; w) p_{n-1}(w, t) dw`.
fn pn_partial(n: u32, x: f64, t: f64, kx: u32, kt: u32, cfg: &QuadratureConfig) -> Result<f64> {
    if n == 0 {
        return Ok(p0(x, t, kx, kt));
    }
    let inner = cfg.inner_level();
    let scale = iterated_scale(n - 1, t);
    let r = integrate_fallible(
        |w| {
            let k = gauss_dx(x, w, kx);
            if k == 0.0 {
                return Ok(0.0);
            }
            Ok(2.0 * k * pn_partial(n - 1, w, t, 0, kt, &inner)?)
        },
        scale,
        cfg,
    )?;
    Ok(r.value)
}

/// Density of an n-times iterated Brownian motion.
pub fn iterated_density_pn(n: u32, x: f64, t: f64, cfg: &QuadratureConfig) -> Result<f64> {
    iterated_density_pn_partial(n, x, t, 0, 0, cfg)
}

/// Partials of [`iterated_density_pn`] in `x` and `t`.
pub fn iterated_density_pn_partial(
    n: u32,
    x: f64,
    t: f64,
    kx: u32,
    kt: u32,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_time(t)?;
    if n as usize > cfg.nested_budget {
        return Err(Error::DepthUnsupported {
            depth: n as usize,
            limit: cfg.nested_budget,
        });
    }
    if n >= 1 && x == 0.0 && kx >= 2 {
        return Err(Error::SingularPoint(format!(
            "x-derivative of order {kx} at the origin"
        )));
    }
    pn_partial(n, x, t, kx, kt, cfg)
}

/// `p_n(0, t) = 2^{n - 1/2^{n+1}} pi^{-1/2} t^{-1/2^{n+1}} Gamma(-1/2) / Gamma(-1/2^{n+1})`.
pub fn pn_zero_formula(n: u32, t: f64) -> f64 {
    let e = 0.5f64.powi(n as i32 + 1);
    2f64.powf(n as f64 - e) / PI.sqrt() * t.powf(-e) * gamma(-0.5) / gamma(-e)
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time must be positive, got {t}"
        )))
    }
}

/// Clock density `g(s; t)` differentiated `kt` times in `t`.
fn clock_partial(clock: Clock, s: f64, t: f64, kt: u32, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(match clock {
        Clock::Fixed | Clock::Product { .. } => unreachable!("no single clock density"),
        Clock::HalfNormal { rate } => {
            2.0 * (0.5 * rate).powi(kt as i32) * gauss_dx(s, rate * t, 2 * kt)
        }
        Clock::AbsFbm { hurst } => 2.0 * fbm_partial(s, t, hurst, 0, kt),
        Clock::DriftedGaussian { mu, diffusion } => {
            let c = drift_normalizer(t, mu, diffusion);
            let n0 = drift_partial(s, t, mu, diffusion, 0, 0);
            match kt {
                0 => n0 / c[0],
                1 => {
                    let n1 = drift_partial(s, t, mu, diffusion, 0, 1);
                    n1 / c[0] - n0 * c[1] / (c[0] * c[0])
                }
                _ => {
                    let n1 = drift_partial(s, t, mu, diffusion, 0, 1);
                    let n2 = drift_partial(s, t, mu, diffusion, 0, 2);
                    n2 / c[0] - 2.0 * n1 * c[1] / (c[0] * c[0]) - n0 * c[2] / (c[0] * c[0])
                        + 2.0 * n0 * c[1] * c[1] / (c[0] * c[0] * c[0])
                }
            }
        }
        Clock::AbsCauchy { location, scale } => {
            scale.powi(kt as i32)
                * (cauchy_partial(s - location, scale * t, kt, 0)
                    + cauchy_partial(s + location, scale * t, kt, 0))
        }
        Clock::Iterated { n } => 2.0 * pn_partial(n, s, t, 0, kt, cfg)?,
    })
}

fn clock_scale(clock: Clock, t: f64) -> f64 {
    match clock {
        Clock::Fixed => t,
        Clock::HalfNormal { rate } => (rate * t).sqrt(),
        Clock::AbsFbm { hurst } => t.powf(hurst),
        Clock::DriftedGaussian { mu, diffusion } => (mu * t).abs() + (diffusion * t).sqrt(),
        Clock::AbsCauchy { location, scale } => scale * t + location.abs(),
        Clock::Iterated { n } => iterated_scale(n, t),
        Clock::Product { n } => {
            let nf = n as f64;
            (nf.powf(nf) * t).powf(1.0 / (nf * (nf - 1.0)))
        }
    }
}

/// The product of outer kernels at clock value `s`, with per-factor extra clock
/// derivatives `extra_ds`.
#[inline]
fn outer_product(
    outer: &[ProcessKind],
    x: &[f64],
    s: f64,
    order: &DerivOrder,
    extra_ds: &[u32],
) -> f64 {
    let mut acc = 1.0;
    for (j, p) in outer.iter().enumerate() {
        let riesz = order.riesz[j];
        let ds = extra_ds[j] + u32::from(riesz);
        let mut v = outer_partial(p, x[j], s, order.dx[j], ds);
        if riesz {
            if let ProcessKind::Cauchy { scale, .. } = p {
                v *= -1.0 / scale;
            }
        }
        if v == 0.0 {
            return 0.0;
        }
        acc *= v;
    }
    acc
}

/// `d^k/ds^k` of the outer product by the general Leibniz rule.
fn outer_product_ds(outer: &[ProcessKind], x: &[f64], s: f64, order: &DerivOrder, k: u32) -> f64 {
    fn rec(
        outer: &[ProcessKind],
        x: &[f64],
        s: f64,
        order: &DerivOrder,
        j: usize,
        left: u32,
        ds: &mut Vec<u32>,
        coeff: f64,
    ) -> f64 {
        if j + 1 == outer.len() {
            ds[j] = left;
            return coeff * outer_product(outer, x, s, order, ds);
        }
        let mut acc = 0.0;
        for m in 0..=left {
            ds[j] = m;
            let binom = (1..=m).fold(1.0, |b, i| b * f64::from(left - m + i) / f64::from(i));
            acc += rec(outer, x, s, order, j + 1, left - m, ds, coeff * binom);
        }
        acc
    }
    let mut ds = vec![0; outer.len()];
    rec(outer, x, s, order, 0, k, &mut ds, 1.0)
}

/// A validated composition ready for evaluation.
#[derive(Debug, Clone)]
pub struct DensityModel {
    spec: CompositionSpec,
    clock: Clock,
    cfg: QuadratureConfig,
}

impl DensityModel {
    pub fn new(spec: &CompositionSpec, cfg: &QuadratureConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = validate_spec(spec)?;
        let clock = clock_of(&spec);
        Ok(DensityModel {
            spec,
            clock,
            cfg: *cfg,
        })
    }

    pub fn spec(&self) -> &CompositionSpec {
        &self.spec
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Same model with different quadrature settings.
    pub fn with_config(&self, cfg: &QuadratureConfig) -> Self {
        DensityModel {
            cfg: *cfg,
            ..self.clone()
        }
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.deriv(x, t, &DerivOrder::value(self.dim()))
    }

    fn check_point(&self, x: &[f64], t: f64, order: &DerivOrder) -> Result<()> {
        check_time(t)?;
        let d = self.dim();
        if x.len() != d || order.dim() != d || order.riesz.len() != d {
            return Err(Error::UnsupportedDimension(format!(
                "point has {} coordinates and derivative {} axes, composition has {d}",
                x.len(),
                order.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("coordinates must be finite".into()));
        }
        if order.dt > 2 {
            return Err(Error::OrderUnsupported(format!(
                "time derivative of order {}",
                order.dt
            )));
        }
        if order.dx.iter().any(|&k| k > crate::kernels::MAX_GAUSS_DX) {
            return Err(Error::OrderUnsupported(
                "space derivative above order 8".into(),
            ));
        }
        let first = self.spec.outer[0];
        if let ProcessKind::Cauchy { .. } = first {
            let at_location: Vec<bool> = self
                .spec
                .outer
                .iter()
                .zip(x)
                .map(
                    |(p, &xj)| matches!(p, ProcessKind::Cauchy { location, .. } if xj == *location),
                )
                .collect();
            if self.clock != Clock::Fixed {
                if at_location.iter().all(|&b| b) {
                    return Err(Error::SingularPoint(
                        "every coordinate sits at the location".into(),
                    ));
                }
                for j in 0..d {
                    if at_location[j] && (order.dx[j] > 0 || order.riesz[j]) {
                        return Err(Error::SingularPoint(format!(
                            "derivative on axis {j} at the location"
                        )));
                    }
                }
            }
        } else {
            if order.riesz.iter().any(|&r| r) {
                return Err(Error::UnsupportedComposition(
                    "analytic Riesz derivatives need Cauchy coordinates; use the spectral route"
                        .into(),
                ));
            }
            if self.clock != Clock::Fixed {
                if d >= 2 && x.iter().all(|&v| v == 0.0) {
                    return Err(Error::SingularPoint(
                        "Gaussian coordinates all at the origin".into(),
                    ));
                }
                for j in 0..d {
                    if x[j] == 0.0 && order.dx[j] >= 2 {
                        return Err(Error::SingularPoint(format!(
                            "x-derivative of order {} at the origin on axis {j}",
                            order.dx[j]
                        )));
                    }
                }
            }
        }
        if let Clock::Product { .. } = self.clock {
            if order.dt > 2 {
                return Err(Error::OrderUnsupported(
                    "product clock time derivative".into(),
                ));
            }
        }
        Ok(())
    }

    /// A partial derivative of the density at `(x, t)`.
    pub fn deriv(&self, x: &[f64], t: f64, order: &DerivOrder) -> Result<f64> {
        self.check_point(x, t, order)?;
        let outer = &self.spec.outer;
        match self.clock {
            Clock::Fixed => Ok(outer_product_ds(outer, x, t, order, order.dt)),
            Clock::Product { n } => self.product_clock(x, t, order, n),
            Clock::Iterated { n }
                if outer.len() == 1 && outer[0].is_standard_brownian() && order.dx[0] > 4 =>
            {
                self.iterated_high_order(x[0], t, order.dx[0], order.dt, n)
            }
            clock => {
                let zeros = vec![0; outer.len()];
                let scale = clock_scale(clock, t);
                let inner = self.cfg.inner_level();
                let r = integrate_fallible(
                    |s| {
                        let k = outer_product(outer, x, s, order, &zeros);
                        if k == 0.0 {
                            return Ok(0.0);
                        }
                        Ok(k * clock_partial(clock, s, t, order.dt, &inner)?)
                    },
                    scale,
                    &self.cfg,
                )?;
                Ok(r.value)
            }
        }
    }

    /// High space derivatives of `B(|I_n|)`. With `d_xx phi = 2 d_s phi`, `j` pairs of
    /// x-derivatives become s-derivatives and move onto the clock density by parts;
    /// the boundary terms vanish at `x != 0` because `phi(x; s)` is flat at `s = 0`.
    fn iterated_high_order(&self, x: f64, t: f64, kx: u32, kt: u32, n: u32) -> Result<f64> {
        let j = (kx - 3) / 2;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let inner = self.cfg.inner_level();
        let r = integrate_fallible(
            |s| {
                let k = gauss_dx(x, s, kx - 2 * j);
                if k == 0.0 {
                    return Ok(0.0);
                }
                Ok(2.0 * k * pn_partial(n, s, t, j, kt, &inner)?)
            },
            iterated_scale(n, t),
            &self.cfg,
        )?;
        Ok(sign * 2f64.powi(j as i32) * r.value)
    }

    /// `int ... int prod_j K(x_j; w_1 ... w_{n-1}) f(w; t) dw` for the product clock.
    fn product_clock(&self, x: &[f64], t: f64, order: &DerivOrder, n: u32) -> Result<f64> {
        let nf = n as f64;
        let m = (n - 1) as usize;
        let theta = (nf.powf(nf) * t).powf(-1.0 / (nf - 1.0));
        let norm = nf.powf((nf - 1.0) / 2.0) / (2.0 * PI).powf((nf - 1.0) / 2.0) / t.sqrt();
        let scale = clock_scale(self.clock, t);
        let outer = &self.spec.outer;
        let zeros = vec![0; outer.len()];
        // Time derivatives of the joint law act through log f = -ln t / 2 - S theta + const.
        let time_factor = |sum_pow: f64| -> f64 {
            let a = -0.5 / t + sum_pow * theta / ((nf - 1.0) * t);
            match order.dt {
                0 => 1.0,
                1 => a,
                _ => {
                    let da =
                        0.5 / (t * t) - sum_pow * theta * nf / ((nf - 1.0) * (nf - 1.0) * t * t);
                    a * a + da
                }
            }
        };
        #[allow(clippy::too_many_arguments)]
        fn level(
            j: usize,
            m: usize,
            prod: f64,
            sum_pow: f64,
            weight: f64,
            ctx: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
            nf: f64,
            theta: f64,
            scale: f64,
            cfg: &QuadratureConfig,
        ) -> Result<f64> {
            if j == m {
                return Ok(ctx(prod, sum_pow, weight));
            }
            let inner = cfg.inner_level();
            let r = integrate_fallible(
                |w| {
                    let wp = w.powf(nf);
                    let wt = weight * w.powi(j as i32) * (-wp * theta).exp();
                    if wt == 0.0 {
                        return Ok(0.0);
                    }
                    level(
                        j + 1,
                        m,
                        prod * w,
                        sum_pow + wp,
                        wt,
                        ctx,
                        nf,
                        theta,
                        scale,
                        &inner,
                    )
                },
                scale,
                cfg,
            )?;
            Ok(r.value)
        }
        let ctx = |prod: f64, sum_pow: f64, weight: f64| -> f64 {
            if prod <= 0.0 {
                return 0.0;
            }
            let k = outer_product(outer, x, prod, order, &zeros);
            k * weight * time_factor(sum_pow)
        };
        if m > self.cfg.nested_budget {
            return Err(Error::DepthUnsupported {
                depth: m,
                limit: self.cfg.nested_budget,
            });
        }
        Ok(norm * level(0, m, 1.0, 0.0, 1.0, &ctx, nf, theta, scale, &self.cfg)?)
    }

    /// `P(X(t) <= x)` for one-dimensional compositions.
    pub fn cdf(&self, x: f64, t: f64) -> Result<f64> {
        check_time(t)?;
        if self.dim() != 1 {
            return Err(Error::UnsupportedDimension(
                "CDF is defined for one coordinate".into(),
            ));
        }
        let p = self.spec.outer[0];
        let outer_cdf = move |s: f64| -> f64 {
            match p {
                ProcessKind::Brownian { drift, diffusion } => {
                    std_normal_cdf((x - drift * s) / (diffusion * s).sqrt())
                }
                ProcessKind::FractionalBrownian { hurst } => std_normal_cdf(x / s.powf(hurst)),
                ProcessKind::Cauchy { location, scale } => {
                    0.5 + ((x - location) / (scale * s)).atan() / PI
                }
            }
        };
        match self.clock {
            Clock::Fixed => Ok(outer_cdf(t)),
            Clock::Product { n } => {
                // Same nested integral as the density with the CDF as outer kernel.
                let nf = n as f64;
                let theta = (nf.powf(nf) * t).powf(-1.0 / (nf - 1.0));
                let norm = nf.powf((nf - 1.0) / 2.0) / (2.0 * PI).powf((nf - 1.0) / 2.0) / t.sqrt();
                let scale = clock_scale(self.clock, t);
                fn level(
                    j: usize,
                    m: usize,
                    prod: f64,
                    weight: f64,
                    kernel: &dyn Fn(f64) -> f64,
                    nf: f64,
                    theta: f64,
                    scale: f64,
                    cfg: &QuadratureConfig,
                ) -> Result<f64> {
                    if j == m {
                        return Ok(if prod > 0.0 {
                            kernel(prod) * weight
                        } else {
                            0.0
                        });
                    }
                    let inner = cfg.inner_level();
                    let r = integrate_fallible(
                        |w| {
                            let wt = weight * w.powi(j as i32) * (-w.powf(nf) * theta).exp();
                            if wt == 0.0 {
                                return Ok(0.0);
                            }
                            level(j + 1, m, prod * w, wt, kernel, nf, theta, scale, &inner)
                        },
                        scale,
                        cfg,
                    )?;
                    Ok(r.value)
                }
                Ok(norm
                    * level(
                        0,
                        (n - 1) as usize,
                        1.0,
                        1.0,
                        &outer_cdf,
                        nf,
                        theta,
                        scale,
                        &self.cfg,
                    )?)
            }
            clock => {
                let inner = self.cfg.inner_level();
                let r = integrate_fallible(
                    |s| Ok(outer_cdf(s) * clock_partial(clock, s, t, 0, &inner)?),
                    clock_scale(clock, t),
                    &self.cfg,
                )?;
                Ok(r.value)
            }
        }
    }
}

pub fn density_point(
    spec: &CompositionSpec,
    x: &[f64],
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    DensityModel::new(spec, cfg)?.value(x, t)
}

pub fn density_deriv(
    spec: &CompositionSpec,
    x: &[f64],
    t: f64,
    order: &DerivOrder,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    DensityModel::new(spec, cfg)?.deriv(x, t, order)
}

pub fn cdf_point(spec: &CompositionSpec, x: f64, t: f64, cfg: &QuadratureConfig) -> Result<f64> {
    DensityModel::new(spec, cfg)?.cdf(x, t)
}

/// Density values (and requested derivatives) over a grid at a fixed time.
/// Points inside exclusion bands hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: Grid,
    pub t: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub derivatives: BTreeMap<String, Vec<f64>>,
}

impl DensityField {
    /// Long-form CSV: coordinates, value, then one column per derivative.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let d = self.grid.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("value".into());
        header.extend(self.derivatives.keys().cloned());
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, x) in self.grid.points().enumerate() {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            row.push(format!("{}", self.values[i]));
            for col in self.derivatives.values() {
                row.push(format!("{}", col[i]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Evaluates the density and each requested derivative at every included grid point.
pub fn density_grid(
    spec: &CompositionSpec,
    grid: &Grid,
    t: f64,
    cfg: &QuadratureConfig,
    orders: &[DerivOrder],
) -> Result<DensityField> {
    grid_impl(spec, grid, t, cfg, orders, false)
}

/// [`density_grid`] where a quantity that is singular at a grid point is stored as
/// `NaN` instead of failing the whole grid.
pub fn density_grid_masked(
    spec: &CompositionSpec,
    grid: &Grid,
    t: f64,
    cfg: &QuadratureConfig,
    orders: &[DerivOrder],
) -> Result<DensityField> {
    grid_impl(spec, grid, t, cfg, orders, true)
}

fn grid_impl(
    spec: &CompositionSpec,
    grid: &Grid,
    t: f64,
    cfg: &QuadratureConfig,
    orders: &[DerivOrder],
    mask_singular: bool,
) -> Result<DensityField> {
    let model = DensityModel::new(spec, cfg)?;
    if grid.dim() != model.dim() {
        return Err(Error::UnsupportedDimension(format!(
            "grid has {} axes, composition has {}",
            grid.dim(),
            model.dim()
        )));
    }
    let points: Vec<Vec<f64>> = grid.points().collect();
    let mut wanted = vec![DerivOrder::value(model.dim())];
    wanted.extend(orders.iter().filter(|o| !o.is_value()).cloned());
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| {
            if grid.is_excluded(x) {
                return Ok(vec![f64::NAN; wanted.len()]);
            }
            wanted
                .iter()
                .map(|o| match model.deriv(x, t, o) {
                    Err(Error::SingularPoint(_)) if mask_singular => Ok(f64::NAN),
                    r => r,
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values = rows.iter().map(|r| r[0]).collect();
    let mut derivatives = BTreeMap::new();
    for (k, o) in wanted.iter().enumerate().skip(1) {
        derivatives.insert(o.label(), rows.iter().map(|r| r[k]).collect());
    }
    Ok(DensityField {
        grid: grid.clone(),
        t,
        values,
        derivatives,
    })
}

/// Mass of a one-dimensional field: composite Simpson over the grid (trapezoid on a
/// leftover panel) plus the exact tail mass outside it from the CDF.
pub fn field_mass(
    field: &DensityField,
    spec: &CompositionSpec,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if field.grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(
            "mass of a one-dimensional field".into(),
        ));
    }
    let axis = field.grid.axes[0];
    let h = axis.spacing();
    let v = &field.values;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { at: f64::NAN });
    }
    let n = v.len();
    let panels = (n - 1) / 2 * 2;
    let mut inner = 0.0;
    for i in (0..panels).step_by(2) {
        inner += h / 3.0 * (v[i] + 4.0 * v[i + 1] + v[i + 2]);
    }
    if panels < n - 1 {
        inner += 0.5 * h * (v[n - 2] + v[n - 1]);
    }
    let model = DensityModel::new(spec, cfg)?;
    let below = model.cdf(axis.lo, field.t)?;
    let above = 1.0 - model.cdf(axis.hi, field.t)?;
    Ok(inner + below + above)
}

/// Density of `B(prod_j G_j(t))`, the solution of the order-`1/n` time-fractional
/// diffusion equation.
pub fn frac_diffusion_density(n: u32, x: f64, t: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if !(2..=3).contains(&n) {
        return Err(Error::DepthUnsupported {
            depth: n as usize,
            limit: 3,
        });
    }
    let spec = CompositionSpec::new(
        ProcessKind::standard_brownian(),
        1,
        Inner::FracTimeProduct { n },
    );
    density_point(&spec, &[x], t, cfg)
}

/// Density of `B(|B^mu(t)|)` with the drifted clock restricted to positive values.
pub fn drifted_time_density(x: f64, t: f64, mu: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let spec = CompositionSpec::new(
        ProcessKind::standard_brownian(),
        1,
        Inner::Process(ProcessKind::brownian_with_drift(mu)),
    );
    density_point(&spec, &[x], t, cfg)
}

/// Right-hand side of the Fourier transform of the drifted-clock density:
/// `(1/C(t)) int_{-mu sqrt t}^inf exp(-beta^2 (sqrt t w + mu t)/2 - w^2/2) / sqrt(2 pi) dw`.
pub fn drifted_time_fourier(beta: f64, t: f64, mu: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let c = crate::kernels::half_normal_normalizer(t, mu);
    let lo = -mu * t.sqrt();
    let r = integrate_semi_infinite_scaled(
        |y| {
            let w = lo + y;
            (-0.5 * beta * beta * (t.sqrt() * w + mu * t) - 0.5 * w * w).exp() / (2.0 * PI).sqrt()
        },
        0.0,
        1.0,
        cfg,
    )?
    .checked()
    .map_err(quad_failure)?;
    Ok(r.value / c)
}

/// `(2/pi^2) t ln(t/r) / (t^2 - r^2)` with `r = |x - a|`: the one-dimensional iterated
/// Cauchy density. A three-term expansion is used within `1e-3 t` of `r = t`.
pub fn cc_closed_form(x: f64, t: f64, a: f64) -> Result<f64> {
    check_time(t)?;
    let r = (x - a).abs();
    if r == 0.0 {
        return Err(Error::SingularPoint(format!(
            "logarithmic divergence at x = a = {a}"
        )));
    }
    let eps = r / t - 1.0;
    if eps.abs() < 1e-3 {
        return Ok((1.0 - eps + 5.0 / 6.0 * eps * eps) / (PI * PI * t));
    }
    Ok(2.0 / (PI * PI) * t * (t / r).ln() / (t * t - r * r))
}

/// The variant with denominator `t^2 + r^2`; kept for comparison only.
pub fn cc_closed_form_printed(x: f64, t: f64, a: f64) -> Result<f64> {
    check_time(t)?;
    let r = (x - a).abs();
    if r == 0.0 {
        return Err(Error::SingularPoint(format!(
            "logarithmic divergence at x = a = {a}"
        )));
    }
    Ok(2.0 / (PI * PI) * t * (t / r).ln() / (t * t + r * r))
}
