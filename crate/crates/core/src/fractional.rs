//! Fractional operators. Caputo time derivatives of order `nu in (0, 1]`; Riesz space
//! derivatives with the positive Fourier multiplier `|beta|^nu`, by the principal-value
//! definition, by the centered second-difference integral, and spectrally.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::densities::{DensityField, DensityModel, DerivOrder};
use crate::error::{Error, Result};
use crate::model::{Grid, QuadratureConfig};
use crate::quad::{
    integrate_finite, integrate_semi_infinite_scaled, integrate_singular_endpoint, Endpoint,
};

/// Order of a fractional operator, `0 < nu <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if nu > 0.0 && nu <= 1.0 {
            Ok(FracOrder(nu))
        } else {
            Err(Error::InvalidParameter(format!(
                "fractional order must lie in (0, 1], got {nu}"
            )))
        }
    }

    pub const HALF: FracOrder = FracOrder(0.5);
    pub const ONE: FracOrder = FracOrder(1.0);

    /// `1 / 2^n`.
    pub fn dyadic(n: u32) -> Self {
        FracOrder(0.5f64.powi(n as i32))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FracOrder {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        FracOrder::new(v)
    }
}

impl From<FracOrder> for f64 {
    fn from(o: FracOrder) -> f64 {
        o.0
    }
}

fn checked(r: crate::quad::IntegralResult) -> Result<f64> {
    r.checked()
        .map(|r| r.value)
        .map_err(|e| Error::QuadratureFailure(e.to_string()))
}

/// Collects the first error of a fallible integrand so it can run inside the quadrature.
struct Fallible<'a, F> {
    f: &'a F,
    failure: std::cell::RefCell<Option<Error>>,
}

impl<'a, F: Fn(f64) -> Result<f64>> Fallible<'a, F> {
    fn new(f: &'a F) -> Self {
        Fallible {
            f,
            failure: std::cell::RefCell::new(None),
        }
    }

    fn call(&self, x: f64) -> f64 {
        match (self.f)(x) {
            Ok(v) => v,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    }

    fn finish<T>(self, r: Result<T>) -> Result<T> {
        match self.failure.into_inner() {
            Some(e) => Err(e),
            None => r,
        }
    }
}

/// Caputo derivative `(1/Gamma(1-nu)) int_0^t f'(tau) (t - tau)^{-nu} dtau` from the
/// analytic derivative `f'`.
pub fn caputo_deriv<F>(fprime: F, nu: FracOrder, t: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    caputo_deriv_fallible(|s| Ok(fprime(s)), nu, t, 0.0, cfg)
}

/// [`caputo_deriv`] for a fallible `f'` that may blow up like `tau^{-origin_exponent}`
/// at `tau = 0` (`origin_exponent` in `[0, 1)`).
pub fn caputo_deriv_fallible<F>(
    fprime: F,
    nu: FracOrder,
    t: f64,
    origin_exponent: f64,
    cfg: &QuadratureConfig,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be positive, got {t}"
        )));
    }
    let nu = nu.value();
    if nu == 1.0 {
        return fprime(t);
    }
    let f = Fallible::new(&fprime);
    let half = cfg.scaled(0.5);
    let mid = 0.5 * t;
    // In u = t - s the kernel is evaluated from u itself; t - s would round to zero
    // near the endpoint for orders close to one.
    let upper = integrate_singular_endpoint(
        |u| f.call(t - u) * u.powf(-nu),
        0.0,
        t - mid,
        nu,
        Endpoint::Lower,
        &half,
    );
    let lower = if origin_exponent > 0.0 {
        integrate_singular_endpoint(
            |s| f.call(s) * (t - s).powf(-nu),
            0.0,
            mid,
            origin_exponent,
            Endpoint::Lower,
            &half,
        )
    } else {
        integrate_finite(|s| f.call(s) * (t - s).powf(-nu), 0.0, mid, &half)
    };
    let total = f.finish(
        upper
            .and_then(checked)
            .and_then(|u| Ok(u + checked(lower?)?)),
    )?;
    Ok(total / gamma(1.0 - nu))
}

fn check_decay<F: Fn(f64) -> f64>(f: &F, x: f64, scale: f64) -> Result<()> {
    let r = 1e6 * scale.max(1.0);
    let tail = (f(x + r).abs() + f(x - r).abs()) * r;
    if !tail.is_finite() || tail > 1e-3 {
        return Err(Error::SlowDecay(format!(
            "|f| * |y| = {tail:e} at |y| = {r:e}"
        )));
    }
    Ok(())
}

/// First-order Riesz derivative from the principal-value definition
/// `(1/pi) d/dx [int_{-inf}^x f(y)/(x-y) dy - int_x^inf f(y)/(y-x) dy]`.
/// With `f'` supplied the outer derivative moves inside:
/// `(1/pi) int_0^inf [f'(x-u) - f'(x+u)] / u du`; otherwise the inner integral is
/// differenced with a fourth-order central stencil.
pub fn riesz_deriv_definition<F, G>(
    f: F,
    fprime: Option<G>,
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    riesz_deriv_definition_scaled(f, fprime, x, 0.0, 1.0, cfg)
}

/// [`riesz_deriv_definition`] for a function concentrated around `center` with
/// width `scale`. The integral in `u` is split at `|x - center|`, where `f(x -+ u)`
/// passes through the concentration.
pub fn riesz_deriv_definition_scaled<F, G>(
    f: F,
    fprime: Option<G>,
    x: f64,
    center: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    check_decay(&f, x, scale)?;
    let split = |g: &dyn Fn(f64) -> f64, z: f64, cfg: &QuadratureConfig| -> Result<f64> {
        let r = (z - center).abs();
        if r <= scale * 1e-3 {
            return checked(integrate_semi_infinite_scaled(g, 0.0, scale, cfg)?);
        }
        let half = cfg.scaled(0.5);
        Ok(checked(integrate_finite(g, 0.0, r, &half)?)?
            + checked(integrate_semi_infinite_scaled(g, r, scale, &half)?)?)
    };
    match fprime {
        Some(df) => Ok(split(&|u| (df(x - u) - df(x + u)) / u, x, cfg)? / PI),
        None => {
            let inner = |z: f64| split(&|u| (f(z - u) - f(z + u)) / u, z, &cfg.scaled(1e-2));
            let h = 1e-2 * scale;
            let d = (-inner(x + 2.0 * h)? + 8.0 * inner(x + h)? - 8.0 * inner(x - h)?
                + inner(x - 2.0 * h)?)
                / (12.0 * h);
            Ok(d / PI)
        }
    }
}

/// `c(nu) = -Gamma(1+nu) sin(pi nu / 2) / pi`.
pub fn centered_constant(nu: FracOrder) -> f64 {
    let nu = nu.value();
    -gamma(1.0 + nu) * (0.5 * PI * nu).sin() / PI
}

/// `1 / (2 Gamma(-nu) cos(pi nu / 2))`, defined for `nu < 1`.
pub fn centered_constant_gamma_form(nu: FracOrder) -> f64 {
    let nu = nu.value();
    1.0 / (2.0 * gamma(-nu) * (0.5 * PI * nu).cos())
}

/// Riesz derivative `c(nu) int_0^inf [f(x-y) - 2 f(x) + f(x+y)] / y^{1+nu} dy`.
pub fn riesz_deriv_centered<F>(f: F, x: f64, nu: FracOrder, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    riesz_deriv_centered_scaled(f, x, nu, 1.0, cfg)
}

/// [`riesz_deriv_centered`] for a function varying on the length `scale`. Below
/// `y = 1e-3 scale` the second difference is replaced by `f''(x) y^2`, with `f''`
/// from the same second difference, to avoid cancellation.
pub fn riesz_deriv_centered_scaled<F>(
    f: F,
    x: f64,
    nu: FracOrder,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_decay(&f, x, scale)?;
    let fx = f(x);
    let nu = nu.value();
    let p = 1.0 + nu;
    let delta = 1e-3 * scale;
    let f2 = (f(x - delta) - 2.0 * fx + f(x + delta)) / (delta * delta);
    let near = f2 * delta.powf(2.0 - nu) / (2.0 - nu);
    let r = integrate_semi_infinite_scaled(
        |y| (f(x - y) - 2.0 * fx + f(x + y)) / y.powf(p),
        delta,
        scale,
        cfg,
    )?;
    Ok(centered_constant(FracOrder(nu)) * (near + checked(r)?))
}

/// Largest absolute value on the two boundary hyperplanes of `axis`.
fn edge_magnitude(values: &[f64], shape: &[usize], axis: usize) -> f64 {
    let stride: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let k = (i / stride) % n;
            k == 0 || k == n - 1
        })
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Default bound on the field at the grid boundary for the spectral route.
pub const SPECTRAL_EDGE_TOL: f64 = 1e-12;

/// Multiplies the discrete transform along `axis` by `|beta|^nu` (the periodic
/// extension of the grid, last point dropped as the image of the first). The
/// periodic images each add about `c(nu) M |y|^{-1-nu}` far from the support; their
/// sum is removed per line through the line's mass `M` and first moment.
pub fn riesz_deriv_fourier(
    field: &DensityField,
    nu: FracOrder,
    axis: usize,
) -> Result<DensityField> {
    riesz_deriv_fourier_with(field, nu, axis, SPECTRAL_EDGE_TOL)
}

pub fn riesz_deriv_fourier_with(
    field: &DensityField,
    nu: FracOrder,
    axis: usize,
    edge_tol: f64,
) -> Result<DensityField> {
    let grid = &field.grid;
    if axis >= grid.dim() {
        return Err(Error::UnsupportedDimension(format!(
            "axis {axis} on a {}-axis grid",
            grid.dim()
        )));
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "spectral route needs a complete field (no excluded points)".into(),
        ));
    }
    let shape = grid.shape();
    let edge = edge_magnitude(&field.values, &shape, axis);
    if edge > edge_tol {
        return Err(Error::EdgeMassTooLarge {
            edge,
            tol: edge_tol,
        });
    }
    let n_axis = shape[axis];
    let m = n_axis - 1;
    let h = grid.axes[axis].spacing();
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let multiplier: Vec<f64> = (0..m)
        .map(|k| {
            let kk = if k <= m / 2 {
                k as f64
            } else {
                k as f64 - m as f64
            };
            (2.0 * PI * kk / (m as f64 * h)).abs().powf(nu.value())
        })
        .collect();
    let period = m as f64 * h;
    let mid = grid.axes[axis].lo + 0.5 * period;
    let offsets: Vec<f64> = (0..m).map(|k| grid.axes[axis].coord(k) - mid).collect();
    let images: Vec<(f64, f64)> = offsets
        .iter()
        .map(|&u| image_sums(u, period, nu.value()))
        .collect();
    let c_nu = centered_constant(nu);
    let mut out = field.values.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut worst_imag: f64 = 0.0;
    let mut worst_real: f64 = 0.0;
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * n_axis * stride + inner;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(field.values[base + k * stride], 0.0);
            }
            fwd.process(&mut buf);
            for (b, w) in buf.iter_mut().zip(&multiplier) {
                *b *= w / m as f64;
            }
            inv.process(&mut buf);
            let (mut mass, mut dipole) = (0.0, 0.0);
            for k in 0..m {
                let v = field.values[base + k * stride];
                mass += h * v;
                dipole += h * offsets[k] * v;
            }
            for (k, b) in buf.iter_mut().enumerate() {
                let (s0, s1) = images[k];
                b.re -= c_nu * (mass * s0 + (1.0 + nu.value()) * dipole * s1);
            }
            for (k, b) in buf.iter().enumerate() {
                out[base + k * stride] = b.re;
                worst_imag = worst_imag.max(b.im.abs());
                worst_real = worst_real.max(b.re.abs());
            }
            out[base + m * stride] = buf[0].re;
        }
    }
    if worst_imag > 1e-9 * worst_real.max(1.0) {
        return Err(Error::QuadratureFailure(format!(
            "spectral imaginary residue {worst_imag:e}"
        )));
    }
    Ok(DensityField {
        grid: grid.clone(),
        t: field.t,
        values: out,
        derivatives: Default::default(),
    })
}

/// `(sum_{n != 0} |u + nP|^{-1-nu}, sum_{n != 0} sgn(u + nP) |u + nP|^{-2-nu})`,
/// summed to `n = 2000` with an integral tail.
fn image_sums(u: f64, period: f64, nu: f64) -> (f64, f64) {
    const N: usize = 2000;
    let (p0, p1) = (1.0 + nu, 2.0 + nu);
    let (mut s0, mut s1) = (0.0, 0.0);
    for n in (1..=N).rev() {
        let (a, b) = (n as f64 * period + u, n as f64 * period - u);
        s0 += a.powf(-p0) + b.powf(-p0);
        s1 += a.powf(-p1) - b.powf(-p1);
    }
    let edge = (N as f64 + 0.5) * period;
    s0 += ((edge + u).powf(-nu) + (edge - u).powf(-nu)) / (nu * period);
    s1 += ((edge + u).powf(-1.0 - nu) - (edge - u).powf(-1.0 - nu)) / ((1.0 + nu) * period);
    (s0, s1)
}

/// Mixed first-order Riesz derivative along axes `k` then `j`, spectrally.
pub fn mixed_riesz_spectral(
    field: &DensityField,
    k: usize,
    j: usize,
    edge_tol: f64,
) -> Result<DensityField> {
    if k == j {
        return Err(Error::InvalidParameter(
            "mixed derivative needs two distinct axes".into(),
        ));
    }
    if field.grid.dim() < 2 {
        return Err(Error::UnsupportedDimension(
            "mixed derivative needs at least two axes".into(),
        ));
    }
    let once = riesz_deriv_fourier_with(field, FracOrder::ONE, k, edge_tol)?;
    // The first pass can leave small values at the edge of the other axis only if the
    // input did; the bound is rechecked against a relaxed tolerance.
    riesz_deriv_fourier_with(&once, FracOrder::ONE, j, edge_tol.max(1e-9))
}

/// Mixed first-order Riesz derivative under the clock integral, each Cauchy factor
/// differentiated as `-d/ds` of itself.
pub fn mixed_riesz_analytic(
    model: &DensityModel,
    x: &[f64],
    t: f64,
    k: usize,
    j: usize,
) -> Result<f64> {
    if k == j {
        return Err(Error::InvalidParameter(
            "mixed derivative needs two distinct axes".into(),
        ));
    }
    let d = model.dim();
    if d < 2 || k >= d || j >= d {
        return Err(Error::UnsupportedDimension(format!(
            "axes ({k}, {j}) on a {d}-dimensional composition"
        )));
    }
    model.deriv(x, t, &DerivOrder::value(d).with_riesz(k).with_riesz(j))
}

/// Both routes of the mixed derivative over a grid: `(spectral, analytic)`. The grid
/// must have no exclusion bands.
pub fn mixed_riesz(
    model: &DensityModel,
    grid: &Grid,
    t: f64,
    k: usize,
    j: usize,
    edge_tol: f64,
) -> Result<(DensityField, DensityField)> {
    use rayon::prelude::*;
    let field = crate::densities::density_grid(model.spec(), grid, t, model.config(), &[])?;
    let spectral = mixed_riesz_spectral(&field, k, j, edge_tol)?;
    let points: Vec<Vec<f64>> = grid.points().collect();
    let values = points
        .par_iter()
        .map(|x| mixed_riesz_analytic(model, x, t, k, j))
        .collect::<Result<Vec<f64>>>()?;
    let analytic = DensityField {
        grid: grid.clone(),
        t,
        values,
        derivatives: Default::default(),
    };
    Ok((spectral, analytic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CompositionSpec, Inner, ProcessKind};

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn field_of(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> DensityField {
        let grid = Grid::line(lo, hi, n).unwrap();
        let values = grid.points().map(|x| f(x[0])).collect();
        DensityField {
            grid,
            t: 1.0,
            values,
            derivatives: Default::default(),
        }
    }

    fn interp(field: &DensityField, x: f64) -> f64 {
        let a = field.grid.axes[0];
        let i = ((x - a.lo) / a.spacing()).round() as usize;
        assert!((a.coord(i) - x).abs() < 1e-9, "{x} is not a grid node");
        field.values[i]
    }

    /// Smooth decaying corpus with analytic derivatives.
    fn corpus() -> Vec<(
        &'static str,
        Box<dyn Fn(f64) -> f64 + Sync>,
        Box<dyn Fn(f64) -> f64 + Sync>,
    )> {
        vec![
            (
                "gauss",
                Box::new(|x: f64| (-x * x / 2.0).exp()),
                Box::new(|x: f64| -x * (-x * x / 2.0).exp()),
            ),
            (
                "sech",
                Box::new(|x: f64| 1.0 / x.cosh()),
                Box::new(|x: f64| -x.tanh() / x.cosh()),
            ),
            (
                "gauss_cos",
                Box::new(|x: f64| (-x * x).exp() * (2.0 * x).cos()),
                Box::new(|x: f64| {
                    (-x * x).exp() * (-2.0 * x * (2.0 * x).cos() - 2.0 * (2.0 * x).sin())
                }),
            ),
            (
                "lorentz_sq",
                Box::new(|x: f64| 1.0 / (1.0 + x * x).powi(2)),
                Box::new(|x: f64| -4.0 * x / (1.0 + x * x).powi(3)),
            ),
            (
                "mixture",
                Box::new(|x: f64| {
                    (-(x - 1.0).powi(2)).exp() + 0.5 * (-(x + 0.5).powi(2) / 0.5).exp()
                }),
                Box::new(|x: f64| {
                    -2.0 * (x - 1.0) * (-(x - 1.0).powi(2)).exp()
                        - 2.0 * (x + 0.5) * (-(x + 0.5).powi(2) / 0.5).exp()
                }),
            ),
        ]
    }

    #[test]
    fn order_bounds() {
        assert!(FracOrder::new(0.0).is_err());
        assert!(FracOrder::new(1.2).is_err());
        assert_eq!(FracOrder::dyadic(2).value(), 0.25);
        let o: FracOrder = serde_json::from_str("0.5").unwrap();
        assert_eq!(o, FracOrder::HALF);
        assert!(serde_json::from_str::<FracOrder>("2.0").is_err());
    }

    #[test]
    fn caputo_power_rule() {
        let v = caputo_deriv(|_| 1.0, FracOrder::HALF, 1.0, &cfg()).unwrap();
        assert!((v - 2.0 / PI.sqrt()).abs() < 1e-8);
        let q = FracOrder::new(0.25).unwrap();
        let v = caputo_deriv(|s| 2.0 * s, q, 1.0, &cfg()).unwrap();
        assert!((v - 2.0 / gamma(2.75)).abs() < 1e-8);
        assert!((v - 1.24350).abs() < 1e-5);
        let v = caputo_deriv(|s| 2.0 * s, q, 2.3, &cfg()).unwrap();
        assert!((v - 2.0 * 2.3f64.powf(1.75) / gamma(2.75)).abs() < 1e-8);
        assert_eq!(
            caputo_deriv(|_| 0.0, FracOrder::HALF, 1.0, &cfg()).unwrap(),
            0.0
        );
        // Order one is the ordinary derivative.
        assert_eq!(
            caputo_deriv(|s| 3.0 * s, FracOrder::ONE, 2.0, &cfg()).unwrap(),
            6.0
        );
    }

    #[test]
    fn caputo_power_rule_near_order_one() {
        for &nu in &[0.75, 0.9, 0.99] {
            let order = FracOrder::new(nu).unwrap();
            for &t in &[0.5, 2.3] {
                let v = caputo_deriv(|s| 3.0 * s * s, order, t, &cfg()).unwrap();
                let want = 6.0 / gamma(4.0 - nu) * t.powf(3.0 - nu);
                assert!((v - want).abs() < 1e-8, "nu={nu} t={t}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn caputo_with_origin_singularity() {
        // f(s) = s^{1/4}: D^{1/2} f = Gamma(5/4) / Gamma(3/4) t^{-1/4}.
        let v = caputo_deriv_fallible(
            |s| Ok(0.25 * s.powf(-0.75)),
            FracOrder::HALF,
            1.5,
            0.75,
            &cfg(),
        )
        .unwrap();
        assert!((v - gamma(1.25) / gamma(0.75) * 1.5f64.powf(-0.25)).abs() < 1e-8);
    }

    #[test]
    fn caputo_laplace_symbol() {
        let outer = QuadratureConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            ..cfg()
        };
        for &nu in &[0.5, 0.25] {
            let order = FracOrder::new(nu).unwrap();
            for &a in &[0.5, 1.0] {
                for &eta in &[1.0, 2.0] {
                    let lhs = integrate_semi_infinite_scaled(
                        |t| {
                            (-eta * t).exp()
                                * caputo_deriv(|s| -a * (-a * s).exp(), order, t, &cfg()).unwrap()
                        },
                        0.0,
                        1.0,
                        &outer,
                    )
                    .unwrap()
                    .value;
                    let rhs = eta.powf(nu) / (eta + a) - eta.powf(nu - 1.0);
                    assert!(
                        (lhs - rhs).abs() < 1e-6,
                        "nu={nu} a={a} eta={eta}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn centered_constant_values() {
        assert!((centered_constant(FracOrder::ONE) + 1.0 / PI).abs() < 1e-15);
        let h = centered_constant(FracOrder::HALF);
        assert!((h + 0.199471).abs() < 1e-6);
        assert!((h - 1.0 / (2.0 * (-2.0 * PI.sqrt()) * (PI / 4.0).cos())).abs() < 1e-14);
        for k in 1..=9 {
            let nu = FracOrder::new(k as f64 / 10.0).unwrap();
            assert!((centered_constant(nu) - centered_constant_gamma_form(nu)).abs() < 1e-12);
        }
    }

    #[test]
    fn riesz_of_cauchy_density_at_origin() {
        let c = |x: f64| 1.0 / (PI * (1.0 + x * x));
        let dc = |x: f64| -2.0 * x / (PI * (1.0 + x * x).powi(2));
        let a = riesz_deriv_definition(c, Some(dc), 0.0, &cfg()).unwrap();
        let b = riesz_deriv_centered(c, 0.0, FracOrder::ONE, &cfg()).unwrap();
        assert!((a - 1.0 / PI).abs() < 1e-9);
        assert!((b - 1.0 / PI).abs() < 1e-9);
        // Off the origin the value is -d/dt of the Cauchy density: (t^2 - x^2)/(pi (t^2 + x^2)^2).
        let x: f64 = 1.7;
        let want = (1.0 - x * x) / (PI * (1.0 + x * x).powi(2));
        let got = riesz_deriv_definition(c, Some(dc), x, &cfg()).unwrap();
        assert!((got - want).abs() < 1e-9);
        let from_differences =
            riesz_deriv_definition(c, None::<fn(f64) -> f64>, x, &cfg()).unwrap();
        assert!((from_differences - want).abs() < 1e-6);
    }

    #[test]
    fn slow_decay_is_rejected() {
        let r = riesz_deriv_centered(
            |x: f64| 1.0 / (1.0 + x.abs()).sqrt(),
            0.0,
            FracOrder::ONE,
            &cfg(),
        );
        assert!(matches!(r, Err(Error::SlowDecay(_))));
    }

    #[test]
    fn three_routes_agree_on_corpus() {
        for (name, f, df) in corpus() {
            let field = field_of(&f, -400.0, 400.0, 16001);
            let spec = riesz_deriv_fourier_with(&field, FracOrder::ONE, 0, 1e-9).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..=24 {
                let x = -3.0 + 0.25 * i as f64;
                let a = riesz_deriv_definition(&f, Some(&df), x, &cfg()).unwrap();
                let b = riesz_deriv_centered(&f, x, FracOrder::ONE, &cfg()).unwrap();
                let c = interp(&spec, x);
                worst = worst
                    .max((a - b).abs())
                    .max((a - c).abs())
                    .max((b - c).abs());
            }
            assert!(worst < 1e-5, "{name}: {worst}");
        }
    }

    #[test]
    fn centered_route_has_fourier_symbol() {
        // For f = exp(-x^2/2), int cos(beta x) D^nu f dx = |beta|^nu sqrt(2 pi) exp(-beta^2/2).
        // The integral runs to X; beyond it D^nu f = c(nu) [M x^{-1-nu} + (1+nu)(2+nu)/2 M x^{-3-nu}]
        // to O(x^{-5-nu}), integrated on the rotated contour x = X + i y.
        let f = |x: f64| (-x * x / 2.0).exp();
        let m = (2.0 * PI).sqrt();
        let big_x = 40.0;
        let outer = QuadratureConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_evals: 400_000,
            ..cfg()
        };
        for &nu in &[0.5, 1.0] {
            let order = FracOrder::new(nu).unwrap();
            let c = centered_constant(order);
            for &beta in &[0.5, 1.0, 2.0] {
                let body = integrate_finite(
                    |x| (beta * x).cos() * riesz_deriv_centered(f, x, order, &cfg()).unwrap(),
                    0.0,
                    big_x,
                    &outer,
                )
                .unwrap()
                .value;
                let tail_of = |p: f64| -> f64 {
                    let re = integrate_semi_infinite_scaled(
                        |y| {
                            let z = Complex64::new(big_x, y).powf(-p);
                            let w = Complex64::new(0.0, 1.0)
                                * Complex64::from_polar(1.0, beta * big_x)
                                * z
                                * (-beta * y).exp();
                            w.re
                        },
                        0.0,
                        1.0 / beta,
                        &outer,
                    )
                    .unwrap()
                    .value;
                    re
                };
                let tail =
                    c * m * (tail_of(1.0 + nu) + 0.5 * (1.0 + nu) * (2.0 + nu) * tail_of(3.0 + nu));
                let lhs = 2.0 * (body + tail);
                let rhs = beta.powf(nu) * m * (-beta * beta / 2.0).exp();
                assert!(
                    (lhs - rhs).abs() < 1e-6,
                    "nu={nu} beta={beta}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn riesz_of_even_function_at_peak_is_continuous() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let df = |x: f64| -x * (-x * x / 2.0).exp();
        let at = riesz_deriv_definition(f, Some(df), 0.0, &cfg()).unwrap();
        let l = riesz_deriv_definition(f, Some(df), -1e-6, &cfg()).unwrap();
        let r = riesz_deriv_definition(f, Some(df), 1e-6, &cfg()).unwrap();
        assert!(at.is_finite());
        assert!((l - at).abs() < 1e-8 && (r - at).abs() < 1e-8);
        // Riesz of an even function is even.
        let a = riesz_deriv_definition(f, Some(df), 0.8, &cfg()).unwrap();
        let b = riesz_deriv_definition(f, Some(df), -0.8, &cfg()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn spectral_identity_limit_and_linearity() {
        // The zero mode is annihilated for every nu > 0; the image correction restores it.
        let odd = field_of(|x| x * (-x * x / 2.0).exp(), -20.0, 20.0, 801);
        let tiny = FracOrder::new(1e-12).unwrap();
        let same = riesz_deriv_fourier(&odd, tiny, 0).unwrap();
        for (a, b) in same.values.iter().zip(&odd.values) {
            assert!((a - b).abs() < 1e-8);
        }
        let f = field_of(|x| (-x * x / 2.0).exp(), -20.0, 20.0, 801);
        let same = riesz_deriv_fourier(&f, tiny, 0).unwrap();
        for (a, b) in same.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let g = field_of(|x| (-(x - 1.0).powi(2)).exp(), -20.0, 20.0, 801);
        let combo = DensityField {
            values: f
                .values
                .iter()
                .zip(&g.values)
                .map(|(a, b)| 2.0 * a - 0.5 * b)
                .collect(),
            ..f.clone()
        };
        let rf = riesz_deriv_fourier(&f, FracOrder::ONE, 0).unwrap();
        let rg = riesz_deriv_fourier(&g, FracOrder::ONE, 0).unwrap();
        let rc = riesz_deriv_fourier(&combo, FracOrder::ONE, 0).unwrap();
        for i in 0..rc.values.len() {
            assert!((rc.values[i] - (2.0 * rf.values[i] - 0.5 * rg.values[i])).abs() < 1e-10);
        }
        let heavy = field_of(|x| 1.0 / (1.0 + x * x), -20.0, 20.0, 801);
        assert!(matches!(
            riesz_deriv_fourier(&heavy, FracOrder::ONE, 0),
            Err(Error::EdgeMassTooLarge { .. })
        ));
    }

    #[test]
    fn spectral_riesz_of_cauchy_is_minus_time_derivative() {
        let model = DensityModel::new(
            &CompositionSpec::new(ProcessKind::standard_cauchy(), 1, Inner::None),
            &cfg(),
        )
        .unwrap();
        let grid = Grid::line(-2000.0, 2000.0, 80001).unwrap();
        let field = crate::densities::density_grid(model.spec(), &grid, 1.0, &cfg(), &[]).unwrap();
        let r = riesz_deriv_fourier_with(&field, FracOrder::ONE, 0, 1e-7).unwrap();
        for &x in &[0.0, 0.5, 1.0, 2.5] {
            let want = -model.deriv(&[x], 1.0, &DerivOrder::t(1, 1)).unwrap();
            assert!((interp(&r, x) - want).abs() < 1e-5);
        }
    }

    #[test]
    fn mixed_spectral_is_separable_and_commutes() {
        let g = Grid::cube(-30.0, 30.0, 601, 2).unwrap();
        let f1 = |x: f64| (-x * x / 2.0).exp();
        let f2 = |x: f64| 1.0 / x.cosh().powi(2);
        let values: Vec<f64> = g.points().map(|x| f1(x[0]) * f2(x[1])).collect();
        let field = DensityField {
            grid: g.clone(),
            t: 1.0,
            values,
            derivatives: Default::default(),
        };
        let kj = mixed_riesz_spectral(&field, 0, 1, 1e-12).unwrap();
        let jk = mixed_riesz_spectral(&field, 1, 0, 1e-12).unwrap();
        let worst = kj
            .values
            .iter()
            .zip(&jk.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10);
        let df1 = |x: f64| -x * (-x * x / 2.0).exp();
        let df2 = |x: f64| -2.0 * x.tanh() / x.cosh().powi(2);
        for &(x1, x2) in &[(0.5, -1.0), (1.5, 0.0), (-2.0, 0.7)] {
            let r1 = riesz_deriv_definition(f1, Some(df1), x1, &cfg()).unwrap();
            let r2 = riesz_deriv_definition(f2, Some(df2), x2, &cfg()).unwrap();
            let i =
                ((x1 + 30.0) / 0.1).round() as usize * 601 + ((x2 + 30.0) / 0.1).round() as usize;
            assert!(
                (kj.values[i] - r1 * r2).abs() < 1e-6,
                "{x1} {x2}: {} vs {}",
                kj.values[i],
                r1 * r2
            );
        }
    }

    #[test]
    fn mixed_routes_agree_on_cauchy_product() {
        let spec = CompositionSpec::new(ProcessKind::standard_cauchy(), 2, Inner::None);
        let model = DensityModel::new(&spec, &cfg()).unwrap();
        let g = Grid::cube(-60.0, 60.0, 1201, 2).unwrap();
        let (spectral, analytic) = mixed_riesz(&model, &g, 1.0, 0, 1, 1e-4).unwrap();
        for &(x1, x2) in &[(0.8f64, 1.2f64), (0.0, 0.0), (-1.5, 0.3)] {
            let i =
                ((x1 + 60.0) / 0.1).round() as usize * 1201 + ((x2 + 60.0) / 0.1).round() as usize;
            assert!(
                (spectral.values[i] - analytic.values[i]).abs() < 1e-4,
                "{x1},{x2}"
            );
        }
    }

    #[test]
    fn mixed_analytic_matches_definition_route_under_clock() {
        // Riesz derivatives of each Cauchy factor taken by the principal-value definition
        // inside the clock integral, against the -d/ds identity.
        let spec = CompositionSpec::new(
            ProcessKind::standard_cauchy(),
            2,
            Inner::Process(ProcessKind::standard_brownian()),
        );
        let model = DensityModel::new(&spec, &cfg()).unwrap();
        let (x1, x2, t) = (0.8, 1.2, 1.0);
        let analytic = mixed_riesz_analytic(&model, &[x1, x2], t, 0, 1).unwrap();
        let inner = QuadratureConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..cfg()
        };
        let rc = |x: f64, s: f64| {
            let c = move |y: f64| s / (PI * (s * s + y * y));
            let dc = move |y: f64| -2.0 * s * y / (PI * (s * s + y * y).powi(2));
            riesz_deriv_definition_scaled(c, Some(dc), x, 0.0, s, &inner).unwrap()
        };
        let route = integrate_semi_infinite_scaled(
            |s| rc(x1, s) * rc(x2, s) * 2.0 * (-s * s / (2.0 * t)).exp() / (2.0 * PI * t).sqrt(),
            0.0,
            1.0,
            &cfg(),
        )
        .unwrap()
        .value;
        assert!((analytic - route).abs() < 1e-6, "{analytic} vs {route}");
    }
}
