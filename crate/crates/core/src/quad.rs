//! Globally adaptive Gauss-Kronrod (10/21) quadrature on finite, semi-infinite,
//! endpoint-singular and nested domains.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::QuadratureConfig;

/// Scalar types the integrator can accumulate.
pub trait QuadValue:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn magnitude(&self) -> f64;
    fn all_finite(&self) -> bool;
}

impl QuadValue for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl QuadValue for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn all_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralResult<T = f64> {
    pub value: T,
    pub abs_error_estimate: f64,
    pub nodes_used: usize,
    pub converged: bool,
    /// The error target `max(abs_tol, rel_tol |value|)` the run aimed for.
    pub tolerance: f64,
}

impl<T: QuadValue> IntegralResult<T> {
    /// Accept a non-converged result when its error is within `1e3` of the target.
    pub fn checked(self) -> Result<Self> {
        if self.converged || self.abs_error_estimate <= 1e3 * self.tolerance {
            Ok(self)
        } else {
            Err(Error::BudgetExceeded {
                value: self.value.magnitude(),
                error: self.abs_error_estimate,
            })
        }
    }

    fn combine(self, other: IntegralResult<T>, cfg: &QuadratureConfig) -> Self {
        let value = self.value + other.value;
        let abs_error_estimate = self.abs_error_estimate + other.abs_error_estimate;
        let tolerance = cfg.abs_tol.max(cfg.rel_tol * value.magnitude());
        IntegralResult {
            value,
            abs_error_estimate,
            nodes_used: self.nodes_used + other.nodes_used,
            converged: (self.converged && other.converged) || abs_error_estimate <= tolerance,
            tolerance,
        }
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_980_530,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

struct Segment<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
    depth: u32,
}

impl<T> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl<T> Eq for Segment<T> {}
impl<T> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<T: QuadValue, F: Fn(f64) -> T>(f: &F, a: f64, b: f64) -> Result<(T, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |x: f64| -> Result<T> {
        let v = f(x);
        if v.all_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { at: x })
        }
    };
    let mut fv1 = [T::default(); 10];
    let mut fv2 = [T::default(); 10];
    let fc = eval(center)?;
    let mut resk = fc * WGK[10];
    let mut resg = T::default();
    let mut resabs = fc.magnitude() * WGK[10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        resk = resk + (f1 + f2) * WGK[j];
        resabs += WGK[j] * (f1.magnitude() + f2.magnitude());
        if j % 2 == 1 {
            resg = resg + (f1 + f2) * WG[j / 2];
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[10] * (fc - mean).magnitude();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).magnitude() + (fv2[j] - mean).magnitude());
    }
    let scale = half.abs();
    let value = resk * half;
    resasc *= scale;
    resabs *= scale;
    let mut err = ((resk - resg) * half).magnitude();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Ok((value, err))
}

/// Adaptive integration of `f` over `[a, b]`, starting from `pieces` equal subintervals.
fn adaptive<T: QuadValue, F: Fn(f64) -> T>(
    f: &F,
    a: f64,
    b: f64,
    pieces: usize,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>> {
    if a == b {
        return Ok(IntegralResult {
            value: T::default(),
            abs_error_estimate: 0.0,
            nodes_used: 0,
            converged: true,
            tolerance: cfg.abs_tol,
        });
    }
    let mut heap = BinaryHeap::new();
    let mut total = T::default();
    let mut total_err = 0.0;
    let mut nodes = 0usize;
    let pieces = pieces.max(1);
    let step = (b - a) / pieces as f64;
    for i in 0..pieces {
        let lo = a + step * i as f64;
        let hi = if i + 1 == pieces { b } else { lo + step };
        let (value, error) = gk21(f, lo, hi)?;
        nodes += 21;
        total = total + value;
        total_err += error;
        heap.push(Segment {
            a: lo,
            b: hi,
            value,
            error,
            depth: 0,
        });
    }
    let mut stalled = false;
    loop {
        let tolerance = cfg.abs_tol.max(cfg.rel_tol * total.magnitude());
        if total_err <= tolerance {
            return Ok(IntegralResult {
                value: total,
                abs_error_estimate: total_err,
                nodes_used: nodes,
                converged: true,
                tolerance,
            });
        }
        if stalled || nodes + 42 > cfg.max_evals {
            return Ok(IntegralResult {
                value: total,
                abs_error_estimate: total_err,
                nodes_used: nodes,
                converged: false,
                tolerance,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if worst.depth >= cfg.max_depth || !(worst.a < mid && mid < worst.b) {
            heap.push(worst);
            stalled = true;
            continue;
        }
        let (v1, e1) = gk21(f, worst.a, mid)?;
        let (v2, e2) = gk21(f, mid, worst.b)?;
        nodes += 42;
        total = total - worst.value + v1 + v2;
        total_err += e1 + e2 - worst.error;
        // Rounding in the running sum must not drive the estimate negative.
        if total_err < 0.0 {
            total_err = heap.iter().map(|s| s.error).sum::<f64>() + e1 + e2;
        }
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
            depth: worst.depth + 1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
            depth: worst.depth + 1,
        });
    }
}

/// `int_a^b f(s) ds`.
pub fn integrate_finite<T, F>(
    f: F,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(
            "finite integration needs finite limits".into(),
        ));
    }
    if a > b {
        let r = adaptive(&f, b, a, 4, cfg)?;
        return Ok(IntegralResult {
            value: r.value * -1.0,
            ..r
        });
    }
    adaptive(&f, a, b, 4, cfg)
}

/// `int_0^inf f(s) ds` with the map `s = (u/(1-u))^2`.
pub fn integrate_semi_infinite<T, F>(f: F, cfg: &QuadratureConfig) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    integrate_semi_infinite_scaled(f, 0.0, 1.0, cfg)
}

/// `int_a^inf f(s) ds` with the map `s = a + L (u/(1-u))^2`; `L` should be the width
/// of the region holding most of the mass. The squared map keeps `s^{-1/2}` behaviour
/// at `a` and `s^{-3/2}` tails bounded in `u`.
pub fn integrate_semi_infinite_scaled<T, F>(
    f: F,
    a: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale hint must be positive, got {scale}"
        )));
    }
    let g = |u: f64| {
        let w = 1.0 - u;
        let r = u / w;
        let s = a + scale * r * r;
        if s.is_infinite() {
            return T::default();
        }
        f(s) * (2.0 * scale * r / (w * w))
    };
    adaptive(&g, 0.0, 1.0, 4, cfg)
}

/// `int_{-inf}^{inf} f(x) dx`, split at `center`.
pub fn integrate_real_line<T, F>(
    f: F,
    center: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    let half = cfg.scaled(0.5);
    let right = integrate_semi_infinite_scaled(|y| f(center + y), 0.0, scale, &half)?;
    let left = integrate_semi_infinite_scaled(|y| f(center - y), 0.0, scale, &half)?;
    Ok(right.combine(left, cfg))
}

/// Integration over `[0, truncation_sigma * sigma]` for integrands with a Gaussian
/// tail of width `sigma` in `s`; everything past the cut is dropped.
pub fn integrate_gaussian_tailed<T, F>(
    f: F,
    sigma: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    integrate_finite(f, 0.0, cfg.truncation_sigma * sigma, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Lower,
    Upper,
}

/// `int_a^b f(s) ds` where `f` blows up like `|s - e|^{-gamma}` at the endpoint `e`.
/// The substitution `s - e = (b - a) v^{1/(1-gamma)}` makes the integrand bounded.
pub fn integrate_singular_endpoint<T, F>(
    f: F,
    a: f64,
    b: f64,
    gamma: f64,
    at: Endpoint,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult<T>>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!(
            "singular exponent must lie in [0,1), got {gamma}"
        )));
    }
    if !(a < b) {
        return Err(Error::InvalidParameter(
            "singular-endpoint integration needs a < b".into(),
        ));
    }
    let p = 1.0 / (1.0 - gamma);
    let len = b - a;
    let g = |v: f64| {
        let r = len * v.powf(p);
        let jac = len * p * v.powf(p - 1.0);
        let s = match at {
            Endpoint::Lower => a + r,
            Endpoint::Upper => b - r,
        };
        f(s) * jac
    };
    adaptive(&g, 0.0, 1.0, 2, cfg)
}

/// One level of an iterated integral: `kernel(outer_variable, s)` integrated over
/// `s in (0, inf)` with a length scale hint.
pub struct NestedLevel<'a> {
    pub kernel: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub scale: f64,
}

/// `int k_1(x, w_1) int k_2(w_1, w_2) ... int k_D(w_{D-1}, w_D) dw_D ... dw_1`.
/// Each level is an adaptive semi-infinite integral; tolerances tighten by ten per level.
pub fn integrate_nested(
    levels: &[NestedLevel<'_>],
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult> {
    let depth = levels.len();
    if depth == 0 {
        return Err(Error::InvalidParameter(
            "nested integral needs at least one level".into(),
        ));
    }
    if depth > cfg.nested_budget {
        return Err(Error::DepthUnsupported {
            depth,
            limit: cfg.nested_budget,
        });
    }
    nested_level(levels, x, cfg)
}

fn nested_level(
    levels: &[NestedLevel<'_>],
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult> {
    let (head, rest) = levels.split_first().expect("non-empty");
    if rest.is_empty() {
        return integrate_semi_infinite_scaled(|s| (head.kernel)(x, s), 0.0, head.scale, cfg);
    }
    let inner_cfg = cfg.inner_level();
    let failure = std::cell::Cell::new(None);
    let r = integrate_semi_infinite_scaled(
        |s| {
            let k = (head.kernel)(x, s);
            if k == 0.0 {
                return 0.0;
            }
            match nested_level(rest, s, &inner_cfg).and_then(IntegralResult::checked) {
                Ok(inner) => k * inner.value,
                Err(e) => {
                    failure.set(Some(e));
                    f64::NAN
                }
            }
        },
        0.0,
        head.scale,
        cfg,
    );
    if let Some(e) = failure.take() {
        return Err(e);
    }
    r
}
