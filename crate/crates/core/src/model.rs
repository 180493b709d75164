//! Domain types: process descriptions, composition specs, grids and
//! quadrature settings. Nothing in here does numerics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

/// One coordinate process of a composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    /// `mu * s + sqrt(diffusion) * W(s)`.
    Brownian {
        #[serde(default)]
        drift: f64,
        #[serde(default = "one")]
        diffusion: f64,
    },
    /// Fractional Brownian motion, marginal variance `s^{2H}`.
    FractionalBrownian { hurst: f64 },
    /// Cauchy process with marginal density `scale*s / (pi ((scale*s)^2 + (x-location)^2))`.
    Cauchy {
        #[serde(default)]
        location: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl ProcessKind {
    pub const fn standard_brownian() -> Self {
        ProcessKind::Brownian {
            drift: 0.0,
            diffusion: 1.0,
        }
    }

    pub const fn brownian_with_drift(drift: f64) -> Self {
        ProcessKind::Brownian {
            drift,
            diffusion: 1.0,
        }
    }

    pub const fn fbm(hurst: f64) -> Self {
        ProcessKind::FractionalBrownian { hurst }
    }

    pub const fn standard_cauchy() -> Self {
        ProcessKind::Cauchy {
            location: 0.0,
            scale: 1.0,
        }
    }

    pub const fn shifted_cauchy(location: f64) -> Self {
        ProcessKind::Cauchy {
            location,
            scale: 1.0,
        }
    }

    pub fn is_standard_brownian(&self) -> bool {
        matches!(self, ProcessKind::Brownian { drift, diffusion } if *drift == 0.0 && *diffusion == 1.0)
    }

    /// Zero drift / zero location: the marginal law is even in space.
    pub fn is_centered(&self) -> bool {
        match *self {
            ProcessKind::Brownian { drift, .. } => drift == 0.0,
            ProcessKind::FractionalBrownian { .. } => true,
            ProcessKind::Cauchy { location, .. } => location == 0.0,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            ProcessKind::Brownian { .. } => "brownian",
            ProcessKind::FractionalBrownian { .. } => "fbm",
            ProcessKind::Cauchy { .. } => "cauchy",
        }
    }

    fn same_variant(&self, other: &ProcessKind) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    fn validate(&self) -> Result<ProcessKind> {
        match *self {
            ProcessKind::Brownian { drift, diffusion } => {
                if !drift.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "drift must be finite, got {drift}"
                    )));
                }
                if !(diffusion.is_finite() && diffusion > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "diffusion must be positive, got {diffusion}"
                    )));
                }
                Ok(ProcessKind::Brownian {
                    drift: drift + 0.0,
                    diffusion,
                })
            }
            ProcessKind::FractionalBrownian { hurst } => {
                if !(hurst > 0.0 && hurst < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Hurst index must lie in (0,1), got {hurst}"
                    )));
                }
                Ok(*self)
            }
            ProcessKind::Cauchy { location, scale } => {
                if !location.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "location must be finite, got {location}"
                    )));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "scale must be positive, got {scale}"
                    )));
                }
                Ok(ProcessKind::Cauchy {
                    location: location + 0.0,
                    scale,
                })
            }
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ProcessKind::Brownian { drift, diffusion } => {
                write!(f, "brownian(drift={drift}, diffusion={diffusion})")
            }
            ProcessKind::FractionalBrownian { hurst } => write!(f, "fbm(H={hurst})"),
            ProcessKind::Cauchy { location, scale } => {
                write!(f, "cauchy(location={location}, scale={scale})")
            }
        }
    }
}

/// The random clock the outer coordinates are run at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inner {
    /// Deterministic time: the outer process itself.
    None,
    /// `|X(t)|` for a single process `X`.
    Process(ProcessKind),
    /// `|B_1(|B_2(...|B_{n+1}(t)|...)|)|`, `n + 1` independent standard Brownian motions.
    IteratedBrownian { n: u32 },
    /// Product clock `G_1(t) ... G_{n-1}(t)` whose joint law solves the order-`1/n`
    /// time-fractional diffusion equation.
    FracTimeProduct { n: u32 },
}

/// Declarative description of `(X_1(T(t)), ..., X_d(T(t)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpec {
    pub outer: Vec<ProcessKind>,
    pub inner: Inner,
    /// Optional clock rescaling: the Brownian clock gets variance `2^3 lambda^4 t`.
    /// `None` keeps the standard clock with variance `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<f64>,
}

impl CompositionSpec {
    pub fn new(outer: ProcessKind, dim: usize, inner: Inner) -> Self {
        CompositionSpec {
            outer: vec![outer; dim],
            inner,
            time_scale: None,
        }
    }

    /// `B_1(|B_2(t)|)`.
    pub fn iterated_brownian() -> Self {
        Self::new(
            ProcessKind::standard_brownian(),
            1,
            Inner::Process(ProcessKind::standard_brownian()),
        )
    }

    pub fn with_time_scale(mut self, lambda: f64) -> Self {
        self.time_scale = Some(lambda);
        self
    }

    pub fn dim(&self) -> usize {
        self.outer.len()
    }

    /// Every coordinate law is even about the origin.
    pub fn is_symmetric(&self) -> bool {
        self.outer.iter().all(ProcessKind::is_centered)
    }
}

impl fmt::Display for CompositionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outer = self
            .outer
            .first()
            .map(|p| p.to_string())
            .unwrap_or_else(|| "<empty>".into());
        let inner = match self.inner {
            Inner::None => "t".to_string(),
            Inner::Process(p) => format!("|{p}(t)|"),
            Inner::IteratedBrownian { n } => format!("|I_{n}(t)|"),
            Inner::FracTimeProduct { n } => format!("G-product(n={n})"),
        };
        write!(f, "{outer}^{}({inner})", self.dim())?;
        if let Some(l) = self.time_scale {
            write!(f, " lambda={l}")?;
        }
        Ok(())
    }
}

/// Caps applied by [`validate_spec_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationLimits {
    pub max_iterated_n: u32,
    pub max_frac_product_n: u32,
    pub max_dim: usize,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        ValidationLimits {
            max_iterated_n: 4,
            max_frac_product_n: 4,
            max_dim: 8,
        }
    }
}

pub fn validate_spec(spec: &CompositionSpec) -> Result<CompositionSpec> {
    validate_spec_with(spec, &ValidationLimits::default())
}

/// Checks parameter ranges and supported combinations, returning a normalized copy.
pub fn validate_spec_with(
    spec: &CompositionSpec,
    limits: &ValidationLimits,
) -> Result<CompositionSpec> {
    let Some(first) = spec.outer.first() else {
        return Err(Error::InvalidParameter(
            "at least one outer coordinate is required".into(),
        ));
    };
    if spec.outer.len() > limits.max_dim {
        return Err(Error::UnsupportedComposition(format!(
            "dimension {} exceeds limit {}",
            spec.outer.len(),
            limits.max_dim
        )));
    }
    let mut outer = Vec::with_capacity(spec.outer.len());
    for p in &spec.outer {
        if !p.same_variant(first) {
            return Err(Error::UnsupportedComposition(format!(
                "outer coordinates must share one process type ({} vs {})",
                first.variant_name(),
                p.variant_name()
            )));
        }
        outer.push(p.validate()?);
    }

    let inner = match spec.inner {
        Inner::None => Inner::None,
        Inner::Process(p) => Inner::Process(p.validate()?),
        Inner::IteratedBrownian { n } => {
            if n == 0 {
                return Err(Error::InvalidParameter(
                    "iterated Brownian clock needs n >= 1".into(),
                ));
            }
            if n > limits.max_iterated_n {
                return Err(Error::UnsupportedComposition(format!(
                    "iterated Brownian clock with n = {n} exceeds the nesting limit {}",
                    limits.max_iterated_n
                )));
            }
            Inner::IteratedBrownian { n }
        }
        Inner::FracTimeProduct { n } => {
            if n < 2 {
                return Err(Error::InvalidParameter("product clock needs n >= 2".into()));
            }
            if n > limits.max_frac_product_n {
                return Err(Error::UnsupportedComposition(format!(
                    "product clock with n = {n} exceeds limit {}",
                    limits.max_frac_product_n
                )));
            }
            Inner::FracTimeProduct { n }
        }
    };

    let time_scale = match spec.time_scale {
        None => None,
        Some(lambda) => {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "time scale must be positive, got {lambda}"
                )));
            }
            let plain_bb = outer.iter().all(ProcessKind::is_standard_brownian)
                && matches!(inner, Inner::Process(p) if p.is_standard_brownian());
            if !plain_bb {
                return Err(Error::UnsupportedComposition(
                    "a clock time scale is only defined for standard Brownian coordinates at a standard Brownian clock"
                        .into(),
                ));
            }
            Some(lambda)
        }
    };

    Ok(CompositionSpec {
        outer,
        inner,
        time_scale,
    })
}

/// Tolerances and budgets for every integral in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisections of any one subinterval.
    pub max_depth: u32,
    /// Gaussian tails are cut at this many standard deviations.
    pub truncation_sigma: f64,
    /// Deepest supported nesting of iterated integrals.
    pub nested_budget: usize,
    /// Integrand evaluations allowed per one-dimensional integral.
    pub max_evals: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_depth: 60,
            truncation_sigma: 12.0,
            nested_budget: 4,
            max_evals: 100_000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidParameter(
                "max_depth must be at least 1".into(),
            ));
        }
        if !(self.truncation_sigma > 0.0) {
            return Err(Error::InvalidParameter(
                "truncation_sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same settings with both tolerances scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        QuadratureConfig {
            abs_tol: self.abs_tol * factor,
            rel_tol: self.rel_tol * factor,
            ..*self
        }
    }

    /// Tolerances for one level further in: ten times tighter.
    pub fn inner_level(&self) -> Self {
        self.scaled(0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "grid axis needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidParameter(
                "grid axis needs at least two points".into(),
            ));
        }
        Ok(GridAxis { lo, hi, n_points })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.coord(i)).collect()
    }
}

/// Points with `|x[axis] - center| < half_width` are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionBand {
    pub axis: usize,
    pub center: f64,
    pub half_width: f64,
}

/// Rectangular grid, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
    #[serde(default)]
    pub exclusion_bands: Vec<ExclusionBand>,
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter(
                "grid needs at least one axis".into(),
            ));
        }
        Ok(Grid {
            axes,
            exclusion_bands: Vec::new(),
        })
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![GridAxis::new(lo, hi, n)?])
    }

    /// Same axis repeated `dim` times.
    pub fn cube(lo: f64, hi: f64, n: usize, dim: usize) -> Result<Self> {
        Grid::new(vec![GridAxis::new(lo, hi, n)?; dim])
    }

    pub fn with_band(mut self, axis: usize, center: f64, half_width: f64) -> Self {
        self.exclusion_bands.push(ExclusionBand {
            axis,
            center,
            half_width,
        });
        self
    }

    /// Exclude `|x_j - center| < half_width` on every axis.
    pub fn with_bands_all_axes(mut self, center: f64, half_width: f64) -> Self {
        for axis in 0..self.dim() {
            self = self.with_band(axis, center, half_width);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n_points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n_points).collect()
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = axis.coord(index % axis.n_points);
            index /= axis.n_points;
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn is_excluded(&self, x: &[f64]) -> bool {
        self.exclusion_bands
            .iter()
            .any(|b| b.axis < x.len() && (x[b.axis] - b.center).abs() < b.half_width)
    }

    /// Every point of the grid, ignoring exclusion bands.
    pub fn without_exclusions(&self) -> Grid {
        Grid {
            axes: self.axes.clone(),
            exclusion_bands: Vec::new(),
        }
    }
}

/// Identifiers of the registered governing equations (`E*`) and identities (`I*`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EquationId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
    E9,
    E10,
    E11,
    E12,
    E13,
    E14,
    E15,
    E16,
    E17,
    I1,
    I2,
    I3,
    I4,
    I5,
    I6,
    I7,
}

impl EquationId {
    pub const ALL: [EquationId; 24] = [
        EquationId::E1,
        EquationId::E2,
        EquationId::E3,
        EquationId::E4,
        EquationId::E5,
        EquationId::E6,
        EquationId::E7,
        EquationId::E8,
        EquationId::E9,
        EquationId::E10,
        EquationId::E11,
        EquationId::E12,
        EquationId::E13,
        EquationId::E14,
        EquationId::E15,
        EquationId::E16,
        EquationId::E17,
        EquationId::I1,
        EquationId::I2,
        EquationId::I3,
        EquationId::I4,
        EquationId::I5,
        EquationId::I6,
        EquationId::I7,
    ];

    pub fn is_identity(&self) -> bool {
        matches!(
            self,
            EquationId::I1
                | EquationId::I2
                | EquationId::I3
                | EquationId::I4
                | EquationId::I5
                | EquationId::I6
                | EquationId::I7
        )
    }

    /// The statement each tag stands for.
    pub fn citation(&self) -> &'static str {
        match self {
            EquationId::E1 => "B(|B|): D_t^{1/2} p = 2^{-3/2} p_xx",
            EquationId::E2 => "B(|B|): p_t = 2^{-3} p_xxxx + delta''-source at x = 0",
            EquationId::E3 => "n-times iterated BM: D_t^{1/2^n} p = 2^{1/2^n - 2} p_xx",
            EquationId::E4 => "d-dim B(|B|) with clock variance 2^3 lambda^4 t: D_t^{1/2} p = lambda^2 Laplacian p",
            EquationId::E5 => "d-dim B(|B|): p_t = 2^{-3} (Laplacian)^2 p + delta-sources on the axes",
            EquationId::E6 => "B^mu(|B|): p_t = 1/2 (1/2 d_xx - mu d_x)^2 p + delta-source at x = 0",
            EquationId::E7 => "B^mu(|B|): D_t^{1/2} p = 2^{-3/2} p_xx - mu/sqrt(2) p_x",
            EquationId::E8 => "n-times iterated BM: p_t = c (d_xx)^{2^n} p + delta-sources, c = 2^{1 - 2^{n+1}}",
            EquationId::E9 => "B(product clock): D_t^{1/n} p = 1/2 p_xx",
            EquationId::E10 => "B(|C|): p_tt = -2^{-2} p_xxxx - delta''-source at x = 0",
            EquationId::E11 => {
                "B_H(|C|): t^2 p_tt = -[H(H-1) d_x x - H^2 d_xx x^2] p - delta''-source (H <= 1/2)"
            }
            EquationId::E12 => "d-dim B(|C|): p_tt = -2^{-2} (Laplacian)^2 p - delta-sources on the axes",
            EquationId::E13 => "C(|B|): p_t = -1/2 p_xx + 1/(pi x^2 sqrt(2 pi t))",
            EquationId::E14 => {
                "C(|I_n|): D_t^{1/2^n} p = -2^{1/2^n - 2} p_xx + 2^{n-1+1/2^{n+1}} pi^{-3/2} Gamma(-1/2)/Gamma(-1/2^{n+1}) t^{-1/2^{n+1}} / x^2"
            }
            EquationId::E15 => "d-dim C(|B|): p_t = sum_{k<j} d^2 p/d|x_k|d|x_j| - 1/2 Laplacian p",
            EquationId::E16 => "C^a(|C|): p_tt = p_xx - 2/(pi^2 t (x-a)^2)",
            EquationId::E17 => "d-dim C(|C|): p_tt = Laplacian p - 2 sum_{k<j} d^2 p/d|x_k|d|x_j|",
            EquationId::I1 => "Fourier-Laplace transform of B^mu(|B|): eta^{-1/2} / (beta^2/2^{3/2} - i beta mu/sqrt(2) + sqrt(eta))",
            EquationId::I2 => "Cauchy kernel as first-passage subordination: t/(pi(t^2+s^2)) = int N(s;w) FP(t;w) dw",
            EquationId::I3 => {
                "iterated BM at the origin: p_n(0,t) = 2^{n - 1/2^{n+1}} pi^{-1/2} t^{-1/2^{n+1}} Gamma(-1/2)/Gamma(-1/2^{n+1})"
            }
            EquationId::I4 => "Cauchy kernel is harmonic: (d_xx + d_tt) p_C = 0",
            EquationId::I5 => "Cauchy kernel: d_t p_C = -d/d|x| p_C (first-order Riesz derivative)",
            EquationId::I6 => "mixed Riesz derivatives commute: d/d|x_k| d/d|x_j| = d/d|x_j| d/d|x_k|",
            EquationId::I7 => "C(|C|) closed form: (2/pi^2) t ln(t/|x|) / (t^2 - x^2)",
        }
    }
}

impl fmt::Display for EquationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for EquationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        EquationId::ALL
            .iter()
            .copied()
            .find(|id| id.to_string() == key)
            .ok_or_else(|| Error::UnknownEquation(s.to_string()))
    }
}
