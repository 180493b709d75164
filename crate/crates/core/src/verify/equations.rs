//! Registry of governing equations and the pointwise assembly of both sides.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::Perturbation;
use crate::densities::{DensityModel, DerivOrder};
use crate::error::{Error, Result};
use crate::fractional::{caputo_deriv_fallible, FracOrder};
use crate::model::{
    CompositionSpec, EquationId, ExclusionBand, Grid, Inner, ProcessKind, QuadratureConfig,
};

/// Half-width of the band excluded around the support of hyperplane sources.
pub const SOURCE_BAND: f64 = 0.2;
/// Half-width of the band excluded around the removable point `|x - a| = t`.
pub const REMOVABLE_BAND: f64 = 1e-2;

/// Which form of an equation's constants a registry entry uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Constants as derived by integrating by parts under the clock integral.
    Derived,
    /// Constants as printed, where they differ from the derivation.
    Printed,
    /// Unit generator coefficient in the higher-order equation.
    UnitGenerator,
}

/// Parameters distinguishing registry entries of one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub params: Vec<(String, f64)>,
    pub form: Form,
}

impl Variant {
    fn new(params: &[(&str, f64)], form: Form) -> Self {
        Variant {
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            form,
        }
    }

    fn get(&self, key: &str) -> f64 {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("variant has no parameter {key}"))
    }

    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        match self.form {
            Form::Derived => {}
            Form::Printed => parts.push("printed".into()),
            Form::UnitGenerator => parts.push("unit-generator".into()),
        }
        if parts.is_empty() {
            "default".into()
        } else {
            parts.join(" ")
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub id: EquationId,
    pub variant: Variant,
    pub spec: CompositionSpec,
    pub coefficients: Vec<Coefficient>,
    /// Sources supported on hyperplanes; their support is excluded.
    pub sources: String,
    /// Pointwise-finite forcing kept in the residual.
    pub forcing: Option<String>,
    /// Whether the suite requires this entry to pass.
    pub asserted: bool,
}

fn coeffs(list: &[(&str, f64)]) -> Vec<Coefficient> {
    list.iter()
        .map(|(n, v)| Coefficient {
            name: n.to_string(),
            value: *v,
        })
        .collect()
}

fn bm() -> ProcessKind {
    ProcessKind::standard_brownian()
}

fn cauchy() -> ProcessKind {
    ProcessKind::standard_cauchy()
}

fn entry(
    id: EquationId,
    variant: Variant,
    spec: CompositionSpec,
    coefficients: &[(&str, f64)],
    sources: &str,
    forcing: Option<&str>,
    asserted: bool,
) -> EquationSpec {
    EquationSpec {
        id,
        variant,
        spec,
        coefficients: coeffs(coefficients),
        sources: sources.into(),
        forcing: forcing.map(Into::into),
        asserted,
    }
}

/// Constant of the `1/x^2` forcing for `C(|I_n|)`:
/// `2^{n-1+1/2^{n+1}} pi^{-3/2} Gamma(-1/2) / Gamma(-1/2^{n+1})`.
pub fn iterated_cauchy_forcing_constant(n: u32) -> f64 {
    let e = 0.5f64.powi(n as i32 + 1);
    2f64.powf(n as f64 - 1.0 + e) * PI.powf(-1.5) * gamma(-0.5) / gamma(-e)
}

/// Every registered equation variant.
pub fn registry() -> Vec<EquationSpec> {
    use EquationId::*;
    use Form::*;
    let plain = || Variant::new(&[], Derived);
    let on_origin = "supported on x = 0";
    let on_axes = "supported on the coordinate hyperplanes";
    let mut r = vec![
        entry(
            E1,
            plain(),
            CompositionSpec::iterated_brownian(),
            &[("d_xx", 2f64.powf(-1.5))],
            "none away from x = 0; d_xx p is singular there",
            None,
            true,
        ),
        entry(
            E2,
            plain(),
            CompositionSpec::iterated_brownian(),
            &[("d_xxxx", 0.125)],
            on_origin,
            None,
            true,
        ),
    ];
    for n in 1..=2u32 {
        let spec = if n == 1 {
            CompositionSpec::iterated_brownian()
        } else {
            CompositionSpec::new(bm(), 1, Inner::IteratedBrownian { n: n - 1 })
        };
        r.push(entry(
            E3,
            Variant::new(&[("n", n as f64)], Derived),
            spec,
            &[("d_xx", 2f64.powf(0.5f64.powi(n as i32) - 2.0))],
            "none away from x = 0; d_xx p is singular there",
            None,
            true,
        ));
    }
    for &lambda in &[1.0, 1.2] {
        r.push(entry(
            E4,
            Variant::new(&[("lambda", lambda)], Derived),
            CompositionSpec::new(bm(), 2, Inner::Process(bm())).with_time_scale(lambda),
            &[("laplacian", lambda * lambda)],
            on_axes,
            None,
            true,
        ));
    }
    r.push(entry(
        E5,
        plain(),
        CompositionSpec::new(bm(), 2, Inner::Process(bm())),
        &[("bilaplacian", 0.125)],
        on_axes,
        None,
        true,
    ));
    let mu = 0.5;
    r.push(entry(
        E6,
        Variant::new(&[("mu", mu)], Derived),
        CompositionSpec::new(
            ProcessKind::brownian_with_drift(mu),
            1,
            Inner::Process(bm()),
        ),
        &[("operator_square", 0.5), ("mu", mu)],
        on_origin,
        None,
        true,
    ));
    r.push(entry(
        E7,
        Variant::new(&[("mu", mu)], Derived),
        CompositionSpec::new(
            ProcessKind::brownian_with_drift(mu),
            1,
            Inner::Process(bm()),
        ),
        &[("d_xx", 2f64.powf(-1.5)), ("d_x", mu / SQRT_2)],
        "none away from x = 0; d_xx p is singular there",
        None,
        true,
    ));
    for n in 1..=2u32 {
        let spec = if n == 1 {
            CompositionSpec::iterated_brownian()
        } else {
            CompositionSpec::new(bm(), 1, Inner::IteratedBrownian { n: n - 1 })
        };
        let derived = 2f64.powf(1.0 - 2f64.powi(n as i32 + 1));
        r.push(entry(
            E8,
            Variant::new(&[("n", n as f64)], Derived),
            spec.clone(),
            &[("generator", derived)],
            on_origin,
            None,
            n == 1,
        ));
        r.push(entry(
            E8,
            Variant::new(&[("n", n as f64)], UnitGenerator),
            spec,
            &[("generator", 1.0)],
            on_origin,
            None,
            false,
        ));
    }
    for n in 2..=3u32 {
        r.push(entry(
            E9,
            Variant::new(&[("n", n as f64)], Derived),
            CompositionSpec::new(bm(), 1, Inner::FracTimeProduct { n }),
            &[("d_xx", 0.5)],
            "none away from x = 0; d_xx p is singular there",
            None,
            true,
        ));
    }
    r.push(entry(
        E10,
        plain(),
        CompositionSpec::new(bm(), 1, Inner::Process(cauchy())),
        &[("d_xxxx", -0.25)],
        on_origin,
        None,
        true,
    ));
    for &h in &[0.3, 0.5, 0.7] {
        r.push(entry(
            E11,
            Variant::new(&[("H", h)], Derived),
            CompositionSpec::new(ProcessKind::fbm(h), 1, Inner::Process(cauchy())),
            &[("H(H-1)", h * (h - 1.0)), ("H^2", h * h)],
            if h <= 0.5 { on_origin } else { "none" },
            None,
            true,
        ));
    }
    r.push(entry(
        E12,
        plain(),
        CompositionSpec::new(bm(), 2, Inner::Process(cauchy())),
        &[("bilaplacian", -0.25)],
        on_axes,
        None,
        true,
    ));
    r.push(entry(
        E13,
        plain(),
        CompositionSpec::new(cauchy(), 1, Inner::Process(bm())),
        &[("d_xx", -0.5), ("forcing", 1.0 / PI)],
        "none",
        Some("1/(pi x^2 sqrt(2 pi t))"),
        true,
    ));
    r.push(entry(
        E14,
        Variant::new(&[("n", 1.0)], Derived),
        CompositionSpec::new(cauchy(), 1, Inner::IteratedBrownian { n: 1 }),
        &[
            ("d_xx", -2f64.powf(-1.5)),
            ("forcing", iterated_cauchy_forcing_constant(1)),
        ],
        "none",
        Some("const t^{-1/4} / x^2"),
        true,
    ));
    for (form, c) in [(Derived, [1.0, -0.5]), (Printed, [2.0, -1.0])] {
        r.push(entry(
            E15,
            Variant::new(&[], form),
            CompositionSpec::new(cauchy(), 2, Inner::Process(bm())),
            &[("mixed_riesz", c[0]), ("laplacian", c[1])],
            on_axes,
            None,
            form == Derived,
        ));
    }
    for (form, c) in [(Derived, -2.0 / (PI * PI)), (Printed, -1.0 / PI)] {
        for &a in &[0.0, 0.7] {
            r.push(entry(
                E16,
                Variant::new(&[("a", a)], form),
                CompositionSpec::new(ProcessKind::shifted_cauchy(a), 1, Inner::Process(cauchy())),
                &[("d_xx", 1.0), ("forcing", c)],
                "none; |x - a| = t is a removable point",
                Some("1/(t (x-a)^2)"),
                form == Derived,
            ));
        }
    }
    r.push(entry(
        E17,
        plain(),
        CompositionSpec::new(cauchy(), 2, Inner::Process(cauchy())),
        &[("laplacian", 1.0), ("mixed_riesz", -2.0)],
        on_axes,
        None,
        true,
    ));
    r
}

impl EquationSpec {
    fn param(&self, key: &str) -> f64 {
        self.variant.get(key)
    }

    fn center(&self) -> f64 {
        if self.id == EquationId::E16 {
            self.param("a")
        } else {
            0.0
        }
    }

    /// Bands every region must exclude at time `t`.
    pub fn mandatory_bands(&self, t: f64) -> Vec<ExclusionBand> {
        let c = self.center();
        let mut bands = Vec::new();
        for axis in 0..self.spec.dim() {
            bands.push(ExclusionBand {
                axis,
                center: c,
                half_width: SOURCE_BAND,
            });
            if matches!(self.id, EquationId::E16 | EquationId::E17) {
                for center in [c - t, c + t] {
                    bands.push(ExclusionBand {
                        axis,
                        center,
                        half_width: REMOVABLE_BAND,
                    });
                }
            }
        }
        bands
    }

    pub fn in_mandatory_band(&self, x: &[f64], t: f64) -> bool {
        self.mandatory_bands(t)
            .iter()
            .any(|b| (x[b.axis] - b.center).abs() < b.half_width)
    }

    /// Default residual region at time `t`.
    pub fn region(&self, t: f64) -> Result<Grid> {
        let c = self.center();
        let grid = if self.spec.dim() == 1 {
            Grid::line(c - 3.0, c + 3.0, 31)?
        } else {
            Grid::cube(-2.5, 2.5, 11, self.spec.dim())?
        };
        Ok(Grid {
            exclusion_bands: self.mandatory_bands(t),
            ..grid
        })
    }

    /// A user region must not evaluate inside the mandatory bands.
    pub fn check_region(&self, grid: &Grid, t: f64) -> Result<()> {
        if grid.dim() != self.spec.dim() {
            return Err(Error::UnsupportedDimension(format!(
                "{} needs a {}-axis grid",
                self.id,
                self.spec.dim()
            )));
        }
        if let Some(x) = grid
            .points()
            .find(|x| !grid.is_excluded(x) && self.in_mandatory_band(x, t))
        {
            return Err(Error::RegionViolation(format!(
                "{} requires excluding {:?}; point {x:?} lies inside",
                self.id,
                self.mandatory_bands(t)
            )));
        }
        Ok(())
    }

    pub(super) fn context(
        &self,
        cfg: &QuadratureConfig,
        perturbation: Option<Perturbation>,
    ) -> Result<EvalContext> {
        let mut c: Vec<f64> = self.coefficients.iter().map(|c| c.value).collect();
        if let Some(p) = perturbation {
            if p.coefficient >= c.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} has {} coefficients, cannot perturb index {}",
                    self.id,
                    c.len(),
                    p.coefficient
                )));
            }
            c[p.coefficient] *= p.factor;
        }
        let model = DensityModel::new(&self.spec, cfg)?;
        let integrand = model.with_config(&cfg.inner_level());
        Ok(EvalContext {
            eq: self.clone(),
            model,
            integrand,
            c,
            cfg: *cfg,
        })
    }
}

pub(super) struct EvalContext {
    eq: EquationSpec,
    model: DensityModel,
    /// Tighter model for integrands of outer (Caputo) integrals.
    integrand: DensityModel,
    c: Vec<f64>,
    cfg: QuadratureConfig,
}

impl EvalContext {
    fn p(&self, x: &[f64], t: f64, o: DerivOrder) -> Result<f64> {
        self.model.deriv(x, t, &o)
    }

    fn dx(&self, x: &[f64], t: f64, k: u32) -> Result<f64> {
        self.p(x, t, DerivOrder::x(x.len(), 0, k))
    }

    fn laplacian(&self, x: &[f64], t: f64) -> Result<f64> {
        (0..x.len())
            .map(|j| self.p(x, t, DerivOrder::x(x.len(), j, 2)))
            .sum()
    }

    fn bilaplacian(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = x.len();
        let mut acc = 0.0;
        for j in 0..d {
            acc += self.p(x, t, DerivOrder::x(d, j, 4))?;
            for k in j + 1..d {
                acc += 2.0 * self.p(x, t, DerivOrder::x(d, j, 2).with_x(k, 2))?;
            }
        }
        Ok(acc)
    }

    fn mixed_riesz_sum(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = x.len();
        let mut acc = 0.0;
        for j in 0..d {
            for k in j + 1..d {
                acc += self.p(x, t, DerivOrder::value(d).with_riesz(j).with_riesz(k))?;
            }
        }
        Ok(acc)
    }

    fn caputo(&self, x: &[f64], t: f64, nu: f64, origin_exponent: f64) -> Result<f64> {
        let order = DerivOrder::t(x.len(), 1);
        caputo_deriv_fallible(
            |tau| self.integrand.deriv(x, tau, &order),
            FracOrder::new(nu)?,
            t,
            origin_exponent,
            &self.cfg,
        )
    }

    /// `(lhs, rhs)` at one point.
    pub(super) fn sides(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        use EquationId::*;
        let c = &self.c;
        let eq = &self.eq;
        Ok(match eq.id {
            E1 => (self.caputo(x, t, 0.5, 0.0)?, c[0] * self.dx(x, t, 2)?),
            E2 => (self.p(x, t, DerivOrder::t(1, 1))?, c[0] * self.dx(x, t, 4)?),
            E3 => {
                let nu = 0.5f64.powi(eq.param("n") as i32);
                (self.caputo(x, t, nu, 0.0)?, c[0] * self.dx(x, t, 2)?)
            }
            E4 => (self.caputo(x, t, 0.5, 0.0)?, c[0] * self.laplacian(x, t)?),
            E5 => (
                self.p(x, t, DerivOrder::t(2, 1))?,
                c[0] * self.bilaplacian(x, t)?,
            ),
            E6 => {
                let (d2, d3, d4) = (self.dx(x, t, 2)?, self.dx(x, t, 3)?, self.dx(x, t, 4)?);
                let mu = c[1];
                (
                    self.p(x, t, DerivOrder::t(1, 1))?,
                    c[0] * (0.25 * d4 - mu * d3 + mu * mu * d2),
                )
            }
            E7 => (
                self.caputo(x, t, 0.5, 0.0)?,
                c[0] * self.dx(x, t, 2)? - c[1] * self.dx(x, t, 1)?,
            ),
            E8 => {
                let m = 2u32.pow(eq.param("n") as u32);
                (
                    self.p(x, t, DerivOrder::t(1, 1))?,
                    c[0] * self.dx(x, t, 2 * m)?,
                )
            }
            E9 => {
                let nu = 1.0 / eq.param("n");
                (self.caputo(x, t, nu, 0.0)?, c[0] * self.dx(x, t, 2)?)
            }
            E10 => (self.p(x, t, DerivOrder::t(1, 2))?, c[0] * self.dx(x, t, 4)?),
            E11 => {
                let (p0, p1, p2) = (self.dx(x, t, 0)?, self.dx(x, t, 1)?, self.dx(x, t, 2)?);
                let y = x[0];
                // d_x(x p) = p + x p_x; d_xx(x^2 p) = 2p + 4x p_x + x^2 p_xx.
                let rhs = -(c[0] * (p0 + y * p1) - c[1] * (2.0 * p0 + 4.0 * y * p1 + y * y * p2));
                (t * t * self.p(x, t, DerivOrder::t(1, 2))?, rhs)
            }
            E12 => (
                self.p(x, t, DerivOrder::t(2, 2))?,
                c[0] * self.bilaplacian(x, t)?,
            ),
            E13 => {
                let y = x[0];
                let forcing = c[1] / (y * y * (2.0 * PI * t).sqrt());
                (
                    self.p(x, t, DerivOrder::t(1, 1))?,
                    c[0] * self.dx(x, t, 2)? + forcing,
                )
            }
            E14 => {
                let n = eq.param("n") as i32;
                let nu = 0.5f64.powi(n);
                let e = 0.5f64.powi(n + 1);
                let y = x[0];
                // d_t p behaves like t^{-(1 - e)} at t = 0 through the heavy Cauchy tail.
                (
                    self.caputo(x, t, nu, 1.0 - e)?,
                    c[0] * self.dx(x, t, 2)? + c[1] * t.powf(-e) / (y * y),
                )
            }
            E15 => (
                self.p(x, t, DerivOrder::t(2, 1))?,
                c[0] * self.mixed_riesz_sum(x, t)? + c[1] * self.laplacian(x, t)?,
            ),
            E16 => {
                let r = x[0] - eq.param("a");
                (
                    self.p(x, t, DerivOrder::t(1, 2))?,
                    c[0] * self.dx(x, t, 2)? + c[1] / (t * r * r),
                )
            }
            E17 => (
                self.p(x, t, DerivOrder::t(2, 2))?,
                c[0] * self.laplacian(x, t)? + c[1] * self.mixed_riesz_sum(x, t)?,
            ),
            id => return Err(Error::UnknownEquation(format!("{id} is not an equation"))),
        })
    }
}
