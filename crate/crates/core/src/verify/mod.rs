//! Residual engine for the governing equations and checks of the exact identities.
//! Both sides of every equation are assembled from derivatives taken under the
//! subordination integral; sources supported on hyperplanes are excluded from the
//! region, pointwise-finite forcings are kept.

mod equations;
mod identities;

pub use equations::{registry, Coefficient, EquationSpec, Variant};
pub use identities::{
    check_identity, fourier_laplace_check, identity_suite, pn_zero_constant_check,
    subordination_identity_check, IdentityCase, IdentityReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EquationId, Grid, QuadratureConfig};

/// Relative residuals are measured against `max(floor, |lhs| + |rhs|)` with
/// `floor = RESIDUAL_FLOOR * max_grid(|lhs| + |rhs|)`.
pub const RESIDUAL_FLOOR: f64 = 1e-3;

/// Default pass threshold for equations.
pub const EQUATION_THRESHOLD: f64 = 1e-5;

/// Scales one named coefficient of an equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub coefficient: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub equation: EquationId,
    pub variant: String,
    pub citation: String,
    pub t: f64,
    pub region: Grid,
    pub max_rel_residual: f64,
    pub mean_rel_residual: f64,
    pub max_abs_residual: f64,
    pub worst_point: Vec<f64>,
    pub points: usize,
    pub excluded_fraction: f64,
    pub config: QuadratureConfig,
    /// False for variants computed for the record only (alternative constants).
    pub asserted: bool,
    pub threshold: f64,
    pub passed: bool,
    pub perturbation: Option<Perturbation>,
}

/// Evaluates an equation's residual over its default region, or over `grid` if given.
pub fn residual(
    eq: &EquationSpec,
    t: f64,
    grid: Option<&Grid>,
    cfg: &QuadratureConfig,
    perturbation: Option<Perturbation>,
) -> Result<ResidualReport> {
    let region = match grid {
        Some(g) => {
            eq.check_region(g, t)?;
            g.clone()
        }
        None => eq.region(t)?,
    };
    let ctx = eq.context(cfg, perturbation)?;
    let points: Vec<Vec<f64>> = region.points().collect();
    let sides: Vec<Option<(f64, f64)>> = points
        .par_iter()
        .map(|x| {
            if region.is_excluded(x) || eq.in_mandatory_band(x, t) {
                Ok(None)
            } else {
                ctx.sides(x, t).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let evaluated: Vec<(usize, f64, f64)> = sides
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|(l, r)| (i, l, r)))
        .collect();
    if evaluated.is_empty() {
        return Err(Error::RegionViolation(
            "no grid point outside the excluded bands".into(),
        ));
    }
    let scale = evaluated
        .iter()
        .map(|&(_, l, r)| l.abs() + r.abs())
        .fold(0.0, f64::max);
    let floor = RESIDUAL_FLOOR * scale;
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut worst = 0;
    for &(i, l, r) in &evaluated {
        let abs = (l - r).abs();
        let rel = abs / floor.max(l.abs() + r.abs());
        if rel > max_rel || max_rel.is_nan() {
            max_rel = rel;
            worst = i;
        }
        max_abs = max_abs.max(abs);
        sum_rel += rel;
    }
    let threshold = EQUATION_THRESHOLD;
    Ok(ResidualReport {
        equation: eq.id,
        variant: eq.variant.label(),
        citation: eq.id.citation().to_string(),
        t,
        region,
        max_rel_residual: max_rel,
        mean_rel_residual: sum_rel / evaluated.len() as f64,
        max_abs_residual: max_abs,
        worst_point: points[worst].clone(),
        points: evaluated.len(),
        excluded_fraction: 1.0 - evaluated.len() as f64 / points.len() as f64,
        config: *cfg,
        asserted: eq.asserted,
        threshold,
        passed: max_rel.is_finite() && max_rel <= threshold,
        perturbation,
    })
}

/// Residual reports for every asserted variant of `id` at each time.
pub fn verify_equation(
    id: EquationId,
    times: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<ResidualReport>> {
    if id.is_identity() {
        return Err(Error::UnknownEquation(format!(
            "{id} is an identity, not an equation"
        )));
    }
    let mut out = Vec::new();
    for eq in registry().into_iter().filter(|e| e.id == id) {
        for &t in times {
            out.push(residual(&eq, t, None, cfg, None)?);
        }
    }
    Ok(out)
}
