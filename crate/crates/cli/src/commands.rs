use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use itercomp_core::densities::{cc_closed_form, density_grid_masked, field_mass, DerivOrder};
use itercomp_core::model::{CompositionSpec, EquationId, Inner, ProcessKind, QuadratureConfig};
use itercomp_core::montecarlo::{ks_against_density, sample_marginal, summarize};
use itercomp_core::verify::{check_identity, registry, residual, Perturbation};
use serde::{Deserialize, Serialize};

use crate::manifest::Outputs;
use crate::{parse, CliError};

fn input(e: String) -> CliError {
    CliError::Input(e)
}

/// Flags shared by commands that take a composition.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecArgs {
    /// JSON or TOML composition spec; replaces --outer/--inner/--dim.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// brownian[:mu[:D]], fbm:H or cauchy[:a[:scale]] [default: brownian]
    #[arg(long)]
    pub outer: Option<String>,
    /// none, a process, iterated:n or product:n [default: brownian]
    #[arg(long)]
    pub inner: Option<String>,
    /// Number of outer coordinates [default: 1]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Rescales a Brownian clock to variance 8 lambda^4 t.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

impl SpecArgs {
    fn merge(self, f: SpecArgs) -> SpecArgs {
        SpecArgs {
            spec: self.spec.or(f.spec),
            outer: self.outer.or(f.outer),
            inner: self.inner.or(f.inner),
            dim: self.dim.or(f.dim),
            time_scale: self.time_scale.or(f.time_scale),
        }
    }

    fn resolve(&self) -> Result<CompositionSpec, CliError> {
        let spec = match &self.spec {
            Some(path) => parse::spec_file(path).map_err(input)?,
            None => parse::spec(
                self.outer.as_deref().unwrap_or("brownian"),
                self.inner.as_deref().unwrap_or("brownian"),
                self.dim.unwrap_or(1),
                self.time_scale,
            )
            .map_err(input)?,
        };
        Ok(itercomp_core::model::validate_spec(&spec)?)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// Time [default: 1]
    #[arg(long)]
    pub t: Option<f64>,
    /// lo:hi:n on every axis [default: -4:4:81]
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// center:half_width bands skipped on every axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub exclude: Vec<String>,
    /// Extra columns: dK (K-th x-derivative on axis 0), dK@j (axis j), dt, dt2.
    #[arg(long, value_delimiter = ',')]
    pub derivs: Vec<String>,
    /// Add the closed form of the one-dimensional Cauchy-Cauchy density.
    #[arg(long)]
    pub closed_form: bool,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DensityArgs {
    pub fn merge(self, f: DensityArgs) -> DensityArgs {
        DensityArgs {
            spec: self.spec.merge(f.spec),
            t: self.t.or(f.t),
            grid: self.grid.or(f.grid),
            exclude: if self.exclude.is_empty() {
                f.exclude
            } else {
                self.exclude
            },
            derivs: if self.derivs.is_empty() {
                f.derivs
            } else {
                self.derivs
            },
            closed_form: self.closed_form || f.closed_form,
            out: self.out.or(f.out),
        }
    }
}

fn deriv_order(s: &str, dim: usize) -> Result<DerivOrder, CliError> {
    let s = s.trim();
    let bad = || CliError::Input(format!("derivative {s:?}: use dK, dK@axis, dt or dt2"));
    if let Some(k) = s.strip_prefix("dt") {
        let k: u32 = if k.is_empty() {
            1
        } else {
            k.parse().map_err(|_| bad())?
        };
        return Ok(DerivOrder::t(dim, k));
    }
    let rest = s.strip_prefix('d').ok_or_else(bad)?;
    let (k, axis) = match rest.split_once('@') {
        Some((k, a)) => (k, a.parse::<usize>().map_err(|_| bad())?),
        None => (rest, 0),
    };
    let k: u32 = k.parse().map_err(|_| bad())?;
    if axis >= dim {
        return Err(CliError::Input(format!(
            "axis {axis} of a {dim}-dimensional composition"
        )));
    }
    Ok(DerivOrder::x(dim, axis, k))
}

#[derive(Serialize)]
struct DensitySummary<'a> {
    spec: &'a CompositionSpec,
    t: f64,
    rows: usize,
    columns: Vec<String>,
    excluded_points: usize,
    /// Grid mass plus exact tail mass; one-dimensional grids without exclusions only.
    mass: Option<f64>,
    closed_form_max_abs_diff: Option<f64>,
    closed_form_max_rel_diff: Option<f64>,
}

pub fn density(a: DensityArgs, cfg: &QuadratureConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let spec = a.spec.resolve()?;
    let t = a.t.unwrap_or(1.0);
    let grid = parse::grid(a.grid.as_deref().unwrap_or("-4:4:81"), spec.dim()).map_err(input)?;
    let grid = parse::with_bands(grid, &a.exclude).map_err(input)?;
    let orders = a
        .derivs
        .iter()
        .map(|s| deriv_order(s, spec.dim()))
        .collect::<Result<Vec<_>, _>>()?;
    let closed_location = if a.closed_form {
        match (spec.dim(), spec.outer[0], spec.inner, spec.time_scale) {
            (1, ProcessKind::Cauchy { location, scale }, Inner::Process(inner), None)
                if scale == 1.0 && inner == ProcessKind::standard_cauchy() =>
            {
                Some(location)
            }
            _ => {
                return Err(CliError::Input(
                    "--closed-form needs --outer cauchy[:a] --inner cauchy with one coordinate"
                        .into(),
                ))
            }
        }
    } else {
        None
    };
    let mut field = density_grid_masked(&spec, &grid, t, cfg, &orders)?;
    let excluded = field.values.iter().filter(|v| v.is_nan()).count();
    if excluded > 0 {
        eprintln!("note: {excluded} grid points are excluded or singular and hold NaN");
    }
    let mass = if spec.dim() == 1 && excluded == 0 {
        Some(field_mass(&field, &spec, cfg)?)
    } else {
        None
    };
    let (mut max_abs, mut max_rel) = (None, None);
    if let Some(a0) = closed_location {
        let mut column = Vec::with_capacity(field.values.len());
        let (mut abs_d, mut rel_d): (f64, f64) = (0.0, 0.0);
        for (x, &v) in field.grid.points().zip(&field.values) {
            let c = cc_closed_form(x[0], t, a0).unwrap_or(f64::NAN);
            column.push(c);
            let r = (x[0] - a0).abs();
            // Off the log singularity and the removable point.
            if v.is_finite() && c.is_finite() && r > 0.0 && (r - t).abs() >= 1e-2 {
                abs_d = abs_d.max((c - v).abs());
                rel_d = rel_d.max((c - v).abs() / v.abs());
            }
        }
        field.derivatives.insert("closed_form".into(), column);
        max_abs = Some(abs_d);
        max_rel = Some(rel_d);
    }
    let out_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut out = Outputs::new(&out_dir)?;
    out.write("density.csv", field.to_csv().as_bytes())?;
    let mut columns = vec!["value".to_string()];
    columns.extend(field.derivatives.keys().cloned());
    let summary = DensitySummary {
        spec: &spec,
        t,
        rows: field.values.len(),
        columns,
        excluded_points: excluded,
        mass,
        closed_form_max_abs_diff: max_abs,
        closed_form_max_rel_diff: max_rel,
    };
    out.write_json("density.json", &summary)?;
    println!(
        "{spec} at t = {t}: {} grid points written to {}",
        summary.rows,
        out_dir.join("density.csv").display()
    );
    if let Some(m) = mass {
        println!("mass = {m:.10}");
    }
    if let Some(d) = max_abs {
        println!("closed form vs quadrature: max |diff| = {d:.3e} off the removable point");
    }
    out.finish(
        "density",
        serde_json::to_value(&a).expect("serializable args"),
        Some(spec),
        *cfg,
        start.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyArgs {
    /// `all`, or comma-separated ids such as E13,I4.
    pub target: Option<String>,
    /// Comma-separated times [default: 0.5,1,2]
    #[arg(long)]
    pub t: Option<String>,
    /// lo:hi:n region replacing each equation's default region.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// center:half_width bands skipped on every axis of --grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub exclude: Vec<String>,
    /// Multiply one coefficient of every equation by this factor (negative control).
    #[arg(long)]
    pub perturb: Option<f64>,
    /// Index of the perturbed coefficient [default: 0]
    #[arg(long)]
    pub coefficient: Option<usize>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl VerifyArgs {
    pub fn merge(self, f: VerifyArgs) -> VerifyArgs {
        VerifyArgs {
            target: self.target.or(f.target),
            t: self.t.or(f.t),
            grid: self.grid.or(f.grid),
            exclude: if self.exclude.is_empty() {
                f.exclude
            } else {
                self.exclude
            },
            perturb: self.perturb.or(f.perturb),
            coefficient: self.coefficient.or(f.coefficient),
            out: self.out.or(f.out),
        }
    }
}

fn equation_ids(target: &str) -> Result<Vec<EquationId>, CliError> {
    if target.eq_ignore_ascii_case("all") {
        return Ok(EquationId::ALL.to_vec());
    }
    target
        .split(',')
        .map(|s| {
            serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_uppercase()))
                .map_err(|_| CliError::Input(format!("unknown equation or identity {s:?}")))
        })
        .collect()
}

#[derive(Serialize)]
struct SummaryRow {
    id: EquationId,
    variant: String,
    t: Option<f64>,
    max_error: f64,
    threshold: Option<f64>,
    asserted: bool,
    passed: bool,
    report: String,
}

pub fn verify(a: VerifyArgs, cfg: &QuadratureConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let target = a
        .target
        .clone()
        .ok_or_else(|| CliError::Input("verify needs a target: all or a list of ids".into()))?;
    let ids = equation_ids(&target)?;
    let times = parse::times(a.t.as_deref().unwrap_or("0.5,1,2")).map_err(input)?;
    let perturbation = a.perturb.map(|factor| Perturbation {
        coefficient: a.coefficient.unwrap_or(0),
        factor,
    });
    let out_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut out = Outputs::new(&out_dir)?;
    let mut rows = Vec::new();
    let entries = registry();
    for id in ids {
        if id.is_identity() {
            let r = check_identity(id, cfg)?;
            let name = format!("reports/{id}.json");
            out.write_json(&name, &r)?;
            println!(
                "{id:<4} {:<26} {:>10} max_err={:.2e} {}",
                "identity",
                "",
                r.max_error,
                verdict(r.passed, true)
            );
            rows.push(SummaryRow {
                id,
                variant: "identity".into(),
                t: None,
                max_error: r.max_error,
                threshold: None,
                asserted: true,
                passed: r.passed,
                report: name,
            });
            continue;
        }
        for eq in entries.iter().filter(|e| e.id == id) {
            let grid = match &a.grid {
                Some(g) => Some(
                    parse::with_bands(parse::grid(g, eq.spec.dim()).map_err(input)?, &a.exclude)
                        .map_err(input)?,
                ),
                None => None,
            };
            for &t in &times {
                let r = residual(eq, t, grid.as_ref(), cfg, perturbation)?;
                let slug = eq.variant.label().replace([' ', '='], "_");
                let name = format!("reports/{id}_{slug}_t{t}.json");
                out.write_json(&name, &r)?;
                println!(
                    "{id:<4} {:<26} t={t:<7} max_rel={:.2e} {}",
                    r.variant,
                    r.max_rel_residual,
                    verdict(r.passed, r.asserted)
                );
                rows.push(SummaryRow {
                    id,
                    variant: r.variant.clone(),
                    t: Some(t),
                    max_error: r.max_rel_residual,
                    threshold: Some(r.threshold),
                    asserted: r.asserted,
                    passed: r.passed,
                    report: name,
                });
            }
        }
    }
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.asserted && !r.passed)
        .map(|r| format!("{} {}", r.id, r.variant))
        .collect();
    out.write_json("summary.json", &rows)?;
    let asserted = rows.iter().filter(|r| r.asserted).count();
    println!(
        "{} reports, {} asserted, {} failed",
        rows.len(),
        asserted,
        failed.len()
    );
    out.finish(
        "verify",
        serde_json::to_value(&a).expect("serializable args"),
        None,
        *cfg,
        start.elapsed().as_secs_f64(),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

fn verdict(passed: bool, asserted: bool) -> &'static str {
    match (asserted, passed) {
        (false, _) => "recorded",
        (true, true) => "PASS",
        (true, false) => "FAIL",
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// Time [default: 1]
    #[arg(long)]
    pub t: Option<f64>,
    /// Number of draws [default: 100000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the per-draw generator streams [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kolmogorov-Smirnov test of every coordinate against the quadrature CDF.
    #[arg(long)]
    pub ks: bool,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn merge(self, f: SimulateArgs) -> SimulateArgs {
        SimulateArgs {
            spec: self.spec.merge(f.spec),
            t: self.t.or(f.t),
            n: self.n.or(f.n),
            seed: self.seed.or(f.seed),
            ks: self.ks || f.ks,
            out: self.out.or(f.out),
        }
    }
}

pub fn simulate(a: SimulateArgs, cfg: &QuadratureConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let spec = a.spec.resolve()?;
    let t = a.t.unwrap_or(1.0);
    let n = a.n.unwrap_or(100_000);
    let seed = a.seed.unwrap_or(0);
    if n == 0 {
        return Err(CliError::Input("need at least one draw".into()));
    }
    let batch = sample_marginal(&spec, t, n, seed)?;
    let heavy = spec
        .outer
        .iter()
        .any(|p| matches!(p, ProcessKind::Cauchy { .. }))
        || matches!(spec.inner, Inner::Process(ProcessKind::Cauchy { .. }));
    if heavy {
        eprintln!(
            "warning: heavy-tailed marginal; moments are not reported, quantile summary only"
        );
    }
    let summaries: Vec<_> = (0..spec.dim()).map(|j| summarize(&batch, j)).collect();
    for (j, s) in summaries.iter().enumerate() {
        match s.variance {
            Some(v) => println!(
                "x{j}: median = {:.5}, IQR = {:.5}, variance = {v:.5}",
                s.median, s.iqr
            ),
            None => println!("x{j}: median = {:.5}, IQR = {:.5}", s.median, s.iqr),
        }
    }
    let mut ks = Vec::new();
    if a.ks {
        for j in 0..spec.dim() {
            let r = ks_against_density(&batch, j, cfg)?;
            println!(
                "KS x{j}: D = {:.5}, critical = {:.5} (alpha = 0.01): {}",
                r.statistic,
                r.critical_value,
                if r.passed { "PASS" } else { "FAIL" }
            );
            ks.push(r);
        }
    }
    let out_dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut out = Outputs::new(&out_dir)?;
    out.write("samples.csv", batch.to_csv().as_bytes())?;
    out.write_json(
        "samples.json",
        &serde_json::json!({
            "sidecar": batch.sidecar(),
            "heavy_tailed": heavy,
            "summaries": summaries,
            "ks": ks,
        }),
    )?;
    out.finish(
        "simulate",
        serde_json::to_value(&a).expect("serializable args"),
        Some(spec),
        *cfg,
        start.elapsed().as_secs_f64(),
    )?;
    if ks.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Check("sample rejected by the KS test".into()))
    }
}
