//! `itercomp`: densities, simulations and equation checks for iterated compositions.
//!
//! Exit codes: 0 success, 2 invalid input or spec, 3 numerical failure,
//! 4 a verification or goodness-of-fit check failed, 1 I/O error.

mod commands;
mod manifest;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itercomp_core::model::QuadratureConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "itercomp",
    version,
    about = "Iterated Brownian and Cauchy compositions"
)]
struct Cli {
    /// TOML file with a `[quadrature]` table, `workers`, and one table per subcommand
    /// whose keys mirror the flags. Flags win over the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(flatten)]
    quad: QuadArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadArgs {
    /// Absolute error target of each integral.
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,
    /// Relative error target of each integral.
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
    /// Maximum bisection depth of adaptive subdivision.
    #[arg(long, global = true)]
    pub max_depth: Option<u32>,
    /// Integrand evaluations allowed per integral.
    #[arg(long, global = true)]
    pub max_evals: Option<usize>,
    /// Deepest nesting of iterated integrals.
    #[arg(long, global = true)]
    pub nested_budget: Option<usize>,
}

impl QuadArgs {
    fn merge(self, file: QuadArgs) -> QuadArgs {
        QuadArgs {
            abs_tol: self.abs_tol.or(file.abs_tol),
            rel_tol: self.rel_tol.or(file.rel_tol),
            max_depth: self.max_depth.or(file.max_depth),
            max_evals: self.max_evals.or(file.max_evals),
            nested_budget: self.nested_budget.or(file.nested_budget),
        }
    }

    fn config(&self) -> QuadratureConfig {
        let d = QuadratureConfig::default();
        QuadratureConfig {
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            max_evals: self.max_evals.unwrap_or(d.max_evals),
            nested_budget: self.nested_budget.unwrap_or(d.nested_budget),
            ..d
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a density (and derivatives) on a grid.
    Density(commands::DensityArgs),
    /// Residuals of governing equations and checks of identities.
    Verify(commands::VerifyArgs),
    /// Sample the marginal law and optionally test it against the density.
    Simulate(commands::SimulateArgs),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    workers: Option<usize>,
    quadrature: QuadArgs,
    density: commands::DensityArgs,
    verify: commands::VerifyArgs,
    simulate: commands::SimulateArgs,
}

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
    Check(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl From<itercomp_core::Error> for CliError {
    fn from(e: itercomp_core::Error) -> Self {
        use itercomp_core::Error::*;
        match e {
            InvalidParameter(_)
            | UnsupportedComposition(_)
            | DepthUnsupported { .. }
            | OrderUnsupported(_)
            | UnsupportedDimension(_)
            | RegionViolation(_)
            | UnknownEquation(_) => CliError::Input(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Flattened argument structs cannot deny unknown fields through serde, so the
/// subcommand tables are checked against the serialized field names.
fn check_keys(table: &toml::Table) -> Result<(), String> {
    let known = |v: serde_json::Value| -> Vec<String> {
        v.as_object()
            .map(|o| o.keys().cloned().collect())
            .unwrap_or_default()
    };
    let sections = [
        (
            "density",
            known(serde_json::to_value(commands::DensityArgs::default()).expect("serializable")),
        ),
        (
            "simulate",
            known(serde_json::to_value(commands::SimulateArgs::default()).expect("serializable")),
        ),
    ];
    for (name, fields) in sections {
        if let Some(toml::Value::Table(t)) = table.get(name) {
            if let Some(k) = t.keys().find(|k| !fields.contains(k)) {
                return Err(format!("unknown key {k:?} in [{name}]"));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file: ConfigFile = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            check_keys(&table).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            table
                .try_into()
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let workers = cli.workers.or(file.workers);
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Input(format!("worker pool: {e}")))?;
    }
    let cfg = cli.quad.merge(file.quadrature).config();
    cfg.validate()?;
    match cli.command {
        Command::Density(a) => commands::density(a.merge(file.density), &cfg),
        Command::Verify(a) => commands::verify(a.merge(file.verify), &cfg),
        Command::Simulate(a) => commands::simulate(a.merge(file.simulate), &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Input(m) => eprintln!("error: {m}"),
                CliError::Numeric(m) => eprintln!("numerical failure: {m}"),
                CliError::Check(m) => eprintln!("check failed: {m}"),
                CliError::Io(m) => eprintln!("i/o error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
