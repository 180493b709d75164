//! Seeded sampling of composition marginals and Kolmogorov-Smirnov tests against the
//! quadrature CDF.
//!
//! Every draw owns a ChaCha8 stream keyed by `(seed, draw index)`, so batches do not
//! depend on the number of worker threads. Gaussians come from the ziggurat sampler of
//! `rand_distr`, Cauchy variables from `tan(pi (U - 1/2))`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::DensityModel;
use crate::error::{Error, Result};
use crate::model::{validate_spec, CompositionSpec, Inner, ProcessKind, QuadratureConfig};

/// `c(0.01)` of the asymptotic Kolmogorov distribution.
pub const KS_C_001: f64 = 1.628;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub spec: CompositionSpec,
    pub t: f64,
    pub n: usize,
    pub seed: u64,
    pub values: Vec<Vec<f64>>,
}

/// Metadata written next to an exported batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub spec: CompositionSpec,
    pub t: f64,
    pub n: usize,
    pub seed: u64,
    pub generator: String,
    pub columns: Vec<String>,
}

impl SampleBatch {
    /// Column `axis` of the batch.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[axis]).collect()
    }

    pub fn to_csv(&self) -> String {
        let d = self.spec.dim();
        let mut out: String = (0..d)
            .map(|j| format!("x{j}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for v in &self.values {
            out.push_str(
                &v.iter()
                    .map(|x| format!("{x}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            out.push('\n');
        }
        out
    }

    pub fn sidecar(&self) -> BatchSidecar {
        BatchSidecar {
            spec: self.spec.clone(),
            t: self.t,
            n: self.n,
            seed: self.seed,
            generator: "ChaCha8 seeded with `seed`, stream = draw index; ziggurat normals; tan-inverse Cauchy".into(),
            columns: (0..self.spec.dim()).map(|j| format!("x{j}")).collect(),
        }
    }
}

/// How one draw of the clock is produced.
#[derive(Debug, Clone, Copy)]
enum ClockSampler {
    Fixed,
    /// `|N(0, var_rate * t)|`.
    HalfNormal {
        var_rate: f64,
    },
    /// `|N(0, t^{2H})|`.
    AbsFbm {
        hurst: f64,
    },
    /// `|a + scale * t * C|`.
    AbsCauchy {
        location: f64,
        scale: f64,
    },
    /// `|B_{n+1}(... |B_1(t)| ...)|` with `n + 1` Gaussian draws.
    Iterated {
        n: u32,
    },
}

fn clock_sampler(spec: &CompositionSpec) -> Result<ClockSampler> {
    Ok(match spec.inner {
        Inner::None => ClockSampler::Fixed,
        Inner::Process(ProcessKind::Brownian { drift, diffusion }) => match spec.time_scale {
            Some(lambda) => ClockSampler::HalfNormal {
                var_rate: 8.0 * lambda.powi(4),
            },
            None if drift == 0.0 => ClockSampler::HalfNormal { var_rate: diffusion },
            None => {
                return Err(Error::UnsupportedComposition(
                    "the drifted clock is a conditioned Gaussian law, not the law of |B^mu(t)|; it has no sampler".into(),
                ))
            }
        },
        Inner::Process(ProcessKind::FractionalBrownian { hurst }) => ClockSampler::AbsFbm { hurst },
        Inner::Process(ProcessKind::Cauchy { location, scale }) => ClockSampler::AbsCauchy { location, scale },
        Inner::IteratedBrownian { n } => ClockSampler::Iterated { n },
        // The product clock for n = 2 reduces to |N(0, 2t)|.
        Inner::FracTimeProduct { n: 2 } => ClockSampler::HalfNormal { var_rate: 2.0 },
        Inner::FracTimeProduct { n } => {
            return Err(Error::UnsupportedComposition(format!(
                "product clock of order 1/{n} is available as a density only"
            )))
        }
    })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn standard_cauchy(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    (PI * (u - 0.5)).tan()
}

fn draw_clock(c: ClockSampler, t: f64, rng: &mut ChaCha8Rng) -> f64 {
    match c {
        ClockSampler::Fixed => t,
        ClockSampler::HalfNormal { var_rate } => (var_rate * t).sqrt() * normal(rng).abs(),
        ClockSampler::AbsFbm { hurst } => t.powf(hurst) * normal(rng).abs(),
        ClockSampler::AbsCauchy { location, scale } => {
            (location + scale * t * standard_cauchy(rng)).abs()
        }
        ClockSampler::Iterated { n } => {
            let mut s = t;
            for _ in 0..=n {
                s = s.sqrt() * normal(rng).abs();
            }
            s
        }
    }
}

fn draw_outer(p: &ProcessKind, s: f64, rng: &mut ChaCha8Rng) -> f64 {
    match *p {
        ProcessKind::Brownian { drift, diffusion } => {
            drift * s + (diffusion * s).sqrt() * normal(rng)
        }
        ProcessKind::FractionalBrownian { hurst } => s.powf(hurst) * normal(rng),
        ProcessKind::Cauchy { location, scale } => location + scale * s * standard_cauchy(rng),
    }
}

/// `n` independent draws of `X(t)`.
pub fn sample_marginal(spec: &CompositionSpec, t: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    let spec = validate_spec(spec)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be positive, got {t}"
        )));
    }
    let clock = clock_sampler(&spec)?;
    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let s = draw_clock(clock, t, &mut rng);
            spec.outer
                .iter()
                .map(|p| draw_outer(p, s, &mut rng))
                .collect()
        })
        .collect();
    Ok(SampleBatch {
        spec,
        t,
        n,
        seed,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub n: usize,
    pub passed: bool,
}

/// Two-sided KS statistic of `sample` against `cdf`, with the critical value
/// `1.628 / sqrt(n)` at level 0.01.
pub fn ks_test<F>(sample: &[f64], cdf: F) -> Result<KsResult>
where
    F: Fn(f64) -> Result<f64>,
{
    if sample.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    let mut prev = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x)?;
        // Quadrature noise is tolerated, genuine decrease is not.
        if !(-1e-9..=1.0 + 1e-9).contains(&f) || f < prev - 1e-9 {
            return Err(Error::NonMonotoneCdf { at: x });
        }
        prev = prev.max(f);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let critical_value = KS_C_001 / nf.sqrt();
    Ok(KsResult {
        statistic: d,
        critical_value,
        n,
        passed: d <= critical_value,
    })
}

/// CDF of a one-dimensional model tabulated at increasing nodes and linearly
/// interpolated; outside the nodes the quadrature CDF is evaluated directly. Between
/// two nodes the interpolation error is below the CDF increment across them.
pub struct CdfTable {
    model: DensityModel,
    t: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl CdfTable {
    pub fn new(model: DensityModel, t: f64, nodes: Vec<f64>) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::UnsupportedDimension(
                "CDF table of a one-dimensional model".into(),
            ));
        }
        if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "CDF table needs at least two increasing nodes".into(),
            ));
        }
        let values = nodes
            .par_iter()
            .map(|&x| model.cdf(x, t))
            .collect::<Result<Vec<f64>>>()?;
        for (i, w) in values.windows(2).enumerate() {
            if w[1] < w[0] - 1e-9 {
                return Err(Error::NonMonotoneCdf { at: nodes[i + 1] });
            }
        }
        Ok(CdfTable {
            model,
            t,
            nodes,
            values,
        })
    }

    /// Uniform nodes on `[lo, hi]`.
    pub fn uniform(model: DensityModel, t: f64, lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || count < 2 {
            return Err(Error::InvalidParameter(
                "CDF table needs lo < hi and two nodes".into(),
            ));
        }
        let h = (hi - lo) / (count - 1) as f64;
        Self::new(model, t, (0..count).map(|i| lo + h * i as f64).collect())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let last = self.nodes.len() - 1;
        if x < self.nodes[0] || x > self.nodes[last] {
            return self.model.cdf(x, self.t);
        }
        let i = self.nodes.partition_point(|&n| n <= x).clamp(1, last) - 1;
        let w = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        Ok(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }
}

/// Nodes of the KS table: this many sample quantiles, so each panel carries about
/// `1/TABLE_NODES` of the mass whatever the tails.
const TABLE_NODES: usize = 4000;

/// KS test of coordinate `axis` of a batch against the quadrature marginal.
pub fn ks_against_density(
    batch: &SampleBatch,
    axis: usize,
    cfg: &QuadratureConfig,
) -> Result<KsResult> {
    if axis >= batch.spec.dim() {
        return Err(Error::UnsupportedDimension(format!(
            "axis {axis} of a {}-dimensional batch",
            batch.spec.dim()
        )));
    }
    let marginal = CompositionSpec {
        outer: vec![batch.spec.outer[axis]],
        ..batch.spec.clone()
    };
    let model = DensityModel::new(&marginal, cfg)?;
    let mut xs = batch.coordinate(axis);
    xs.sort_by(f64::total_cmp);
    let step = (xs.len() / TABLE_NODES).max(1);
    let mut nodes: Vec<f64> = xs.iter().step_by(step).copied().collect();
    nodes.push(xs[xs.len() - 1]);
    nodes.dedup_by(|a, b| *a <= *b);
    if nodes.len() < 2 {
        return ks_test(&xs, |x| model.cdf(x, batch.t));
    }
    let table = CdfTable::new(model, batch.t, nodes)?;
    ks_test(&xs, |x| table.eval(x))
}

/// Location and spread of one coordinate. Moments are reported only when the
/// outer law has them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub median: f64,
    pub iqr: f64,
    pub variance: Option<f64>,
}

pub fn summarize(batch: &SampleBatch, axis: usize) -> SampleSummary {
    let mut xs = batch.coordinate(axis);
    xs.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let pos = p * (xs.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(xs.len() - 1);
        xs[i] + (pos - i as f64) * (xs[j] - xs[i])
    };
    let heavy = matches!(batch.spec.outer[axis], ProcessKind::Cauchy { .. })
        || matches!(batch.spec.inner, Inner::Process(ProcessKind::Cauchy { .. }));
    let variance = (!heavy).then(|| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    });
    SampleSummary {
        median: quantile(0.5),
        iqr: quantile(0.75) - quantile(0.25),
        variance,
    }
}
