//! Text forms of processes, clocks, grids and time lists.

use itercomp_core::model::{CompositionSpec, Grid, Inner, ProcessKind};

/// `brownian[:drift[:diffusion]]`, `fbm:H`, `cauchy[:location[:scale]]`.
pub fn process(s: &str) -> Result<ProcessKind, String> {
    let mut parts = s.split(':');
    let name = parts.next().unwrap_or_default().trim().to_ascii_lowercase();
    let nums: Vec<f64> = parts
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number {p:?} in {s:?}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    let arg = |i: usize, default: f64| nums.get(i).copied().unwrap_or(default);
    let p = match name.as_str() {
        "brownian" | "bm" | "b" if nums.len() <= 2 => ProcessKind::Brownian {
            drift: arg(0, 0.0),
            diffusion: arg(1, 1.0),
        },
        "fbm" if nums.len() == 1 => ProcessKind::fbm(nums[0]),
        "cauchy" | "c" if nums.len() <= 2 => ProcessKind::Cauchy {
            location: arg(0, 0.0),
            scale: arg(1, 1.0),
        },
        _ => {
            return Err(format!(
                "unknown process {s:?}; use brownian[:mu[:D]], fbm:H or cauchy[:a[:scale]]"
            ))
        }
    };
    Ok(p)
}

/// `none`, a process, `iterated:n` or `product:n`.
pub fn inner(s: &str) -> Result<Inner, String> {
    let lower = s.trim().to_ascii_lowercase();
    let depth = |rest: &str| {
        rest.parse::<u32>()
            .map_err(|e| format!("bad depth in {s:?}: {e}"))
    };
    if lower == "none" || lower == "t" {
        Ok(Inner::None)
    } else if let Some(rest) = lower.strip_prefix("iterated:") {
        Ok(Inner::IteratedBrownian { n: depth(rest)? })
    } else if let Some(rest) = lower.strip_prefix("product:") {
        Ok(Inner::FracTimeProduct { n: depth(rest)? })
    } else {
        process(&lower).map(Inner::Process)
    }
}

pub fn spec(
    outer: &str,
    inner_s: &str,
    dim: usize,
    time_scale: Option<f64>,
) -> Result<CompositionSpec, String> {
    let mut spec = CompositionSpec::new(process(outer)?, dim, inner(inner_s)?);
    spec.time_scale = time_scale;
    Ok(spec)
}

/// A spec file, JSON or TOML by extension.
pub fn spec_file(path: &std::path::Path) -> Result<CompositionSpec, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// `lo:hi:n`, the same axis repeated `dim` times.
pub fn grid(s: &str, dim: usize) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid {s:?} is not lo:hi:n"));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|e| format!("grid lo: {e}"))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|e| format!("grid hi: {e}"))?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|e| format!("grid n: {e}"))?;
    Grid::cube(lo, hi, n, dim).map_err(|e| e.to_string())
}

/// `center:half_width` bands applied on every axis.
pub fn with_bands(mut grid: Grid, bands: &[String]) -> Result<Grid, String> {
    for b in bands {
        let (c, w) = b
            .split_once(':')
            .ok_or_else(|| format!("band {b:?} is not center:half_width"))?;
        let c: f64 = c.trim().parse().map_err(|e| format!("band center: {e}"))?;
        let w: f64 = w.trim().parse().map_err(|e| format!("band width: {e}"))?;
        grid = grid.with_bands_all_axes(c, w);
    }
    Ok(grid)
}

/// Comma-separated positive times.
pub fn times(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            let t: f64 = p
                .trim()
                .parse()
                .map_err(|e| format!("bad time {p:?}: {e}"))?;
            if t > 0.0 && t.is_finite() {
                Ok(t)
            } else {
                Err(format!("time must be positive, got {t}"))
            }
        })
        .collect()
}
