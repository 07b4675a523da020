//! Optional TOML settings file; command-line flags take precedence.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub radius_frac: Option<f64>,
    pub alpha: Option<f64>,
    pub r_grid: Option<String>,
    pub alpha_grid: Option<String>,
    pub method: Option<String>,
    pub classifier: Option<String>,
    pub detector_id: Option<String>,
    pub segments: Option<usize>,
    pub samples: Option<usize>,
    pub patch: Option<usize>,
    pub stride: Option<usize>,
    pub max_side: Option<u32>,
    pub plot_data: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

/// Parses `a:b:step` (inclusive of `b`) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, UsageError> {
    let bad = |why: &str| UsageError(format!("invalid grid {spec:?}: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("not a number"));
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step <= 0.0 {
                return Err(bad("step must be positive"));
            }
            if b < a {
                return Err(bad("end is below start"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            if n > 10_000 {
                return Err(bad("too many points"));
            }
            // Rounded so that 0.05:0.15:0.05 yields 0.1, not 0.1000000000000001.
            (0..n)
                .map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        [_] => spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad("expected a:b:step or a comma-separated list")),
    };
    if values.is_empty() {
        return Err(bad("no points"));
    }
    Ok(values)
}
