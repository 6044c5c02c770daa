//! Kernel density estimation on a shared evaluation grid.
//!
//! Every feature gets two density estimates (one per counterfactual set)
//! evaluated on one common grid so the overlap metric can compare them
//! pointwise. Bandwidths come from Silverman's rule with a floor for
//! degenerate samples; the grid extends a few bandwidths past the samples so
//! kernel tails are not cut off abruptly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric;

/// Density values at or below this threshold count as "outside the support".
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Default number of grid points.
pub const DEFAULT_N_GRID: usize = 512;

/// Default grid padding, in multiples of the larger bandwidth.
pub const DEFAULT_GRID_PAD: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples contain a non-finite value")]
    NonFiniteSample,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("grid padding must be positive and finite, got {0}")]
    BadPad(f64),
    #[error("grid must be strictly increasing")]
    NonIncreasingGrid,
}

/// Smoothing kernel. All three integrate to one over the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Epanechnikov,
    Exponential,
}

impl KernelKind {
    /// Kernel value at the scaled offset `u`.
    pub fn evaluate(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            KernelKind::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelKind::Exponential => 0.5 * (-u.abs()).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelKind::Gaussian),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            "exponential" => Ok(KernelKind::Exponential),
            other => Err(format!(
                "unknown kernel {other:?} (expected gaussian, epanechnikov, or exponential)"
            )),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A density evaluated on a grid.
///
/// `values[j]` is the kernel density at `grid[j]`; `support_mask[j]` marks
/// points where the density is meaningfully positive (above
/// [`SUPPORT_THRESHOLD`]). On an adequately fine and padded grid the
/// trapezoidal integral of `values` is 1 up to truncation and quadrature
/// error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub kernel: KernelKind,
    #[serde(skip)]
    pub support_mask: Vec<bool>,
}

impl DensityEstimate {
    /// Trapezoidal integral of the density over its grid.
    pub fn integral(&self) -> f64 {
        numeric::trapezoid(&self.grid, &self.values)
    }
}

/// Silverman's rule-of-thumb bandwidth with a degenerate-sample floor.
///
/// `h = 0.9 · min(std, IQR/1.34) · n^(-1/5)`, using the population standard
/// deviation and interpolated quartiles. When that comes out non-positive
/// (constant samples, or a collapsed interquartile range) the floor is
/// `max(1e-6, 1e-3 · feature_range)`, where `feature_range` is the width of
/// the feature's observed range from the dataset.
pub fn silverman_bandwidth(samples: &[f64], feature_range: f64) -> Result<f64, DensityError> {
    if samples.len() < 2 {
        return Err(DensityError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFiniteSample);
    }
    let std = numeric::population_std(samples);
    let iqr = numeric::quantile(samples, 0.75) - numeric::quantile(samples, 0.25);
    let spread = std.min(iqr / 1.34);
    let h = 0.9 * spread * (samples.len() as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        Ok(f64::max(1e-6, 1e-3 * feature_range.abs()))
    }
}

/// Uniform evaluation grid covering both sample sets, padded by
/// [`DEFAULT_GRID_PAD`] multiples of the larger bandwidth.
pub fn make_grid(
    samples_a: &[f64],
    samples_b: &[f64],
    h_a: f64,
    h_b: f64,
    n_grid: usize,
) -> Result<Vec<f64>, DensityError> {
    make_grid_padded(samples_a, samples_b, h_a, h_b, n_grid, DEFAULT_GRID_PAD)
}

/// [`make_grid`] with an explicit padding multiplier.
pub fn make_grid_padded(
    samples_a: &[f64],
    samples_b: &[f64],
    h_a: f64,
    h_b: f64,
    n_grid: usize,
    pad: f64,
) -> Result<Vec<f64>, DensityError> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(DensityError::TooFewSamples {
            needed: 1,
            got: 0,
        });
    }
    if n_grid < 2 {
        return Err(DensityError::GridTooSmall(n_grid));
    }
    if !(h_a > 0.0 && h_a.is_finite()) {
        return Err(DensityError::BadBandwidth(h_a));
    }
    if !(h_b > 0.0 && h_b.is_finite()) {
        return Err(DensityError::BadBandwidth(h_b));
    }
    if !(pad > 0.0 && pad.is_finite()) {
        return Err(DensityError::BadPad(pad));
    }
    let all = samples_a.iter().chain(samples_b.iter());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in all {
        if !v.is_finite() {
            return Err(DensityError::NonFiniteSample);
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let margin = pad * h_a.max(h_b);
    let lo = lo - margin;
    let hi = hi + margin;
    let step = (hi - lo) / (n_grid - 1) as f64;
    let mut grid: Vec<f64> = (0..n_grid).map(|j| lo + j as f64 * step).collect();
    grid[n_grid - 1] = hi; // pin the endpoint against rounding drift
    Ok(grid)
}

/// Evaluates the kernel density of `samples` on `grid`.
///
/// `values[j] = (1/(n·h)) · Σ_k K((grid[j] − samples[k]) / h)`.
pub fn kde_evaluate(
    samples: &[f64],
    kernel: KernelKind,
    bandwidth: f64,
    grid: &[f64],
) -> Result<DensityEstimate, DensityError> {
    if samples.is_empty() {
        return Err(DensityError::TooFewSamples { needed: 1, got: 0 });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFiniteSample);
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(DensityError::BadBandwidth(bandwidth));
    }
    if grid.len() < 2 {
        return Err(DensityError::GridTooSmall(grid.len()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DensityError::NonIncreasingGrid);
    }

    let scale = 1.0 / (samples.len() as f64 * bandwidth);
    let values: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let sum: f64 = samples
                .iter()
                .map(|&x| kernel.evaluate((g - x) / bandwidth))
                .sum();
            sum * scale
        })
        .collect();
    let support_mask = values.iter().map(|&v| v > SUPPORT_THRESHOLD).collect();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        values,
        bandwidth,
        kernel,
        support_mask,
    })
}
