//! Overlap-based dissimilarity between two densities.
//!
//! For densities `p` and `q`, the overlap is
//!
//! ```text
//! o(p, q) = ∫ min(p, q) over supp(p) ∩ supp(q)
//!           ---------------------------------
//!           ∫ max(p, q) over supp(p) ∪ supp(q)
//! ```
//!
//! and the dissimilarity at order `k ≥ 1` is `d_k(p, q) = k − o(p, q)`, so
//! `d_k` lives in `[k − 1, k]`. `d_1` is a proper metric on densities;
//! higher `k` shifts every value up by a constant, which penalizes chains of
//! comparisons while preserving rankings.
//!
//! Two evaluators are provided: an exact one over piecewise-constant
//! [`StepFunction`]s (integration over merged breakpoints, no quadrature
//! error) and a grid one over [`DensityEstimate`]s sharing a grid, which
//! integrates with the trapezoid rule and treats points below the support
//! threshold as zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::DensityEstimate;
use crate::numeric;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dissimilarity order k must be finite and >= 1, got {0}")]
    InvalidK(f64),
    #[error("grids differ at index {index}: {a} vs {b}")]
    GridMismatch { index: usize, a: f64, b: f64 },
    #[error("grids differ in length: {a} vs {b}")]
    GridLength { a: usize, b: usize },
    #[error("both densities are numerically zero everywhere on the grid")]
    ZeroDenominator,
    #[error("invalid step function: {0}")]
    BadStepFunction(String),
}

/// A nonnegative piecewise-constant function with bounded support.
///
/// `heights[j]` is the value on `[breakpoints[j], breakpoints[j+1])`; the
/// function is zero outside `[breakpoints[0], breakpoints[last])`. At least
/// one height must be positive, so the function is never identically zero
/// and integrals against it are well defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self, MetricError> {
        if breakpoints.len() != heights.len() + 1 {
            return Err(MetricError::BadStepFunction(format!(
                "{} breakpoints need {} heights, got {}",
                breakpoints.len(),
                breakpoints.len().saturating_sub(1),
                heights.len()
            )));
        }
        if heights.is_empty() {
            return Err(MetricError::BadStepFunction("no pieces".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(MetricError::BadStepFunction("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MetricError::BadStepFunction(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if heights.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(MetricError::BadStepFunction(
                "heights must be finite and nonnegative".into(),
            ));
        }
        if heights.iter().all(|&h| h == 0.0) {
            return Err(MetricError::BadStepFunction(
                "at least one height must be positive".into(),
            ));
        }
        Ok(StepFunction {
            breakpoints,
            heights,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Value at `x` (zero outside the breakpoint span).
    pub fn value_at(&self, x: f64) -> f64 {
        if x < self.breakpoints[0] || x >= *self.breakpoints.last().unwrap() {
            return 0.0;
        }
        // index of the piece containing x: last breakpoint <= x
        let idx = self.breakpoints.partition_point(|&b| b <= x) - 1;
        self.heights[idx]
    }

    /// Exact integral of the function over the real line.
    pub fn integral(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .zip(&self.heights)
            .map(|(w, h)| (w[1] - w[0]) * h)
            .sum()
    }
}

/// The pieces of an overlap computation, kept for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissimilarityResult {
    /// `∫ min / ∫ max`, in `[0, 1]`.
    pub overlap: f64,
    /// `k − overlap`.
    pub d_value: f64,
    pub k: f64,
    /// Integral of the pointwise minimum over the support intersection.
    pub numerator: f64,
    /// Integral of the pointwise maximum over the support union.
    pub denominator: f64,
}

fn check_k(k: f64) -> Result<(), MetricError> {
    if !k.is_finite() || k < 1.0 {
        return Err(MetricError::InvalidK(k));
    }
    Ok(())
}

/// Exact dissimilarity between two step functions.
///
/// Integrates min and max piecewise over the merged breakpoints, so the
/// result carries no quadrature error — this is the reference the grid
/// evaluator is tested against.
pub fn dissimilarity_step(
    p: &StepFunction,
    q: &StepFunction,
    k: f64,
) -> Result<DissimilarityResult, MetricError> {
    check_k(k)?;
    let mut cuts: Vec<f64> = p
        .breakpoints
        .iter()
        .chain(q.breakpoints.iter())
        .cloned()
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    cuts.dedup();

    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let vp = p.value_at(mid);
        let vq = q.value_at(mid);
        let len = hi - lo;
        // min is zero unless both supports cover the piece; max covers the
        // union automatically since it is zero only where both are zero.
        numerator += vp.min(vq) * len;
        denominator += vp.max(vq) * len;
    }
    // A valid StepFunction has positive integral, so the union integral is
    // positive too.
    debug_assert!(denominator > 0.0);
    let overlap = numerator / denominator;
    Ok(DissimilarityResult {
        overlap,
        d_value: k - overlap,
        k,
        numerator,
        denominator,
    })
}

/// Grid dissimilarity between two density estimates on the same grid.
///
/// Points outside a density's support mask contribute zero to its side of
/// the min/max; integration is trapezoidal over the shared grid. Grids must
/// match to within 1e-12 per coordinate.
pub fn dissimilarity_grid(
    p: &DensityEstimate,
    q: &DensityEstimate,
    k: f64,
) -> Result<DissimilarityResult, MetricError> {
    check_k(k)?;
    if p.grid.len() != q.grid.len() {
        return Err(MetricError::GridLength {
            a: p.grid.len(),
            b: q.grid.len(),
        });
    }
    for (i, (&a, &b)) in p.grid.iter().zip(&q.grid).enumerate() {
        if (a - b).abs() > 1e-12 {
            return Err(MetricError::GridMismatch { index: i, a, b });
        }
    }

    let n = p.grid.len();
    let mut min_vals = vec![0.0; n];
    let mut max_vals = vec![0.0; n];
    for i in 0..n {
        let in_p = p.support_mask[i];
        let in_q = q.support_mask[i];
        if in_p && in_q {
            min_vals[i] = p.values[i].min(q.values[i]);
        }
        if in_p || in_q {
            max_vals[i] = p.values[i].max(q.values[i]);
        }
    }
    let numerator = numeric::trapezoid(&p.grid, &min_vals);
    let denominator = numeric::trapezoid(&p.grid, &max_vals);
    if denominator <= 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    let overlap = numerator / denominator;
    Ok(DissimilarityResult {
        overlap,
        d_value: k - overlap,
        k,
        numerator,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{kde_evaluate, KernelKind};

    fn uniform(a: f64, b: f64) -> StepFunction {
        StepFunction::new(vec![a, b], vec![1.0 / (b - a)]).unwrap()
    }

    #[test]
    fn identical_functions_have_zero_distance() {
        let p = uniform(0.0, 2.0);
        let r = dissimilarity_step(&p, &p, 1.0).unwrap();
        assert_eq!(r.overlap, 1.0);
        assert_eq!(r.d_value, 0.0);
    }

    #[test]
    fn disjoint_supports_have_distance_one() {
        let p = uniform(0.0, 1.0);
        let q = uniform(1.0, 2.0);
        let r = dissimilarity_step(&p, &q, 1.0).unwrap();
        assert_eq!(r.overlap, 0.0);
        assert_eq!(r.d_value, 1.0);
    }

    #[test]
    fn shifted_uniforms_overlap_by_a_third() {
        // 1/2 on [0,2] vs 1/2 on [1,3]: min integrates to 1/2 over [1,2],
        // max to 3/2 over [0,3], so overlap = 1/3.
        let p = uniform(0.0, 2.0);
        let q = uniform(1.0, 3.0);
        let r = dissimilarity_step(&p, &q, 1.0).unwrap();
        assert!((r.overlap - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.d_value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mass_leaked_sideways_costs_two_twentyfirsts() {
        // p is uniform on [0,2]; q keeps 19/20 of that mass in place and
        // spreads the rest thinly over (2,5]. The min integrates to 19/20,
        // the max to 21/20, so d_1 = 1 - 19/21 = 2/21.
        let p = StepFunction::new(vec![0.0, 2.0], vec![0.5]).unwrap();
        let q = StepFunction::new(vec![0.0, 2.0, 5.0], vec![19.0 / 40.0, 1.0 / 60.0]).unwrap();
        let r = dissimilarity_step(&p, &q, 1.0).unwrap();
        assert!((r.numerator - 0.95).abs() < 1e-15);
        assert!((r.denominator - 1.05).abs() < 1e-15);
        assert!((r.overlap - 19.0 / 21.0).abs() < 1e-15);
        assert!((r.d_value - 2.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn step_function_value_lookup() {
        let f = StepFunction::new(vec![0.0, 1.0, 3.0], vec![2.0, 0.5]).unwrap();
        assert_eq!(f.value_at(-0.1), 0.0);
        assert_eq!(f.value_at(0.0), 2.0);
        assert_eq!(f.value_at(0.999), 2.0);
        assert_eq!(f.value_at(1.0), 0.5);
        assert_eq!(f.value_at(3.0), 0.0);
        assert!((f.integral() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_step_functions_are_rejected() {
        assert!(StepFunction::new(vec![0.0, 1.0], vec![]).is_err());
        assert!(StepFunction::new(vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0], vec![-1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(StepFunction::new(vec![0.0, f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn k_below_one_is_rejected() {
        let p = uniform(0.0, 1.0);
        assert!(matches!(
            dissimilarity_step(&p, &p, 0.5),
            Err(MetricError::InvalidK(_))
        ));
        assert!(matches!(
            dissimilarity_step(&p, &p, f64::NAN),
            Err(MetricError::InvalidK(_))
        ));
    }

    #[test]
    fn higher_k_shifts_the_value_by_a_constant() {
        let p = uniform(0.0, 2.0);
        let q = uniform(1.0, 3.0);
        let d1 = dissimilarity_step(&p, &q, 1.0).unwrap();
        let d3 = dissimilarity_step(&p, &q, 3.0).unwrap();
        assert!((d3.d_value - (d1.d_value + 2.0)).abs() < 1e-15);
        assert_eq!(d1.overlap, d3.overlap);
    }

    #[test]
    fn grid_version_matches_exact_result_on_smooth_densities() {
        // Two gaussian KDEs on a shared fine grid: identical inputs give
        // overlap 1 exactly; separated inputs give a value in (0, 1).
        let a = vec![0.0, 0.1, -0.1, 0.2];
        let b = vec![2.0, 2.1, 1.9, 2.2];
        let grid = crate::density::make_grid(&a, &b, 0.3, 0.3, 512).unwrap();
        let pa = kde_evaluate(&a, KernelKind::Gaussian, 0.3, &grid).unwrap();
        let pb = kde_evaluate(&b, KernelKind::Gaussian, 0.3, &grid).unwrap();
        let same = dissimilarity_grid(&pa, &pa, 1.0).unwrap();
        assert_eq!(same.d_value, 0.0);
        let diff = dissimilarity_grid(&pa, &pb, 1.0).unwrap();
        assert!(diff.d_value > 0.9 && diff.d_value <= 1.0, "{}", diff.d_value);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = vec![0.0, 0.5];
        let grid1 = crate::density::make_grid(&a, &a, 0.3, 0.3, 32).unwrap();
        let grid2: Vec<f64> = grid1.iter().map(|g| g + 1e-6).collect();
        let p = kde_evaluate(&a, KernelKind::Gaussian, 0.3, &grid1).unwrap();
        let q = kde_evaluate(&a, KernelKind::Gaussian, 0.3, &grid2).unwrap();
        assert!(matches!(
            dissimilarity_grid(&p, &q, 1.0),
            Err(MetricError::GridMismatch { .. })
        ));
        let short = kde_evaluate(&a, KernelKind::Gaussian, 0.3, &grid1[..16].to_vec()).unwrap();
        assert!(matches!(
            dissimilarity_grid(&p, &short, 1.0),
            Err(MetricError::GridLength { .. })
        ));
    }

    #[test]
    fn masked_out_densities_trigger_the_zero_denominator_error() {
        // Epanechnikov kernels have compact support; evaluating far from the
        // samples leaves every grid point below the support threshold.
        let grid: Vec<f64> = (0..32).map(|i| 100.0 + i as f64 * 0.1).collect();
        let p = kde_evaluate(&[0.0], KernelKind::Epanechnikov, 1.0, &grid).unwrap();
        let q = kde_evaluate(&[1.0], KernelKind::Epanechnikov, 1.0, &grid).unwrap();
        assert!(matches!(
            dissimilarity_grid(&p, &q, 1.0),
            Err(MetricError::ZeroDenominator)
        ));
    }

    #[test]
    fn worked_example_on_a_grid_is_close_to_exact() {
        // Sample the two step functions from the exact worked example onto a
        // fine grid and check the grid evaluator lands near 2/21.
        let p = StepFunction::new(vec![0.0, 2.0], vec![0.5]).unwrap();
        let q = StepFunction::new(vec![0.0, 2.0, 5.0], vec![19.0 / 40.0, 1.0 / 60.0]).unwrap();
        let n = 4096;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * 5.0 / (n - 1) as f64).collect();
        let dp = step_to_density(&p, &grid);
        let dq = step_to_density(&q, &grid);
        let r = dissimilarity_grid(&dp, &dq, 1.0).unwrap();
        assert!(
            (r.d_value - 2.0 / 21.0).abs() < 2e-3,
            "grid d_1 = {}",
            r.d_value
        );
    }

    /// Samples a step function onto a grid as a DensityEstimate for testing.
    fn step_to_density(f: &StepFunction, grid: &[f64]) -> DensityEstimate {
        let values: Vec<f64> = grid.iter().map(|&x| f.value_at(x)).collect();
        let support_mask = values
            .iter()
            .map(|&v| v > crate::density::SUPPORT_THRESHOLD)
            .collect();
        DensityEstimate {
            grid: grid.to_vec(),
            values,
            bandwidth: 1.0,
            kernel: KernelKind::Gaussian,
            support_mask,
        }
    }
}
