//! Small numeric helpers shared across modules.

/// Trapezoidal integral of `values` sampled on `grid`.
///
/// The grid does not have to be uniform. Panics if the slices differ in
/// length; callers construct both from the same grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    assert_eq!(grid.len(), values.len(), "grid/values length mismatch");
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += (grid[i] - grid[i - 1]) * (values[i] + values[i - 1]) * 0.5;
    }
    acc
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divisor `n`).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    var.sqrt()
}

/// Quantile with linear interpolation between order statistics, `q` in [0, 1].
///
/// This is the common "type 7" rule: the quantile sits at fractional rank
/// `q * (n - 1)` of the sorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of [0,1]");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
