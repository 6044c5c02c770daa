//! Faithfulness metrics for feature-importance explanations.
//!
//! Both metrics occlude features by replacing them with training means and
//! watch the model's confidence in its original prediction:
//!
//! * **comprehensiveness** removes the top-ranked features — large drops
//!   mean the explanation found what the model relies on;
//! * **sufficiency** keeps only the top-ranked features — small drops mean
//!   they alone support the prediction.
//!
//! Each is averaged over every prefix length `l = 0..=d` of the ranking,
//! so the score rewards orderings that are right all the way down, not
//! just at the top.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Classifier, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("instance has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("scores have {got} entries, expected {expected}")]
    ScoreLength { expected: usize, got: usize },
    #[error("top-k {top_k} out of range for {d} features")]
    BadTopK { top_k: usize, d: usize },
    #[error("cannot aggregate zero values")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One explained instance as consumed by the evaluation commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub instance_id: usize,
    pub scores: Vec<f64>,
}

/// Feature indices ordered by |score| descending, ties to the smaller index.
pub fn order_by_magnitude(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

/// Confidence in the label the model assigns to the *unmasked* instance,
/// evaluated on each masked variant in one batch.
fn confidence_curve(
    x: &[f64],
    variants: Vec<Vec<f64>>,
    model: &dyn Classifier,
) -> Result<Vec<f64>, EvalError> {
    let label = model.predict_label(x)?;
    let probs = model.predict_batch(&variants)?;
    Ok(probs
        .into_iter()
        .map(|p| if label == 1 { p } else { 1.0 - p })
        .collect())
}

fn check_shapes(x: &[f64], scores: &[f64], means: &[f64]) -> Result<(), EvalError> {
    let d = x.len();
    if means.len() != d {
        return Err(EvalError::Dimension {
            expected: d,
            got: means.len(),
        });
    }
    if scores.len() != d {
        return Err(EvalError::ScoreLength {
            expected: d,
            got: scores.len(),
        });
    }
    Ok(())
}

/// Model confidence after masking the `l` top-ranked features, for every
/// `l` in `0..=d`. `keep_top` flips the direction: mask everything *but*
/// the top `l`.
pub fn occlusion_curve(
    x: &[f64],
    scores: &[f64],
    means: &[f64],
    model: &dyn Classifier,
    keep_top: bool,
) -> Result<Vec<f64>, EvalError> {
    check_shapes(x, scores, means)?;
    let d = x.len();
    let order = order_by_magnitude(scores);
    let variants: Vec<Vec<f64>> = (0..=d)
        .map(|l| {
            let mut z: Vec<f64> = if keep_top { means.to_vec() } else { x.to_vec() };
            for &j in &order[..l] {
                z[j] = if keep_top { x[j] } else { means[j] };
            }
            z
        })
        .collect();
    confidence_curve(x, variants, model)
}

/// Reduces a mask-top occlusion curve (`l = 0` masks nothing) to the
/// comprehensiveness score: the mean confidence drop over all prefixes.
pub fn comprehensiveness_from_curve(curve: &[f64]) -> f64 {
    let full = curve[0];
    curve.iter().map(|f| full - f).sum::<f64>() / curve.len() as f64
}

/// Reduces a keep-top occlusion curve (`l = d` keeps everything) to the
/// sufficiency score: the mean confidence still missing over all prefixes.
pub fn sufficiency_from_curve(curve: &[f64]) -> f64 {
    let full = curve[curve.len() - 1];
    curve.iter().map(|f| full - f).sum::<f64>() / curve.len() as f64
}

/// Mean confidence drop from erasing the top-`l` features, over all `l`.
pub fn comprehensiveness(
    x: &[f64],
    scores: &[f64],
    means: &[f64],
    model: &dyn Classifier,
) -> Result<f64, EvalError> {
    let curve = occlusion_curve(x, scores, means, model, false)?;
    Ok(comprehensiveness_from_curve(&curve))
}

/// Mean confidence drop when only the top-`l` features survive, over all `l`.
pub fn sufficiency(
    x: &[f64],
    scores: &[f64],
    means: &[f64],
    model: &dyn Classifier,
) -> Result<f64, EvalError> {
    let keep = occlusion_curve(x, scores, means, model, true)?;
    Ok(sufficiency_from_curve(&keep))
}

/// Fraction of shared features among the two top-`k` sets.
pub fn feature_agreement(a: &[f64], b: &[f64], top_k: usize) -> Result<f64, EvalError> {
    let d = a.len();
    if b.len() != d {
        return Err(EvalError::ScoreLength {
            expected: d,
            got: b.len(),
        });
    }
    if top_k == 0 || top_k > d {
        return Err(EvalError::BadTopK { top_k, d });
    }
    let ta = &order_by_magnitude(a)[..top_k];
    let tb = &order_by_magnitude(b)[..top_k];
    let shared = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(shared as f64 / top_k as f64)
}

/// Mean and a two-standard-error half-width (population std).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64), EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mean = crate::numeric::mean(values);
    let std = crate::numeric::population_std(values);
    Ok((mean, 2.0 * std / (values.len() as f64).sqrt()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: usize,
    pub comprehensiveness: f64,
    pub sufficiency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_instance: Vec<InstanceMetrics>,
    pub mean_comprehensiveness: f64,
    pub mean_sufficiency: f64,
    /// Two standard errors of the mean, per metric.
    pub ci_comprehensiveness: f64,
    pub ci_sufficiency: f64,
    pub n: usize,
}

/// Scores every (instance, explanation) pair and aggregates.
pub fn build_report(
    instances: &[(usize, Vec<f64>)],
    explanations: &[Explanation],
    means: &[f64],
    model: &dyn Classifier,
) -> Result<EvaluationReport, EvalError> {
    if instances.len() != explanations.len() {
        return Err(EvalError::ScoreLength {
            expected: instances.len(),
            got: explanations.len(),
        });
    }
    if instances.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_instance = Vec::with_capacity(instances.len());
    for ((id, x), expl) in instances.iter().zip(explanations) {
        let comp = comprehensiveness(x, &expl.scores, means, model)?;
        let suff = sufficiency(x, &expl.scores, means, model)?;
        per_instance.push(InstanceMetrics {
            instance_id: *id,
            comprehensiveness: comp,
            sufficiency: suff,
        });
    }
    let comps: Vec<f64> = per_instance.iter().map(|m| m.comprehensiveness).collect();
    let suffs: Vec<f64> = per_instance.iter().map(|m| m.sufficiency).collect();
    let (mean_comp, ci_comp) = aggregate(&comps)?;
    let (mean_suff, ci_suff) = aggregate(&suffs)?;
    Ok(EvaluationReport {
        n: per_instance.len(),
        per_instance,
        mean_comprehensiveness: mean_comp,
        mean_sufficiency: mean_suff,
        ci_comprehensiveness: ci_comp,
        ci_sufficiency: ci_suff,
    })
}
