//! The end-to-end importance pipeline.
//!
//! [`explain`] scores every feature of one instance: generate the two
//! counterfactual sets, estimate each feature's pair of densities on a
//! shared grid, and take the overlap dissimilarity between them. A feature
//! whose positive and negative densities separate cleanly scores near the
//! top of `[k − 1, k]`; one whose densities coincide scores at the bottom.
//! With `repeats > 1` the counterfactual generation is reseeded per repeat
//! (`seed ⊕ r`) and the reported scores are the per-repeat column means, so
//! sampling noise is visible in `per_repeat`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::{self, CfConfig, CfError, CounterfactualSets};
use crate::dataset::DatasetTable;
use crate::density::{self, DensityEstimate, DensityError, KernelKind};
use crate::metric::{self, MetricError};
use crate::model::{Classifier, ModelError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Counterfactual(#[from] CfError),
    #[error("feature {feature}: {source}")]
    Density {
        feature: usize,
        #[source]
        source: DensityError,
    },
    #[error("feature {feature}: {source}")]
    Metric {
        feature: usize,
        #[source]
        source: MetricError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instance has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    BadConfig(String),
    #[error("top_k {top_k} out of range for {d} features")]
    RankRange { top_k: usize, d: usize },
}

/// Pipeline configuration; the defaults mirror the CLI defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CidConfig {
    pub kernel: KernelKind,
    pub cf: CfConfig,
    /// Number of points in each feature's density grid.
    pub n_grid: usize,
    /// Grid padding in multiples of the larger bandwidth.
    pub grid_pad: f64,
    /// Dissimilarity order; scores live in [k−1, k].
    pub k: f64,
    /// Independent counterfactual redraws to average over.
    pub repeats: usize,
}

impl Default for CidConfig {
    fn default() -> Self {
        CidConfig {
            kernel: KernelKind::Gaussian,
            cf: CfConfig::default(),
            n_grid: density::DEFAULT_N_GRID,
            grid_pad: density::DEFAULT_GRID_PAD,
            k: 1.0,
            repeats: 1,
        }
    }
}

/// Per-feature importance scores for one explained instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub features: Vec<String>,
    /// Mean score per feature, each in `[k − 1, k]`.
    pub scores: Vec<f64>,
    /// One row of scores per repeat (a single row when `repeats` is 1).
    pub per_repeat: Vec<Vec<f64>>,
    pub config: CidConfig,
    /// Counterfactual seeds actually used, one per repeat.
    pub seeds: Vec<u64>,
}

/// Everything produced while explaining one instance, for auditing.
pub struct ExplainArtifacts {
    pub repeats: Vec<RepeatArtifacts>,
}

pub struct RepeatArtifacts {
    pub sets: CounterfactualSets,
    /// Per feature: the positive-set and negative-set density estimates.
    pub densities: Vec<(DensityEstimate, DensityEstimate)>,
}

/// Scores one instance. See the module docs for the pipeline shape.
pub fn explain(
    x: &[f64],
    model: &dyn Classifier,
    table: &DatasetTable,
    cfg: &CidConfig,
) -> Result<ImportanceVector, PipelineError> {
    explain_detailed(x, model, table, cfg).map(|(iv, _)| iv)
}

/// [`explain`], also returning the intermediate counterfactual sets and
/// density estimates.
pub fn explain_detailed(
    x: &[f64],
    model: &dyn Classifier,
    table: &DatasetTable,
    cfg: &CidConfig,
) -> Result<(ImportanceVector, ExplainArtifacts), PipelineError> {
    let d = table.d();
    if x.len() != d {
        return Err(PipelineError::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    if cfg.repeats == 0 {
        return Err(PipelineError::BadConfig("repeats must be at least 1".into()));
    }
    if !(cfg.k.is_finite() && cfg.k >= 1.0) {
        return Err(PipelineError::BadConfig(format!(
            "dissimilarity order k must be >= 1, got {}",
            cfg.k
        )));
    }

    let mut per_repeat: Vec<Vec<f64>> = Vec::with_capacity(cfg.repeats);
    let mut seeds = Vec::with_capacity(cfg.repeats);
    let mut artifacts = Vec::with_capacity(cfg.repeats);

    for r in 0..cfg.repeats {
        let mut cf_cfg = cfg.cf.clone();
        cf_cfg.seed = cfg.cf.seed ^ (r as u64);
        seeds.push(cf_cfg.seed);

        let sets = counterfactual::generate(x, model, table, &cf_cfg)?;
        let mut row = Vec::with_capacity(d);
        let mut densities = Vec::with_capacity(d);
        for i in 0..d {
            let pos = sets.positives_column(i);
            let neg = sets.negatives_column(i);
            let range = table.features[i].range();
            let at_feature = |source: DensityError| PipelineError::Density { feature: i, source };
            let h_pos = density::silverman_bandwidth(&pos, range).map_err(at_feature)?;
            let h_neg = density::silverman_bandwidth(&neg, range).map_err(at_feature)?;
            let grid =
                density::make_grid_padded(&pos, &neg, h_pos, h_neg, cfg.n_grid, cfg.grid_pad)
                    .map_err(at_feature)?;
            let p = density::kde_evaluate(&pos, cfg.kernel, h_pos, &grid).map_err(at_feature)?;
            let q = density::kde_evaluate(&neg, cfg.kernel, h_neg, &grid).map_err(at_feature)?;
            let result = metric::dissimilarity_grid(&p, &q, cfg.k)
                .map_err(|source| PipelineError::Metric { feature: i, source })?;
            row.push(result.d_value);
            densities.push((p, q));
        }
        per_repeat.push(row);
        artifacts.push(RepeatArtifacts { sets, densities });
    }

    let scores: Vec<f64> = (0..d)
        .map(|i| per_repeat.iter().map(|row| row[i]).sum::<f64>() / cfg.repeats as f64)
        .collect();

    Ok((
        ImportanceVector {
            features: table.feature_names(),
            scores,
            per_repeat,
            config: cfg.clone(),
            seeds,
        },
        ExplainArtifacts { repeats: artifacts },
    ))
}

/// Indices of the `top_k` highest scores, descending, ties broken by the
/// smaller feature index.
pub fn rank(iv: &ImportanceVector, top_k: usize) -> Result<Vec<usize>, PipelineError> {
    let d = iv.scores.len();
    if top_k == 0 || top_k > d {
        return Err(PipelineError::RankRange { top_k, d });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        iv.scores[b]
            .partial_cmp(&iv.scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order.truncate(top_k);
    Ok(order)
}
