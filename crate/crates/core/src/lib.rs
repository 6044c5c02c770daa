//! Local feature importance for tabular binary classifiers, scored through
//! counterfactual importance distributions.
//!
//! The pipeline, end to end: generate a set of counterfactuals that flip the
//! classifier's decision on an instance and a same-size set that does not
//! ([`counterfactual`]), estimate per-feature densities of both sets with a
//! kernel density estimator ([`density`]), and score each feature by an
//! overlap-based distance between its two densities ([`metric`]). The
//! [`cid`] module wires those stages together; [`evaluation`] measures how
//! faithful the resulting explanations are and how much two explainers agree.
//!
//! Models are anything implementing [`model::Classifier`] — a built-in
//! logistic regression or an external process speaking a line-delimited JSON
//! protocol ([`model::ExternalModel`]).

pub mod cid;
pub mod counterfactual;
pub mod dataset;
pub mod density;
pub mod evaluation;
pub mod metric;
pub mod model;
pub mod numeric;

pub use cid::{explain, rank, CidConfig, ImportanceVector};
pub use counterfactual::{CfConfig, CfMethod, CounterfactualSets};
pub use dataset::{load_csv, split, DatasetTable, FeatureSpec};
pub use density::{DensityEstimate, KernelKind};
pub use metric::{dissimilarity_grid, dissimilarity_step, DissimilarityResult, StepFunction};
pub use model::{Classifier, LogisticModel};
