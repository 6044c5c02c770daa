//! Counterfactual set generation.
//!
//! For an instance `x` the generators build two sets of the same size `m`:
//! the positives (candidates whose predicted label *differs* from the
//! instance's) and the negatives (candidates whose label matches). Two
//! strategies are provided: sparse uniform random search, and a genetic
//! search balancing target probability against proximity. Both draw feature
//! values only inside the dataset's observed `[min, max]` ranges, so a
//! constant feature never moves.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetTable;
use crate::model::{Classifier, ModelError};

/// Candidates are classified in batches of this size so external-model
/// round trips are amortized; results are identical to one-at-a-time
/// generation.
const CLASSIFY_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum CfError {
    #[error("{0}")]
    BadConfig(String),
    #[error("instance has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("instance contains a non-finite value")]
    NonFiniteInstance,
    #[error(
        "counterfactual budget exhausted after {attempts} attempts: \
         {positives} positive and {negatives} negative candidates found, \
         needed {needed} of each (deficient: {deficient})"
    )]
    BudgetExhausted {
        positives: usize,
        negatives: usize,
        needed: usize,
        attempts: usize,
        deficient: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfMethod {
    Random,
    Genetic,
}

impl std::fmt::Display for CfMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CfMethod::Random => "random",
            CfMethod::Genetic => "genetic",
        })
    }
}

impl std::str::FromStr for CfMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(CfMethod::Random),
            "genetic" => Ok(CfMethod::Genetic),
            other => Err(format!(
                "unknown counterfactual method {other:?} (expected random or genetic)"
            )),
        }
    }
}

/// Knobs for the genetic search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneticParams {
    /// Population size; must be able to hold both sets, so at least `2m`.
    pub population: usize,
    /// Number of evolution rounds after initialization.
    pub generations: usize,
    /// Weight of the proximity term in the fitness.
    pub lambda: f64,
}

impl GeneticParams {
    /// Defaults scaled to the requested set size.
    pub fn defaults_for(m: usize) -> Self {
        GeneticParams {
            population: 4 * m,
            generations: 8,
            lambda: 0.1,
        }
    }
}

/// Configuration for counterfactual generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfConfig {
    /// Set size: both the positive and negative set get exactly `m` rows.
    pub m: usize,
    pub method: CfMethod,
    /// Restrict perturbations to these feature indices (default: all).
    pub features_to_vary: Option<Vec<usize>>,
    /// Candidate budget for the random method.
    pub max_attempts: usize,
    /// How many features a single candidate perturbs. Defaults to
    /// `max(1, round(d/3))`, capped at the number of varied features.
    pub sparsity: Option<usize>,
    pub genetic: GeneticParams,
    pub seed: u64,
}

impl CfConfig {
    pub fn new(m: usize) -> Self {
        CfConfig {
            m,
            method: CfMethod::Random,
            features_to_vary: None,
            max_attempts: 200 * m,
            sparsity: None,
            genetic: GeneticParams::defaults_for(m),
            seed: 0,
        }
    }

    /// Checks the configuration against a `d`-feature dataset and returns
    /// the sorted indices of the features that may vary.
    pub fn validate(&self, d: usize) -> Result<Vec<usize>, CfError> {
        if self.m < 2 {
            return Err(CfError::BadConfig(format!(
                "set size m must be at least 2, got {}",
                self.m
            )));
        }
        if self.max_attempts == 0 {
            return Err(CfError::BadConfig("max_attempts must be positive".into()));
        }
        let varied: Vec<usize> = match &self.features_to_vary {
            None => (0..d).collect(),
            Some(list) => {
                if list.is_empty() {
                    return Err(CfError::BadConfig("features_to_vary is empty".into()));
                }
                let mut seen = vec![false; d];
                for &j in list {
                    if j >= d {
                        return Err(CfError::BadConfig(format!(
                            "features_to_vary index {j} out of range for {d} features"
                        )));
                    }
                    if seen[j] {
                        return Err(CfError::BadConfig(format!(
                            "features_to_vary lists index {j} twice"
                        )));
                    }
                    seen[j] = true;
                }
                list.clone()
            }
        };
        if let Some(s) = self.sparsity {
            if s == 0 || s > varied.len() {
                return Err(CfError::BadConfig(format!(
                    "sparsity {s} must lie in [1, {}] (the number of varied features)",
                    varied.len()
                )));
            }
        }
        if self.genetic.population < 2 {
            return Err(CfError::BadConfig("genetic population must be >= 2".into()));
        }
        if !(self.genetic.lambda >= 0.0 && self.genetic.lambda.is_finite()) {
            return Err(CfError::BadConfig(
                "genetic lambda must be finite and nonnegative".into(),
            ));
        }
        Ok(varied)
    }

    fn effective_sparsity(&self, d: usize, n_varied: usize) -> usize {
        match self.sparsity {
            Some(s) => s,
            None => {
                let default = ((d as f64) / 3.0).round().max(1.0) as usize;
                default.min(n_varied)
            }
        }
    }
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig::new(50)
    }
}

/// The two counterfactual sets generated for one instance.
///
/// `positives` flip the classifier's decision relative to
/// `original_label`; `negatives` keep it. Both have exactly `m` rows in
/// generation order, and every row stays inside the dataset's ranges on the
/// varied features (untouched features keep the instance's values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualSets {
    pub instance: Vec<f64>,
    pub original_label: u8,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub method_used: CfMethod,
    /// Candidates examined (random) or classifier evaluations (genetic).
    pub attempts_used: usize,
}

impl CounterfactualSets {
    pub fn m(&self) -> usize {
        self.positives.len()
    }

    pub fn positives_column(&self, j: usize) -> Vec<f64> {
        self.positives.iter().map(|r| r[j]).collect()
    }

    pub fn negatives_column(&self, j: usize) -> Vec<f64> {
        self.negatives.iter().map(|r| r[j]).collect()
    }
}

/// Clamps the instance into the table's ranges, warning when a coordinate
/// actually moves.
fn clamp_instance(x: &[f64], table: &DatasetTable) -> Result<Vec<f64>, CfError> {
    if x.len() != table.d() {
        return Err(CfError::Dimension {
            expected: table.d(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CfError::NonFiniteInstance);
    }
    let mut out = x.to_vec();
    for (j, spec) in table.features.iter().enumerate() {
        let clamped = out[j].clamp(spec.min, spec.max);
        if clamped != out[j] {
            log::warn!(
                "instance value {} for feature {:?} lies outside [{}, {}]; clamped",
                out[j],
                spec.name,
                spec.min,
                spec.max
            );
            out[j] = clamped;
        }
    }
    Ok(out)
}

fn draw_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Copies the instance and redraws `sparsity` randomly chosen varied
/// features uniformly inside their ranges.
fn sparse_candidate(
    x: &[f64],
    table: &DatasetTable,
    varied: &[usize],
    sparsity: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut cand = x.to_vec();
    let chosen = index_sample(rng, varied.len(), sparsity);
    for idx in chosen.iter() {
        let j = varied[idx];
        let spec = &table.features[j];
        cand[j] = draw_uniform(rng, spec.min, spec.max);
    }
    cand
}

/// Dispatches to the configured generation method.
pub fn generate(
    x: &[f64],
    model: &dyn Classifier,
    table: &DatasetTable,
    cfg: &CfConfig,
) -> Result<CounterfactualSets, CfError> {
    match cfg.method {
        CfMethod::Random => generate_random(x, model, table, cfg),
        CfMethod::Genetic => generate_genetic(x, model, table, cfg),
    }
}

/// Random search: sparse uniform candidates accepted into whichever set
/// their predicted label puts them, until both sets hold `m` rows.
///
/// Deterministic for a fixed seed. Errors when `max_attempts` candidates
/// have been examined and a set is still short, naming the deficient side.
pub fn generate_random(
    x: &[f64],
    model: &dyn Classifier,
    table: &DatasetTable,
    cfg: &CfConfig,
) -> Result<CounterfactualSets, CfError> {
    let varied = cfg.validate(table.d())?;
    let x = clamp_instance(x, table)?;
    let sparsity = cfg.effective_sparsity(table.d(), varied.len());
    let original_label = model.predict_label(&x)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.m;
    let mut positives: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut negatives: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut attempts = 0usize;

    'outer: while (positives.len() < m || negatives.len() < m) && attempts < cfg.max_attempts {
        let chunk = CLASSIFY_CHUNK.min(cfg.max_attempts - attempts);
        let candidates: Vec<Vec<f64>> = (0..chunk)
            .map(|_| sparse_candidate(&x, table, &varied, sparsity, &mut rng))
            .collect();
        let probs = model.predict_batch(&candidates)?;
        for (cand, p) in candidates.into_iter().zip(probs) {
            attempts += 1;
            let label: u8 = if p >= 0.5 { 1 } else { 0 };
            if label != original_label {
                if positives.len() < m {
                    positives.push(cand);
                }
            } else if negatives.len() < m {
                negatives.push(cand);
            }
            if positives.len() == m && negatives.len() == m {
                break 'outer;
            }
        }
    }

    if positives.len() < m || negatives.len() < m {
        return Err(CfError::BudgetExhausted {
            positives: positives.len(),
            negatives: negatives.len(),
            needed: m,
            attempts,
            deficient: if positives.len() < m {
                "positive"
            } else {
                "negative"
            },
        });
    }

    Ok(CounterfactualSets {
        instance: x,
        original_label,
        positives,
        negatives,
        method_used: CfMethod::Random,
        attempts_used: attempts,
    })
}

/// Mean absolute difference between two rows.
fn l1_per_dim(a: &[f64], b: &[f64]) -> f64 {
    let d = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / d
}

/// Genetic search: evolves a population toward the opposite-class
/// probability while `lambda` pulls candidates back toward the instance.
///
/// Fitness (lower is better) is `|p − p_target| + lambda · L1(x, cand)/d`
/// with `p_target` the opposite of the instance's label. Each round keeps
/// the better half, refills with uniform crossover over varied features,
/// and mutates each varied gene with probability 0.1 by redrawing it in
/// range. After the last round the population is classified; the best `m`
/// label-flipping members become the positives and the best `m`
/// non-flipping members the negatives. A population that cannot supply both
/// (for instance, one smaller than `2m`, or a constant classifier that
/// never flips) is a budget error.
pub fn generate_genetic(
    x: &[f64],
    model: &dyn Classifier,
    table: &DatasetTable,
    cfg: &CfConfig,
) -> Result<CounterfactualSets, CfError> {
    let varied = cfg.validate(table.d())?;
    let x = clamp_instance(x, table)?;
    let sparsity = cfg.effective_sparsity(table.d(), varied.len());
    let original_label = model.predict_label(&x)?;
    let p_target = if original_label == 1 { 0.0 } else { 1.0 };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop_size = cfg.genetic.population;
    let lambda = cfg.genetic.lambda;
    let mut population: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| sparse_candidate(&x, table, &varied, sparsity, &mut rng))
        .collect();
    let mut attempts = 0usize;

    let evaluate = |pop: &[Vec<f64>], attempts: &mut usize| -> Result<(Vec<f64>, Vec<f64>), CfError> {
        let probs = model.predict_batch(pop)?;
        *attempts += pop.len();
        let fitness: Vec<f64> = pop
            .iter()
            .zip(&probs)
            .map(|(cand, &p)| (p - p_target).abs() + lambda * l1_per_dim(&x, cand))
            .collect();
        Ok((probs, fitness))
    };

    let (mut probs, mut fitness) = evaluate(&population, &mut attempts)?;

    for _generation in 0..cfg.genetic.generations {
        // Truncation selection stratified by class: the final sets need both
        // flipping and non-flipping members, so each class keeps its fittest
        // half of the survivor quota instead of letting the (always fitter)
        // flipping class crowd the other one out.
        let mut flips: Vec<usize> = Vec::new();
        let mut keeps_cls: Vec<usize> = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            let label: u8 = if p >= 0.5 { 1 } else { 0 };
            if label != original_label {
                flips.push(i);
            } else {
                keeps_cls.push(i);
            }
        }
        let by_fit = |list: &mut Vec<usize>, fitness: &[f64]| {
            list.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).expect("finite fitness"));
        };
        by_fit(&mut flips, &fitness);
        by_fit(&mut keeps_cls, &fitness);
        let keep = (pop_size + 1) / 2;
        let quota = keep / 2;
        let mut chosen: Vec<usize> = Vec::with_capacity(keep);
        chosen.extend(flips.iter().take(quota));
        chosen.extend(keeps_cls.iter().take(quota));
        // pad from whichever class still has ranked members left
        let mut spare = flips
            .iter()
            .skip(quota)
            .chain(keeps_cls.iter().skip(quota))
            .cloned()
            .collect::<Vec<_>>();
        spare.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).expect("finite fitness"));
        let remaining = keep.saturating_sub(chosen.len());
        chosen.extend(spare.into_iter().take(remaining));
        let survivors: Vec<Vec<f64>> = chosen.iter().map(|&i| population[i].clone()).collect();

        let mut next = survivors.clone();
        while next.len() < pop_size {
            let pa = &survivors[rng.gen_range(0..survivors.len())];
            let pb = &survivors[rng.gen_range(0..survivors.len())];
            let mut child = x.clone();
            for &j in &varied {
                child[j] = if rng.gen_bool(0.5) { pa[j] } else { pb[j] };
                if rng.gen_bool(0.1) {
                    let spec = &table.features[j];
                    child[j] = draw_uniform(&mut rng, spec.min, spec.max);
                }
            }
            next.push(child);
        }
        population = next;
        let (p2, f2) = evaluate(&population, &mut attempts)?;
        probs = p2;
        fitness = f2;
    }

    // Final classification: best flipping candidates form the positives,
    // best non-flipping the negatives.
    let mut flips: Vec<usize> = Vec::new();
    let mut keeps: Vec<usize> = Vec::new();
    for (i, &p) in probs.iter().enumerate() {
        let label: u8 = if p >= 0.5 { 1 } else { 0 };
        if label != original_label {
            flips.push(i);
        } else {
            keeps.push(i);
        }
    }
    let by_fitness = |list: &mut Vec<usize>| {
        list.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).expect("finite fitness"));
    };
    by_fitness(&mut flips);
    by_fitness(&mut keeps);

    let m = cfg.m;
    if flips.len() < m || keeps.len() < m {
        return Err(CfError::BudgetExhausted {
            positives: flips.len().min(m),
            negatives: keeps.len().min(m),
            needed: m,
            attempts,
            deficient: if flips.len() < m { "positive" } else { "negative" },
        });
    }

    let positives: Vec<Vec<f64>> = flips[..m].iter().map(|&i| population[i].clone()).collect();
    let negatives: Vec<Vec<f64>> = keeps[..m].iter().map(|&i| population[i].clone()).collect();
    Ok(CounterfactualSets {
        instance: x,
        original_label,
        positives,
        negatives,
        method_used: CfMethod::Genetic,
        attempts_used: attempts,
    })
}

/// Per-feature variability baseline: the mean squared gap between the two
/// sets, pairing rows by index.
///
/// `baseline[i] = (1/m) Σ_j (positives[j][i] − negatives[j][i])²`. A crude
/// importance score that needs no density estimation, used as a sanity
/// reference for the full pipeline.
pub fn variability_baseline(sets: &CounterfactualSets) -> Vec<f64> {
    let m = sets.positives.len();
    assert_eq!(m, sets.negatives.len(), "sets must have equal cardinality");
    assert!(m > 0, "empty counterfactual sets");
    let d = sets.instance.len();
    let mut out = vec![0.0; d];
    for (pos, neg) in sets.positives.iter().zip(&sets.negatives) {
        for i in 0..d {
            let gap = pos[i] - neg[i];
            out[i] += gap * gap;
        }
    }
    for v in &mut out {
        *v /= m as f64;
    }
    out
}
