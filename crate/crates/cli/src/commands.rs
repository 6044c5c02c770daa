//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cid_core::cid::{self, CidConfig, ImportanceVector};
use cid_core::counterfactual::{CfConfig, CfMethod, CounterfactualSets, GeneticParams};
use cid_core::dataset::{load_csv, split, DatasetTable};
use cid_core::density::{DensityEstimate, KernelKind};
use cid_core::evaluation::{self, Explanation};
use cid_core::model::{accuracy, connect_external, train_logistic, Classifier, LogisticModel};
use serde::Serialize;

use crate::error::AppError;
use crate::io;
use crate::{AblateArgs, AgreeArgs, Cli, Command, EvaluateArgs, ExplainArgs, PipelineKnobs, TrainArgs};

pub fn run(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Train(args) => cmd_train(cli, args),
        Command::Explain(args) => cmd_explain(cli, args),
        Command::Evaluate(args) => cmd_evaluate(cli, args),
        Command::Agree(args) => cmd_agree(cli, args),
        Command::Ablate(args) => cmd_ablate(cli, args),
    }
}

// ---------------------------------------------------------------- plumbing

struct DataContext {
    train: DatasetTable,
    test: DatasetTable,
}

fn load_data(cli: &Cli) -> Result<DataContext, AppError> {
    let path = cli
        .data
        .as_deref()
        .ok_or_else(|| AppError::usage("--data is required for this command"))?;
    if !(cli.test_fraction > 0.0 && cli.test_fraction < 1.0) {
        return Err(AppError::usage(format!(
            "--test-fraction must lie strictly between 0 and 1, got {}",
            cli.test_fraction
        )));
    }
    let full = load_csv(path, &cli.label)?;
    let (train, test) = split(&full, cli.test_fraction, cli.seed)?;
    Ok(DataContext { train, test })
}

/// Where the classifier comes from; `build` makes a fresh handle, so every
/// worker can own its own external session.
enum ModelSpec {
    File(PathBuf),
    External(Vec<String>),
}

impl ModelSpec {
    fn parse(cli: &Cli) -> Result<ModelSpec, AppError> {
        let raw = cli
            .model
            .as_deref()
            .ok_or_else(|| AppError::usage("--model is required for this command"))?;
        if let Some(rest) = raw.strip_prefix("external:") {
            let parts: Vec<String> = rest.split_whitespace().map(String::from).collect();
            if parts.is_empty() {
                return Err(AppError::usage("external model command is empty"));
            }
            Ok(ModelSpec::External(parts))
        } else {
            Ok(ModelSpec::File(PathBuf::from(raw)))
        }
    }

    fn build(&self) -> Result<Box<dyn Classifier>, AppError> {
        match self {
            ModelSpec::File(path) => Ok(Box::new(LogisticModel::load(path)?)),
            ModelSpec::External(cmd) => Ok(Box::new(connect_external(cmd)?)),
        }
    }
}

/// Runs `work(i, model)` for every index on up to `jobs` workers. Each
/// worker owns a fresh model handle (external sessions are not shareable);
/// results keep index order and the lowest-index error wins, so the output
/// is scheduling-independent.
fn pooled<R, F>(
    n: usize,
    jobs: usize,
    spec: &ModelSpec,
    fallback: &dyn Classifier,
    work: F,
) -> Result<Vec<R>, AppError>
where
    R: Send,
    F: Fn(usize, &dyn Classifier) -> Result<R, AppError> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(|i| work(i, fallback)).collect();
    }
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, AppError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let build_errors: Mutex<Vec<AppError>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| {
                let model = match spec.build() {
                    Ok(m) => m,
                    Err(e) => {
                        build_errors.lock().unwrap().push(e);
                        return;
                    }
                };
                loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let result = work(i, model.as_ref());
                    slots.lock().unwrap()[i] = Some(result);
                }
            });
        }
    });

    let slots = slots.into_inner().unwrap();
    // an untouched slot means every worker failed to build its model
    if slots.iter().all(Option::is_none) {
        return Err(build_errors
            .into_inner()
            .unwrap()
            .into_iter()
            .next()
            .unwrap_or_else(|| AppError::data("worker pool stalled without an error")));
    }
    let mut out = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(r)) => out.push(r),
            Some(Err(e)) => return Err(e),
            None => return Err(AppError::data(format!("instance task {i} was never run"))),
        }
    }
    Ok(out)
}

fn parse_features(
    spec: Option<&str>,
    table: &DatasetTable,
) -> Result<Option<Vec<usize>>, AppError> {
    let Some(spec) = spec else { return Ok(None) };
    let names = table.feature_names();
    let mut indices = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Ok(j) = token.parse::<usize>() {
            indices.push(j); // bounds-checked by CfConfig::validate
        } else if let Some(j) = names.iter().position(|n| n == token) {
            indices.push(j);
        } else {
            return Err(AppError::usage(format!("unknown feature {token:?}")));
        }
    }
    if indices.is_empty() {
        return Err(AppError::usage("--features-to-vary names no features"));
    }
    Ok(Some(indices))
}

fn cf_config(
    knobs: &PipelineKnobs,
    method: CfMethod,
    seed: u64,
    table: &DatasetTable,
) -> Result<CfConfig, AppError> {
    let mut cfg = CfConfig::new(knobs.m);
    cfg.method = method;
    cfg.seed = seed;
    if let Some(s) = knobs.sparsity {
        cfg.sparsity = Some(s);
    }
    if let Some(a) = knobs.max_attempts {
        cfg.max_attempts = a;
    }
    cfg.features_to_vary = parse_features(knobs.features_to_vary.as_deref(), table)?;
    let mut genetic = GeneticParams::defaults_for(knobs.m);
    if let Some(p) = knobs.population {
        genetic.population = p;
    }
    if let Some(g) = knobs.generations {
        genetic.generations = g;
    }
    if let Some(l) = knobs.lambda {
        genetic.lambda = l;
    }
    cfg.genetic = genetic;
    cfg.validate(table.d())?;
    Ok(cfg)
}

/// Builds the full pipeline configuration, validating every flag before
/// any data or model work happens.
fn cid_config(
    knobs: &PipelineKnobs,
    kernel: KernelKind,
    method: CfMethod,
    seed: u64,
    table: &DatasetTable,
) -> Result<CidConfig, AppError> {
    if knobs.repeats == 0 {
        return Err(AppError::usage("--repeats must be at least 1"));
    }
    if !(knobs.k.is_finite() && knobs.k >= 1.0) {
        return Err(AppError::usage(format!(
            "--k must be at least 1, got {}",
            knobs.k
        )));
    }
    if knobs.grid_points < 2 {
        return Err(AppError::usage("--grid-points must be at least 2"));
    }
    if !(knobs.grid_pad.is_finite() && knobs.grid_pad > 0.0) {
        return Err(AppError::usage(format!(
            "--grid-pad must be positive, got {}",
            knobs.grid_pad
        )));
    }
    Ok(CidConfig {
        kernel,
        cf: cf_config(knobs, method, seed, table)?,
        n_grid: knobs.grid_points,
        grid_pad: knobs.grid_pad,
        k: knobs.k,
        repeats: knobs.repeats,
    })
}

/// Explains the given test rows, mixing each row index into the seed so
/// instances are independent but reproducible.
#[allow(clippy::too_many_arguments)]
fn explain_instances(
    cli: &Cli,
    ctx: &DataContext,
    spec: &ModelSpec,
    model: &dyn Classifier,
    ids: &[usize],
    kernel: KernelKind,
    method: CfMethod,
    knobs: &PipelineKnobs,
) -> Result<Vec<ImportanceVector>, AppError> {
    // fail fast on bad flags, before any worker spins up
    cid_config(knobs, kernel, method, cli.seed, &ctx.train)?;
    pooled(ids.len(), cli.jobs, spec, model, |i, worker_model| {
        let id = ids[i];
        let cfg = cid_config(knobs, kernel, method, cli.seed ^ id as u64, &ctx.train)?;
        Ok(cid::explain(
            &ctx.test.rows[id],
            worker_model,
            &ctx.train,
            &cfg,
        )?)
    })
}

fn selected_ids(spec: &Option<String>, n_test: usize) -> Result<Vec<usize>, AppError> {
    match spec {
        Some(s) => io::parse_instances(s, Some(n_test)),
        None => Ok((0..n_test).collect()),
    }
}

// ------------------------------------------------------------------ train

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), AppError> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| AppError::usage("train requires --out for the weight file"))?;
    let ctx = load_data(cli)?;
    let model = train_logistic(&ctx.train, args.epochs, args.lr, args.l2, cli.seed)?;
    let train_accuracy = accuracy(&model, &ctx.train)?;
    let test_accuracy = accuracy(&model, &ctx.test)?;
    model.save(out)?;

    #[derive(Serialize)]
    struct TrainSummary {
        model: String,
        n_train: usize,
        n_test: usize,
        train_accuracy: f64,
        test_accuracy: f64,
    }
    let text = io::to_json_text(&TrainSummary {
        model: out.display().to_string(),
        n_train: ctx.train.n_rows(),
        n_test: ctx.test.n_rows(),
        train_accuracy,
        test_accuracy,
    })?;
    io::emit(None, &text)
}

// ---------------------------------------------------------------- explain

fn cmd_explain(cli: &Cli, args: &ExplainArgs) -> Result<(), AppError> {
    let ctx = load_data(cli)?;
    let d = ctx.train.d();
    if let Some(k_top) = args.k_top {
        if k_top == 0 || k_top > d {
            return Err(AppError::usage(format!(
                "--k-top {k_top} out of range for {d} features"
            )));
        }
    }

    let trimmed = args.instance.trim();
    let (instance_id, x, seed) = if trimmed.starts_with('[') {
        let v: Vec<f64> = serde_json::from_str(trimmed)
            .map_err(|e| AppError::usage(format!("bad inline instance: {e}")))?;
        if v.len() != d {
            return Err(AppError::usage(format!(
                "inline instance has {} values, expected {d}",
                v.len()
            )));
        }
        if v.iter().any(|t| !t.is_finite()) {
            return Err(AppError::usage("inline instance contains non-finite values"));
        }
        (0usize, v, cli.seed)
    } else {
        let idx: usize = trimmed.parse().map_err(|_| {
            AppError::usage(format!(
                "bad --instance {trimmed:?}: expected a test row index or a JSON vector"
            ))
        })?;
        if idx >= ctx.test.n_rows() {
            return Err(AppError::usage(format!(
                "instance {idx} exceeds the {} test rows",
                ctx.test.n_rows()
            )));
        }
        (idx, ctx.test.rows[idx].clone(), cli.seed ^ idx as u64)
    };

    let cfg = cid_config(&args.knobs, args.kernel, args.cf_method, seed, &ctx.train)?;
    let spec = ModelSpec::parse(cli)?;
    let model = spec.build()?;
    let (iv, artifacts) = cid::explain_detailed(&x, model.as_ref(), &ctx.train, &cfg)?;

    if let Some(path) = &args.dump_cfs {
        #[derive(Serialize)]
        struct RepeatSets<'a> {
            seed: u64,
            sets: &'a CounterfactualSets,
        }
        #[derive(Serialize)]
        struct CfDump<'a> {
            instance_id: usize,
            repeats: Vec<RepeatSets<'a>>,
        }
        let dump = CfDump {
            instance_id,
            repeats: iv
                .seeds
                .iter()
                .zip(&artifacts.repeats)
                .map(|(seed, r)| RepeatSets {
                    seed: *seed,
                    sets: &r.sets,
                })
                .collect(),
        };
        io::emit(Some(path), &io::to_json_text(&dump)?)?;
    }

    if let Some(path) = &args.dump_densities {
        #[derive(Serialize)]
        struct FeatureDensities<'a> {
            feature: &'a str,
            positive: &'a DensityEstimate,
            negative: &'a DensityEstimate,
        }
        #[derive(Serialize)]
        struct RepeatDensities<'a> {
            seed: u64,
            features: Vec<FeatureDensities<'a>>,
        }
        #[derive(Serialize)]
        struct DensityDump<'a> {
            instance_id: usize,
            repeats: Vec<RepeatDensities<'a>>,
        }
        let dump = DensityDump {
            instance_id,
            repeats: iv
                .seeds
                .iter()
                .zip(&artifacts.repeats)
                .map(|(seed, r)| RepeatDensities {
                    seed: *seed,
                    features: r
                        .densities
                        .iter()
                        .enumerate()
                        .map(|(j, (positive, negative))| FeatureDensities {
                            feature: &iv.features[j],
                            positive,
                            negative,
                        })
                        .collect(),
                })
                .collect(),
        };
        io::emit(Some(path), &io::to_json_text(&dump)?)?;
    }

    let text = if cli.format == "csv" {
        io::explanations_to_csv(
            &iv.features,
            &[Explanation {
                instance_id,
                scores: iv.scores.clone(),
            }],
        )?
    } else {
        io::to_json_text(&iv)?
    };
    io::emit(cli.out.as_deref(), &text)?;

    if let Some(k_top) = args.k_top {
        let order = cid::rank(&iv, k_top)?;
        let listing: String = order
            .iter()
            .enumerate()
            .map(|(pos, &j)| format!("{} {} {}\n", pos + 1, iv.features[j], iv.scores[j]))
            .collect();
        io::emit(None, &listing)?;
    }
    Ok(())
}

// --------------------------------------------------------------- evaluate

#[derive(Serialize)]
struct InstanceMetricsRow {
    instance_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    comprehensiveness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sufficiency: Option<f64>,
}

#[derive(Serialize)]
struct EvaluateOutput {
    metric: String,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_comprehensiveness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_comprehensiveness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_sufficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_sufficiency: Option<f64>,
    per_instance: Vec<InstanceMetricsRow>,
}

/// Resolves `--explanations` into aligned (instance, scores) pairs.
fn resolve_explanations(
    cli: &Cli,
    args: &EvaluateArgs,
    ctx: &DataContext,
    spec: &ModelSpec,
    model: &dyn Classifier,
) -> Result<Vec<Explanation>, AppError> {
    let n_test = ctx.test.n_rows();
    if args.explanations == "cid" {
        let ids = selected_ids(&args.instances, n_test)?;
        let ivs = explain_instances(
            cli,
            ctx,
            spec,
            model,
            &ids,
            args.kernel,
            args.cf_method,
            &args.knobs,
        )?;
        return Ok(ids
            .iter()
            .zip(ivs)
            .map(|(id, iv)| Explanation {
                instance_id: *id,
                scores: iv.scores,
            })
            .collect());
    }

    let path = Path::new(&args.explanations);
    let file = io::read_explanations(path)?;
    if file.feature_names.len() != ctx.train.d() {
        return Err(AppError::data(format!(
            "{}: {} feature columns, data has {}",
            path.display(),
            file.feature_names.len(),
            ctx.train.d()
        )));
    }
    for row in &file.rows {
        if row.instance_id >= n_test {
            return Err(AppError::data(format!(
                "{}: instance {} exceeds the {n_test} test rows",
                path.display(),
                row.instance_id
            )));
        }
    }
    match &args.instances {
        None => Ok(file.rows),
        Some(sel) => {
            let wanted = io::parse_instances(sel, Some(n_test))?;
            let mut chosen = Vec::with_capacity(wanted.len());
            for id in wanted {
                match file.rows.iter().find(|r| r.instance_id == id) {
                    Some(r) => chosen.push(r.clone()),
                    None => {
                        return Err(AppError::data(format!(
                            "no explanation for instance {id} in {}",
                            path.display()
                        )))
                    }
                }
            }
            Ok(chosen)
        }
    }
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), AppError> {
    let ctx = load_data(cli)?;
    let spec = ModelSpec::parse(cli)?;
    let model = spec.build()?;
    let want_comp = args.metric != "suff";
    let want_suff = args.metric != "comp";

    let explanations = resolve_explanations(cli, args, &ctx, &spec, model.as_ref())?;
    let means = ctx.train.means();

    struct Curves {
        mask: Option<Vec<f64>>,
        keep: Option<Vec<f64>>,
    }
    let curves: Vec<Curves> = pooled(
        explanations.len(),
        cli.jobs,
        &spec,
        model.as_ref(),
        |i, worker_model| {
            let e = &explanations[i];
            let x = &ctx.test.rows[e.instance_id];
            let mask = want_comp
                .then(|| evaluation::occlusion_curve(x, &e.scores, &means, worker_model, false))
                .transpose()?;
            let keep = want_suff
                .then(|| evaluation::occlusion_curve(x, &e.scores, &means, worker_model, true))
                .transpose()?;
            Ok(Curves { mask, keep })
        },
    )?;

    if let Some(path) = &args.dump_trajectory {
        let header: Vec<String> = ["instance_id", "l", "masked_confidence", "kept_confidence"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut records = Vec::new();
        for (e, c) in explanations.iter().zip(&curves) {
            let d = e.scores.len();
            for l in 0..=d {
                records.push(vec![
                    e.instance_id.to_string(),
                    l.to_string(),
                    c.mask.as_ref().map_or(String::new(), |m| format!("{}", m[l])),
                    c.keep.as_ref().map_or(String::new(), |k| format!("{}", k[l])),
                ]);
            }
        }
        io::emit(Some(path), &io::csv_text(&header, &records)?)?;
    }

    let rows: Vec<InstanceMetricsRow> = explanations
        .iter()
        .zip(&curves)
        .map(|(e, c)| InstanceMetricsRow {
            instance_id: e.instance_id,
            comprehensiveness: c
                .mask
                .as_ref()
                .map(|m| evaluation::comprehensiveness_from_curve(m)),
            sufficiency: c
                .keep
                .as_ref()
                .map(|k| evaluation::sufficiency_from_curve(k)),
        })
        .collect();

    let aggregate_of = |pick: &dyn Fn(&InstanceMetricsRow) -> Option<f64>| {
        let values: Vec<f64> = rows.iter().filter_map(pick).collect();
        if values.is_empty() {
            Ok::<_, AppError>((None, None))
        } else {
            let (mean, ci) = evaluation::aggregate(&values)?;
            Ok((Some(mean), Some(ci)))
        }
    };
    let (mean_comprehensiveness, ci_comprehensiveness) =
        aggregate_of(&|r| r.comprehensiveness)?;
    let (mean_sufficiency, ci_sufficiency) = aggregate_of(&|r| r.sufficiency)?;

    let output = EvaluateOutput {
        metric: args.metric.clone(),
        n: rows.len(),
        mean_comprehensiveness,
        ci_comprehensiveness,
        mean_sufficiency,
        ci_sufficiency,
        per_instance: rows,
    };

    let text = if cli.format == "csv" {
        let header: Vec<String> = ["instance_id", "comprehensiveness", "sufficiency"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let records: Vec<Vec<String>> = output
            .per_instance
            .iter()
            .map(|r| {
                vec![
                    r.instance_id.to_string(),
                    r.comprehensiveness.map_or(String::new(), |v| format!("{v}")),
                    r.sufficiency.map_or(String::new(), |v| format!("{v}")),
                ]
            })
            .collect();
        io::csv_text(&header, &records)?
    } else {
        io::to_json_text(&output)?
    };
    io::emit(cli.out.as_deref(), &text)
}

// ------------------------------------------------------------------ agree

#[derive(Serialize)]
struct AgreeRow {
    instance_id: usize,
    agreement: f64,
}

#[derive(Serialize)]
struct AgreeOutput {
    k_top: usize,
    n: usize,
    mean_agreement: f64,
    ci_agreement: f64,
    per_instance: Vec<AgreeRow>,
}

fn cmd_agree(cli: &Cli, args: &AgreeArgs) -> Result<(), AppError> {
    if args.k_top == 0 {
        return Err(AppError::usage("--k-top must be at least 1"));
    }
    let a_is_cid = args.a == "cid";
    let b_is_cid = args.b == "cid";

    // (aligned score rows for a and b, feature count)
    let (rows_a, rows_b, d): (Vec<Explanation>, Vec<Explanation>, usize) =
        if !a_is_cid && !b_is_cid {
            let fa = io::read_explanations(Path::new(&args.a))?;
            let fb = io::read_explanations(Path::new(&args.b))?;
            if fa.feature_names.len() != fb.feature_names.len() {
                return Err(AppError::data(format!(
                    "{} has {} feature columns, {} has {}",
                    args.a,
                    fa.feature_names.len(),
                    args.b,
                    fb.feature_names.len()
                )));
            }
            let d = fa.feature_names.len();
            let (mut rows_a, mut rows_b) = (fa.rows, fb.rows);
            if let Some(sel) = &args.instances {
                let wanted = io::parse_instances(sel, None)?;
                rows_a = select_rows(rows_a, &wanted, &args.a)?;
                rows_b = select_rows(rows_b, &wanted, &args.b)?;
            } else {
                rows_a.sort_by_key(|r| r.instance_id);
                rows_b.sort_by_key(|r| r.instance_id);
                let ids_a: Vec<usize> = rows_a.iter().map(|r| r.instance_id).collect();
                let ids_b: Vec<usize> = rows_b.iter().map(|r| r.instance_id).collect();
                if ids_a != ids_b {
                    let stray = ids_a
                        .iter()
                        .find(|i| !ids_b.contains(i))
                        .or_else(|| ids_b.iter().find(|i| !ids_a.contains(i)))
                        .expect("id sets differ");
                    return Err(AppError::data(format!(
                        "instance sets disagree between {} and {}: instance {stray} is missing from one side",
                        args.a, args.b
                    )));
                }
            }
            (rows_a, rows_b, d)
        } else {
            let ctx = load_data(cli)?;
            let spec = ModelSpec::parse(cli)?;
            let model = spec.build()?;
            let d = ctx.train.d();
            let n_test = ctx.test.n_rows();

            let file_rows = |source: &str| -> Result<Option<Vec<Explanation>>, AppError> {
                if source == "cid" {
                    return Ok(None);
                }
                let file = io::read_explanations(Path::new(source))?;
                if file.feature_names.len() != d {
                    return Err(AppError::data(format!(
                        "{source}: {} feature columns, data has {d}",
                        file.feature_names.len()
                    )));
                }
                let mut rows = file.rows;
                for row in &rows {
                    if row.instance_id >= n_test {
                        return Err(AppError::data(format!(
                            "{source}: instance {} exceeds the {n_test} test rows",
                            row.instance_id
                        )));
                    }
                }
                rows.sort_by_key(|r| r.instance_id);
                Ok(Some(rows))
            };

            let fa = file_rows(&args.a)?;
            let fb = file_rows(&args.b)?;
            // the id list comes from the file side when there is one
            let ids: Vec<usize> = match (&fa, &fb) {
                (Some(rows), _) | (_, Some(rows)) => {
                    let ids: Vec<usize> = rows.iter().map(|r| r.instance_id).collect();
                    match &args.instances {
                        Some(sel) => io::parse_instances(sel, Some(n_test))?,
                        None => ids,
                    }
                }
                (None, None) => selected_ids(&args.instances, n_test)?,
            };

            let mut cid_rows: Option<Vec<Explanation>> = None;
            let mut cid_for = |_side: &str| -> Result<Vec<Explanation>, AppError> {
                if let Some(rows) = &cid_rows {
                    return Ok(rows.clone());
                }
                let ivs = explain_instances(
                    cli,
                    &ctx,
                    &spec,
                    model.as_ref(),
                    &ids,
                    args.kernel,
                    args.cf_method,
                    &args.knobs,
                )?;
                let rows: Vec<Explanation> = ids
                    .iter()
                    .zip(ivs)
                    .map(|(id, iv)| Explanation {
                        instance_id: *id,
                        scores: iv.scores,
                    })
                    .collect();
                cid_rows = Some(rows.clone());
                Ok(rows)
            };

            let rows_a = match fa {
                Some(rows) => select_rows(rows, &ids, &args.a)?,
                None => cid_for("a")?,
            };
            let rows_b = match fb {
                Some(rows) => select_rows(rows, &ids, &args.b)?,
                None => cid_for("b")?,
            };
            (rows_a, rows_b, d)
        };

    if args.k_top > d {
        return Err(AppError::usage(format!(
            "--k-top {} out of range for {d} features",
            args.k_top
        )));
    }

    let mut per_instance = Vec::with_capacity(rows_a.len());
    for (ra, rb) in rows_a.iter().zip(&rows_b) {
        let agreement = evaluation::feature_agreement(&ra.scores, &rb.scores, args.k_top)?;
        per_instance.push(AgreeRow {
            instance_id: ra.instance_id,
            agreement,
        });
    }
    let values: Vec<f64> = per_instance.iter().map(|r| r.agreement).collect();
    let (mean_agreement, ci_agreement) = evaluation::aggregate(&values)?;

    let output = AgreeOutput {
        k_top: args.k_top,
        n: per_instance.len(),
        mean_agreement,
        ci_agreement,
        per_instance,
    };

    let text = if cli.format == "csv" {
        let header: Vec<String> = ["instance_id", "agreement"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let records: Vec<Vec<String>> = output
            .per_instance
            .iter()
            .map(|r| vec![r.instance_id.to_string(), format!("{}", r.agreement)])
            .collect();
        io::csv_text(&header, &records)?
    } else {
        io::to_json_text(&output)?
    };
    io::emit(cli.out.as_deref(), &text)
}

/// Picks the listed instances out of a file's rows, erroring on absences.
fn select_rows(
    rows: Vec<Explanation>,
    ids: &[usize],
    source: &str,
) -> Result<Vec<Explanation>, AppError> {
    let mut chosen = Vec::with_capacity(ids.len());
    for &id in ids {
        match rows.iter().find(|r| r.instance_id == id) {
            Some(r) => chosen.push(r.clone()),
            None => {
                return Err(AppError::data(format!(
                    "no explanation for instance {id} in {source}"
                )))
            }
        }
    }
    Ok(chosen)
}

// ----------------------------------------------------------------- ablate

#[derive(Serialize)]
struct AblateSetting {
    kernel: KernelKind,
    cf_method: CfMethod,
    seconds: f64,
    mean_comprehensiveness: f64,
    ci_comprehensiveness: f64,
    mean_sufficiency: f64,
    ci_sufficiency: f64,
}

#[derive(Serialize)]
struct AblateOutput {
    k_top: usize,
    instances: Vec<usize>,
    settings: Vec<AblateSetting>,
    /// `agreement[i][j]` is the mean top-k feature agreement between
    /// settings i and j across all instances; the diagonal is 1.
    agreement: Vec<Vec<f64>>,
}

fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> Result<(), AppError> {
    let kernels: Vec<KernelKind> = parse_list(&args.kernels, "--kernels")?;
    let methods: Vec<CfMethod> = parse_list(&args.cf_methods, "--cf-methods")?;

    let ctx = load_data(cli)?;
    let spec = ModelSpec::parse(cli)?;
    let model = spec.build()?;
    let d = ctx.train.d();
    if args.k_top == 0 || args.k_top > d {
        return Err(AppError::usage(format!(
            "--k-top {} out of range for {d} features",
            args.k_top
        )));
    }
    let ids = selected_ids(&args.instances, ctx.test.n_rows())?;
    let means = ctx.train.means();

    struct SettingRun {
        kernel: KernelKind,
        cf_method: CfMethod,
        seconds: f64,
        scores: Vec<Vec<f64>>,
        comp: Vec<f64>,
        suff: Vec<f64>,
    }

    let mut runs: Vec<SettingRun> = Vec::with_capacity(kernels.len() * methods.len());
    for &kernel in &kernels {
        for &method in &methods {
            let started = Instant::now();
            let ivs = explain_instances(
                cli,
                &ctx,
                &spec,
                model.as_ref(),
                &ids,
                kernel,
                method,
                &args.knobs,
            )?;
            let seconds = started.elapsed().as_secs_f64();

            let scores: Vec<Vec<f64>> = ivs.into_iter().map(|iv| iv.scores).collect();
            let metrics: Vec<(f64, f64)> = pooled(
                ids.len(),
                cli.jobs,
                &spec,
                model.as_ref(),
                |i, worker_model| {
                    let x = &ctx.test.rows[ids[i]];
                    let mask =
                        evaluation::occlusion_curve(x, &scores[i], &means, worker_model, false)?;
                    let keep =
                        evaluation::occlusion_curve(x, &scores[i], &means, worker_model, true)?;
                    Ok((
                        evaluation::comprehensiveness_from_curve(&mask),
                        evaluation::sufficiency_from_curve(&keep),
                    ))
                },
            )?;
            runs.push(SettingRun {
                kernel,
                cf_method: method,
                seconds,
                scores,
                comp: metrics.iter().map(|m| m.0).collect(),
                suff: metrics.iter().map(|m| m.1).collect(),
            });
        }
    }

    let mut agreement = vec![vec![0.0; runs.len()]; runs.len()];
    for i in 0..runs.len() {
        for j in 0..runs.len() {
            let mut values = Vec::with_capacity(ids.len());
            for t in 0..ids.len() {
                values.push(evaluation::feature_agreement(
                    &runs[i].scores[t],
                    &runs[j].scores[t],
                    args.k_top,
                )?);
            }
            agreement[i][j] = evaluation::aggregate(&values)?.0;
        }
    }

    let mut settings = Vec::with_capacity(runs.len());
    for run in &runs {
        let (mean_comprehensiveness, ci_comprehensiveness) = evaluation::aggregate(&run.comp)?;
        let (mean_sufficiency, ci_sufficiency) = evaluation::aggregate(&run.suff)?;
        settings.push(AblateSetting {
            kernel: run.kernel,
            cf_method: run.cf_method,
            seconds: run.seconds,
            mean_comprehensiveness,
            ci_comprehensiveness,
            mean_sufficiency,
            ci_sufficiency,
        });
    }

    let output = AblateOutput {
        k_top: args.k_top,
        instances: ids,
        settings,
        agreement,
    };

    let text = if cli.format == "csv" {
        let header: Vec<String> = [
            "kernel",
            "cf_method",
            "seconds",
            "mean_comprehensiveness",
            "ci_comprehensiveness",
            "mean_sufficiency",
            "ci_sufficiency",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let records: Vec<Vec<String>> = output
            .settings
            .iter()
            .map(|s| {
                vec![
                    s.kernel.name().to_string(),
                    s.cf_method.to_string(),
                    format!("{}", s.seconds),
                    format!("{}", s.mean_comprehensiveness),
                    format!("{}", s.ci_comprehensiveness),
                    format!("{}", s.mean_sufficiency),
                    format!("{}", s.ci_sufficiency),
                ]
            })
            .collect();
        io::csv_text(&header, &records)?
    } else {
        io::to_json_text(&output)?
    };
    io::emit(cli.out.as_deref(), &text)
}

fn parse_list<T: std::str::FromStr<Err = String>>(
    spec: &str,
    flag: &str,
) -> Result<Vec<T>, AppError> {
    let mut out = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        out.push(
            token
                .parse::<T>()
                .map_err(|e| AppError::usage(format!("{flag}: {e}")))?,
        );
    }
    if out.is_empty() {
        return Err(AppError::usage(format!("{flag} lists no values")));
    }
    Ok(out)
}
