use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use riskpipe::corpus::{load_histories, load_labels, validate_dataset, write_labels_csv, UserHistory};
use riskpipe::embeddings::EmbeddingTable;
use riskpipe::labels::{c_to_a, d_to_b, d_to_c, Distribution4, LabelRecord, RiskClass};
use riskpipe::metrics::{
    classification_report, distribution_precision_at_k, early_report, erde, multioutput_regression_report,
    precision_at_k, regression_report, ClassificationReport, DecisionTrace, ErdeParams, Ranked,
};
use riskpipe::numerics::Matrix;
use riskpipe::pipeline::{build_training_set, stratified_split, SplitSpec, StratifyOn};
use riskpipe::regression::{
    distribution_matrix, fit_multi, grid_search, normalize_dist, Grid, GridConfig, GridResult,
    ModelDocument, MultiOutputConfig, RiskModel, SimpleRidgeModel,
};
use riskpipe::stream::{
    run_streaming_eval, serve_session, traces_to_jsonl, wire_client, DecisionPolicy, EmbeddingProvider,
    PipeProvider, SessionOptions, StreamClient, TableProvider,
};
use riskpipe::synth::{generate, SynthSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{EvalSplit, RunConfig, Task};
use crate::CliError;

pub const MANIFEST_FORMAT: &str = "riskpipe-manifest/1";

/// Ordered metric table; `None` renders as JSON null.
pub type Metrics = Vec<(String, Option<f64>)>;

fn metrics_json(m: &Metrics) -> Value {
    Value::Object(
        m.iter()
            .map(|(k, v)| (k.clone(), v.map_or(Value::Null, |x| json!(x))))
            .collect::<Map<_, _>>(),
    )
}

pub fn render_table(title: &str, m: &Metrics) -> String {
    let width = m.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (k, v) in m {
        let v = v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub subject_id: String,
    pub augmented: bool,
    pub n_messages_used: usize,
    /// Embedding-file round of the document; `None` for the full history.
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub validation_fraction: f64,
    pub stratify_on: StratifyOn,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub n_messages: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    pub training_index: Vec<TrainingRow>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&raw)
            .map_err(|e| CliError::Input(format!("bad manifest {}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Input(format!("unsupported manifest format {:?}", m.format)));
        }
        Ok(m)
    }
}

fn label_map(cfg: &RunConfig) -> Result<BTreeMap<String, LabelRecord>, CliError> {
    let labels = load_labels(&cfg.require_labels()?)?;
    Ok(labels.into_iter().map(|r| (r.subject_id.clone(), r)).collect())
}

pub struct SynthArgs {
    pub spec: SynthSpec,
    pub output_dir: PathBuf,
}

/// Writes `subjects/*.json`, `labels.csv` and `embeddings.jsonl`.
pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let data = generate(&args.spec);
    let subjects = args.output_dir.join("subjects");
    for h in &data.histories {
        write_output(&subjects.join(format!("{}.json", h.subject_id)), &h.to_json())?;
    }
    write_output(&args.output_dir.join("labels.csv"), &write_labels_csv(&data.labels))?;
    let mut buf = Vec::new();
    data.embeddings
        .write(&mut buf)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_output(
        &args.output_dir.join("embeddings.jsonl"),
        std::str::from_utf8(&buf).expect("JSON is UTF-8"),
    )
}

pub fn prepare(cfg: &RunConfig) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let histories = load_histories(cfg.require_data_dir()?)?;
    let labels = label_map(cfg)?;
    let rows = build_training_set(&histories, &labels, &cfg.separator)?;
    let report = validate_dataset(&histories, &labels.values().cloned().collect::<Vec<_>>());

    let matched: Vec<LabelRecord> = histories.iter().map(|h| labels[&h.subject_id].clone()).collect();
    let split = stratified_split(
        &matched,
        &SplitSpec {
            validation_fraction: cfg.validation_fraction,
            seed: cfg.seed,
            stratify_on: cfg.stratify_on,
        },
    )?;
    let mut warnings = split.warnings.clone();
    if !report.unmatched_labels.is_empty() {
        warnings.push(format!(
            "{} labelled subjects have no history and are ignored",
            report.unmatched_labels.len()
        ));
    }

    let train: BTreeSet<&str> = split.train_ids.iter().map(String::as_str).collect();
    let mut training_index: Vec<TrainingRow> = rows
        .iter()
        .filter(|(doc, _)| train.contains(doc.subject_id.as_str()))
        .map(|(doc, _)| TrainingRow {
            subject_id: doc.subject_id.clone(),
            augmented: doc.augmented,
            n_messages_used: doc.n_messages_used,
            round: doc.augmented.then_some(doc.n_messages_used),
        })
        .collect();
    training_index.sort_by(|a, b| (&a.subject_id, a.augmented).cmp(&(&b.subject_id, b.augmented)));

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        validation_fraction: cfg.validation_fraction,
        stratify_on: cfg.stratify_on,
        train_ids: split.train_ids,
        validation_ids: split.validation_ids,
        n_messages: histories.iter().map(|h| (h.subject_id.clone(), h.len())).collect(),
        warnings,
        training_index,
    };
    write_output(&cfg.manifest_file(), &pretty(&manifest))?;
    Ok(manifest)
}

fn full_vector<'a>(
    table: &'a EmbeddingTable,
    manifest: Option<&Manifest>,
    id: &str,
) -> Result<&'a [f64], CliError> {
    match table.get(id, None) {
        Some(v) => Ok(v),
        None => {
            let n = manifest.and_then(|m| m.n_messages.get(id)).copied().unwrap_or(0);
            Ok(table.full(id, n)?)
        }
    }
}

fn stack(rows: Vec<&[f64]>, dim: usize) -> Matrix {
    if rows.is_empty() {
        return Matrix::zeros(0, dim);
    }
    Matrix::from_rows(&rows).expect("embedding rows share the header dimension")
}

fn gold_for<'a>(
    labels: &'a BTreeMap<String, LabelRecord>,
    id: &str,
) -> Result<&'a LabelRecord, CliError> {
    labels
        .get(id)
        .ok_or_else(|| CliError::Input(format!("no label for subject {id}")))
}

pub struct TrainOutput {
    pub model: ModelDocument,
    pub validation: Option<Metrics>,
    pub baseline: Option<Metrics>,
    pub report: Value,
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest_file())?;
    let labels = label_map(cfg)?;
    let table = EmbeddingTable::load(cfg.require_embeddings()?)?;
    let dim = table.dimension();

    let mut train_rows = Vec::new();
    let mut train_gold = Vec::new();
    for row in manifest.training_index.iter().filter(|r| cfg.augment || !r.augmented) {
        let v = match row.round {
            None => full_vector(&table, Some(&manifest), &row.subject_id)?,
            Some(r) => table.round(&row.subject_id, r)?,
        };
        train_rows.push(v);
        train_gold.push(gold_for(&labels, &row.subject_id)?.d_dist);
    }
    if train_rows.is_empty() {
        return Err(CliError::Input("the manifest has no training rows".into()));
    }
    let train_x = stack(train_rows, dim);
    let mut val_rows = Vec::new();
    let mut val_gold = Vec::new();
    for id in &manifest.validation_ids {
        val_rows.push(full_vector(&table, Some(&manifest), id)?);
        val_gold.push(gold_for(&labels, id)?.d_dist);
    }
    let val_x = stack(val_rows, dim);

    let hash = cfg.hash();
    let (model, selected, grid, validation, baseline) = if cfg.task == Task::B {
        train_simple(cfg, &train_x, &train_gold, &val_x, &val_gold)?
    } else {
        train_multi(cfg, &train_x, &train_gold, &val_x, &val_gold)?
    };
    let doc = ModelDocument::new(model, hash.clone());
    write_output(&cfg.model_file(), &doc.to_json())?;

    let report = json!({
        "config_hash": hash,
        "task": cfg.task,
        "n_train_rows": train_x.rows(),
        "n_validation": val_x.rows(),
        "selected": selected,
        "pca_components": match &doc.model {
            RiskModel::Multi(m) => m.pca_components,
            RiskModel::Simple(m) => m.features.pca.as_ref().map(|p| p.n_components()),
        },
        "grid": grid,
        "validation": validation.as_ref().map(metrics_json),
        "baseline": baseline.as_ref().map(metrics_json),
    });
    write_output(&cfg.output_dir.join("train_report.json"), &pretty(&report))?;
    Ok(TrainOutput {
        model: doc,
        validation,
        baseline,
        report,
    })
}

type Trained = (RiskModel, GridConfig, Vec<GridResult>, Option<Metrics>, Option<Metrics>);

fn train_multi(
    cfg: &RunConfig,
    train_x: &Matrix,
    train_gold: &[Distribution4],
    val_x: &Matrix,
    val_gold: &[Distribution4],
) -> Result<Trained, CliError> {
    let train_y = distribution_matrix(train_gold);
    let grid = Grid {
        lambdas: cfg.lambda.clone(),
        pcas: vec![cfg.pca()],
        strategies: vec![cfg.strategy],
        order: RiskClass::CHAIN_ORDER,
        standardize: cfg.standardize,
    };
    let results = if val_x.rows() > 0 && cfg.lambda.len() > 1 {
        grid_search(train_x, &train_y, val_x, val_gold, &grid)
    } else {
        Vec::new()
    };
    let selected = match results.first() {
        Some(best) if best.score.is_some() => best.config,
        Some(best) => {
            return Err(CliError::Runtime(format!(
                "every configuration failed; first error: {}",
                best.error.clone().unwrap_or_default()
            )))
        }
        None => GridConfig {
            lambda: cfg.lambda[0],
            strategy: cfg.strategy,
            pca: cfg.pca(),
        },
    };
    let model = fit_multi(
        train_x,
        &train_y,
        &MultiOutputConfig {
            lambda: selected.lambda,
            strategy: selected.strategy,
            order: RiskClass::CHAIN_ORDER,
            pca: selected.pca,
            standardize: cfg.standardize,
        },
    )?;
    let model = RiskModel::Multi(model);
    let (validation, baseline) = if val_x.rows() > 0 {
        let pred: Vec<Distribution4> = model
            .score(val_x)?
            .into_iter()
            .map(|s| s.dist.expect("multi-output scores carry a distribution"))
            .collect();
        let means = train_y.column_means();
        let mean_dist = normalize_dist([means[0], means[1], means[2], means[3]]).dist;
        let base = vec![mean_dist; val_gold.len()];
        (
            Some(named(multioutput_regression_report(&pred, val_gold)?.to_named())),
            Some(named(multioutput_regression_report(&base, val_gold)?.to_named())),
        )
    } else {
        (None, None)
    };
    Ok((model, selected, results, validation, baseline))
}

/// Paper column order for the task-2d table.
fn named(map: BTreeMap<String, Option<f64>>) -> Metrics {
    let mut keys = vec!["rmse mean".to_string()];
    keys.extend(RiskClass::ALL.iter().map(|c| format!("rmse {}", c.short_name())));
    keys.push("r2 mean".to_string());
    keys.extend(RiskClass::ALL.iter().map(|c| format!("r2 {}", c.short_name())));
    keys.into_iter().map(|k| (k.clone(), map[&k])).collect()
}

fn train_simple(
    cfg: &RunConfig,
    train_x: &Matrix,
    train_gold: &[Distribution4],
    val_x: &Matrix,
    val_gold: &[Distribution4],
) -> Result<Trained, CliError> {
    let train_b: Vec<f64> = train_gold.iter().map(d_to_b).collect();
    let val_b: Vec<f64> = val_gold.iter().map(d_to_b).collect();
    let mut results = Vec::new();
    if val_x.rows() > 0 && cfg.lambda.len() > 1 {
        for &lambda in &cfg.lambda {
            let config = GridConfig {
                lambda,
                strategy: cfg.strategy,
                pca: cfg.pca(),
            };
            let outcome = SimpleRidgeModel::fit(train_x, &train_b, lambda, cfg.pca(), cfg.standardize)
                .and_then(|m| m.predict(val_x))
                .map_err(|e| e.to_string())
                .and_then(|p| regression_report(&p, &val_b).map_err(|e| e.to_string()));
            results.push(match outcome {
                Ok(r) => GridResult {
                    config,
                    score: Some(r.rmse),
                    error: None,
                },
                Err(e) => GridResult {
                    config,
                    score: None,
                    error: Some(e),
                },
            });
        }
        results.sort_by(|a, b| match (a.score, b.score) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (a, b) => b.is_some().cmp(&a.is_some()),
        });
    }
    let lambda = match results.first() {
        Some(best) if best.score.is_some() => best.config.lambda,
        Some(best) => {
            return Err(CliError::Runtime(format!(
                "every configuration failed; first error: {}",
                best.error.clone().unwrap_or_default()
            )))
        }
        None => cfg.lambda[0],
    };
    let model = SimpleRidgeModel::fit(train_x, &train_b, lambda, cfg.pca(), cfg.standardize)?;
    let selected = GridConfig {
        lambda,
        strategy: cfg.strategy,
        pca: cfg.pca(),
    };
    let (validation, baseline) = if val_x.rows() > 0 {
        let r = regression_report(&model.predict(val_x)?, &val_b)?;
        let mean = train_b.iter().sum::<f64>() / train_b.len() as f64;
        let base = regression_report(&vec![mean; val_b.len()], &val_b)?;
        (
            Some(vec![("RMSE".into(), Some(r.rmse)), ("r2".into(), r.r2)]),
            Some(vec![("RMSE".into(), Some(base.rmse)), ("r2".into(), base.r2)]),
        )
    } else {
        (None, None)
    };
    Ok((RiskModel::Simple(model), selected, results, validation, baseline))
}

fn load_model(cfg: &RunConfig) -> Result<ModelDocument, CliError> {
    let path = cfg.model_file();
    let raw = fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", path.display())))?;
    ModelDocument::from_json(&raw).map_err(|e| CliError::Input(format!("bad model {}: {e}", path.display())))
}

/// Subject ids for evaluation, sorted. `All` needs no manifest.
fn selected_ids(
    cfg: &RunConfig,
    manifest: Option<&Manifest>,
    candidates: impl IntoIterator<Item = String>,
) -> Result<Vec<String>, CliError> {
    let ids: Vec<String> = match (cfg.split, manifest) {
        (EvalSplit::All, _) => candidates.into_iter().collect(),
        (EvalSplit::Validation, Some(m)) => m.validation_ids.clone(),
        (EvalSplit::Train, Some(m)) => m.train_ids.clone(),
        (_, None) => {
            return Err(CliError::Input(format!(
                "split {:?} needs a manifest at {}",
                cfg.split,
                cfg.manifest_file().display()
            )))
        }
    };
    if ids.is_empty() {
        return Err(CliError::Input("no subjects selected for evaluation".into()));
    }
    let mut ids = ids;
    ids.sort();
    Ok(ids)
}

fn classification_metrics(r: &ClassificationReport) -> Metrics {
    vec![
        ("accuracy".into(), Some(r.accuracy)),
        ("macro_precision".into(), Some(r.macro_precision)),
        ("macro_recall".into(), Some(r.macro_recall)),
        ("macro_f1".into(), Some(r.macro_f1)),
    ]
}

/// p@k for the ranking tables; `None` when k exceeds the subject count.
fn p_at_k(ks: &[usize], f: impl Fn(usize) -> Result<f64, riskpipe::error::MetricsError>, n: usize) -> Result<Metrics, CliError> {
    ks.iter()
        .map(|&k| Ok((format!("p@{k}"), if k > n { None } else { Some(f(k)?) })))
        .collect()
}

pub struct EvalOutput {
    /// `(title, metrics)` per reported task.
    pub tables: Vec<(String, Metrics)>,
    pub report: Value,
}

pub fn evaluate(cfg: &RunConfig) -> Result<EvalOutput, CliError> {
    cfg.validate()?;
    let doc = load_model(cfg)?;
    let labels = label_map(cfg)?;
    let table = EmbeddingTable::load(cfg.require_embeddings()?)?;
    let manifest = match cfg.split {
        EvalSplit::All => Manifest::load(&cfg.manifest_file()).ok(),
        _ => Some(Manifest::load(&cfg.manifest_file())?),
    };
    let candidates: Vec<String> = labels
        .keys()
        .filter(|id| full_vector(&table, manifest.as_ref(), id).is_ok())
        .cloned()
        .collect();
    let ids = selected_ids(cfg, manifest.as_ref(), candidates)?;
    let rows = ids
        .iter()
        .map(|id| full_vector(&table, manifest.as_ref(), id))
        .collect::<Result<Vec<_>, _>>()?;
    if table.dimension() != doc.model.input_dim() {
        return Err(CliError::Input(format!(
            "model expects {}-dimensional embeddings, file has {}",
            doc.model.input_dim(),
            table.dimension()
        )));
    }
    let x = stack(rows, table.dimension());
    let gold: Vec<&LabelRecord> = ids.iter().map(|id| gold_for(&labels, id)).collect::<Result<_, _>>()?;
    let scores = doc.model.score(&x)?;
    let n = ids.len();

    let gold_a: Vec<u8> = gold.iter().map(|r| r.a_label).collect();
    let gold_b: Vec<f64> = gold.iter().map(|r| r.b_label).collect();
    let pred_b: Vec<f64> = scores.iter().map(|s| s.b).collect();
    let ranked: Vec<Ranked<'_>> = ids
        .iter()
        .zip(&pred_b)
        .zip(&gold_a)
        .map(|((id, &score), &a)| Ranked {
            subject_id: id,
            score,
            relevant: a == 1,
        })
        .collect();

    let mut tables = Vec::new();
    let pred_a: Vec<u8> = match &doc.model {
        RiskModel::Multi(_) => scores
            .iter()
            .map(|s| c_to_a(d_to_c(&s.dist.expect("distribution"))))
            .collect(),
        RiskModel::Simple(_) => pred_b.iter().map(|&b| u8::from(b >= cfg.threshold)).collect(),
    };
    tables.push((
        "task 2a absolute".to_string(),
        classification_metrics(&classification_report(&pred_a, &gold_a)?),
    ));
    let b_report = regression_report(&pred_b, &gold_b)?;
    tables.push((
        "task 2b absolute".to_string(),
        vec![("RMSE".into(), Some(b_report.rmse)), ("r2".into(), b_report.r2)],
    ));
    tables.push((
        "task 2b ranking".to_string(),
        p_at_k(&[10, 20, 30, 5], |k| precision_at_k(&ranked, k), n)?,
    ));
    if let RiskModel::Multi(_) = &doc.model {
        let pred_d: Vec<Distribution4> = scores.iter().map(|s| s.dist.expect("distribution")).collect();
        let gold_d: Vec<Distribution4> = gold.iter().map(|r| r.d_dist).collect();
        let pred_c: Vec<RiskClass> = pred_d.iter().map(d_to_c).collect();
        let gold_c: Vec<RiskClass> = gold.iter().map(|r| r.c_label).collect();
        tables.push((
            "task 2c absolute".to_string(),
            classification_metrics(&classification_report(&pred_c, &gold_c)?),
        ));
        tables.push((
            "task 2d absolute".to_string(),
            named(multioutput_regression_report(&pred_d, &gold_d)?.to_named()),
        ));
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        tables.push((
            "task 2d ranking".to_string(),
            p_at_k(
                &[10, 20, 30, 5, 50],
                |k| distribution_precision_at_k(&id_refs, &pred_d, &gold_d, k),
                n,
            )?,
        ));
    }

    let report = json!({
        "config_hash": doc.config_hash,
        "split": cfg.split,
        "n_subjects": n,
        "metrics": Value::Object(tables.iter().map(|(t, m)| (t.clone(), metrics_json(m))).collect()),
    });
    write_output(&cfg.output_dir.join("evaluation.json"), &pretty(&report))?;
    Ok(EvalOutput { tables, report })
}

fn exporter_provider(command: &str) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| CliError::Input("empty exporter command".into()))?;
    let args: Vec<String> = parts.map(str::to_string).collect();
    let p = PipeProvider::spawn(program, &args)
        .map_err(|e| CliError::Input(format!("cannot start exporter {program:?}: {e}")))?;
    Ok(Box::new(p))
}

fn stream_histories(cfg: &RunConfig) -> Result<Vec<UserHistory>, CliError> {
    let histories = load_histories(cfg.require_data_dir()?)?;
    let manifest = match cfg.split {
        EvalSplit::All => None,
        _ => Some(Manifest::load(&cfg.manifest_file())?),
    };
    let ids: BTreeSet<String> = selected_ids(
        cfg,
        manifest.as_ref(),
        histories.iter().map(|h| h.subject_id.clone()),
    )?
    .into_iter()
    .collect();
    Ok(histories.into_iter().filter(|h| ids.contains(&h.subject_id)).collect())
}

fn policy(cfg: &RunConfig) -> DecisionPolicy {
    DecisionPolicy {
        threshold: cfg.threshold,
        sticky: cfg.sticky,
    }
}

/// ERDE at every configured deadline plus the latency metrics.
pub fn early_metrics(
    cfg: &RunConfig,
    traces: &[DecisionTrace],
    labels: &BTreeMap<String, LabelRecord>,
) -> Result<Metrics, CliError> {
    let gold: BTreeMap<String, u8> = traces
        .iter()
        .map(|t| Ok((t.subject_id.clone(), gold_for(labels, &t.subject_id)?.a_label)))
        .collect::<Result<_, CliError>>()?;
    let mut m = Metrics::new();
    let mut deadlines = cfg.erde_o.clone();
    deadlines.sort_unstable_by(|a, b| b.cmp(a));
    for o in deadlines {
        m.push((format!("erde{o}"), Some(erde(traces, &gold, &ErdeParams::standard(o, &gold))?)));
    }
    let r = early_report(traces, &gold, cfg.speed_p)?;
    m.push(("latency_tp".into(), r.latency_tp));
    m.push(("latency_weighted_f1".into(), r.latency_weighted_f1));
    m.push(("speed".into(), r.speed));
    m.push(("f1".into(), Some(r.f1)));
    Ok(m)
}

pub struct SimulateOutput {
    pub traces: Vec<DecisionTrace>,
    pub metrics: Metrics,
    pub report: Value,
}

pub fn simulate(cfg: &RunConfig, wire: bool) -> Result<SimulateOutput, CliError> {
    cfg.validate()?;
    let doc = load_model(cfg)?;
    let labels = label_map(cfg)?;
    let histories = stream_histories(cfg)?;
    let table = match (&cfg.exporter, &cfg.embeddings_path) {
        (Some(_), _) => None,
        (None, Some(path)) => Some(EmbeddingTable::load(path)?),
        (None, None) => {
            return Err(CliError::Input("--embeddings-path or --exporter is required".into()))
        }
    };
    let mut provider: Box<dyn EmbeddingProvider + '_> = match (&cfg.exporter, &table) {
        (Some(cmd), _) => exporter_provider(cmd)?,
        (None, Some(t)) => Box::new(TableProvider::new(t)),
        (None, None) => unreachable!("checked above"),
    };

    let started = Instant::now();
    let traces = if wire {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| CliError::Runtime(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        let server_histories = histories.clone();
        let server = std::thread::spawn(move || {
            serve_session(&listener, &server_histories, SessionOptions::default())
        });
        let client = StreamClient::new(&doc.model, provider.as_mut(), policy(cfg)).with_separator(&cfg.separator);
        let client_traces = wire_client(addr, client, SessionOptions::default());
        let server_traces = server
            .join()
            .map_err(|_| CliError::Runtime("round server panicked".into()))??;
        let client_traces = client_traces?;
        if traces_to_jsonl(&client_traces) != traces_to_jsonl(&server_traces) {
            return Err(CliError::Runtime("client and server trace logs differ".into()));
        }
        server_traces
    } else {
        let scorer = &doc.model;
        let mut client_provider = provider;
        run_streaming_eval(scorer, client_provider.as_mut(), &histories, policy(cfg))?
    };
    let elapsed = started.elapsed().as_secs_f64();

    let metrics = early_metrics(cfg, &traces, &labels)?;
    let rounds = traces.first().map_or(0, |t| t.total_rounds);
    let documents: usize = traces.iter().map(|t| t.entries.len()).sum();
    write_output(&cfg.output_dir.join("traces.jsonl"), &traces_to_jsonl(&traces))?;
    let report = json!({
        "config_hash": doc.config_hash,
        "split": cfg.split,
        "transport": if wire { "socket" } else { "in-process" },
        "threshold": cfg.threshold,
        "sticky": cfg.sticky,
        "n_subjects": traces.len(),
        "rounds": rounds,
        "metrics": metrics_json(&metrics),
        "timing": {
            "wall_clock_seconds": elapsed,
            "subjects_per_second": traces.len() as f64 / elapsed.max(1e-9),
            "documents_per_second": documents as f64 / elapsed.max(1e-9),
        },
    });
    write_output(&cfg.output_dir.join("early_report.json"), &pretty(&report))?;
    Ok(SimulateOutput {
        traces,
        metrics,
        report,
    })
}

/// Serves one streaming session and logs the client's decisions.
pub fn serve(cfg: &RunConfig, addr: &str, timeout: Option<Duration>) -> Result<Vec<DecisionTrace>, CliError> {
    cfg.validate()?;
    let histories = stream_histories(cfg)?;
    let listener =
        TcpListener::bind(addr).map_err(|e| CliError::Input(format!("cannot listen on {addr}: {e}")))?;
    let bound = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("listening on {bound}");
    let traces = serve_session(&listener, &histories, SessionOptions { timeout })?;
    write_output(&cfg.output_dir.join("server_traces.jsonl"), &traces_to_jsonl(&traces))?;
    if !cfg.labels_path.is_empty() {
        let labels = label_map(cfg)?;
        let metrics = early_metrics(cfg, &traces, &labels)?;
        print!("{}", render_table("early detection", &metrics));
        write_output(
            &cfg.output_dir.join("server_early_report.json"),
            &pretty(&json!({ "metrics": metrics_json(&metrics) })),
        )?;
    }
    Ok(traces)
}

/// Streams against a running server and writes the client-side traces.
pub fn client(cfg: &RunConfig, addr: &str, timeout: Option<Duration>) -> Result<Vec<DecisionTrace>, CliError> {
    cfg.validate()?;
    let doc = load_model(cfg)?;
    let table = match &cfg.exporter {
        Some(_) => None,
        None => Some(EmbeddingTable::load(cfg.require_embeddings()?)?),
    };
    let mut provider: Box<dyn EmbeddingProvider + '_> = match (&cfg.exporter, &table) {
        (Some(cmd), _) => exporter_provider(cmd)?,
        (None, Some(t)) => Box::new(TableProvider::new(t)),
        (None, None) => unreachable!("table loaded without exporter"),
    };
    let client = StreamClient::new(&doc.model, provider.as_mut(), policy(cfg)).with_separator(&cfg.separator);
    let traces = wire_client(addr, client, SessionOptions { timeout })?;
    write_output(&cfg.output_dir.join("client_traces.jsonl"), &traces_to_jsonl(&traces))?;
    Ok(traces)
}
