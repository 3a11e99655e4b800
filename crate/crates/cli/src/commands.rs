//! Subcommand implementations. Each returns `Ok(())` for exit 0 or a
//! `CmdError` carrying the exit code (2 config, 3 numerics, 4 partial
//! results, 5 missing artifact).

use crate::config::{self, RunConfigFile};
use crate::CmdError;
use ironbench_core::checkpoint::Checkpoint;
use ironbench_core::corpus::{
    self, load_dataset, load_pairs, DataFormat, FoldPlan, Language, PairExample, TextExample,
};
use ironbench_core::encoder::{grad_check, ModelConfig};
use ironbench_core::ensemble::{
    average_predictions, cross_validation_report, execute_runs, plan_runs, GridSpec,
    RunRegistry, RunSpec,
};
use ironbench_core::metrics::MetricsReport;
use ironbench_core::multilingual::{merge_bilingual, JointDataset};
use ironbench_core::optim::train_epochs;
use ironbench_core::pipeline::{
    self, decide, predict_probs, prepare_pair_items, prepare_text_items, score, Model, TaskItem,
    Target,
};
use ironbench_core::seeds::{derive_seed, streams};
use ironbench_core::task::TaskKind;
use ironbench_core::taskheads::{Decision, HeadKind, Prediction};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One line of the predictions JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub probabilities: Vec<f64>,
    pub decision: Decision,
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), CmdError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| CmdError::config(e.to_string()))?;
    std::fs::write(path, body).map_err(|e| CmdError::config(format!("{}: {e}", path.display())))
}

/// Load the configured dataset, merge languages when more than one is
/// requested, and encode into task items. `for_training` drops rows that
/// carry no usable label for the task.
fn load_items(config: &RunConfigFile, for_training: bool) -> Result<Vec<TaskItem>, CmdError> {
    let task = config.task.kind;
    let mut per_language: Vec<JointDataset> = Vec::new();
    for &language in &config.data.languages {
        let path = config.data.paths.get(&language).ok_or_else(|| {
            CmdError::config(format!("data.paths has no entry for language '{language}'"))
        })?;
        per_language.push(load_one_file(config, task, path, language, for_training)?);
    }
    let mut merged = per_language
        .pop()
        .ok_or_else(|| CmdError::config("data.languages is empty".into()))?;
    let merge_seed = derive_seed(config.train.seed, streams::MERGE);
    while let Some(next) = per_language.pop() {
        merged = merge_bilingual(next, merged, merge_seed)?;
    }
    let items = merged.prepare(config.train.max_seq_len)?;
    if items.is_empty() {
        return Err(CmdError::config("dataset is empty after loading".into()));
    }
    Ok(items)
}

fn load_one_file(
    config: &RunConfigFile,
    task: TaskKind,
    path: &Path,
    language: Language,
    for_training: bool,
) -> Result<JointDataset, CmdError> {
    if config.data.format.is_pairs() {
        if task != TaskKind::TaskC {
            return Err(CmdError::config(format!(
                "pair-format data only fits task_c, not {task}"
            )));
        }
        let pairs = load_pairs(path, config.data.format, language)?;
        return Ok(JointDataset::pairs(pairs));
    }
    let examples = load_dataset(path, config.data.format, language)?;
    match task {
        TaskKind::TaskC => {
            let rephrased: Vec<TextExample> = examples
                .into_iter()
                .filter(|ex| ex.rephrase.is_some())
                .collect();
            let pairs = corpus::build_pairs(
                &rephrased,
                config.task.augment_both_orders,
                derive_seed(config.train.seed, streams::PAIR_ORDER),
            )?;
            Ok(JointDataset::pairs(pairs))
        }
        TaskKind::TaskB => {
            let labeled: Vec<TextExample> = if for_training {
                examples.into_iter().filter(|ex| ex.sublabels.is_some()).collect()
            } else {
                examples
            };
            Ok(JointDataset::text(TaskKind::TaskB, labeled)?)
        }
        TaskKind::TaskA => {
            let labeled: Vec<TextExample> = if for_training {
                examples.into_iter().filter(|ex| ex.sarcastic.is_some()).collect()
            } else {
                examples
            };
            Ok(JointDataset::text(TaskKind::TaskA, labeled)?)
        }
    }
}

fn binary_label(item: &TaskItem) -> u8
{
    match item.target {
        Some(Target::Binary(b)) | Some(Target::PairSide(b)) => b,
        Some(Target::Multilabel(bits)) => u8::from(bits.iter().any(|&b| b == 1)),
        None => 0,
    }
}

fn fold_plan(config: &RunConfigFile, items: &[TaskItem], seed: u64) -> Result<FoldPlan, CmdError> {
    let ids: Vec<String> = items.iter().map(|x| x.id.clone()).collect();
    if config.cv.stratified {
        let labeled: Vec<(String, u8)> = items
            .iter()
            .map(|it| (it.id.clone(), binary_label(it)))
            .collect();
        Ok(corpus::kfold_split_stratified(&labeled, config.cv.k, seed)?)
    } else {
        Ok(corpus::kfold_split(&ids, config.cv.k, seed)?)
    }
}

#[derive(Serialize)]
struct SingleRunEval {
    task: TaskKind,
    metric_name: &'static str,
    eval_metric: f64,
    best_epoch: usize,
    train_examples: usize,
    eval_examples: usize,
}

/// `train`: one train/eval run. Fold 0 of the cv split is held out for
/// evaluation; the best checkpoint, per-epoch log, and eval summary land in
/// the run directory.
pub fn cmd_train(
    config_path: &Path,
    overrides: &[(String, String)],
    languages: Option<&str>,
) -> Result<(), CmdError> {
    let config = config::load_config(config_path, overrides, languages)?;
    let run_dir = config.output.dir.clone();
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| CmdError::config(format!("{}: {e}", run_dir.display())))?;
    config.echo(&run_dir)?;

    let items = load_items(&config, true)?;
    let plan = fold_plan(&config, &items, config.cv.seeds[0])?;
    let mut train_set = Vec::new();
    let mut eval_set = Vec::new();
    for item in items {
        if plan.fold_of(&item.id) == Some(0) {
            eval_set.push(item);
        } else {
            train_set.push(item);
        }
    }

    let task = config.task.kind;
    let mut model = Model::init(&config.model, HeadKind::for_task(task), config.train.seed)?;
    let metric = move |items: &[TaskItem], probs: &ndarray::Array2<f64>| score(task, items, probs);
    let outcome = train_epochs(&mut model, &train_set, &eval_set, &config.train, &metric)
        .map_err(|failure| {
            if let Some(ckpt) = &failure.last_good {
                let _ = ckpt.save(&run_dir.join("checkpoint.bin"));
            }
            CmdError::from(failure.error)
        })?;

    outcome.best.save(&run_dir.join("checkpoint.bin"))?;
    let mut log_body = String::new();
    for line in &outcome.log {
        log_body.push_str(&serde_json::to_string(line).map_err(|e| CmdError::config(e.to_string()))?);
        log_body.push('\n');
    }
    std::fs::write(run_dir.join("log.jsonl"), log_body)
        .map_err(|e| CmdError::config(e.to_string()))?;
    write_json_file(
        &run_dir.join("eval.json"),
        &SingleRunEval {
            task,
            metric_name: task.metric_name(),
            eval_metric: outcome.best_metric,
            best_epoch: outcome.best_epoch,
            train_examples: train_set.len(),
            eval_examples: eval_set.len(),
        },
    )?;
    println!(
        "train: {} = {:.4} at epoch {} ({} train / {} eval); artifacts in {}",
        task.metric_name(),
        outcome.best_metric,
        outcome.best_epoch,
        train_set.len(),
        eval_set.len(),
        run_dir.display()
    );
    Ok(())
}

/// `kfold`: plan the k × seeds × grid runs, execute them against the
/// registry (idempotently), and write plan.json + cv_report.json.
pub fn cmd_kfold(
    config_path: &Path,
    overrides: &[(String, String)],
    languages: Option<&str>,
    jobs: usize,
) -> Result<(), CmdError> {
    let config = config::load_config(config_path, overrides, languages)?;
    let run_dir = config.output.dir.clone();
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| CmdError::config(format!("{}: {e}", run_dir.display())))?;
    config.echo(&run_dir)?;

    let items = load_items(&config, true)?;
    let grid = GridSpec {
        lrs: config.grid.lrs.clone(),
        epoch_counts: config.grid.epochs.clone(),
    };
    let runs = plan_runs(
        config.cv.k,
        &config.cv.seeds,
        &grid,
        &config.model,
        &config.train,
        &config.dataset_id(),
        config.task.kind,
    )?;
    write_json_file(&run_dir.join("plan.json"), &runs)?;

    let registry = RunRegistry::open(run_dir.join("runs"))?;
    let outcomes = execute_runs(&runs, &items, &registry, jobs)?;
    let report = cross_validation_report(&outcomes);
    write_json_file(&run_dir.join("cv_report.json"), &report)?;
    write_json_file(&run_dir.join("outcomes.json"), &outcomes)?;

    for summary in &report.summaries {
        println!(
            "kfold: lr {:.1e} epochs {} seed {} -> {} {:.4} ± {}",
            summary.peak_lr,
            summary.epochs,
            summary.fold_seed,
            report.metric_name,
            summary.mean,
            summary
                .stddev
                .map_or("n/a".to_string(), |s| format!("{s:.4}")),
        );
    }
    if report.partial {
        return Err(CmdError::partial(format!(
            "{} of {} runs failed; cv_report.json is partial",
            report.failed,
            runs.len()
        )));
    }
    Ok(())
}

fn registry_members(
    run_dir: &Path,
    mode: &str,
    best_per_fold: bool,
) -> Result<Vec<Checkpoint>, CmdError> {
    let registry_dir = run_dir.join("runs");
    if registry_dir.is_dir() {
        let registry = RunRegistry::open(&registry_dir)?;
        let keys = registry.complete_keys()?;
        if keys.is_empty() {
            return Err(CmdError::missing(format!(
                "no completed runs in {}",
                registry_dir.display()
            )));
        }
        let mut evals = Vec::new();
        for key in keys {
            evals.push(registry.load_eval(&key)?);
        }
        let selected: Vec<String> = if mode == "single" {
            let best = evals
                .iter()
                .max_by(|a, b| {
                    a.eval_metric
                        .partial_cmp(&b.eval_metric)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| b.run_key.cmp(&a.run_key))
                })
                .expect("non-empty");
            vec![best.run_key.clone()]
        } else if best_per_fold {
            let mut per_fold: std::collections::BTreeMap<usize, &ironbench_core::ensemble::RunEval> =
                std::collections::BTreeMap::new();
            for eval in &evals {
                let slot = per_fold.entry(eval.fold_index).or_insert(eval);
                if eval.eval_metric > slot.eval_metric
                    || (eval.eval_metric == slot.eval_metric && eval.run_key < slot.run_key)
                {
                    *slot = eval;
                }
            }
            per_fold.values().map(|e| e.run_key.clone()).collect()
        } else {
            evals.iter().map(|e| e.run_key.clone()).collect()
        };
        return selected
            .iter()
            .map(|key| registry.load_checkpoint(key).map_err(CmdError::from))
            .collect();
    }
    // Single-run layout from `train`.
    let single = run_dir.join("checkpoint.bin");
    if single.is_file() {
        return Ok(vec![Checkpoint::load(&single)?]);
    }
    Err(CmdError::missing(format!(
        "{} holds neither a run registry nor a checkpoint",
        run_dir.display()
    )))
}

/// `predict`: load ensemble members from a run directory, average their
/// probabilities over a test file, and write predictions.jsonl plus a flat
/// submission export.
pub fn cmd_predict(
    run_dir: &Path,
    test_path: &Path,
    mode: &str,
    out_dir: Option<&Path>,
) -> Result<(), CmdError> {
    if mode != "ensemble" && mode != "single" {
        return Err(CmdError::config(format!(
            "mode must be 'ensemble' or 'single', got '{mode}'"
        )));
    }
    let config = RunConfigFile::load_echoed(run_dir)?;
    let task = config.task.kind;
    let test_items = load_test_items(&config, test_path)?;
    let members = registry_members(run_dir, mode, config.task.best_per_fold)?;

    let mut member_probs = Vec::with_capacity(members.len());
    for member in &members {
        member_probs.push(predict_probs(&member.model, &test_items, config.train.eval_batch_size)?);
    }
    let head = HeadKind::for_task(task);
    let ensembled = average_predictions(&member_probs, head, config.task.average_mode)?;
    let predictions = decide(task, &ensembled.probabilities, config.task.threshold)?;

    let out = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(out).map_err(|e| CmdError::config(format!("{}: {e}", out.display())))?;
    write_predictions(&out.join("predictions.jsonl"), &test_items, &predictions)?;
    write_submission(&out.join("submission.txt"), task, &predictions)?;
    println!(
        "predict: {} members, {} examples -> {}",
        ensembled.members,
        test_items.len(),
        out.join("predictions.jsonl").display()
    );
    Ok(())
}

/// Test files reuse the configured format; rows may be unlabeled.
fn load_test_items(config: &RunConfigFile, test_path: &Path) -> Result<Vec<TaskItem>, CmdError> {
    let language = *config.data.languages.first().unwrap_or(&Language::En);
    let task = config.task.kind;
    let items = if config.data.format.is_pairs() || task == TaskKind::TaskC {
        let format = if config.data.format.is_pairs() {
            config.data.format
        } else {
            DataFormat::PairsJsonl
        };
        let pairs = load_pairs(test_path, format, language)?;
        prepare_pair_items(&pairs, config.train.max_seq_len)?
    } else {
        let examples = load_dataset(test_path, config.data.format, language)?;
        prepare_text_items(task, &examples, config.train.max_seq_len)?
    };
    if items.is_empty() {
        return Err(CmdError::config(format!(
            "{} holds no examples",
            test_path.display()
        )));
    }
    Ok(items)
}

fn write_predictions(
    path: &Path,
    items: &[TaskItem],
    predictions: &[Prediction],
) -> Result<(), CmdError> {
    let mut body = String::new();
    for (item, pred) in items.iter().zip(predictions) {
        let row = PredictionRow {
            id: item.id.clone(),
            probabilities: pred.probabilities.clone(),
            decision: pred.decision.clone(),
        };
        body.push_str(&serde_json::to_string(&row).map_err(|e| CmdError::config(e.to_string()))?);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| CmdError::config(format!("{}: {e}", path.display())))
}

fn write_submission(path: &Path, task: TaskKind, predictions: &[Prediction]) -> Result<(), CmdError> {
    let mut body = String::new();
    body.push_str(task.submission_header());
    body.push('\n');
    for pred in predictions {
        match &pred.decision {
            Decision::Label(l) => body.push_str(&l.to_string()),
            Decision::LabelSet(bits) => {
                let row: Vec<String> = bits.iter().map(|b| b.to_string()).collect();
                body.push_str(&row.join(","));
            }
        }
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| CmdError::config(format!("{}: {e}", path.display())))
}

/// Decisions parsed back out of a predictions or submission file.
pub enum ParsedPredictions {
    /// id-tagged rows from predictions.jsonl.
    Rows(Vec<PredictionRow>),
    /// Order-matched decisions from a flat submission file.
    Submission(TaskKind, Vec<Decision>),
}

pub fn parse_predictions_file(path: &Path) -> Result<ParsedPredictions, CmdError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| CmdError::config(format!("{} is empty", path.display())))?;
    if first.trim_start().starts_with('{') {
        let mut rows = Vec::new();
        for (index, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: PredictionRow = serde_json::from_str(line).map_err(|e| {
                CmdError::config(format!("{}:{}: {e}", path.display(), index + 1))
            })?;
            rows.push(row);
        }
        return Ok(ParsedPredictions::Rows(rows));
    }
    let task: TaskKind = first
        .trim()
        .parse()
        .map_err(|_| CmdError::config(format!("unknown submission header '{first}'")))?;
    let mut decisions = Vec::new();
    for (index, line) in lines.enumerate() {
        let line = line.trim();
        let decision = if task == TaskKind::TaskB {
            let bits: Vec<u8> = line
                .split(',')
                .map(|v| v.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|e| CmdError::config(format!("{}:{}: {e}", path.display(), index + 2)))?;
            if bits.len() != 6 || bits.iter().any(|&b| b > 1) {
                return Err(CmdError::config(format!(
                    "{}:{}: expected six 0/1 values",
                    path.display(),
                    index + 2
                )));
            }
            Decision::LabelSet(bits.try_into().expect("length checked"))
        } else {
            let label: u8 = line
                .parse()
                .map_err(|e| CmdError::config(format!("{}:{}: {e}", path.display(), index + 2)))?;
            if label > 1 {
                return Err(CmdError::config(format!(
                    "{}:{}: decision must be 0 or 1",
                    path.display(),
                    index + 2
                )));
            }
            Decision::Label(label)
        };
        decisions.push(decision);
    }
    Ok(ParsedPredictions::Submission(task, decisions))
}

fn gold_targets(
    task: TaskKind,
    gold_path: &Path,
    format: DataFormat,
    language: Language,
) -> Result<Vec<(String, Target)>, CmdError> {
    match task {
        TaskKind::TaskC => {
            let format = if format.is_pairs() { format } else { DataFormat::PairsJsonl };
            let pairs: Vec<PairExample> = load_pairs(gold_path, format, language)?;
            Ok(pairs
                .into_iter()
                .map(|p| (p.id, Target::PairSide(p.label)))
                .collect())
        }
        TaskKind::TaskB => {
            let examples = load_dataset(gold_path, format, language)?;
            examples
                .into_iter()
                .map(|ex| {
                    let bits = ex.sublabels.ok_or_else(|| {
                        CmdError::config(format!("gold example '{}' has no sublabels", ex.id))
                    })?;
                    Ok((ex.id, Target::Multilabel(bits)))
                })
                .collect()
        }
        TaskKind::TaskA => {
            let examples = load_dataset(gold_path, format, language)?;
            examples
                .into_iter()
                .map(|ex| {
                    let bit = ex.sarcastic.ok_or_else(|| {
                        CmdError::config(format!("gold example '{}' has no label", ex.id))
                    })?;
                    Ok((ex.id, Target::Binary(bit)))
                })
                .collect()
        }
    }
}

/// `evaluate`: score a predictions or submission file against a gold file
/// and print the metrics report as JSON.
pub fn cmd_evaluate(
    predictions_path: &Path,
    gold_path: &Path,
    task_flag: Option<TaskKind>,
    format: DataFormat,
    language: Language,
) -> Result<(), CmdError> {
    let parsed = parse_predictions_file(predictions_path)?;
    let report = evaluate_parsed(parsed, gold_path, task_flag, format, language)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CmdError::config(e.to_string()))?
    );
    Ok(())
}

/// Core of `evaluate`, shared with tests.
pub fn evaluate_parsed(
    parsed: ParsedPredictions,
    gold_path: &Path,
    task_flag: Option<TaskKind>,
    format: DataFormat,
    language: Language,
) -> Result<MetricsReport, CmdError> {
    let (task, decisions, ids): (TaskKind, Vec<Decision>, Option<Vec<String>>) = match parsed {
        ParsedPredictions::Submission(task, decisions) => (task, decisions, None),
        ParsedPredictions::Rows(rows) => {
            let task = task_flag.or_else(|| {
                rows.first().map(|r| match r.decision {
                    Decision::LabelSet(_) => TaskKind::TaskB,
                    Decision::Label(_) => TaskKind::TaskA,
                })
            });
            let task = task.ok_or_else(|| CmdError::config("empty predictions file".into()))?;
            (
                task,
                rows.iter().map(|r| r.decision.clone()).collect(),
                Some(rows.into_iter().map(|r| r.id).collect()),
            )
        }
    };
    let task = task_flag.unwrap_or(task);
    let golds = gold_targets(task, gold_path, format, language)?;
    if golds.len() != decisions.len() {
        return Err(CmdError::config(format!(
            "{} predictions vs {} gold examples",
            decisions.len(),
            golds.len()
        )));
    }
    // id-tagged predictions align by id; flat submissions align by order.
    let ordered: Vec<(&Decision, &Target)> = match &ids {
        Some(ids) => {
            let by_id: std::collections::BTreeMap<&str, &Target> =
                golds.iter().map(|(id, t)| (id.as_str(), t)).collect();
            ids.iter()
                .zip(&decisions)
                .map(|(id, d)| {
                    by_id
                        .get(id.as_str())
                        .map(|t| (d, *t))
                        .ok_or_else(|| CmdError::config(format!("gold file has no id '{id}'")))
                })
                .collect::<Result<_, _>>()?
        }
        None => decisions.iter().zip(golds.iter().map(|(_, t)| t)).collect(),
    };

    let report = match task {
        TaskKind::TaskA | TaskKind::TaskC => {
            let mut preds = Vec::with_capacity(ordered.len());
            let mut gold_bits = Vec::with_capacity(ordered.len());
            for (d, t) in &ordered {
                let p = match d {
                    Decision::Label(l) => *l,
                    Decision::LabelSet(_) => {
                        return Err(CmdError::config("label-set decision on a binary task".into()))
                    }
                };
                let g = match t {
                    Target::Binary(b) | Target::PairSide(b) => *b,
                    Target::Multilabel(_) => {
                        return Err(CmdError::config("multi-label gold on a binary task".into()))
                    }
                };
                preds.push(p);
                gold_bits.push(g);
            }
            ironbench_core::metrics::binary_report(task, &preds, &gold_bits, None)?
        }
        TaskKind::TaskB => {
            let mut preds = Vec::with_capacity(ordered.len());
            let mut gold_bits = Vec::with_capacity(ordered.len());
            for (d, t) in &ordered {
                let p = match d {
                    Decision::LabelSet(bits) => *bits,
                    Decision::Label(_) => {
                        return Err(CmdError::config("single-label decision on task_b".into()))
                    }
                };
                let g = match t {
                    Target::Multilabel(bits) => *bits,
                    _ => return Err(CmdError::config("task_b gold must carry sublabels".into())),
                };
                preds.push(p);
                gold_bits.push(g);
            }
            ironbench_core::metrics::multilabel_report(&preds, &gold_bits, None)?
        }
    };
    Ok(report)
}

/// `tokenize`: byte-level ids of each input line, space-separated.
pub fn cmd_tokenize(input: Option<&Path>, max_seq_len: usize) -> Result<(), CmdError> {
    let reader: Box<dyn BufRead> = match input {
        Some(path) => Box::new(std::io::BufReader::new(std::fs::File::open(path).map_err(
            |e| CmdError::config(format!("{}: {e}", path.display())),
        )?)),
        None => Box::new(std::io::BufReader::new(std::io::stdin())),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in reader.lines() {
        let line = line.map_err(|e| CmdError::config(e.to_string()))?;
        let normalized = corpus::normalize_text(&line);
        let encoded = ironbench_core::tokenizer::encode(&normalized, max_seq_len)?;
        let ids: Vec<String> = encoded.ids.iter().map(|id| id.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).map_err(|e| CmdError::config(e.to_string()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GradCheckReport {
    max_rel_error: f64,
    tolerance: f64,
    seconds: f64,
    passed: bool,
}

/// `gradcheck`: compare analytic gradients against central finite
/// differences on a small random model; exit 3 when above tolerance.
#[allow(clippy::too_many_arguments)]
pub fn cmd_gradcheck(
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    d_ff: usize,
    seq_len: usize,
    dropout: f64,
    seed: u64,
    h: f64,
    tolerance: f64,
) -> Result<(), CmdError> {
    let config = ModelConfig {
        d_model,
        n_layers,
        n_heads,
        d_ff,
        max_seq_len: seq_len,
        dropout_rate: dropout,
        ..ModelConfig::default()
    };
    let started = std::time::Instant::now();
    let max_rel_error = grad_check(&config, seed, h)?;
    let report = GradCheckReport {
        max_rel_error,
        tolerance,
        seconds: started.elapsed().as_secs_f64(),
        passed: max_rel_error <= tolerance,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CmdError::config(e.to_string()))?
    );
    if !report.passed {
        return Err(CmdError::numerics(format!(
            "max relative error {max_rel_error:.3e} exceeds tolerance {tolerance:.1e}"
        )));
    }
    Ok(())
}

/// `stats`: ingestion counts of a dataset file as JSON.
pub fn cmd_stats(path: &Path, format: DataFormat, language: Language) -> Result<(), CmdError> {
    if format.is_pairs() {
        let pairs = load_pairs(path, format, language)?;
        let firsts = pairs.iter().filter(|p| p.label == 0).count();
        println!(
            "{}",
            serde_json::json!({
                "total": pairs.len(),
                "label_0_first_sarcastic": firsts,
                "label_1_second_sarcastic": pairs.len() - firsts,
            })
        );
        return Ok(());
    }
    let examples = load_dataset(path, format, language)?;
    let stats = corpus::corpus_stats(&examples);
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).map_err(|e| CmdError::config(e.to_string()))?
    );
    Ok(())
}

/// Re-export for tests that inspect plans.
pub fn planned_runs(config: &RunConfigFile) -> Result<Vec<RunSpec>, CmdError> {
    let grid = GridSpec {
        lrs: config.grid.lrs.clone(),
        epoch_counts: config.grid.epochs.clone(),
    };
    Ok(plan_runs(
        config.cv.k,
        &config.cv.seeds,
        &grid,
        &config.model,
        &config.train,
        &config.dataset_id(),
        config.task.kind,
    )?)
}

/// Shared helper so tests can score in-memory exactly as `evaluate` does.
pub fn report_from_rows(
    task: TaskKind,
    rows: &[PredictionRow],
    golds: &[(String, Target)],
) -> Result<MetricsReport, CmdError> {
    let by_id: std::collections::BTreeMap<&str, &Target> =
        golds.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut predictions = Vec::new();
    let mut items: Vec<TaskItem> = Vec::new();
    for row in rows {
        let target = by_id
            .get(row.id.as_str())
            .ok_or_else(|| CmdError::config(format!("gold file has no id '{}'", row.id)))?;
        predictions.push(Prediction {
            probabilities: row.probabilities.clone(),
            decision: row.decision.clone(),
        });
        items.push(TaskItem {
            id: row.id.clone(),
            language: Language::En,
            encoded: ironbench_core::tokenizer::encode("x", 8)?,
            target: Some((*target).clone()),
        });
    }
    Ok(pipeline::report(task, &items, &predictions, None)?)
}

