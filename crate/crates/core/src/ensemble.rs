//! k-fold × hyperparameter-grid orchestration and prediction averaging.
//!
//! Each run trains on k−1 folds, selects its best checkpoint on the
//! held-out fold, and persists into a registry directory keyed by a stable
//! hash of the run spec, so reruns skip completed work. Test-set
//! predictions of the surviving members are combined by elementwise
//! arithmetic mean of their probabilities (logit averaging is available
//! behind a flag).

use crate::checkpoint::Checkpoint;
use crate::corpus::kfold_split;
use crate::error::{Error, Result};
use crate::optim::{train_epochs, EpochLog, TrainConfig};
use crate::pipeline::{score, Model, TaskItem};
use crate::seeds::{derive_seed, streams};
use crate::task::TaskKind;
use crate::taskheads::HeadKind;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// The learning-rate × epoch-count grid searched per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lrs: Vec<f64>,
    pub epoch_counts: Vec<usize>,
}

/// Everything that uniquely identifies one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub k: usize,
    pub fold_index: usize,
    pub fold_seed: u64,
    pub model_config: crate::encoder::ModelConfig,
    pub train_config: TrainConfig,
    pub dataset_id: String,
    pub task: TaskKind,
}

impl RunSpec {
    /// Stable hex key derived from the canonical JSON of the spec.
    pub fn run_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("RunSpec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Enumerate k × |seeds| × |lrs| × |epoch_counts| runs. Each run's training
/// seed is derived from its fold seed, fold index, and grid position, so
/// every member is reproducible in isolation.
pub fn plan_runs(
    k: usize,
    seeds: &[u64],
    grid: &GridSpec,
    model: &crate::encoder::ModelConfig,
    base: &TrainConfig,
    dataset_id: &str,
    task: TaskKind,
) -> Result<Vec<RunSpec>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if seeds.is_empty() || grid.lrs.is_empty() || grid.epoch_counts.is_empty() {
        return Err(Error::Config("seeds and grid must be non-empty".into()));
    }
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != seeds.len() {
        return Err(Error::Config("duplicate fold seeds".into()));
    }
    let mut runs = Vec::with_capacity(k * seeds.len() * grid.lrs.len() * grid.epoch_counts.len());
    for &fold_seed in seeds {
        for fold_index in 0..k {
            for (lr_index, &lr) in grid.lrs.iter().enumerate() {
                for (ep_index, &epochs) in grid.epoch_counts.iter().enumerate() {
                    let grid_position = (lr_index * grid.epoch_counts.len() + ep_index) as u64;
                    let run_seed = derive_seed(
                        derive_seed(fold_seed, streams::RUN ^ (fold_index as u64) << 8),
                        grid_position,
                    );
                    let train_config = TrainConfig {
                        peak_lr: lr,
                        epochs,
                        seed: run_seed,
                        ..base.clone()
                    };
                    runs.push(RunSpec {
                        k,
                        fold_index,
                        fold_seed,
                        model_config: model.clone(),
                        train_config,
                        dataset_id: dataset_id.to_string(),
                        task,
                    });
                }
            }
        }
    }
    Ok(runs)
}

/// Summary persisted as `eval.json` in each run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEval {
    pub run_key: String,
    pub task: TaskKind,
    pub fold_index: usize,
    pub fold_seed: u64,
    pub peak_lr: f64,
    pub epochs: usize,
    pub metric_name: String,
    pub eval_metric: f64,
    pub best_epoch: usize,
}

/// Directory-backed run store. A run directory becomes visible only through
/// an atomic rename, so its presence implies completeness.
#[derive(Debug, Clone)]
pub struct RunRegistry {
    root: PathBuf,
}

impl RunRegistry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)
            .map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(RunRegistry { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    pub fn is_complete(&self, key: &str) -> bool {
        self.run_dir(key).join("eval.json").is_file()
    }

    /// Persist all artifacts of a finished run: spec.json, checkpoint,
    /// log.jsonl, eval.json. Written to a staging dir then renamed.
    pub fn save_run(
        &self,
        spec: &RunSpec,
        checkpoint: &Checkpoint,
        log: &[EpochLog],
        eval: &RunEval,
    ) -> Result<()> {
        let key = spec.run_key();
        let staging = self.root.join(format!("{key}.tmp"));
        let final_dir = self.run_dir(&key);
        if staging.exists() {
            std::fs::remove_dir_all(&staging)
                .map_err(|e| Error::io(staging.display().to_string(), e))?;
        }
        std::fs::create_dir_all(&staging)
            .map_err(|e| Error::io(staging.display().to_string(), e))?;

        let write_json = |name: &str, value: &dyn erased_ser::Ser| -> Result<()> {
            let path = staging.join(name);
            let body = value.to_pretty()?;
            std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write_json("spec.json", &spec)?;
        write_json("eval.json", &eval)?;
        checkpoint.save(&staging.join("checkpoint.bin"))?;
        let mut log_body = String::new();
        for line in log {
            log_body.push_str(
                &serde_json::to_string(line).map_err(|e| Error::State(e.to_string()))?,
            );
            log_body.push('\n');
        }
        let log_path = staging.join("log.jsonl");
        std::fs::write(&log_path, log_body)
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;

        if final_dir.exists() {
            std::fs::remove_dir_all(&final_dir)
                .map_err(|e| Error::io(final_dir.display().to_string(), e))?;
        }
        std::fs::rename(&staging, &final_dir)
            .map_err(|e| Error::io(final_dir.display().to_string(), e))?;
        Ok(())
    }

    pub fn load_eval(&self, key: &str) -> Result<RunEval> {
        let path = self.run_dir(key).join("eval.json");
        let body =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&body).map_err(|e| Error::State(e.to_string()))
    }

    pub fn load_checkpoint(&self, key: &str) -> Result<Checkpoint> {
        Checkpoint::load(&self.run_dir(key).join("checkpoint.bin"))
    }

    /// Keys of every completed run under the registry root.
    pub fn complete_keys(&self) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| Error::io(self.root.display().to_string(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(self.root.display().to_string(), e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if !name.ends_with(".tmp") && self.is_complete(&name) {
                keys.push(name);
            }
        }
        keys.sort();
        Ok(keys)
    }
}

// serde_json through a dyn-friendly shim so save_run can take any
// serializable artifact.
mod erased_ser {
    use crate::error::{Error, Result};

    pub trait Ser {
        fn to_pretty(&self) -> Result<String>;
    }

    impl<T: serde::Serialize> Ser for T {
        fn to_pretty(&self) -> Result<String> {
            serde_json::to_string_pretty(self).map_err(|e| Error::State(e.to_string()))
        }
    }
}

/// How one planned run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Trained in this invocation.
    Completed { eval: RunEval },
    /// Found already complete in the registry; no retraining happened.
    Reused { eval: RunEval },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub key: String,
    pub spec: RunSpec,
    pub status: RunStatus,
}

impl RunOutcome {
    pub fn eval(&self) -> Option<&RunEval> {
        match &self.status {
            RunStatus::Completed { eval } | RunStatus::Reused { eval } => Some(eval),
            RunStatus::Failed { .. } => None,
        }
    }
}

/// Train every run against its fold split of `items`, skipping runs the
/// registry already holds. Failures are recorded and the remaining runs
/// continue. `jobs` > 1 executes runs in parallel threads; outcomes keep
/// the planned order either way.
pub fn execute_runs(
    runs: &[RunSpec],
    items: &[TaskItem],
    registry: &RunRegistry,
    jobs: usize,
) -> Result<Vec<RunOutcome>> {
    let queue = Mutex::new((0..runs.len()).collect::<std::collections::VecDeque<usize>>());
    let slots: Vec<Mutex<Option<RunOutcome>>> = (0..runs.len()).map(|_| Mutex::new(None)).collect();

    let work = |run: &RunSpec| -> RunOutcome {
        let key = run.run_key();
        if registry.is_complete(&key) {
            return match registry.load_eval(&key) {
                Ok(eval) => RunOutcome {
                    key,
                    spec: run.clone(),
                    status: RunStatus::Reused { eval },
                },
                Err(e) => RunOutcome {
                    key,
                    spec: run.clone(),
                    status: RunStatus::Failed {
                        message: e.to_string(),
                    },
                },
            };
        }
        match execute_one(run, items, registry) {
            Ok(eval) => RunOutcome {
                key,
                spec: run.clone(),
                status: RunStatus::Completed { eval },
            },
            Err(e) => RunOutcome {
                key,
                spec: run.clone(),
                status: RunStatus::Failed {
                    message: e.to_string(),
                },
            },
        }
    };

    let workers = jobs.max(1).min(runs.len().max(1));
    if workers <= 1 {
        let mut out = Vec::with_capacity(runs.len());
        for run in runs {
            out.push(work(run));
        }
        return Ok(out);
    }
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = {
                    let mut q = queue.lock().expect("queue lock");
                    match q.pop_front() {
                        Some(i) => i,
                        None => break,
                    }
                };
                let outcome = work(&runs[index]);
                *slots[index].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("run executed"))
        .collect())
}

fn execute_one(run: &RunSpec, items: &[TaskItem], registry: &RunRegistry) -> Result<RunEval> {
    let ids: Vec<String> = items.iter().map(|x| x.id.clone()).collect();
    let plan = kfold_split(&ids, run.k, run.fold_seed)?;
    let mut train = Vec::new();
    let mut eval_set = Vec::new();
    for item in items {
        match plan.fold_of(&item.id) {
            Some(f) if f == run.fold_index => eval_set.push(item.clone()),
            Some(_) => train.push(item.clone()),
            None => return Err(Error::Schema(format!("id '{}' missing from fold plan", item.id))),
        }
    }

    // Training-time knobs in TrainConfig win over the architectural
    // defaults.
    let model_config = crate::encoder::ModelConfig {
        dropout_rate: run.train_config.dropout,
        max_seq_len: run.train_config.max_seq_len,
        ..run.model_config.clone()
    };
    let task = run.task;
    let mut model = Model::init(&model_config, HeadKind::for_task(task), run.train_config.seed)?;
    let metric = move |items: &[TaskItem], probs: &Array2<f64>| score(task, items, probs);
    let outcome = train_epochs(&mut model, &train, &eval_set, &run.train_config, &metric)
        .map_err(|f| f.error)?;
    let eval = RunEval {
        run_key: run.run_key(),
        task,
        fold_index: run.fold_index,
        fold_seed: run.fold_seed,
        peak_lr: run.train_config.peak_lr,
        epochs: run.train_config.epochs,
        metric_name: task.metric_name().to_string(),
        eval_metric: outcome.best_metric,
        best_epoch: outcome.best_epoch,
    };
    registry.save_run(run, &outcome.best, &outcome.log, &eval)?;
    Ok(eval)
}

/// How member probabilities combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// Elementwise arithmetic mean of post-activation probabilities.
    Probabilities,
    /// Mean in log/logit space (geometric mean renormalized for softmax
    /// heads, mean logit through a sigmoid for the multi-label head).
    Logits,
}

/// Combined member predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub members: usize,
    pub probabilities: Array2<f64>,
}

/// Average member probability matrices. All members must share one shape.
pub fn average_predictions(
    members: &[Array2<f64>],
    head: HeadKind,
    mode: AverageMode,
) -> Result<EnsemblePrediction> {
    let first = members
        .first()
        .ok_or_else(|| Error::MissingArtifact("no ensemble members".into()))?;
    for m in members {
        if m.dim() != first.dim() {
            return Err(Error::Schema(format!(
                "member shape {:?} does not match {:?}",
                m.dim(),
                first.dim()
            )));
        }
    }
    let n = members.len() as f64;
    let probabilities = match mode {
        AverageMode::Probabilities => {
            // Streaming (Welford) mean: update by (x − mean)/k. Identical
            // members contribute a zero correction, so m copies of one
            // model average to that model bit-for-bit.
            let mut mean: Array2<f64> = first.clone();
            for (k, m) in members.iter().enumerate().skip(1) {
                let correction = (m - &mean) / (k as f64 + 1.0);
                mean += &correction;
            }
            mean
        }
        AverageMode::Logits => match head {
            HeadKind::Binary | HeadKind::Pair => {
                let mut sum = Array2::zeros(first.raw_dim());
                for m in members {
                    sum += &m.mapv(|p| p.max(1e-300).ln());
                }
                sum /= n;
                for mut row in sum.rows_mut() {
                    let soft = crate::taskheads::softmax(&row.to_vec());
                    for (slot, v) in row.iter_mut().zip(soft) {
                        *slot = v;
                    }
                }
                sum
            }
            HeadKind::Multilabel6 => {
                let mut sum = Array2::zeros(first.raw_dim());
                for m in members {
                    sum += &m.mapv(|p| {
                        let p = p.clamp(1e-12, 1.0 - 1e-12);
                        (p / (1.0 - p)).ln()
                    });
                }
                sum /= n;
                sum.mapv(crate::taskheads::sigmoid)
            }
        },
    };
    Ok(EnsemblePrediction {
        members: members.len(),
        probabilities,
    })
}

/// Mean ± sample standard deviation of the held-out metric per grid
/// configuration (lr, epochs, fold seed), across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfigSummary {
    pub peak_lr: f64,
    pub epochs: usize,
    pub fold_seed: u64,
    pub folds: usize,
    pub mean: f64,
    /// `None` when only one fold completed (n−1 denominator undefined).
    pub stddev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric_name: String,
    pub summaries: Vec<CvConfigSummary>,
    pub completed: usize,
    pub failed: usize,
    /// Set when any planned run failed: the report covers survivors only.
    pub partial: bool,
}

pub fn cross_validation_report(outcomes: &[RunOutcome]) -> CvReport {
    let mut groups: std::collections::BTreeMap<(String, usize, u64), Vec<f64>> =
        std::collections::BTreeMap::new();
    let mut metric_name = String::new();
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome.eval() {
            Some(eval) => {
                metric_name = eval.metric_name.clone();
                groups
                    .entry((
                        format!("{:e}", eval.peak_lr),
                        eval.epochs,
                        eval.fold_seed,
                    ))
                    .or_default()
                    .push(eval.eval_metric);
            }
            None => failed += 1,
        }
    }
    let summaries = groups
        .into_iter()
        .map(|((lr_text, epochs, fold_seed), metrics)| {
            let n = metrics.len();
            let mean = metrics.iter().sum::<f64>() / n as f64;
            let stddev = (n > 1).then(|| {
                (metrics.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            });
            CvConfigSummary {
                peak_lr: lr_text.parse().unwrap_or(f64::NAN),
                epochs,
                fold_seed,
                folds: n,
                mean,
                stddev,
            }
        })
        .collect();
    CvReport {
        metric_name,
        summaries,
        completed: outcomes.len() - failed,
        failed,
        partial: failed > 0,
    }
}
