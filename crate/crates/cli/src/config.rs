//! Run configuration: a JSON document with data/model/train/cv/grid/task/
//! output sections. Unknown keys are rejected, defaults are filled in, and
//! the fully-resolved document is echoed into the run directory so any run
//! can be reproduced from its own artifacts.

use crate::CmdError;
use ironbench_core::corpus::{DataFormat, Language};
use ironbench_core::encoder::ModelConfig;
use ironbench_core::ensemble::AverageMode;
use ironbench_core::optim::TrainConfig;
use ironbench_core::task::TaskKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const RUN_DIR_ENV: &str = "IRONBENCH_RUN_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub grid: GridSection,
    pub task: TaskSection,
    pub output: OutputSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cv: CvSection::default(),
            grid: GridSection::default(),
            task: TaskSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// One file per language.
    pub paths: BTreeMap<Language, PathBuf>,
    pub format: DataFormat,
    pub languages: Vec<Language>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            paths: BTreeMap::new(),
            format: DataFormat::Jsonl,
            languages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub stratified: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            k: 10,
            seeds: vec![42],
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Defaults to `[train.peak_lr]` when empty.
    pub lrs: Vec<f64>,
    /// Defaults to `[train.epochs]` when empty.
    pub epochs: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Decision threshold for the multi-label head.
    pub threshold: f64,
    /// Emit both pair orders when building Task C pairs from rephrases.
    pub augment_both_orders: bool,
    pub average_mode: AverageMode,
    /// Ensemble only each fold's best member instead of all members.
    pub best_per_fold: bool,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            kind: TaskKind::TaskA,
            threshold: 0.5,
            augment_both_orders: true,
            average_mode: AverageMode::Probabilities,
            best_per_fold: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

/// Parse `--section.key value` pairs out of a raw argument list, returning
/// the remaining arguments untouched. Any long flag whose name contains a
/// dot is treated as a config override.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CmdError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if let Some(name) = arg.strip_prefix("--") {
            if name.contains('.') {
                if let Some((key, value)) = name.split_once('=') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
                let value = iter.next().ok_or_else(|| {
                    CmdError::config(format!("override --{name} is missing a value"))
                })?;
                overrides.push((name.to_string(), value));
                continue;
            }
        }
        rest.push(arg);
    }
    Ok((rest, overrides))
}

fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<(), CmdError> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(CmdError::config(format!(
                "override '{key}' descends through a non-object at '{part}'"
            )));
        }
        let map = node.as_object_mut().expect("checked above");
        if depth + 1 == parts.len() {
            map.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Load a config file, apply dotted overrides and the optional
/// `--languages` flag, honor `IRONBENCH_RUN_DIR`, fill defaults, and
/// validate. Unknown keys anywhere are an error.
pub fn load_config(
    path: &Path,
    overrides: &[(String, String)],
    languages: Option<&str>,
) -> Result<RunConfigFile, CmdError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&body)
        .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CmdError::config(format!(
            "{}: config root must be a JSON object",
            path.display()
        )));
    }
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let mut config: RunConfigFile = serde_json::from_value(value)
        .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;

    if let Some(spec) = languages {
        config.data.languages = spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Language>().map_err(CmdError::from))
            .collect::<Result<_, _>>()?;
    }
    if let Ok(dir) = std::env::var(RUN_DIR_ENV) {
        if !dir.is_empty() {
            config.output.dir = PathBuf::from(dir);
        }
    }
    resolve(&mut config)?;
    Ok(config)
}

/// Fill derived defaults and enforce cross-section invariants.
pub fn resolve(config: &mut RunConfigFile) -> Result<(), CmdError> {
    if config.data.languages.is_empty() {
        config.data.languages = vec![Language::En];
    }
    if config.grid.lrs.is_empty() {
        config.grid.lrs = vec![config.train.peak_lr];
    }
    if config.grid.epochs.is_empty() {
        config.grid.epochs = vec![config.train.epochs];
    }
    // Training-time knobs are authoritative for the encoder too.
    config.model.max_seq_len = config.train.max_seq_len;
    config.model.dropout_rate = config.train.dropout;

    config.model.validate()?;
    config.train.validate()?;
    if !(config.task.threshold > 0.0 && config.task.threshold < 1.0) {
        return Err(CmdError::config(format!(
            "task.threshold must lie in (0, 1), got {}",
            config.task.threshold
        )));
    }
    if config.cv.k < 2 {
        return Err(CmdError::config(format!("cv.k must be at least 2, got {}", config.cv.k)));
    }
    if config.cv.seeds.is_empty() {
        return Err(CmdError::config("cv.seeds must be non-empty".into()));
    }
    if config.task.kind == TaskKind::TaskB && config.data.languages != vec![Language::En] {
        return Err(CmdError::config(
            "task_b is English-only; set data.languages to [\"en\"]".into(),
        ));
    }
    let mut sorted = config.data.languages.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != config.data.languages.len() {
        return Err(CmdError::config("data.languages lists a language twice".into()));
    }
    Ok(())
}

impl RunConfigFile {
    /// Stable identifier of the dataset a run trains on: task kind plus the
    /// data section.
    pub fn dataset_id(&self) -> String {
        let payload = serde_json::json!({
            "task": self.task.kind,
            "data": self.data,
            "augment_both_orders": self.task.augment_both_orders,
        });
        let digest = Sha256::digest(payload.to_string().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write the fully-resolved config into the run directory.
    pub fn echo(&self, run_dir: &Path) -> Result<(), CmdError> {
        let path = run_dir.join("config.json");
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CmdError::config(e.to_string()))?;
        std::fs::write(&path, body)
            .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load_echoed(run_dir: &Path) -> Result<RunConfigFile, CmdError> {
        let path = run_dir.join("config.json");
        if !path.is_file() {
            return Err(CmdError::missing(format!(
                "{} (is this a run directory?)",
                path.display()
            )));
        }
        let body = std::fs::read_to_string(&path)
            .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfigFile = serde_json::from_str(&body)
            .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
        resolve(&mut config)?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{body}").unwrap();
        f
    }

    #[test]
    fn defaults_fill_in() {
        let f = write_config("{}");
        let cfg = load_config(f.path(), &[], None).unwrap();
        assert_eq!(cfg.cv.k, 10);
        assert_eq!(cfg.grid.lrs, vec![cfg.train.peak_lr]);
        assert_eq!(cfg.data.languages, vec![Language::En]);
        assert_eq!(cfg.model.max_seq_len, cfg.train.max_seq_len);
    }

    #[test]
    fn unknown_keys_rejected() {
        let f = write_config(r#"{"trian": {"epochs": 3}}"#);
        let err = load_config(f.path(), &[], None).unwrap_err();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn nested_unknown_keys_rejected() {
        let f = write_config(r#"{"train": {"epoch": 3}}"#);
        assert_eq!(load_config(f.path(), &[], None).unwrap_err().code, 2);
    }

    #[test]
    fn overrides_apply() {
        let f = write_config(r#"{"train": {"epochs": 3}}"#);
        let overrides = vec![
            ("train.seed".to_string(), "7".to_string()),
            ("task.kind".to_string(), "task_c".to_string()),
        ];
        let cfg = load_config(f.path(), &overrides, None).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.task.kind, TaskKind::TaskC);
    }

    #[test]
    fn override_with_bad_key_is_config_error() {
        let f = write_config("{}");
        let overrides = vec![("train.sede".to_string(), "7".to_string())];
        assert_eq!(load_config(f.path(), &overrides, None).unwrap_err().code, 2);
    }

    #[test]
    fn languages_flag_wins() {
        let f = write_config(r#"{"data": {"languages": ["en"]}}"#);
        let cfg = load_config(f.path(), &[], Some("en,ar")).unwrap();
        assert_eq!(cfg.data.languages, vec![Language::En, Language::Ar]);
    }

    #[test]
    fn task_b_requires_english_only() {
        let f = write_config(r#"{"task": {"kind": "task_b"}}"#);
        assert!(load_config(f.path(), &[], Some("en,ar")).is_err());
        assert!(load_config(f.path(), &[], Some("en")).is_ok());
    }

    #[test]
    fn split_overrides_separates_dotted_flags() {
        let args: Vec<String> = ["train", "cfg.json", "--train.seed", "7", "--jobs", "2", "--cv.k=3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (rest, overrides) = split_overrides(args).unwrap();
        assert_eq!(rest, vec!["train", "cfg.json", "--jobs", "2"]);
        assert_eq!(
            overrides,
            vec![
                ("train.seed".to_string(), "7".to_string()),
                ("cv.k".to_string(), "3".to_string())
            ]
        );
    }

    #[test]
    fn dataset_id_is_stable_and_data_sensitive() {
        let f = write_config("{}");
        let a = load_config(f.path(), &[], None).unwrap();
        let b = load_config(f.path(), &[], None).unwrap();
        assert_eq!(a.dataset_id(), b.dataset_id());
        let c = load_config(f.path(), &[], Some("en,ar")).unwrap();
        assert_ne!(a.dataset_id(), c.dataset_id());
    }

    #[test]
    fn echo_round_trips() {
        let f = write_config(r#"{"train": {"seed": 9}}"#);
        let cfg = load_config(f.path(), &[], None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.echo(dir.path()).unwrap();
        let loaded = RunConfigFile::load_echoed(dir.path()).unwrap();
        assert_eq!(loaded.train.seed, 9);
        assert_eq!(
            serde_json::to_string(&loaded).unwrap(),
            serde_json::to_string(&cfg).unwrap()
        );
    }
}
