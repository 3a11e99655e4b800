//! Multilingual joint training: English and Arabic data of the same subtask
//! merge into one shuffled stream, so any micro-batch may mix languages and
//! a single parameter set serves both. Evaluation reports per-language and
//! pooled scores from one prediction pass.

use crate::corpus::{Language, PairExample, TextExample};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::pipeline::{self, Model, TaskItem};
use crate::seeds::{self, SplitMix64};
use crate::task::TaskKind;
use std::collections::BTreeMap;

/// Examples of one subtask with language tags preserved.
#[derive(Debug, Clone, PartialEq)]
pub enum JointExamples {
    Text(Vec<TextExample>),
    Pair(Vec<PairExample>),
}

impl JointExamples {
    pub fn len(&self) -> usize {
        match self {
            JointExamples::Text(v) => v.len(),
            JointExamples::Pair(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn language_counts(&self) -> BTreeMap<Language, usize> {
        let mut counts = BTreeMap::new();
        match self {
            JointExamples::Text(v) => {
                for ex in v {
                    *counts.entry(ex.language).or_insert(0) += 1;
                }
            }
            JointExamples::Pair(v) => {
                for ex in v {
                    *counts.entry(ex.language).or_insert(0) += 1;
                }
            }
        }
        counts
    }
}

/// A merged (or single-language) dataset for one subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDataset {
    pub task: TaskKind,
    pub examples: JointExamples,
}

impl JointDataset {
    pub fn text(task: TaskKind, examples: Vec<TextExample>) -> Result<Self> {
        if task == TaskKind::TaskC {
            return Err(Error::Schema("task_c datasets hold pairs".into()));
        }
        Ok(JointDataset {
            task,
            examples: JointExamples::Text(examples),
        })
    }

    pub fn pairs(examples: Vec<PairExample>) -> Self {
        JointDataset {
            task: TaskKind::TaskC,
            examples: JointExamples::Pair(examples),
        }
    }

    /// Encode into trainable items.
    pub fn prepare(&self, max_seq_len: usize) -> Result<Vec<TaskItem>> {
        match &self.examples {
            JointExamples::Text(v) => pipeline::prepare_text_items(self.task, v, max_seq_len),
            JointExamples::Pair(v) => pipeline::prepare_pair_items(v, max_seq_len),
        }
    }
}

/// Concatenate two same-task datasets and shuffle the union with the given
/// seed. Per-language counts are preserved exactly; only the order changes.
pub fn merge_bilingual(a: JointDataset, b: JointDataset, seed: u64) -> Result<JointDataset> {
    if a.task != b.task {
        return Err(Error::Schema(format!(
            "cannot merge {} with {}",
            a.task, b.task
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let examples = match (a.examples, b.examples) {
        (JointExamples::Text(mut left), JointExamples::Text(right)) => {
            left.extend(right);
            seeds::shuffle(&mut left, &mut rng);
            JointExamples::Text(left)
        }
        (JointExamples::Pair(mut left), JointExamples::Pair(right)) => {
            left.extend(right);
            seeds::shuffle(&mut left, &mut rng);
            JointExamples::Pair(left)
        }
        _ => {
            return Err(Error::Schema(
                "cannot merge a text dataset with a pair dataset".into(),
            ))
        }
    };
    Ok(JointDataset {
        task: a.task,
        examples,
    })
}

/// Per-language and pooled scores from a single prediction pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageBreakdown {
    pub per_language: BTreeMap<Language, MetricsReport>,
    pub pooled: MetricsReport,
}

/// Predict once over the whole eval set, then partition the scored
/// predictions by language tag. Languages with zero examples are omitted
/// with a warning.
pub fn eval_per_language(
    model: &Model,
    task: TaskKind,
    items: &[TaskItem],
    eval_batch_size: usize,
) -> Result<LanguageBreakdown> {
    if items.is_empty() {
        return Err(Error::Schema("eval set is empty".into()));
    }
    let probs = pipeline::predict_probs(model, items, eval_batch_size)?;
    let predictions = pipeline::decide(task, &probs, 0.5)?;
    let pooled = pipeline::report(task, items, &predictions, None)?;

    let mut per_language = BTreeMap::new();
    for language in [Language::En, Language::Ar] {
        let indices: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.language == language)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            log::warn!("eval set has no {language} examples; omitting it from the breakdown");
            continue;
        }
        let sub_items: Vec<TaskItem> = indices.iter().map(|&i| items[i].clone()).collect();
        let sub_preds: Vec<_> = indices.iter().map(|&i| predictions[i].clone()).collect();
        per_language.insert(
            language,
            pipeline::report(task, &sub_items, &sub_preds, Some(language))?,
        );
    }
    Ok(LanguageBreakdown {
        per_language,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::synth;
    use crate::taskheads::HeadKind;

    fn text(id: &str, language: Language, sarcastic: u8) -> TextExample {
        TextExample {
            id: id.into(),
            language,
            text: format!("sample {id}"),
            sarcastic: Some(sarcastic),
            sublabels: None,
            rephrase: None,
        }
    }

    #[test]
    fn merge_preserves_language_counts() {
        let en: Vec<TextExample> = (0..100).map(|i| text(&format!("e{i}"), Language::En, (i % 2) as u8)).collect();
        let ar: Vec<TextExample> = (0..50).map(|i| text(&format!("a{i}"), Language::Ar, (i % 2) as u8)).collect();
        let joint = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar).unwrap(),
            5,
        )
        .unwrap();
        assert_eq!(joint.examples.len(), 150);
        let counts = joint.examples.language_counts();
        assert_eq!(counts[&Language::En], 100);
        assert_eq!(counts[&Language::Ar], 50);
    }

    #[test]
    fn merge_preserves_multiset() {
        let en: Vec<TextExample> = (0..20).map(|i| text(&format!("e{i}"), Language::En, 1)).collect();
        let ar: Vec<TextExample> = (0..10).map(|i| text(&format!("a{i}"), Language::Ar, 0)).collect();
        let mut expected: Vec<String> = en.iter().chain(&ar).map(|e| e.id.clone()).collect();
        expected.sort();
        let joint = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar).unwrap(),
            1,
        )
        .unwrap();
        let mut got: Vec<String> = match &joint.examples {
            JointExamples::Text(v) => v.iter().map(|e| e.id.clone()).collect(),
            _ => panic!("expected text"),
        };
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn merge_with_empty_side() {
        let en: Vec<TextExample> = (0..5).map(|i| text(&format!("e{i}"), Language::En, 0)).collect();
        let joint = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en.clone()).unwrap(),
            JointDataset::text(TaskKind::TaskA, vec![]).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(joint.examples.len(), 5);
    }

    #[test]
    fn merge_same_seed_same_order() {
        let en: Vec<TextExample> = (0..30).map(|i| text(&format!("e{i}"), Language::En, 0)).collect();
        let ar: Vec<TextExample> = (0..30).map(|i| text(&format!("a{i}"), Language::Ar, 1)).collect();
        let once = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en.clone()).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar.clone()).unwrap(),
            9,
        )
        .unwrap();
        let twice = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar).unwrap(),
            9,
        )
        .unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn task_mismatch_rejected() {
        let en = JointDataset::text(TaskKind::TaskA, vec![]).unwrap();
        let pairs = JointDataset::pairs(vec![]);
        assert!(matches!(
            merge_bilingual(en, pairs, 0),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn all_english_eval_reports_only_en() {
        let model = Model::init(&ModelConfig::tiny(), HeadKind::Binary, 3).unwrap();
        let examples: Vec<TextExample> =
            (0..6).map(|i| text(&format!("e{i}"), Language::En, (i % 2) as u8)).collect();
        let items = pipeline::prepare_text_items(TaskKind::TaskA, &examples, 8).unwrap();
        let breakdown = eval_per_language(&model, TaskKind::TaskA, &items, 8).unwrap();
        assert_eq!(breakdown.per_language.len(), 1);
        assert!(breakdown.per_language.contains_key(&Language::En));
    }

    #[test]
    fn pooled_accuracy_is_count_weighted_mean() {
        let cfg = ModelConfig {
            max_seq_len: 64,
            ..ModelConfig::tiny()
        };
        let model = Model::init(&cfg, HeadKind::Binary, 3).unwrap();
        let (en, ar) = synth::bilingual_task_a(10, 77);
        let joint = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar).unwrap(),
            4,
        )
        .unwrap();
        let items = joint.prepare(64).unwrap();
        let b = eval_per_language(&model, TaskKind::TaskA, &items, 16).unwrap();
        let mut weighted = 0.0;
        let mut n = 0usize;
        for report in b.per_language.values() {
            weighted += report.accuracy * report.count as f64;
            n += report.count;
        }
        assert_eq!(n, b.pooled.count);
        assert!((weighted / n as f64 - b.pooled.accuracy).abs() < 1e-12);
    }

    #[test]
    fn per_language_metric_equals_filtered_run() {
        // Scoring the pooled predictions per language must equal running
        // the language subset alone.
        let cfg = ModelConfig {
            max_seq_len: 64,
            ..ModelConfig::tiny()
        };
        let model = Model::init(&cfg, HeadKind::Binary, 8).unwrap();
        let (en, ar) = synth::bilingual_task_a(8, 3);
        let joint = merge_bilingual(
            JointDataset::text(TaskKind::TaskA, en.clone()).unwrap(),
            JointDataset::text(TaskKind::TaskA, ar).unwrap(),
            6,
        )
        .unwrap();
        let items = joint.prepare(64).unwrap();
        let breakdown = eval_per_language(&model, TaskKind::TaskA, &items, 4).unwrap();

        let en_items = pipeline::prepare_text_items(TaskKind::TaskA, &en, 64).unwrap();
        let solo = eval_per_language(&model, TaskKind::TaskA, &en_items, 4).unwrap();
        let joint_en = &breakdown.per_language[&Language::En];
        let solo_en = &solo.per_language[&Language::En];
        assert_eq!(joint_en.count, solo_en.count);
        assert!((joint_en.f1 - solo_en.f1).abs() < 1e-12);
        assert!((joint_en.accuracy - solo_en.accuracy).abs() < 1e-12);
    }
}
