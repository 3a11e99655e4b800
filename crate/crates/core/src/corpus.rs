//! Dataset ingestion and fold planning.
//!
//! Two on-disk formats are supported per task: a canonical JSONL schema
//! (one object per line with keys `id`, `language`, `text`, `sarcastic`,
//! `sublabels`, `rephrase`) and a CSV adapter for iSarcasmEval-style files
//! (`tweet`, `sarcastic`, the six sub-label columns, optional `rephrase`).
//! Pair files carry `text_0`, `text_1`, `label` columns/keys.

use crate::error::{Error, Result};
use crate::seeds::{self, SplitMix64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Dataset language tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Ar,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "en",
            Language::Ar => "ar",
        })
    }
}

impl std::str::FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "ar" => Ok(Language::Ar),
            other => Err(Error::Config(format!("unknown language '{other}'"))),
        }
    }
}

/// Sub-label column order used everywhere: Task B's six categories.
pub const SUBLABEL_NAMES: [&str; 6] = [
    "sarcasm",
    "irony",
    "satire",
    "understatement",
    "overstatement",
    "rhetorical_question",
];

/// One normalized sample. `sarcastic` is the Task A label, `sublabels` the
/// six Task B bits (English only), `rephrase` the non-sarcastic paraphrase
/// used for Task C.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub id: String,
    pub language: Language,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sarcastic: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sublabels: Option<[u8; 6]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rephrase: Option<String>,
}

impl TextExample {
    /// Enforce the type invariants: non-empty text, sub-labels only on
    /// labeled English examples, rephrase only on sarcastic ones.
    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::EmptyText {
                id: self.id.clone(),
            });
        }
        if let Some(s) = self.sarcastic {
            if s > 1 {
                return Err(Error::Label {
                    location: self.id.clone(),
                    value: i64::from(s),
                });
            }
        }
        if let Some(bits) = &self.sublabels {
            if self.sarcastic.is_none() || self.language != Language::En {
                return Err(Error::Schema(format!(
                    "example '{}': sublabels require a sarcastic label and language en",
                    self.id
                )));
            }
            if bits.iter().any(|&b| b > 1) {
                return Err(Error::Label {
                    location: self.id.clone(),
                    value: i64::from(*bits.iter().find(|&&b| b > 1).unwrap()),
                });
            }
        }
        if self.rephrase.is_some() && self.sarcastic != Some(1) {
            return Err(Error::Schema(format!(
                "example '{}': only sarcastic texts carry a rephrase",
                self.id
            )));
        }
        Ok(())
    }
}

/// A Task C sample: label 0 means `text_a` is the sarcastic one, 1 means
/// `text_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub id: String,
    pub language: Language,
    pub text_a: String,
    pub text_b: String,
    pub label: u8,
}

impl PairExample {
    pub fn validate(&self) -> Result<()> {
        if self.text_a == self.text_b {
            return Err(Error::Schema(format!(
                "pair '{}': the two texts are identical",
                self.id
            )));
        }
        if self.label > 1 {
            return Err(Error::Label {
                location: self.id.clone(),
                value: i64::from(self.label),
            });
        }
        Ok(())
    }
}

/// A deterministic k-fold partition of a set of ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Aggregate counts over a dataset; `positives`/`negatives` count labeled
/// examples only, `sublabel_counts` only those with sub-labels present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub per_language: BTreeMap<Language, usize>,
    pub positives: usize,
    pub negatives: usize,
    pub sublabel_counts: [usize; 6],
    pub with_rephrase: usize,
}

/// Collapse runs of spaces, tabs, and line breaks to a single space and trim
/// the ends. Everything else — emoji, Arabic script, exotic whitespace —
/// passes through untouched. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut in_gap = false;
    for ch in raw.chars() {
        if matches!(ch, ' ' | '\t' | '\n' | '\r') {
            in_gap = true;
        } else {
            if in_gap && !out.is_empty() {
                out.push(' ');
            }
            in_gap = false;
            out.push(ch);
        }
    }
    out
}

/// Supported single-text file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Jsonl,
    IsarcasmCsv,
    PairsJsonl,
    PairsCsv,
}

impl DataFormat {
    pub fn is_pairs(self) -> bool {
        matches!(self, DataFormat::PairsJsonl | DataFormat::PairsCsv)
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "isarcasm_csv" => Ok(DataFormat::IsarcasmCsv),
            "pairs_jsonl" => Ok(DataFormat::PairsJsonl),
            "pairs_csv" => Ok(DataFormat::PairsCsv),
            other => Err(Error::Config(format!("unknown data format '{other}'"))),
        }
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<String>,
    language: Option<Language>,
    text: String,
    sarcastic: Option<i64>,
    sublabels: Option<Vec<i64>>,
    rephrase: Option<String>,
}

fn bit(value: i64, location: &str) -> Result<u8> {
    match value {
        0 => Ok(0),
        1 => Ok(1),
        other => Err(Error::Label {
            location: location.to_string(),
            value: other,
        }),
    }
}

/// Load and normalize a single-text dataset. Rows keep file order; rows
/// without an id get `<language>-<row index>`.
pub fn load_dataset(path: &Path, format: DataFormat, language: Language) -> Result<Vec<TextExample>> {
    match format {
        DataFormat::Jsonl => load_jsonl(path, language),
        DataFormat::IsarcasmCsv => load_isarcasm_csv(path, language),
        _ => Err(Error::Config(format!(
            "format {format:?} holds pairs; use load_pairs"
        ))),
    }
}

fn finish_example(mut ex: TextExample) -> Result<TextExample> {
    ex.text = normalize_text(&ex.text);
    if ex.text.is_empty() {
        return Err(Error::EmptyText { id: ex.id });
    }
    if let Some(r) = ex.rephrase.take() {
        let r = normalize_text(&r);
        if r.is_empty() {
            return Err(Error::EmptyText {
                id: format!("{}(rephrase)", ex.id),
            });
        }
        ex.rephrase = Some(r);
    }
    ex.validate()?;
    Ok(ex)
}

fn load_jsonl(path: &Path, language: Language) -> Result<Vec<TextExample>> {
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut out = Vec::new();
    for (index, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(line)
            .map_err(|e| Error::parse(&display, index + 1, e.to_string()))?;
        let lang = row.language.unwrap_or(language);
        let id = row.id.unwrap_or_else(|| format!("{lang}-{index}"));
        let sarcastic = row.sarcastic.map(|v| bit(v, &id)).transpose()?;
        let sublabels = match row.sublabels {
            Some(values) => {
                if values.len() != 6 {
                    return Err(Error::parse(
                        &display,
                        index + 1,
                        format!("sublabels must have 6 entries, got {}", values.len()),
                    ));
                }
                let mut bits = [0u8; 6];
                for (slot, v) in bits.iter_mut().zip(&values) {
                    *slot = bit(*v, &id)?;
                }
                Some(bits)
            }
            None => None,
        };
        out.push(finish_example(TextExample {
            id,
            language: lang,
            text: row.text,
            sarcastic,
            sublabels,
            rephrase: row.rephrase.filter(|r| !r.trim().is_empty()),
        })?);
    }
    Ok(out)
}

fn load_isarcasm_csv(path: &Path, language: Language) -> Result<Vec<TextExample>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::parse(&display, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&display, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let text_col = col("tweet")
        .or_else(|| col("text"))
        .ok_or_else(|| Error::parse(&display, 1, "missing 'tweet' column"))?;
    let sarcastic_col = col("sarcastic");
    let rephrase_col = col("rephrase");
    let sublabel_cols: Vec<Option<usize>> = SUBLABEL_NAMES.iter().map(|n| col(n)).collect();
    let has_sublabels = sublabel_cols.iter().all(Option::is_some);

    let mut out = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let line = index + 2; // header is line 1
        let record = record.map_err(|e| Error::parse(&display, line, e.to_string()))?;
        let id = format!("{language}-{index}");
        let get = |c: usize| record.get(c).unwrap_or("");
        let parse_bit = |raw: &str| -> Result<u8> {
            let v: i64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::parse(&display, line, format!("bad label '{raw}'")))?;
            bit(v, &id)
        };
        let sarcastic = match sarcastic_col {
            Some(c) if !get(c).trim().is_empty() => Some(parse_bit(get(c))?),
            _ => None,
        };
        let sublabels = if has_sublabels {
            let mut bits = [0u8; 6];
            let mut present = false;
            for (slot, c) in bits.iter_mut().zip(&sublabel_cols) {
                let raw = get(c.unwrap());
                if raw.trim().is_empty() {
                    present = false;
                    break;
                }
                *slot = parse_bit(raw)?;
                present = true;
            }
            present.then_some(bits)
        } else {
            None
        };
        let rephrase = rephrase_col
            .map(|c| get(c).to_string())
            .filter(|r| !r.trim().is_empty());
        out.push(finish_example(TextExample {
            id,
            language,
            text: get(text_col).to_string(),
            sarcastic,
            sublabels,
            rephrase,
        })?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PairRow {
    id: Option<String>,
    language: Option<Language>,
    text_0: String,
    text_1: String,
    label: i64,
}

/// Load a pair-format dataset (`text_0`, `text_1`, `label`).
pub fn load_pairs(path: &Path, format: DataFormat, language: Language) -> Result<Vec<PairExample>> {
    let display = path.display().to_string();
    match format {
        DataFormat::PairsJsonl => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
            let mut out = Vec::new();
            for (index, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: PairRow = serde_json::from_str(line)
                    .map_err(|e| Error::parse(&display, index + 1, e.to_string()))?;
                let lang = row.language.unwrap_or(language);
                let id = row.id.unwrap_or_else(|| format!("{lang}-{index}"));
                let label = bit(row.label, &id)?;
                out.push(finish_pair(PairExample {
                    id,
                    language: lang,
                    text_a: row.text_0,
                    text_b: row.text_1,
                    label,
                })?);
            }
            Ok(out)
        }
        DataFormat::PairsCsv => {
            let mut reader = csv::Reader::from_path(path)
                .map_err(|e| Error::parse(&display, 1, e.to_string()))?;
            let headers = reader
                .headers()
                .map_err(|e| Error::parse(&display, 1, e.to_string()))?
                .clone();
            let col = |name: &str| headers.iter().position(|h| h == name);
            let (a_col, b_col, label_col) = match (col("text_0"), col("text_1"), col("label")) {
                (Some(a), Some(b), Some(l)) => (a, b, l),
                _ => {
                    return Err(Error::parse(
                        &display,
                        1,
                        "pair CSV needs text_0, text_1, label columns",
                    ))
                }
            };
            let mut out = Vec::new();
            for (index, record) in reader.records().enumerate() {
                let line = index + 2;
                let record = record.map_err(|e| Error::parse(&display, line, e.to_string()))?;
                let id = format!("{language}-{index}");
                let raw = record.get(label_col).unwrap_or("").trim();
                let value: i64 = raw
                    .parse()
                    .map_err(|_| Error::parse(&display, line, format!("bad label '{raw}'")))?;
                out.push(finish_pair(PairExample {
                    id: id.clone(),
                    language,
                    text_a: record.get(a_col).unwrap_or("").to_string(),
                    text_b: record.get(b_col).unwrap_or("").to_string(),
                    label: bit(value, &id)?,
                })?);
            }
            Ok(out)
        }
        _ => Err(Error::Config(format!(
            "format {format:?} holds single texts; use load_dataset"
        ))),
    }
}

fn finish_pair(mut pair: PairExample) -> Result<PairExample> {
    pair.text_a = normalize_text(&pair.text_a);
    pair.text_b = normalize_text(&pair.text_b);
    if pair.text_a.is_empty() || pair.text_b.is_empty() {
        return Err(Error::EmptyText { id: pair.id });
    }
    pair.validate()?;
    Ok(pair)
}

/// Build Task C training pairs from rephrased examples. Each (text,
/// rephrase) becomes one pair whose order is a seeded coin flip — or both
/// orders when `augment_both_orders` is set — with the label marking the
/// sarcastic side.
pub fn build_pairs(
    examples: &[TextExample],
    augment_both_orders: bool,
    seed: u64,
) -> Result<Vec<PairExample>> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(examples.len() * if augment_both_orders { 2 } else { 1 });
    for ex in examples {
        let rephrase = ex.rephrase.as_ref().ok_or_else(|| Error::MissingRephrase {
            id: ex.id.clone(),
        })?;
        if augment_both_orders {
            out.push(finish_pair(PairExample {
                id: format!("{}-0", ex.id),
                language: ex.language,
                text_a: ex.text.clone(),
                text_b: rephrase.clone(),
                label: 0,
            })?);
            out.push(finish_pair(PairExample {
                id: format!("{}-1", ex.id),
                language: ex.language,
                text_a: rephrase.clone(),
                text_b: ex.text.clone(),
                label: 1,
            })?);
        } else {
            let flipped = rng.coin();
            let (a, b, label) = if flipped {
                (rephrase.clone(), ex.text.clone(), 1)
            } else {
                (ex.text.clone(), rephrase.clone(), 0)
            };
            out.push(finish_pair(PairExample {
                id: ex.id.clone(),
                language: ex.language,
                text_a: a,
                text_b: b,
                label,
            })?);
        }
    }
    Ok(out)
}

/// Seeded shuffle followed by contiguous slices: the first `n % k` folds
/// take `n/k + 1` ids, the rest `n/k`, so sizes never differ by more than 1.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::InvalidFoldCount { n: ids.len(), k });
    }
    let mut shuffled: Vec<&String> = ids.iter().collect();
    let mut rng = SplitMix64::new(seed);
    seeds::shuffle(&mut shuffled, &mut rng);

    let mut assignments = BTreeMap::new();
    let base = ids.len() / k;
    let remainder = ids.len() % k;
    let mut cursor = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        for id in &shuffled[cursor..cursor + size] {
            if assignments.insert((*id).clone(), fold).is_some() {
                return Err(Error::Schema(format!("duplicate id '{id}' in fold split")));
            }
        }
        cursor += size;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

/// Stratified variant: shuffle within each label group, then deal the
/// grouped sequence round-robin across folds. Keeps both the global balance
/// (sizes differ by at most 1) and near-equal per-label counts per fold.
pub fn kfold_split_stratified(
    ids_with_labels: &[(String, u8)],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if ids_with_labels.len() < k {
        return Err(Error::InvalidFoldCount {
            n: ids_with_labels.len(),
            k,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut by_label: BTreeMap<u8, Vec<&String>> = BTreeMap::new();
    for (id, label) in ids_with_labels {
        by_label.entry(*label).or_default().push(id);
    }
    let mut dealt: Vec<&String> = Vec::with_capacity(ids_with_labels.len());
    for group in by_label.values_mut() {
        seeds::shuffle(group, &mut rng);
        dealt.extend(group.iter().copied());
    }
    let mut assignments = BTreeMap::new();
    for (position, id) in dealt.iter().enumerate() {
        if assignments.insert((*id).clone(), position % k).is_some() {
            return Err(Error::Schema(format!("duplicate id '{id}' in fold split")));
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

/// Exact counts over a dataset.
pub fn corpus_stats(examples: &[TextExample]) -> CorpusStats {
    let mut stats = CorpusStats {
        total: examples.len(),
        ..CorpusStats::default()
    };
    for ex in examples {
        *stats.per_language.entry(ex.language).or_insert(0) += 1;
        match ex.sarcastic {
            Some(1) => stats.positives += 1,
            Some(_) => stats.negatives += 1,
            None => {}
        }
        if let Some(bits) = &ex.sublabels {
            for (count, &b) in stats.sublabel_counts.iter_mut().zip(bits) {
                *count += usize::from(b);
            }
        }
        if ex.rephrase.is_some() {
            stats.with_rephrase += 1;
        }
    }
    stats
}
