//! Context-grouped stereotype/anti-stereotype corpora.
//!
//! The training corpus is a flat list of labeled sentences. Sentences that
//! share a `context_id` describe the same scenario and differ in the social
//! association they assert; all pair semantics downstream (losses, Δsim,
//! batching) are restricted to within-context pairs, so loading preserves the
//! grouping exactly as given.
//!
//! Canonical file format is JSONL, one record per line with keys
//! `context_id`, `category`, `label`, `text`. CSV with the same column names
//! is accepted as a convenience. Evaluation sets are JSONL rows carrying a
//! masked sentence plus its ground-truth stereotype/anti-stereotype pair.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// The five bias axes a record can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Caste,
    Religion,
    Gender,
    Disability,
    Socioeconomic,
}

impl Category {
    /// All categories in canonical order.
    pub const ALL: [Category; 5] = [
        Category::Caste,
        Category::Religion,
        Category::Gender,
        Category::Disability,
        Category::Socioeconomic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Caste => "caste",
            Category::Religion => "religion",
            Category::Gender => "gender",
            Category::Disability => "disability",
            Category::Socioeconomic => "socioeconomic",
        }
    }

    /// Case-insensitive parse of a category name.
    pub fn parse(raw: &str) -> Option<Category> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "caste" => Some(Category::Caste),
            "religion" => Some(Category::Religion),
            "gender" => Some(Category::Gender),
            "disability" => Some(Category::Disability),
            "socioeconomic" => Some(Category::Socioeconomic),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Polarity of a sentence within its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Stereotype,
    AntiStereotype,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Stereotype => "stereotype",
            Label::AntiStereotype => "anti_stereotype",
        }
    }

    pub fn parse(raw: &str) -> Option<Label> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "stereotype" => Some(Label::Stereotype),
            "anti_stereotype" | "anti-stereotype" => Some(Label::AntiStereotype),
            _ => None,
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Stereotype => Label::AntiStereotype,
            Label::AntiStereotype => Label::Stereotype,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled sentence tied to a context and a bias category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub context_id: String,
    pub category: Category,
    pub label: Label,
    pub text: String,
}

/// All sentences sharing one context, partitioned by label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextGroup {
    pub context_id: String,
    pub category: Category,
    pub stereotypes: Vec<SentenceRecord>,
    pub anti_stereotypes: Vec<SentenceRecord>,
}

impl ContextGroup {
    pub fn len(&self) -> usize {
        self.stereotypes.len() + self.anti_stereotypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stereotypes first, then anti-stereotypes.
    pub fn sentences(&self) -> impl Iterator<Item = &SentenceRecord> {
        self.stereotypes.iter().chain(self.anti_stereotypes.iter())
    }
}

/// One masked evaluation prompt plus its ground-truth sentence pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub category: Category,
    /// Contains the literal token `<MASK>` at least once.
    pub masked_sentence: String,
    pub stereotype_sentence: String,
    pub anti_stereotype_sentence: String,
    /// Free text for the prompt's bias-type slot; defaults to the category name.
    pub bias_type_hint: String,
}

/// A context-level train/validation partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<ContextGroup>,
    pub validation: Vec<ContextGroup>,
    pub seed: u64,
    pub fraction: f64,
}

/// On-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("row {row}: missing field `{field}`")]
    MissingField { row: usize, field: &'static str },
    #[error("row {row}: unknown category `{value}`")]
    UnknownCategory { row: usize, value: String },
    #[error("row {row}: unknown label `{value}` (expected `stereotype` or `anti_stereotype`)")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },
    #[error("`{path}` contains no records")]
    EmptyCorpus { path: PathBuf },
    #[error("row {row}: masked_sentence lacks the `<MASK>` token")]
    MaskTokenMissing { row: usize },
    #[error("need at least 2 context groups to split, found {found}")]
    TooFewContexts { found: usize },
    #[error("split fraction must lie strictly between 0 and 1, got {value}")]
    InvalidFraction { value: f64 },
    #[error("row {row}: malformed JSON: {reason}")]
    MalformedJson { row: usize, reason: String },
    #[error("`{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("`{path}`: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// The literal mask token expected by the unmasking prompt.
pub const MASK_TOKEN: &str = "<MASK>";
/// Bracketed variant occasionally found in the wild; normalized on load.
const ALT_MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Default, Deserialize)]
struct RawSentenceRow {
    context_id: Option<String>,
    category: Option<String>,
    label: Option<String>,
    text: Option<String>,
}

fn require<'a>(
    row: usize,
    field: &'static str,
    value: &'a Option<String>,
) -> Result<&'a str, CorpusError> {
    match value.as_deref().map(str::trim) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CorpusError::MissingField { row, field }),
    }
}

fn validate_sentence_row(row: usize, raw: RawSentenceRow) -> Result<SentenceRecord, CorpusError> {
    let context_id = require(row, "context_id", &raw.context_id)?.to_string();
    let category_raw = require(row, "category", &raw.category)?;
    let category = Category::parse(category_raw).ok_or_else(|| CorpusError::UnknownCategory {
        row,
        value: category_raw.to_string(),
    })?;
    let label_raw = require(row, "label", &raw.label)?;
    let label = Label::parse(label_raw).ok_or_else(|| CorpusError::UnknownLabel {
        row,
        value: label_raw.to_string(),
    })?;
    let text = require(row, "text", &raw.text)?.to_string();
    Ok(SentenceRecord {
        context_id,
        category,
        label,
        text,
    })
}

/// Load the flat record list in file order, trimming whitespace and skipping
/// blank lines. Row numbers in errors are 1-based physical lines (JSONL) or
/// data rows (CSV).
pub fn load_records(path: &Path, format: CorpusFormat) -> Result<Vec<SentenceRecord>, CorpusError> {
    let records = match format {
        CorpusFormat::Jsonl => {
            let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let mut records = Vec::new();
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let row = idx + 1;
                let line = line.map_err(|source| CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawSentenceRow =
                    serde_json::from_str(&line).map_err(|e| CorpusError::MalformedJson {
                        row,
                        reason: e.to_string(),
                    })?;
                records.push(validate_sentence_row(row, raw)?);
            }
            records
        }
        CorpusFormat::Csv => {
            let mut reader =
                csv::Reader::from_path(path).map_err(|source| CorpusError::Csv {
                    path: path.to_path_buf(),
                    source,
                })?;
            let headers = reader
                .headers()
                .map_err(|source| CorpusError::Csv {
                    path: path.to_path_buf(),
                    source,
                })?
                .clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let cols = [
                col("context_id"),
                col("category"),
                col("label"),
                col("text"),
            ];
            let mut records = Vec::new();
            for (idx, entry) in reader.records().enumerate() {
                let row = idx + 1;
                let entry = entry.map_err(|source| CorpusError::Csv {
                    path: path.to_path_buf(),
                    source,
                })?;
                let field = |i: usize| -> Option<String> {
                    cols[i].and_then(|c| entry.get(c)).map(|s| s.to_string())
                };
                let raw = RawSentenceRow {
                    context_id: field(0),
                    category: field(1),
                    label: field(2),
                    text: field(3),
                };
                records.push(validate_sentence_row(row, raw)?);
            }
            records
        }
    };
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok(records)
}

/// Group records by `context_id`, preserving first-appearance order of
/// contexts and file order of sentences within each group. Rejects contexts
/// whose members disagree on category.
pub fn group_records(records: Vec<SentenceRecord>) -> Result<Vec<ContextGroup>, CorpusError> {
    let mut groups: Vec<ContextGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (idx, record) in records.into_iter().enumerate() {
        let row = idx + 1;
        let slot = match index.get(&record.context_id) {
            Some(&i) => i,
            None => {
                index.insert(record.context_id.clone(), groups.len());
                groups.push(ContextGroup {
                    context_id: record.context_id.clone(),
                    category: record.category,
                    stereotypes: Vec::new(),
                    anti_stereotypes: Vec::new(),
                });
                groups.len() - 1
            }
        };
        let group = &mut groups[slot];
        if group.category != record.category {
            return Err(CorpusError::InvalidRecord {
                row,
                reason: format!(
                    "context `{}` previously seen with category `{}`, now `{}`",
                    record.context_id, group.category, record.category
                ),
            });
        }
        match record.label {
            Label::Stereotype => group.stereotypes.push(record),
            Label::AntiStereotype => group.anti_stereotypes.push(record),
        }
    }
    Ok(groups)
}

/// Load and group a training corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ContextGroup>, CorpusError> {
    group_records(load_records(path, format)?)
}

/// Serialize records back to canonical JSONL (one record per line, stable key
/// order). `load_records` followed by `write_records_jsonl` is content-identical
/// to the trimmed input.
pub fn write_records_jsonl(records: &[SentenceRecord], out: &mut dyn Write) -> std::io::Result<()> {
    for record in records {
        // serde_json preserves struct field order, which is the canonical key order.
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
struct RawEvalRow {
    item_id: Option<String>,
    category: Option<String>,
    masked_sentence: Option<String>,
    stereotype_sentence: Option<String>,
    anti_stereotype_sentence: Option<String>,
    bias_type_hint: Option<String>,
}

/// Load a masked evaluation set from JSONL.
///
/// `item_id` defaults to `item-{row:04}` and `bias_type_hint` to the category
/// name when absent. `[MASK]` is normalized to `<MASK>` with a warning; a row
/// without any mask token after normalization is rejected.
pub fn load_eval_set(path: &Path) -> Result<Vec<EvalItem>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvalRow =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedJson {
                row,
                reason: e.to_string(),
            })?;
        let category_raw = require(row, "category", &raw.category)?;
        let category = Category::parse(category_raw).ok_or_else(|| CorpusError::UnknownCategory {
            row,
            value: category_raw.to_string(),
        })?;
        let mut masked = require(row, "masked_sentence", &raw.masked_sentence)?.to_string();
        if masked.contains(ALT_MASK_TOKEN) {
            log::warn!("row {row}: normalizing `{ALT_MASK_TOKEN}` to `{MASK_TOKEN}`");
            masked = masked.replace(ALT_MASK_TOKEN, MASK_TOKEN);
        }
        if !masked.contains(MASK_TOKEN) {
            return Err(CorpusError::MaskTokenMissing { row });
        }
        let stereotype_sentence =
            require(row, "stereotype_sentence", &raw.stereotype_sentence)?.to_string();
        let anti_stereotype_sentence = require(
            row,
            "anti_stereotype_sentence",
            &raw.anti_stereotype_sentence,
        )?
        .to_string();
        if stereotype_sentence == anti_stereotype_sentence {
            return Err(CorpusError::InvalidRecord {
                row,
                reason: "stereotype_sentence and anti_stereotype_sentence are identical".into(),
            });
        }
        let item_id = match raw.item_id.as_deref().map(str::trim) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => format!("item-{row:04}"),
        };
        let bias_type_hint = raw
            .bias_type_hint
            .map(|h| h.trim().to_string())
            .unwrap_or_else(|| category.as_str().to_string());
        items.push(EvalItem {
            item_id,
            category,
            masked_sentence: masked,
            stereotype_sentence,
            anti_stereotype_sentence,
            bias_type_hint,
        });
    }
    if items.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok(items)
}

/// Partition groups into train/validation by context, never by sentence.
///
/// Validation receives `ceil(fraction * n)` contexts so it is never empty.
/// Contexts are shuffled under a seeded generator; both sides are returned
/// sorted by `context_id` for stable output.
pub fn split_by_context(
    groups: &[ContextGroup],
    fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction { value: fraction });
    }
    if groups.len() < 2 {
        return Err(CorpusError::TooFewContexts {
            found: groups.len(),
        });
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // Shuffle a context_id-sorted index so the split depends only on the seed
    // and the set of contexts, not on file row order.
    order.sort_by(|&a, &b| groups[a].context_id.cmp(&groups[b].context_id));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_validation = (fraction * groups.len() as f64).ceil() as usize;
    let mut validation: Vec<ContextGroup> = order[..n_validation]
        .iter()
        .map(|&i| groups[i].clone())
        .collect();
    let mut train: Vec<ContextGroup> = order[n_validation..]
        .iter()
        .map(|&i| groups[i].clone())
        .collect();
    validation.sort_by(|a, b| a.context_id.cmp(&b.context_id));
    train.sort_by(|a, b| a.context_id.cmp(&b.context_id));
    Ok(CorpusSplit {
        train,
        validation,
        seed,
        fraction,
    })
}

/// Per-category sentence and context counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub contexts: usize,
    pub stereotypes: usize,
    pub anti_stereotypes: usize,
}

impl CategoryCounts {
    pub fn total_sentences(&self) -> usize {
        self.stereotypes + self.anti_stereotypes
    }
}

/// Corpus distribution summary, per category and overall.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_category: Vec<(Category, CategoryCounts)>,
    pub total: CategoryCounts,
}

impl CorpusStats {
    pub fn from_groups(groups: &[ContextGroup]) -> CorpusStats {
        let mut map: HashMap<Category, CategoryCounts> = HashMap::new();
        let mut total = CategoryCounts::default();
        for group in groups {
            let entry = map.entry(group.category).or_default();
            entry.contexts += 1;
            entry.stereotypes += group.stereotypes.len();
            entry.anti_stereotypes += group.anti_stereotypes.len();
            total.contexts += 1;
            total.stereotypes += group.stereotypes.len();
            total.anti_stereotypes += group.anti_stereotypes.len();
        }
        let per_category = Category::ALL
            .iter()
            .filter_map(|&c| map.remove(&c).map(|counts| (c, counts)))
            .collect();
        CorpusStats {
            per_category,
            total,
        }
    }

    pub fn counts_for(&self, category: Category) -> Option<&CategoryCounts> {
        self.per_category
            .iter()
            .find(|(c, _)| *c == category)
            .map(|(_, counts)| counts)
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>9} {:>12} {:>17} {:>9}",
            "category", "contexts", "stereotypes", "anti_stereotypes", "total"
        )?;
        for (category, c) in &self.per_category {
            writeln!(
                f,
                "{:<14} {:>9} {:>12} {:>17} {:>9}",
                category.as_str(),
                c.contexts,
                c.stereotypes,
                c.anti_stereotypes,
                c.total_sentences()
            )?;
        }
        write!(
            f,
            "{:<14} {:>9} {:>12} {:>17} {:>9}",
            "total",
            self.total.contexts,
            self.total.stereotypes,
            self.total.anti_stereotypes,
            self.total.total_sentences()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::Builder::new()
            .suffix(&format!(".{ext}"))
            .tempfile()
            .unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    const TINY_JSONL: &str = r#"{"context_id":"c1","category":"caste","label":"stereotype","text":"alpha one"}
{"context_id":"c1","category":"caste","label":"anti_stereotype","text":"alpha two"}
{"context_id":"c2","category":"gender","label":"stereotype","text":"beta one"}
{"context_id":"c2","category":"gender","label":"stereotype","text":"beta two"}
{"context_id":"c2","category":"gender","label":"anti_stereotype","text":"beta three"}
"#;

    #[test]
    fn loads_and_groups_jsonl() {
        let file = write_temp(TINY_JSONL, "jsonl");
        let groups = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].context_id, "c1");
        assert_eq!(groups[0].stereotypes.len(), 1);
        assert_eq!(groups[0].anti_stereotypes.len(), 1);
        assert_eq!(groups[1].category, Category::Gender);
        assert_eq!(groups[1].stereotypes.len(), 2);
        assert_eq!(groups[1].anti_stereotypes.len(), 1);
    }

    #[test]
    fn loads_csv_with_same_columns() {
        let csv = "context_id,category,label,text\n\
                   c1,caste,stereotype,alpha one\n\
                   c1,caste,anti_stereotype,\"alpha, two\"\n";
        let file = write_temp(csv, "csv");
        let groups = load_corpus(file.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].anti_stereotypes[0].text, "alpha, two");
    }

    #[test]
    fn empty_file_is_rejected() {
        let file = write_temp("", "jsonl");
        match load_corpus(file.path(), CorpusFormat::Jsonl) {
            Err(CorpusError::EmptyCorpus { .. }) => {}
            other => panic!("expected EmptyCorpus, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_reports_row() {
        let bad = r#"{"context_id":"c1","category":"caste","label":"stereotype","text":"ok"}
{"context_id":"c1","category":"caste","label":"stereotype"}
"#;
        let file = write_temp(bad, "jsonl");
        match load_records(file.path(), CorpusFormat::Jsonl) {
            Err(CorpusError::MissingField { row: 2, field }) => assert_eq!(field, "text"),
            other => panic!("expected MissingField at row 2, got {other:?}"),
        }
    }

    #[test]
    fn unknown_category_and_label_are_rejected() {
        let file = write_temp(
            r#"{"context_id":"c1","category":"height","label":"stereotype","text":"x"}"#,
            "jsonl",
        );
        assert!(matches!(
            load_records(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::UnknownCategory { row: 1, .. })
        ));
        let file = write_temp(
            r#"{"context_id":"c1","category":"caste","label":"neutral","text":"x"}"#,
            "jsonl",
        );
        assert!(matches!(
            load_records(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::UnknownLabel { row: 1, .. })
        ));
    }

    #[test]
    fn context_category_conflict_is_rejected() {
        let bad = r#"{"context_id":"c1","category":"caste","label":"stereotype","text":"x"}
{"context_id":"c1","category":"gender","label":"stereotype","text":"y"}
"#;
        let file = write_temp(bad, "jsonl");
        assert!(matches!(
            load_corpus(file.path(), CorpusFormat::Jsonl),
            Err(CorpusError::InvalidRecord { row: 2, .. })
        ));
    }

    #[test]
    fn grouping_is_a_partition() {
        let file = write_temp(TINY_JSONL, "jsonl");
        let records = load_records(file.path(), CorpusFormat::Jsonl).unwrap();
        let n = records.len();
        let groups = group_records(records).unwrap();
        assert_eq!(groups.iter().map(|g| g.len()).sum::<usize>(), n);
    }

    #[test]
    fn jsonl_round_trip_is_content_identical() {
        let file = write_temp(TINY_JSONL, "jsonl");
        let records = load_records(file.path(), CorpusFormat::Jsonl).unwrap();
        let mut buf = Vec::new();
        write_records_jsonl(&records, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), TINY_JSONL);
    }

    fn synthetic_groups(n: usize) -> Vec<ContextGroup> {
        (0..n)
            .map(|i| {
                let context_id = format!("ctx-{i:03}");
                let category = Category::ALL[i % Category::ALL.len()];
                let make = |label: Label, k: usize| SentenceRecord {
                    context_id: context_id.clone(),
                    category,
                    label,
                    text: format!("sentence {i} {k}"),
                };
                ContextGroup {
                    context_id: context_id.clone(),
                    category,
                    stereotypes: vec![make(Label::Stereotype, 0), make(Label::Stereotype, 1)],
                    anti_stereotypes: vec![make(Label::AntiStereotype, 2)],
                }
            })
            .collect()
    }

    #[test]
    fn split_fraction_rounds_validation_up() {
        let groups = synthetic_groups(10);
        let split = split_by_context(&groups, 0.2, 7).unwrap();
        assert_eq!(split.validation.len(), 2);
        assert_eq!(split.train.len(), 8);

        let groups = synthetic_groups(119);
        let split = split_by_context(&groups, 0.2, 7).unwrap();
        assert_eq!(split.validation.len(), 24);
        assert_eq!(split.train.len(), 95);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let groups = synthetic_groups(10);
        let a = split_by_context(&groups, 0.2, 7).unwrap();
        let b = split_by_context(&groups, 0.2, 7).unwrap();
        let ids = |side: &[ContextGroup]| -> Vec<String> {
            side.iter().map(|g| g.context_id.clone()).collect()
        };
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.validation), ids(&b.validation));
        for v in &a.validation {
            assert!(a.train.iter().all(|t| t.context_id != v.context_id));
        }
        // A different seed should eventually pick a different validation set.
        let c = split_by_context(&groups, 0.2, 8).unwrap();
        let d = split_by_context(&groups, 0.2, 9).unwrap();
        assert!(
            ids(&a.validation) != ids(&c.validation) || ids(&a.validation) != ids(&d.validation)
        );
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        let groups = synthetic_groups(1);
        assert!(matches!(
            split_by_context(&groups, 0.2, 0),
            Err(CorpusError::TooFewContexts { found: 1 })
        ));
        let groups = synthetic_groups(4);
        assert!(matches!(
            split_by_context(&groups, 0.0, 0),
            Err(CorpusError::InvalidFraction { .. })
        ));
        assert!(matches!(
            split_by_context(&groups, 1.0, 0),
            Err(CorpusError::InvalidFraction { .. })
        ));
    }

    #[test]
    fn eval_set_loads_and_normalizes_masks() {
        let jsonl = r#"{"item_id":"e1","category":"caste","masked_sentence":"The <MASK> family lived well.","stereotype_sentence":"s text","anti_stereotype_sentence":"a text","bias_type_hint":"caste"}
{"category":"gender","masked_sentence":"[MASK] fixed the engine and [MASK] smiled.","stereotype_sentence":"s2","anti_stereotype_sentence":"a2"}
"#;
        let file = write_temp(jsonl, "jsonl");
        let items = load_eval_set(file.path()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].item_id, "e1");
        assert_eq!(
            items[1].masked_sentence,
            "<MASK> fixed the engine and <MASK> smiled."
        );
        assert_eq!(items[1].item_id, "item-0002");
        assert_eq!(items[1].bias_type_hint, "gender");
    }

    #[test]
    fn eval_set_rejects_missing_mask_and_identical_pair() {
        let no_mask = r#"{"category":"caste","masked_sentence":"no token here","stereotype_sentence":"s","anti_stereotype_sentence":"a"}"#;
        let file = write_temp(no_mask, "jsonl");
        assert!(matches!(
            load_eval_set(file.path()),
            Err(CorpusError::MaskTokenMissing { row: 1 })
        ));

        let same_pair = r#"{"category":"caste","masked_sentence":"a <MASK> b","stereotype_sentence":"same","anti_stereotype_sentence":"same"}"#;
        let file = write_temp(same_pair, "jsonl");
        assert!(matches!(
            load_eval_set(file.path()),
            Err(CorpusError::InvalidRecord { row: 1, .. })
        ));
    }

    #[test]
    fn multi_mask_rows_are_accepted() {
        let jsonl = r#"{"category":"religion","masked_sentence":"<MASK> met <MASK> at the market.","stereotype_sentence":"s","anti_stereotype_sentence":"a"}"#;
        let file = write_temp(jsonl, "jsonl");
        let items = load_eval_set(file.path()).unwrap();
        assert_eq!(items[0].masked_sentence.matches(MASK_TOKEN).count(), 2);
    }

    #[test]
    fn stats_reflect_distribution() {
        let file = write_temp(TINY_JSONL, "jsonl");
        let groups = load_corpus(file.path(), CorpusFormat::Jsonl).unwrap();
        let stats = CorpusStats::from_groups(&groups);
        assert_eq!(stats.total.contexts, 2);
        assert_eq!(stats.total.stereotypes, 3);
        assert_eq!(stats.total.anti_stereotypes, 2);
        let caste = stats.counts_for(Category::Caste).unwrap();
        assert_eq!(caste.contexts, 1);
        assert_eq!(caste.total_sentences(), 2);
    }
}
