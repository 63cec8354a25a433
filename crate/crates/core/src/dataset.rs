//! Sentence datasets and external score tables, both stored as line-delimited
//! JSON.
//!
//! A dataset line carries `text` and `concept`, optionally `id`, `provision`
//! and `value` (a relevance label). A score line carries `id` and a numeric
//! `value`, either a JSON number or a numeric string. Lines without an `id`
//! are keyed `line-<N>` with `N` the 1-based line number.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::label::RelevanceLabel;

/// One annotated (or to-be-annotated) sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub concept: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provision: Option<String>,
    #[serde(rename = "value", skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<RelevanceLabel>,
}

/// Key used for records that carry no explicit id.
pub fn line_id(line: usize) -> String {
    format!("line-{line}")
}

/// A validated, immutable collection of sentences grouped by concept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<SentenceRecord>,
    by_id: HashMap<String, usize>,
    by_concept: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and non-empty text/concept.
    pub fn from_records(records: Vec<SentenceRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_concept: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, record) in records.iter().enumerate() {
            if record.text.is_empty() {
                return Err(Error::MissingField { line: pos + 1, field: "text" });
            }
            if record.concept.is_empty() {
                return Err(Error::MissingField { line: pos + 1, field: "concept" });
            }
            if by_id.insert(record.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            by_concept.entry(record.concept.clone()).or_default().push(pos);
        }
        Ok(Dataset {
            records,
            by_id,
            by_concept,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_dataset(&text)
    }

    /// Records in input order.
    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SentenceRecord> {
        self.by_id.get(id).map(|&pos| &self.records[pos])
    }

    /// Concept keys in ascending order.
    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.by_concept.keys().map(String::as_str)
    }

    pub fn num_concepts(&self) -> usize {
        self.by_concept.len()
    }

    pub fn contains_concept(&self, concept: &str) -> bool {
        self.by_concept.contains_key(concept)
    }

    /// Records of one concept in input order; empty for unknown concepts.
    pub fn concept_records(&self, concept: &str) -> impl Iterator<Item = &SentenceRecord> {
        self.by_concept
            .get(concept)
            .map(Vec::as_slice)
            .unwrap_or_default()
            .iter()
            .map(|&pos| &self.records[pos])
    }

    /// Record ids of one concept in input order.
    pub fn concept_ids(&self, concept: &str) -> impl Iterator<Item = &str> {
        self.concept_records(concept).map(|r| r.id.as_str())
    }

    /// Number of sentences for `concept`.
    pub fn concept_len(&self, concept: &str) -> usize {
        self.by_concept.get(concept).map_or(0, Vec::len)
    }

    /// Sub-dataset holding only the given concepts, input order preserved.
    pub fn restrict<'a, I>(&self, concepts: I) -> Dataset
    where
        I: IntoIterator<Item = &'a str>,
    {
        let keep: BTreeSet<&str> = concepts.into_iter().collect();
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(r.concept.as_str()))
            .cloned()
            .collect();
        // ids were unique in self, so they stay unique
        Dataset::from_records(records).expect("subset of a valid dataset is valid")
    }

    /// Gold relevance values in input order; fails on the first unlabeled record.
    pub fn gold_values(&self) -> Result<Vec<u8>> {
        self.records
            .iter()
            .map(|r| {
                r.gold_label
                    .map(RelevanceLabel::value)
                    .ok_or_else(|| Error::MissingGoldLabel(r.id.clone()))
            })
            .collect()
    }

    /// Canonical line-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

fn string_field(obj: &Map<String, Value>, name: &'static str, line: usize) -> Result<Option<String>> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(Error::MalformedLine {
            line,
            message: format!("field `{name}` must be a string, got {other}"),
        }),
    }
}

fn id_field(obj: &Map<String, Value>, line: usize) -> Result<String> {
    match obj.get("id") {
        None | Some(Value::Null) => Ok(line_id(line)),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(Error::MalformedLine {
            line,
            message: format!("field `id` must be a non-empty string or number, got {other}"),
        }),
    }
}

fn parse_object(raw: &str, line: usize) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(other) => Err(Error::MalformedLine {
            line,
            message: format!("expected an object, got {other}"),
        }),
        Err(e) => Err(Error::MalformedLine {
            line,
            message: e.to_string(),
        }),
    }
}

/// Parses a line-delimited JSON dataset. Blank lines are skipped but still
/// counted for line numbering.
pub fn parse_dataset(input: &str) -> Result<Dataset> {
    let mut records = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = parse_object(raw, line)?;
        let id = id_field(&obj, line)?;
        let text = string_field(&obj, "text", line)?
            .filter(|s| !s.is_empty())
            .ok_or(Error::MissingField { line, field: "text" })?;
        let concept = string_field(&obj, "concept", line)?
            .filter(|s| !s.is_empty())
            .ok_or(Error::MissingField { line, field: "concept" })?;
        let provision = string_field(&obj, "provision", line)?;
        let gold_label = match obj.get("value") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.parse::<RelevanceLabel>()?),
            Some(Value::Number(n)) => match n.as_i64() {
                Some(v) => Some(RelevanceLabel::from_value(v)?),
                None => return Err(Error::UnknownLabel(n.to_string())),
            },
            Some(other) => return Err(Error::UnknownLabel(other.to_string())),
        };
        records.push(SentenceRecord {
            id,
            text,
            concept,
            provision,
            gold_label,
        });
    }
    Dataset::from_records(records)
}

/// Real-valued relevance predictions keyed by record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<String, f64>,
    pub provenance: String,
}

impl ScoreTable {
    pub fn new(provenance: impl Into<String>) -> Self {
        ScoreTable {
            entries: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    /// Builds a table from `(id, score)` pairs; rejects non-finite scores and
    /// duplicate ids.
    pub fn from_entries<I, S>(provenance: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut table = ScoreTable::new(provenance);
        for (id, score) in entries {
            table.insert(id.into(), score)?;
        }
        Ok(table)
    }

    /// Scores equal to the gold relevance values of `dataset`.
    pub fn from_gold(dataset: &Dataset) -> Result<Self> {
        let values = dataset.gold_values()?;
        ScoreTable::from_entries(
            "gold",
            dataset
                .records()
                .iter()
                .zip(values)
                .map(|(r, v)| (r.id.clone(), f64::from(v))),
        )
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = parse_scores(&text)?;
        table.provenance = path.display().to_string();
        Ok(table)
    }

    pub fn insert(&mut self, id: String, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFiniteScore { id });
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.insert(id, score);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries.get(id).copied()
    }

    /// Like [`ScoreTable::get`] but fails with the missing id.
    pub fn score(&self, id: &str) -> Result<f64> {
        self.get(id).ok_or_else(|| Error::MissingScore(id.to_string()))
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a table with `f` applied to every score.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<ScoreTable> {
        ScoreTable::from_entries(self.provenance.clone(), self.iter().map(|(id, s)| (id, f(s))))
    }

    /// Line-delimited JSON in ascending id order, scores as quoted decimal
    /// strings at full precision.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, score) in self.iter() {
            let line = serde_json::json!({ "id": id, "value": score.to_string() });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses a line-delimited JSON score file.
pub fn parse_scores(input: &str) -> Result<ScoreTable> {
    let mut table = ScoreTable::new("");
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = parse_object(raw, line)?;
        let id = id_field(&obj, line)?;
        let score = match obj.get("value") {
            Some(Value::Number(n)) => n.as_f64().ok_or_else(|| Error::NonNumericScore {
                id: id.clone(),
                value: n.to_string(),
            })?,
            Some(Value::String(s)) => s.trim().parse::<f64>().map_err(|_| Error::NonNumericScore {
                id: id.clone(),
                value: s.clone(),
            })?,
            Some(other) => {
                return Err(Error::NonNumericScore {
                    id,
                    value: other.to_string(),
                })
            }
            None => return Err(Error::MissingField { line, field: "value" }),
        };
        table.insert(id, score)?;
    }
    Ok(table)
}

/// Summary counts of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub concepts: usize,
    pub sentences: usize,
    pub unlabeled: usize,
    /// Sentences per concept, ascending concept order.
    pub per_concept: BTreeMap<String, usize>,
    /// Sentences per label, keyed by canonical label string.
    pub per_label: BTreeMap<String, usize>,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let per_concept: BTreeMap<String, usize> = dataset
        .concepts()
        .map(|c| (c.to_string(), dataset.concept_len(c)))
        .collect();
    let mut per_label: BTreeMap<String, usize> = RelevanceLabel::ALL
        .iter()
        .map(|l| (l.as_str().to_string(), 0))
        .collect();
    let mut unlabeled = 0;
    for record in dataset.records() {
        match record.gold_label {
            Some(label) => *per_label.get_mut(label.as_str()).expect("all labels present") += 1,
            None => unlabeled += 1,
        }
    }
    DatasetStats {
        concepts: per_concept.len(),
        sentences: dataset.len(),
        unlabeled,
        per_concept,
        per_label,
    }
}
