//! Per-concept budgeted selection of training sentences.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::dataset::{Dataset, ScoreTable};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, shuffle};

/// Maximum number of sentences per concept. `Full` means no cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Budget {
    Limit(usize),
    Full,
}

impl Budget {
    pub fn cap(self, n: usize) -> usize {
        match self {
            Budget::Limit(k) => k.min(n),
            Budget::Full => n,
        }
    }

    /// 100, 200, ..., 1000.
    pub fn default_grid() -> Vec<Budget> {
        (1..=10).map(|i| Budget::Limit(i * 100)).collect()
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Limit(k) => write!(f, "{k}"),
            Budget::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(Budget::Full);
        }
        s.parse::<usize>()
            .map(Budget::Limit)
            .map_err(|_| Error::Config(format!("invalid budget {s:?}")))
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Budget::Limit(k) => serializer.serialize_u64(*k as u64),
            Budget::Full => serializer.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(deserializer)? {
            Value::Number(n) => n
                .as_u64()
                .map(|k| Budget::Limit(k as usize))
                .ok_or_else(|| serde::de::Error::custom(format!("invalid budget {n}"))),
            Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("invalid budget {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionStrategy {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "top-k")]
    TopK,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::TopK => "top-k",
        }
    }
}

/// Selected record ids per concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSelection {
    pub selected: BTreeMap<String, Vec<String>>,
    pub k: Budget,
    pub strategy: SelectionStrategy,
    pub seed: Option<u64>,
}

impl SubsetSelection {
    pub fn total(&self) -> usize {
        self.selected.values().map(Vec::len).sum()
    }

    /// `{concept: [ids], "k": N, "strategy": "...", "seed": N}` with sorted
    /// keys; `seed` is omitted for deterministic strategies.
    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for (concept, ids) in &self.selected {
            map.insert(concept.clone(), serde_json::json!(ids));
        }
        map.insert("k".into(), serde_json::to_value(self.k).expect("budget serializes"));
        map.insert("strategy".into(), Value::String(self.strategy.as_str().into()));
        if let Some(seed) = self.seed {
            map.insert("seed".into(), serde_json::json!(seed));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("selection serializes")
    }
}

/// Uniform random sample of up to `k` sentences per concept.
///
/// Each concept's ids are sorted, then shuffled with a stream keyed by
/// `(seed, concept)` and truncated, so the draw for one concept does not
/// depend on record order or on the other concepts.
pub fn sample_random_k(dataset: &Dataset, k: Budget, seed: u64) -> SubsetSelection {
    let selected = dataset
        .concepts()
        .map(|concept| {
            let mut ids: Vec<&str> = dataset.concept_ids(concept).collect();
            ids.sort_unstable();
            let mut rng = keyed_rng("sample", seed, concept);
            shuffle(&mut rng, &mut ids);
            ids.truncate(k.cap(ids.len()));
            (concept.to_string(), ids.into_iter().map(str::to_string).collect())
        })
        .collect();
    SubsetSelection {
        selected,
        k,
        strategy: SelectionStrategy::Random,
        seed: Some(seed),
    }
}

/// Descending score, ascending id on ties.
pub(crate) fn by_score_desc(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Ids of one concept ordered by descending score (ties by ascending id).
pub fn rank_ids<'a>(dataset: &'a Dataset, scores: &ScoreTable, concept: &str) -> Result<Vec<(&'a str, f64)>> {
    let mut scored = dataset
        .concept_ids(concept)
        .map(|id| scores.score(id).map(|s| (id, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| by_score_desc(*a, *b));
    Ok(scored)
}

/// The `k` highest-scoring sentences of every concept.
pub fn select_top_k(dataset: &Dataset, scores: &ScoreTable, k: Budget) -> Result<SubsetSelection> {
    let mut selected = BTreeMap::new();
    for concept in dataset.concepts() {
        let ranked = rank_ids(dataset, scores, concept)?;
        let take = k.cap(ranked.len());
        selected.insert(
            concept.to_string(),
            ranked[..take].iter().map(|(id, _)| id.to_string()).collect(),
        );
    }
    Ok(SubsetSelection {
        selected,
        k,
        strategy: SelectionStrategy::TopK,
        seed: None,
    })
}

/// Total number of selected sentences, `Σ_j min(k, n_j)`, for each budget.
pub fn budget_curve(dataset: &Dataset, ks: &[Budget]) -> Result<Vec<(Budget, usize)>> {
    if ks.is_empty() {
        return Err(Error::Empty("budget list"));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let total = dataset.concepts().map(|c| k.cap(dataset.concept_len(c))).sum();
            (k, total)
        })
        .collect())
}
