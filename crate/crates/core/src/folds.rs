//! Concept-level fold assignment with category stratification.
//!
//! Concepts are split into six folds. Folds 0-3 are used for cross-validation
//! (each in turn as the validation fold, the remaining three for training) and
//! folds 4-5 are held out for testing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, shuffle};

pub const NUM_FOLDS: usize = 6;
pub const CV_FOLDS: [usize; 4] = [0, 1, 2, 3];
pub const TEST_FOLDS: [usize; 2] = [4, 5];
pub const NUM_CATEGORIES: u8 = 4;

/// Concept → category id in `0..4`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptCategories(BTreeMap<String, u8>);

impl ConceptCategories {
    pub fn new(map: BTreeMap<String, u8>) -> Result<Self> {
        for (concept, &cat) in &map {
            if cat >= NUM_CATEGORIES {
                return Err(Error::InvalidCategory {
                    concept: concept.clone(),
                    value: i64::from(cat),
                });
            }
        }
        Ok(ConceptCategories(map))
    }

    /// Every concept in category 0.
    pub fn uniform<'a>(concepts: impl IntoIterator<Item = &'a str>) -> Self {
        ConceptCategories(concepts.into_iter().map(|c| (c.to_string(), 0)).collect())
    }

    /// Parses a JSON object `{concept: 0..3}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, i64> = serde_json::from_str(text)?;
        let mut map = BTreeMap::new();
        for (concept, value) in raw {
            if !(0..i64::from(NUM_CATEGORIES)).contains(&value) {
                return Err(Error::InvalidCategory { concept, value });
            }
            map.insert(concept, value as u8);
        }
        Ok(ConceptCategories(map))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn get(&self, concept: &str) -> Option<u8> {
        self.0.get(concept).copied()
    }
}

/// Six folds of concept keys plus the CV/test designation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    /// Concepts of each fold, sorted.
    pub folds: [Vec<String>; NUM_FOLDS],
    pub cv_folds: [usize; 4],
    pub test_folds: [usize; 2],
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_of(&self, concept: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.binary_search_by(|c| c.as_str().cmp(concept)).is_ok())
    }

    /// Concepts in the given folds, ascending.
    pub fn concepts_in(&self, folds: &[usize]) -> Vec<&str> {
        let mut out: Vec<&str> = folds
            .iter()
            .flat_map(|&f| self.folds[f].iter().map(String::as_str))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn test_concepts(&self) -> Vec<&str> {
        self.concepts_in(&self.test_folds)
    }

    pub fn cv_concepts(&self) -> Vec<&str> {
        self.concepts_in(&self.cv_folds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold assignment serializes")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

// {"0": [...], ..., "5": [...], "cv": [...], "test": [...], "seed": N}
impl Serialize for FoldAssignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = Map::new();
        for (i, fold) in self.folds.iter().enumerate() {
            map.insert(i.to_string(), serde_json::json!(fold));
        }
        map.insert("cv".into(), serde_json::json!(self.cv_folds));
        map.insert("test".into(), serde_json::json!(self.test_folds));
        map.insert("seed".into(), serde_json::json!(self.seed));
        Value::Object(map).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FoldAssignment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut map = Map::<String, Value>::deserialize(deserializer)?;
        let mut take = |key: &str| {
            map.remove(key)
                .ok_or_else(|| D::Error::custom(format!("missing key {key:?}")))
        };
        let mut folds: [Vec<String>; NUM_FOLDS] = Default::default();
        for (i, fold) in folds.iter_mut().enumerate() {
            *fold = serde_json::from_value(take(&i.to_string())?).map_err(D::Error::custom)?;
            fold.sort();
        }
        let cv_folds: [usize; 4] = serde_json::from_value(take("cv")?).map_err(D::Error::custom)?;
        let test_folds: [usize; 2] = serde_json::from_value(take("test")?).map_err(D::Error::custom)?;
        let seed: u64 = serde_json::from_value(take("seed")?).map_err(D::Error::custom)?;
        let all: BTreeSet<usize> = cv_folds.iter().chain(&test_folds).copied().collect();
        if all.len() != NUM_FOLDS || all.iter().any(|&f| f >= NUM_FOLDS) {
            return Err(D::Error::custom("cv and test folds must partition 0..6"));
        }
        Ok(FoldAssignment {
            folds,
            cv_folds,
            test_folds,
            seed,
        })
    }
}

/// Assigns concepts to six folds.
///
/// Concepts are sorted, grouped by category (ascending), shuffled within each
/// category with a stream keyed by `(seed, category)`, then dealt round-robin.
/// The dealing position carries over from one category to the next, so both
/// the per-category counts and the overall fold sizes differ by at most one.
pub fn assign_folds<'a, I>(concepts: I, categories: &ConceptCategories, seed: u64) -> Result<FoldAssignment>
where
    I: IntoIterator<Item = &'a str>,
{
    let unique: BTreeSet<&str> = concepts.into_iter().collect();
    let mut by_category: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for concept in unique {
        let cat = categories
            .get(concept)
            .ok_or_else(|| Error::MissingCategory(concept.to_string()))?;
        by_category.entry(cat).or_default().push(concept);
    }

    let mut folds: [Vec<String>; NUM_FOLDS] = Default::default();
    let mut next = 0usize;
    for (cat, mut members) in by_category {
        let mut rng = keyed_rng("folds", seed, &cat.to_string());
        shuffle(&mut rng, &mut members);
        for concept in members {
            folds[next].push(concept.to_string());
            next = (next + 1) % NUM_FOLDS;
        }
    }
    for fold in &mut folds {
        fold.sort();
    }
    Ok(FoldAssignment {
        folds,
        cv_folds: CV_FOLDS,
        test_folds: TEST_FOLDS,
        seed,
    })
}

/// One cross-validation split: train on three CV folds, validate on the fourth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CvSplit {
    pub train: [usize; 3],
    pub validation: usize,
}

/// The four leave-one-out splits over the CV folds, in ascending
/// validation-fold order.
pub fn cv_plan(assignment: &FoldAssignment) -> Vec<CvSplit> {
    let mut cv = assignment.cv_folds;
    cv.sort_unstable();
    cv.iter()
        .map(|&validation| {
            let mut train = [0usize; 3];
            for (slot, f) in train.iter_mut().zip(cv.iter().filter(|&&f| f != validation)) {
                *slot = *f;
            }
            CvSplit { train, validation }
        })
        .collect()
}
