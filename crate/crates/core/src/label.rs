//! The four-level relevance vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Explanatory value of a sentence for a legal concept.
///
/// Ordered by value, so `NoValue < PotentialValue < CertainValue < HighValue`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelevanceLabel {
    NoValue,
    PotentialValue,
    CertainValue,
    HighValue,
}

impl RelevanceLabel {
    /// All labels in ascending value order.
    pub const ALL: [RelevanceLabel; 4] = [
        RelevanceLabel::NoValue,
        RelevanceLabel::PotentialValue,
        RelevanceLabel::CertainValue,
        RelevanceLabel::HighValue,
    ];

    /// Integer relevance used as `rel(s)` in DCG.
    pub fn value(self) -> u8 {
        match self {
            RelevanceLabel::NoValue => 0,
            RelevanceLabel::PotentialValue => 1,
            RelevanceLabel::CertainValue => 2,
            RelevanceLabel::HighValue => 3,
        }
    }

    pub fn from_value(value: i64) -> Result<Self, Error> {
        match value {
            0 => Ok(RelevanceLabel::NoValue),
            1 => Ok(RelevanceLabel::PotentialValue),
            2 => Ok(RelevanceLabel::CertainValue),
            3 => Ok(RelevanceLabel::HighValue),
            other => Err(Error::LabelValueOutOfRange(other)),
        }
    }

    /// Canonical lowercase string, e.g. `"certain value"`.
    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLabel::NoValue => "no value",
            RelevanceLabel::PotentialValue => "potential value",
            RelevanceLabel::CertainValue => "certain value",
            RelevanceLabel::HighValue => "high value",
        }
    }

    /// The word that distinguishes this label from the other three.
    pub fn head_word(self) -> &'static str {
        match self {
            RelevanceLabel::NoValue => "no",
            RelevanceLabel::PotentialValue => "potential",
            RelevanceLabel::CertainValue => "certain",
            RelevanceLabel::HighValue => "high",
        }
    }

    /// Position in [`RelevanceLabel::ALL`].
    pub fn index(self) -> usize {
        self.value() as usize
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelevanceLabel {
    type Err = Error;

    /// Accepts `"high value"`, `"High Value"`, `" high "`, `"high-value"` and
    /// similar. The trailing `value` word is optional.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_lowercase().replace(['-', '_'], " ");
        let words: Vec<&str> = normalized.split_whitespace().collect();
        let head = match words.as_slice() {
            [head] | [head, "value"] => *head,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        };
        RelevanceLabel::ALL
            .into_iter()
            .find(|label| label.head_word() == head)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for RelevanceLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelevanceLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
