use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SentenceRecord};
use crate::error::{Error, Result};
use crate::label::RelevanceLabel;
use crate::rng::{keyed_rng, uniform_below};

const ORIGINAL: &str = include_str!("../../templates/original.txt");
const IMPROVED: &str = include_str!("../../templates/improved.txt");

/// Which wording of the annotation guidelines a template carries. The two
/// variants differ only in how the `certain value` label is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    Original,
    Improved,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Original => "original",
            PromptVariant::Improved => "improved",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(PromptVariant::Original),
            "improved" => Ok(PromptVariant::Improved),
            other => Err(Error::Config(format!("unknown prompt variant {other:?}"))),
        }
    }
}

/// Guideline text with `{concept}`, `{provision}`, `{sentence}` and
/// `{examples}` placeholders. `{{` and `}}` render as literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub variant: PromptVariant,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(variant: PromptVariant, text: impl Into<String>) -> Self {
        PromptTemplate {
            variant,
            text: text.into(),
        }
    }

    /// The guideline templates shipped with the crate.
    pub fn builtin(variant: PromptVariant) -> Self {
        let text = match variant {
            PromptVariant::Original => ORIGINAL,
            PromptVariant::Improved => IMPROVED,
        };
        PromptTemplate::new(variant, text)
    }

    pub fn from_path(variant: PromptVariant, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(PromptTemplate::new(variant, text))
    }

    /// Substitutes placeholders; any other `{name}` is an error.
    pub fn render(&self, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix("{{") {
                out.push('{');
                rest = after;
            } else if let Some(after) = tail.strip_prefix("}}") {
                out.push('}');
                rest = after;
            } else if let Some(after) = tail.strip_prefix('}') {
                out.push('}');
                rest = after;
            } else {
                let Some(end) = tail.find('}') else {
                    return Err(Error::UnresolvedPlaceholder(tail[1..].to_string()));
                };
                let name = &tail[1..end];
                let value = lookup(name).ok_or_else(|| Error::UnresolvedPlaceholder(name.to_string()))?;
                out.push_str(&value);
                rest = &tail[end + 1..];
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Four training examples, one per relevance label.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSet {
    /// Indexed by label value.
    examples: [SentenceRecord; 4],
    pub seed: u64,
}

impl FewShotSet {
    /// Builds a set from four records that carry pairwise distinct gold labels.
    pub fn new(records: Vec<SentenceRecord>, seed: u64) -> Result<Self> {
        let mut slots: [Option<SentenceRecord>; 4] = Default::default();
        for record in records {
            let label = record
                .gold_label
                .ok_or_else(|| Error::MissingGoldLabel(record.id.clone()))?;
            if slots[label.index()].replace(record).is_some() {
                return Err(Error::Config(format!("two few-shot examples labeled {label:?}")));
            }
        }
        let mut examples = Vec::with_capacity(4);
        for (label, slot) in RelevanceLabel::ALL.iter().zip(slots) {
            examples.push(slot.ok_or_else(|| Error::EmptyLabelClass(label.as_str().to_string()))?);
        }
        let examples: [SentenceRecord; 4] = examples.try_into().expect("four slots");
        Ok(FewShotSet { examples, seed })
    }

    /// Examples in ascending label order: no, potential, certain, high.
    pub fn examples(&self) -> &[SentenceRecord; 4] {
        &self.examples
    }

    /// True when any example id also appears in `dataset`.
    pub fn overlaps(&self, dataset: &Dataset) -> bool {
        self.examples.iter().any(|e| dataset.get(&e.id).is_some())
    }

    /// The `{examples}` block.
    pub fn render(&self) -> String {
        self.examples
            .iter()
            .map(|e| {
                let label = e.gold_label.expect("checked on construction");
                format!("Concept: {}\nSentence: {}\nLabel: {}", e.concept, e.text, label)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Picks one training example per label, uniformly within each label class.
pub fn select_few_shot(train: &Dataset, seed: u64) -> Result<FewShotSet> {
    let mut picked = Vec::with_capacity(4);
    for label in RelevanceLabel::ALL {
        let mut candidates: Vec<&SentenceRecord> = train
            .records()
            .iter()
            .filter(|r| r.gold_label == Some(label))
            .collect();
        if candidates.is_empty() {
            return Err(Error::EmptyLabelClass(label.as_str().to_string()));
        }
        candidates.sort_unstable_by(|a, b| a.id.cmp(&b.id));
        let mut rng = keyed_rng("few-shot", seed, label.as_str());
        let pick = uniform_below(&mut rng, candidates.len() as u64) as usize;
        picked.push(candidates[pick].clone());
    }
    FewShotSet::new(picked, seed)
}

/// Renders the prompt for one sentence.
pub fn build_prompt(
    record: &SentenceRecord,
    provision: &str,
    template: &PromptTemplate,
    few_shot: &FewShotSet,
) -> Result<String> {
    template.render(|name| match name {
        "concept" => Some(record.concept.clone()),
        "provision" => Some(provision.to_string()),
        "sentence" => Some(record.text.clone()),
        "examples" => Some(few_shot.render()),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, concept: &str, label: Option<RelevanceLabel>) -> SentenceRecord {
        SentenceRecord {
            id: id.into(),
            text: format!("text of {id}"),
            concept: concept.into(),
            provision: None,
            gold_label: label,
        }
    }

    fn minimal_train() -> Dataset {
        Dataset::from_records(
            RelevanceLabel::ALL
                .iter()
                .rev()
                .enumerate()
                .map(|(i, &l)| record(&format!("t{i}"), "c", Some(l)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn forced_few_shot_set() {
        let fs = select_few_shot(&minimal_train(), 9).unwrap();
        let labels: Vec<_> = fs.examples().iter().map(|e| e.gold_label.unwrap()).collect();
        assert_eq!(labels, RelevanceLabel::ALL.to_vec());
        assert_eq!(fs.examples()[3].id, "t0");
    }

    #[test]
    fn missing_label_class() {
        let train = Dataset::from_records(vec![
            record("a", "c", Some(RelevanceLabel::NoValue)),
            record("b", "c", Some(RelevanceLabel::PotentialValue)),
            record("d", "c", Some(RelevanceLabel::HighValue)),
        ])
        .unwrap();
        let err = select_few_shot(&train, 0).unwrap_err();
        assert!(matches!(err, Error::EmptyLabelClass(ref l) if l == "certain value"));
    }

    #[test]
    fn prompt_is_deterministic_and_complete() {
        let fs = select_few_shot(&minimal_train(), 0).unwrap();
        let r = record("x", "involvesInventiveStep", None);
        let t = PromptTemplate::builtin(PromptVariant::Original);
        let a = build_prompt(&r, "Art. 56 EPC", &t, &fs).unwrap();
        let b = build_prompt(&r, "Art. 56 EPC", &t, &fs).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("Concept: involvesInventiveStep"));
        assert!(a.contains("Provision: Art. 56 EPC"));
        assert!(a.contains("Sentence: text of x"));
        assert_eq!(a.matches("\nLabel: ").count(), 4);
        // fixed label order in the examples block
        let pos: Vec<_> = RelevanceLabel::ALL
            .iter()
            .map(|l| a.find(&format!("Label: {}", l.as_str())).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let fs = select_few_shot(&minimal_train(), 0).unwrap();
        let t = PromptTemplate::new(PromptVariant::Original, "{concept} {court}");
        let err = build_prompt(&record("x", "c", None), "", &t, &fs).unwrap_err();
        assert!(matches!(err, Error::UnresolvedPlaceholder(ref n) if n == "court"));
        let t = PromptTemplate::new(PromptVariant::Original, "{concept");
        assert!(build_prompt(&record("x", "c", None), "", &t, &fs).is_err());
    }

    #[test]
    fn escaped_braces() {
        let t = PromptTemplate::new(PromptVariant::Original, "{{\"label\": \"{concept}\"}}");
        let out = t.render(|n| (n == "concept").then(|| "c".to_string())).unwrap();
        assert_eq!(out, "{\"label\": \"c\"}");
    }

    #[test]
    fn builtin_variants_differ_only_in_certain_definition() {
        let a = PromptTemplate::builtin(PromptVariant::Original).text;
        let b = PromptTemplate::builtin(PromptVariant::Improved).text;
        assert_ne!(a, b);
        let strip = |s: &str| -> Vec<String> {
            s.split("\n\n")
                .filter(|p| !p.starts_with("certain value:"))
                .map(str::to_string)
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("Improved".parse::<PromptVariant>().unwrap(), PromptVariant::Improved);
        assert!("other".parse::<PromptVariant>().is_err());
    }
}
