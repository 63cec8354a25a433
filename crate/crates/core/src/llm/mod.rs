//! Automatic relevance annotation with a generative model.
//!
//! Each sentence is rendered into a guideline prompt with four few-shot
//! examples and sent to an OpenAI-compatible chat endpoint with the output
//! restricted to the four label strings. The probabilities of the label-
//! compatible first tokens form a distribution over labels; its argmax is the
//! predicted label and its expectation over label values (0..=3) is a
//! continuous relevance score usable for ranking.

pub mod cache;
pub mod client;
pub mod prompt;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use log::{debug, info};
use serde::{Serialize, Serializer};

use crate::dataset::{Dataset, ScoreTable, SentenceRecord};
use crate::error::{Error, Result};
use crate::label::RelevanceLabel;

pub use cache::{cache_key, AnnotationCache};
pub use client::{
    build_request, complete_with_retry, first_token_probabilities, project_token, CompletionBackend,
    ConstraintMode, HttpBackend, RetryPolicy, API_KEY_ENV,
};
pub use prompt::{build_prompt, select_few_shot, FewShotSet, PromptTemplate, PromptVariant};

fn label_map<S: Serializer>(values: &[f64; 4], serializer: S) -> std::result::Result<S::Ok, S::Error> {
    let map: BTreeMap<&str, f64> = RelevanceLabel::ALL
        .iter()
        .map(|l| (l.as_str(), values[l.index()]))
        .collect();
    map.serialize(serializer)
}

/// Probabilities over the four labels, indexed by label value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelDistribution {
    #[serde(rename = "probabilities", serialize_with = "label_map")]
    p: [f64; 4],
    #[serde(rename = "raw_probabilities", serialize_with = "label_map")]
    raw: [f64; 4],
    renormalized: bool,
}

impl LabelDistribution {
    /// Normalizes raw first-token probabilities to sum to one.
    pub fn from_raw(raw: [f64; 4]) -> Result<Self> {
        if raw.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::UnusableResponse);
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::UnusableResponse);
        }
        let p = raw.map(|x| x / total);
        Ok(LabelDistribution {
            p,
            raw,
            renormalized: total != 1.0,
        })
    }

    pub fn probability(&self, label: RelevanceLabel) -> f64 {
        self.p[label.index()]
    }

    pub fn probabilities(&self) -> [f64; 4] {
        self.p
    }

    pub fn raw(&self) -> [f64; 4] {
        self.raw
    }

    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    /// `Σ p(label) · value(label)`, in `[0, 3]`.
    pub fn expected_score(&self) -> f64 {
        RelevanceLabel::ALL
            .iter()
            .map(|l| self.p[l.index()] * f64::from(l.value()))
            .sum()
    }

    /// Most probable label; ties go to the higher label.
    pub fn argmax(&self) -> RelevanceLabel {
        let mut best = RelevanceLabel::NoValue;
        for label in RelevanceLabel::ALL {
            if self.p[label.index()] >= self.p[best.index()] {
                best = label;
            }
        }
        best
    }
}

/// Outcome of annotating one sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationResult {
    pub id: String,
    pub label: RelevanceLabel,
    #[serde(flatten)]
    pub distribution: LabelDistribution,
    pub expected_score: f64,
    pub variant: PromptVariant,
    pub model: String,
    /// Not serialized, so reruns served from the cache write identical output.
    #[serde(skip)]
    pub cached: bool,
}

impl AnnotationResult {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("annotation result serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorConfig {
    pub model: String,
    pub mode: ConstraintMode,
    pub retry: RetryPolicy,
}

impl AnnotatorConfig {
    pub fn new(model: impl Into<String>) -> Self {
        AnnotatorConfig {
            model: model.into(),
            mode: ConstraintMode::default(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Everything needed to annotate sentences with one prompt variant.
pub struct Annotator {
    backend: Arc<dyn CompletionBackend>,
    pub config: AnnotatorConfig,
    pub template: PromptTemplate,
    pub few_shot: FewShotSet,
    /// Provision text per concept, used when a record carries none.
    pub provisions: BTreeMap<String, String>,
    cache: Option<Arc<AnnotationCache>>,
}

impl Annotator {
    pub fn new(
        backend: Arc<dyn CompletionBackend>,
        config: AnnotatorConfig,
        template: PromptTemplate,
        few_shot: FewShotSet,
    ) -> Self {
        Annotator {
            backend,
            config,
            template,
            few_shot,
            provisions: BTreeMap::new(),
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: Arc<AnnotationCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_provisions(mut self, provisions: BTreeMap<String, String>) -> Self {
        self.provisions = provisions;
        self
    }

    pub fn prompt_for(&self, record: &SentenceRecord) -> Result<String> {
        let provision = record
            .provision
            .as_deref()
            .or_else(|| self.provisions.get(&record.concept).map(String::as_str))
            .unwrap_or("");
        build_prompt(record, provision, &self.template, &self.few_shot)
    }

    /// Annotates one sentence, consulting the cache first.
    pub fn annotate(&self, record: &SentenceRecord) -> Result<AnnotationResult> {
        let prompt = self.prompt_for(record)?;
        let key = cache_key(&self.config.model, &prompt, &self.config.mode.fingerprint());

        let (raw, cached) = match self.cache.as_ref().and_then(|c| c.get(&key)) {
            Some(raw) => (raw, true),
            None => {
                let request = build_request(&self.config.model, &prompt, self.config.mode);
                let response = complete_with_retry(self.backend.as_ref(), &request, self.config.retry)?;
                let raw = first_token_probabilities(&response)?;
                // validate before caching so unusable responses are retried next run
                LabelDistribution::from_raw(raw)?;
                if let Some(cache) = &self.cache {
                    cache.put(&key, raw)?;
                }
                (raw, false)
            }
        };
        let distribution = LabelDistribution::from_raw(raw)?;
        Ok(AnnotationResult {
            id: record.id.clone(),
            label: distribution.argmax(),
            expected_score: distribution.expected_score(),
            distribution,
            variant: self.template.variant,
            model: self.config.model.clone(),
            cached,
        })
    }
}

/// Results of a batch run, in dataset order.
#[derive(Debug)]
pub struct BatchOutcome {
    pub results: Vec<(String, Result<AnnotationResult>)>,
    /// Expected scores of the successfully annotated records.
    pub scores: ScoreTable,
}

impl BatchOutcome {
    pub fn failures(&self) -> impl Iterator<Item = (&str, &Error)> {
        self.results
            .iter()
            .filter_map(|(id, r)| r.as_ref().err().map(|e| (id.as_str(), e)))
    }

    pub fn successes(&self) -> impl Iterator<Item = &AnnotationResult> {
        self.results.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn cache_hits(&self) -> usize {
        self.successes().filter(|r| r.cached).count()
    }

    /// Line-delimited JSON of the successful results.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.successes() {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }
}

/// Annotates every record with at most `max_in_flight` concurrent requests.
pub fn annotate_batch(dataset: &Dataset, annotator: &Annotator, max_in_flight: usize) -> Result<BatchOutcome> {
    if max_in_flight == 0 {
        return Err(Error::Config("max_in_flight must be at least 1".into()));
    }
    let records = dataset.records();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let workers = max_in_flight.min(records.len().max(1));
    info!(
        "annotating {} sentences with {} ({}), {} in flight",
        records.len(),
        annotator.config.model,
        annotator.template.variant,
        workers
    );

    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = records.get(idx) else { break };
                let result = annotator.annotate(record);
                if let Err(e) = &result {
                    debug!("{}: {e}", record.id);
                }
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);

    let mut slots: Vec<Option<Result<AnnotationResult>>> = (0..records.len()).map(|_| None).collect();
    for (idx, result) in rx {
        slots[idx] = Some(result);
    }
    let mut scores = ScoreTable::new(format!("{}:{}", annotator.config.model, annotator.template.variant));
    let mut results = Vec::with_capacity(records.len());
    for (record, slot) in records.iter().zip(slots) {
        let result = slot.expect("every record is processed");
        if let Ok(r) = &result {
            scores.insert(r.id.clone(), r.expected_score)?;
        }
        results.push((record.id.clone(), result));
    }
    Ok(BatchOutcome { results, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_high() {
        let d = LabelDistribution::from_raw([0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.argmax(), RelevanceLabel::HighValue);
        assert_eq!(d.expected_score(), 3.0);
        assert!(!d.renormalized());
    }

    #[test]
    fn uniform_scores_one_and_a_half() {
        let d = LabelDistribution::from_raw([0.25; 4]).unwrap();
        assert!((d.expected_score() - 1.5).abs() < 1e-12);
        // ties go to the higher label
        assert_eq!(d.argmax(), RelevanceLabel::HighValue);
    }

    #[test]
    fn weighted_sum() {
        let d = LabelDistribution::from_raw([0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((d.expected_score() - 2.0).abs() < 1e-12);
        assert_eq!(d.argmax(), RelevanceLabel::HighValue);
    }

    #[test]
    fn renormalizes_partial_mass() {
        let d = LabelDistribution::from_raw([0.0, 0.1, 0.3, 0.0]).unwrap();
        assert!(d.renormalized());
        assert!((d.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.probability(RelevanceLabel::CertainValue) - 0.75).abs() < 1e-12);
        assert_eq!(d.raw(), [0.0, 0.1, 0.3, 0.0]);
    }

    #[test]
    fn all_zero_is_unusable() {
        assert!(matches!(LabelDistribution::from_raw([0.0; 4]).unwrap_err(), Error::UnusableResponse));
    }

    #[test]
    fn result_json_has_no_cached_flag() {
        let d = LabelDistribution::from_raw([0.0, 0.0, 1.0, 0.0]).unwrap();
        let r = AnnotationResult {
            id: "s1".into(),
            label: d.argmax(),
            expected_score: d.expected_score(),
            distribution: d,
            variant: PromptVariant::Improved,
            model: "m".into(),
            cached: true,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(v["label"], "certain value");
        assert_eq!(v["expected_score"], 2.0);
        assert_eq!(v["probabilities"]["certain value"], 1.0);
        assert_eq!(v["variant"], "improved");
        assert!(v.get("cached").is_none());
    }
}
