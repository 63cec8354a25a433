mod common;

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use annobudget::experiment::{run_llm_experiment, ExperimentConfig, Strategy};
use annobudget::folds::{assign_folds, ConceptCategories};
use annobudget::llm::{
    annotate_batch, select_few_shot, Annotator, AnnotatorConfig, ConstraintMode, HttpBackend, PromptTemplate,
    PromptVariant, RetryPolicy,
};
use annobudget::{Dataset, Error, RelevanceLabel};
use common::MockServer;

fn backend(server: &MockServer) -> Arc<HttpBackend> {
    Arc::new(HttpBackend::new(&server.endpoint(), Some("secret".into()), Duration::from_secs(30)).unwrap())
}

fn annotator(server: &MockServer, train: &Dataset, mode: ConstraintMode) -> Annotator {
    let mut config = AnnotatorConfig::new("mock-model");
    config.mode = mode;
    config.retry = RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(2),
    };
    Annotator::new(
        backend(server),
        config,
        PromptTemplate::builtin(PromptVariant::Original),
        select_few_shot(train, 0).unwrap(),
    )
}

fn split() -> (Dataset, Dataset) {
    let all = common::labeled_dataset(4, 6, 21);
    let concepts: Vec<&str> = all.concepts().collect();
    (all.restrict(concepts[..2].iter().copied()), all.restrict(concepts[2..].iter().copied()))
}

#[test]
fn request_wire_format() {
    let (train, test) = split();
    let server = MockServer::start(common::oracle(&test));
    let record = &test.records()[0];
    let result = annotator(&server, &train, ConstraintMode::GuidedChoice).annotate(record).unwrap();
    assert_eq!(result.label, record.gold_label.unwrap());
    assert_eq!(result.expected_score, f64::from(record.gold_label.unwrap().value()));

    let body = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["logprobs"], true);
    assert_eq!(
        body["guided_choice"],
        serde_json::json!(["no value", "potential value", "certain value", "high value"])
    );
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains(&record.text));
    assert!(prompt.contains(record.provision.as_deref().unwrap()));

    annotator(&server, &train, ConstraintMode::ClientProjection).annotate(record).unwrap();
    let body = server.bodies.lock().unwrap()[1].clone();
    assert!(body.get("guided_choice").is_none());
    assert_eq!(body["max_tokens"], 2);
}

#[test]
fn retries_then_succeeds() {
    let (train, test) = split();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let server = MockServer::start(Arc::new(move |_| {
        if counter.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(503)
        } else {
            Ok([0.1, 0.2, 0.3, 0.4])
        }
    }));
    let r = annotator(&server, &train, ConstraintMode::GuidedChoice)
        .annotate(&test.records()[0])
        .unwrap();
    assert_eq!(server.request_count(), 3);
    assert!((r.expected_score - 2.0).abs() < 1e-12);
    assert_eq!(r.label, RelevanceLabel::HighValue);
}

#[test]
fn gives_up_after_three_attempts_and_skips_4xx() {
    let (train, test) = split();
    let server = MockServer::start(Arc::new(|_| Err(500)));
    let err = annotator(&server, &train, ConstraintMode::GuidedChoice)
        .annotate(&test.records()[0])
        .unwrap_err();
    assert!(matches!(err, Error::Http { status: 500, .. }));
    assert_eq!(server.request_count(), 3);

    let server = MockServer::start(Arc::new(|_| Err(422)));
    let err = annotator(&server, &train, ConstraintMode::GuidedChoice)
        .annotate(&test.records()[0])
        .unwrap_err();
    assert!(matches!(err, Error::Http { status: 422, .. }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let (train, test) = split();
    let mut config = AnnotatorConfig::new("m");
    config.retry = RetryPolicy {
        attempts: 2,
        base_delay: Duration::from_millis(1),
    };
    let backend = Arc::new(HttpBackend::new("http://127.0.0.1:9/v1", None, Duration::from_secs(2)).unwrap());
    let a = Annotator::new(
        backend,
        config,
        PromptTemplate::builtin(PromptVariant::Original),
        select_few_shot(&train, 0).unwrap(),
    );
    assert!(matches!(a.annotate(&test.records()[0]).unwrap_err(), Error::Transport(_)));
}

#[test]
fn zero_mass_is_unusable_and_reported_per_record() {
    let (train, test) = split();
    let server = MockServer::start(Arc::new(|_| Ok([0.0; 4])));
    let outcome = annotate_batch(&test, &annotator(&server, &train, ConstraintMode::GuidedChoice), 3).unwrap();
    assert_eq!(outcome.failures().count(), test.len());
    assert!(outcome
        .failures()
        .all(|(_, e)| matches!(e, Error::UnusableResponse)));
    assert!(outcome.scores.is_empty());
    // results stay aligned with the dataset
    let ids: Vec<&str> = outcome.results.iter().map(|(id, _)| id.as_str()).collect();
    let expected: Vec<&str> = test.records().iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, expected);
}

fn oracle_dcg(rels: &[u8], k: usize) -> f64 {
    (1..=k.min(rels.len()))
        .map(|i| f64::from(rels[i - 1]) / ((i + 1) as f64).ln() * std::f64::consts::LN_2)
        .sum()
}

#[test]
fn uniform_endpoint_matches_id_order_baseline() {
    let dataset = common::labeled_dataset(12, 15, 33);
    let folds = assign_folds(dataset.concepts(), &ConceptCategories::uniform(dataset.concepts()), 2).unwrap();
    let server = MockServer::start(common::uniform());
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new("unused", Strategy::Llm, dir.path().join("out"));
    cfg.llm.model = "mock".into();
    cfg.llm.variants = vec![PromptVariant::Original];
    let report = run_llm_experiment(&cfg, &dataset, &folds, backend(&server)).unwrap();
    let row = &report.rows[0];

    let test = dataset.restrict(folds.test_concepts());
    let high = test
        .records()
        .iter()
        .filter(|r| r.gold_label == Some(RelevanceLabel::HighValue))
        .count();
    assert!((row.accuracy - high as f64 / test.len() as f64).abs() < 1e-12);

    // every score is 1.5, so each concept is ranked by ascending id
    for (&cutoff, &value) in &row.ndcg {
        let mut total = 0.0;
        for concept in test.concepts() {
            let mut records: Vec<_> = test.concept_records(concept).collect();
            records.sort_by(|a, b| a.id.cmp(&b.id));
            let rels: Vec<u8> = records.iter().map(|r| r.gold_label.unwrap().value()).collect();
            let mut ideal = rels.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            total += oracle_dcg(&rels, cutoff) / oracle_dcg(&ideal, cutoff);
        }
        let baseline = total / test.num_concepts() as f64;
        assert!((value - baseline).abs() < 1e-9, "@{cutoff}: {value} vs {baseline}");
    }
}

#[test]
fn two_variants_two_rows_and_idempotent_rerun() {
    let dataset = common::labeled_dataset(6, 8, 44);
    let folds = assign_folds(dataset.concepts(), &ConceptCategories::uniform(dataset.concepts()), 0).unwrap();
    let server = MockServer::start(common::hashed());
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = ExperimentConfig::new("unused", Strategy::Llm, &out);
    cfg.llm.model = "mock".into();

    let first = run_llm_experiment(&cfg, &dataset, &folds, backend(&server)).unwrap();
    assert_eq!(first.rows.len(), 2);
    assert_eq!(first.rows[0].variant, PromptVariant::Original);
    assert_eq!(first.rows[1].variant, PromptVariant::Improved);
    let csv = fs::read_to_string(out.join("llm_report.csv")).unwrap();
    assert!(csv.starts_with("prompt,accuracy,f1,ndcg@10,ndcg@100,annotated,failed\n"));
    assert_eq!(csv.lines().count(), 3);

    let snapshot = |name: &str| fs::read(out.join(name)).unwrap();
    let files = [
        "llm_report.csv",
        "llm_report.json",
        "annotations-original.jsonl",
        "annotations-improved.jsonl",
        "llm_scores-original.jsonl",
    ];
    let before: Vec<Vec<u8>> = files.iter().map(|f| snapshot(f)).collect();
    let requests = server.request_count();
    assert_eq!(requests, 2 * dataset.restrict(folds.test_concepts()).len());

    let second = run_llm_experiment(&cfg, &dataset, &folds, backend(&server)).unwrap();
    assert_eq!(server.request_count(), requests, "rerun must be served from the cache");
    assert!(second.rows.iter().all(|r| r.cache_hits == r.annotated));
    let after: Vec<Vec<u8>> = files.iter().map(|f| snapshot(f)).collect();
    assert_eq!(before, after);
}
