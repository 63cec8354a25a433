#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use annobudget::{Dataset, RelevanceLabel, SentenceRecord};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

/// Small xorshift generator for building fixtures; independent of the crate's RNG.
pub struct Fixture(u64);

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Fixture(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

/// `concepts` concepts with `per_concept` labeled sentences each; every
/// concept holds at least one sentence of each label.
pub fn labeled_dataset(concepts: usize, per_concept: usize, seed: u64) -> Dataset {
    assert!(per_concept >= 4);
    let mut rng = Fixture::new(seed);
    let mut records = Vec::new();
    for c in 0..concepts {
        for i in 0..per_concept {
            let value = if i < 4 { i as i64 } else { rng.below(4) as i64 };
            records.push(SentenceRecord {
                id: format!("c{c:02}-s{i:04}"),
                text: format!("Sentence {i} about concept {c}, variant {}.", rng.below(1000)),
                concept: format!("concept{c:02}"),
                provision: Some(format!("Provision text for concept {c}.")),
                gold_label: Some(RelevanceLabel::from_value(value).unwrap()),
            });
        }
    }
    Dataset::from_records(records).unwrap()
}

/// Sentence under annotation: the text after the last `Sentence: ` line.
pub fn sentence_of(prompt: &str) -> &str {
    let start = prompt.rfind("Sentence: ").expect("prompt has a sentence") + "Sentence: ".len();
    let rest = &prompt[start..];
    rest.split('\n').next().unwrap()
}

pub type Behaviour = Arc<dyn Fn(&str) -> Result<[f64; 4], u16> + Send + Sync>;

/// Chat-completions body whose first-token alternatives carry `probs`.
pub fn chat_response(probs: [f64; 4]) -> Value {
    let mut top: Vec<Value> = RelevanceLabel::ALL
        .iter()
        .map(|l| {
            let p = probs[l.index()];
            let lp = if p > 0.0 { p.ln() } else { -9999.0 };
            json!({ "token": l.head_word(), "logprob": lp, "bytes": l.head_word().as_bytes() })
        })
        .collect();
    top.sort_by(|a, b| b["logprob"].as_f64().unwrap().total_cmp(&a["logprob"].as_f64().unwrap()));
    let chosen = top[0].clone();
    json!({
        "id": "cmpl-mock",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": chosen["token"] },
            "logprobs": { "content": [{
                "token": chosen["token"],
                "logprob": chosen["logprob"],
                "top_logprobs": top,
            }]},
            "finish_reason": "stop"
        }]
    })
}

#[derive(Clone)]
struct ServerState {
    behaviour: Behaviour,
    requests: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

async fn complete(State(state): State<ServerState>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    state.requests.fetch_add(1, Ordering::SeqCst);
    state.bodies.lock().unwrap().push(body.clone());
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    match (state.behaviour)(&prompt) {
        Ok(probs) => (StatusCode::OK, Json(chat_response(probs))),
        Err(status) => (
            StatusCode::from_u16(status).unwrap(),
            Json(json!({ "error": { "message": "mock failure" } })),
        ),
    }
}

/// A local OpenAI-compatible server answering `/v1/chat/completions`.
pub struct MockServer {
    pub addr: SocketAddr,
    pub requests: Arc<AtomicUsize>,
    pub bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

impl MockServer {
    pub fn start(behaviour: Behaviour) -> Self {
        let requests = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
        let state = ServerState {
            behaviour,
            requests: requests.clone(),
            bodies: bodies.clone(),
        };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route("/v1/chat/completions", post(complete))
                    .with_state(state);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        MockServer { addr, requests, bodies }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// Gold label of every sentence text in `dataset`.
pub fn gold_by_text(dataset: &Dataset) -> HashMap<String, RelevanceLabel> {
    dataset
        .records()
        .iter()
        .map(|r| (r.text.clone(), r.gold_label.expect("labeled")))
        .collect()
}

pub fn one_hot(label: RelevanceLabel) -> [f64; 4] {
    let mut p = [0.0; 4];
    p[label.index()] = 1.0;
    p
}

/// One-hot on the gold label.
pub fn oracle(dataset: &Dataset) -> Behaviour {
    let gold = gold_by_text(dataset);
    Arc::new(move |prompt| Ok(one_hot(gold[sentence_of(prompt)])))
}

/// One-hot on the label whose value is `3 - gold`.
pub fn adversarial(dataset: &Dataset) -> Behaviour {
    let gold = gold_by_text(dataset);
    Arc::new(move |prompt| {
        let g = gold[sentence_of(prompt)];
        Ok(one_hot(RelevanceLabel::from_value(3 - g.value() as i64).unwrap()))
    })
}

pub fn uniform() -> Behaviour {
    Arc::new(|_| Ok([0.25; 4]))
}

/// A deterministic, sentence-dependent non-trivial distribution.
pub fn hashed() -> Behaviour {
    Arc::new(|prompt| {
        let s = sentence_of(prompt);
        let h = s.bytes().fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211));
        let mut p = [0.0; 4];
        for (i, slot) in p.iter_mut().enumerate() {
            *slot = ((h >> (i * 8)) & 0xff) as f64 + 1.0;
        }
        let total: f64 = p.iter().sum();
        Ok(p.map(|x| x / total))
    })
}
