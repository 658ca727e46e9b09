//! Shared fixtures: a clustered synthetic corpus and a stub OpenAI-compatible server.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use priorpull::analysis::{execute_run, PredictionSet, RunContext, RunManifest};
use priorpull::corpus::{EmotionTaxonomy, LabelSet, LabeledExample, MultilabelDataset, Split};
use priorpull::metrics::PredictionMap;
use priorpull::model::{Client, MockOracle, ModelEndpoint};
use priorpull::prompt::{LabelFormat, PromptTemplate};
use priorpull::sampling::{RetrievalOrder, SamplingScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const SEMEVAL: [&str; 11] = [
    "anger", "anticipation", "disgust", "fear", "joy", "love", "optimism", "pessimism",
    "sadness", "surprise", "trust",
];

pub fn semeval() -> EmotionTaxonomy {
    EmotionTaxonomy::new("semeval", SEMEVAL).unwrap()
}

/// Evaluation split and a pool of near-duplicates.
///
/// Examples fall into `clusters` groups; every member of a group shares three keywords
/// and the group's gold set. Pool example `p{i}` repeats eval example `e{i}` with one
/// filler word changed.
pub struct Synthetic {
    pub eval: MultilabelDataset,
    pub pool: MultilabelDataset,
}

pub fn synthetic(n: usize, clusters: usize, seed: u64) -> Synthetic {
    let tax = semeval();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golds: Vec<LabelSet> = (0..clusters)
        .map(|_| loop {
            let s = LabelSet::from_indices((0..tax.len()).filter(|_| rng.gen_bool(0.5)));
            if !s.is_empty() {
                break s;
            }
        })
        .collect();
    let mut eval = Vec::with_capacity(n);
    let mut pool = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % clusters;
        let kw = format!("kw{c}a kw{c}b kw{c}c");
        eval.push(LabeledExample {
            id: format!("e{i:04}"),
            text: format!("{kw} item{i} alpha{i}"),
            gold: golds[c],
        });
        pool.push(LabeledExample {
            id: format!("p{i:04}"),
            text: format!("{kw} item{i} beta{i}"),
            gold: golds[c],
        });
    }
    Synthetic {
        eval: MultilabelDataset::new(tax.clone(), Split::Dev, eval).unwrap(),
        pool: MultilabelDataset::new(tax, Split::Train, pool).unwrap(),
    }
}

type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

/// Minimal HTTP/1.1 server on localhost; one thread per connection, `Connection: close`.
pub struct StubServer {
    pub base_url: String,
    calls: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(delay: Duration, handler: F) -> Self
    where
        F: Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (c, f, p) = (calls.clone(), in_flight.clone(), peak.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (c, f, p, h) = (c.clone(), f.clone(), p.clone(), handler.clone());
                std::thread::spawn(move || serve(stream, delay, &*h, &c, &f, &p));
            }
        });
        StubServer {
            base_url,
            calls,
            in_flight,
            peak,
        }
    }

    /// Serves chat completions by answering each prompt with `oracle`.
    pub fn oracle(oracle: MockOracle, template: PromptTemplate, delay: Duration) -> Self {
        Self::start(delay, move |path, body| {
            if !path.ends_with("/chat/completions") {
                return (404, json!({"error": "not found"}));
            }
            let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
            match oracle.complete_prompt(&template, prompt) {
                Ok(text) => (
                    200,
                    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}),
                ),
                Err(e) => (400, json!({"error": e.to_string()})),
            }
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

fn serve(
    stream: TcpStream,
    delay: Duration,
    handler: &Handler,
    calls: &AtomicUsize,
    in_flight: &AtomicUsize,
    peak: &AtomicUsize,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_owned();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    calls.fetch_add(1, Ordering::SeqCst);
    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    peak.fetch_max(now, Ordering::SeqCst);
    std::thread::sleep(delay);
    let (status, reply) = handler(&path, &body);
    in_flight.fetch_sub(1, Ordering::SeqCst);

    let payload = serde_json::to_vec(&reply).unwrap();
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    let _ = out.write_all(&payload);
    let _ = out.flush();
}

pub fn mock_client(tax: &EmotionTaxonomy, prior_seed: u64, lambda: f64) -> Client {
    Client::new(
        ModelEndpoint::mock("mock-llm", prior_seed, lambda),
        tax,
        PromptTemplate::default_with(LabelFormat::CommaSeparated),
        None,
        false,
    )
    .unwrap()
}

pub fn manifest(scheme: SamplingScheme, k: usize, run_index: u32, base_seed: u64, traindev: bool) -> RunManifest {
    RunManifest {
        dataset: "synthetic".into(),
        scheme,
        k,
        run_index,
        base_seed,
        endpoint: "mock-llm".into(),
        template_sha256: String::new(),
        label_format: LabelFormat::CommaSeparated,
        max_output_tokens: 128,
        traindev,
        retrieval_order: RetrievalOrder::default(),
        label_source_run: None,
    }
}

/// Executes `runs` runs of one group; prior-reinforced runs take labels from
/// `sources[r % len]`.
pub fn run_group(
    ctx: &RunContext<'_>,
    scheme: SamplingScheme,
    k: usize,
    runs: u32,
    base_seed: u64,
    traindev: bool,
    sources: Option<&[PredictionMap]>,
) -> Vec<PredictionSet> {
    (0..runs)
        .map(|r| {
            let mut m = manifest(scheme, k, r, base_seed, traindev);
            let src = sources.map(|s| {
                let i = r as usize % s.len();
                m.label_source_run = Some(i as u32);
                &s[i]
            });
            execute_run(&m, ctx, src).unwrap()
        })
        .collect()
}

/// Writes the corpus, taxonomy and `experiment.toml` (`head` followed by the dataset
/// section) into `dir` and returns the config path.
pub fn write_experiment(dir: &std::path::Path, s: &Synthetic, head: &str) -> std::path::PathBuf {
    std::fs::write(dir.join("tax.txt"), SEMEVAL.join("\n") + "\n").unwrap();
    s.eval.save_jsonl(dir.join("dev.jsonl")).unwrap();
    s.pool.save_jsonl(dir.join("train.jsonl")).unwrap();
    let cfg = format!(
        "{head}\n[dataset]\nname = \"synthetic\"\neval = \"dev.jsonl\"\npool = \"train.jsonl\"\ntaxonomy = \"tax.txt\"\n"
    );
    let path = dir.join("experiment.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
