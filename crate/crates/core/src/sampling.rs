//! Demonstration sampling.
//!
//! Every scheme picks demonstration *texts* the same way: a seeded partial shuffle of the
//! pool, skipping the query. Schemes differ only in the labels they display, so matched
//! text seeds give the same examples in the same order across ground-truth ICL and both
//! task-recognition randomisations.
//!
//! Randomised labels are drawn per pool example (seeded by the label seed and the example
//! id), which keeps a demonstration's label stable across all queries of a run.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, LabeledExample, MultilabelDataset};
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::metrics::PredictionMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub example_id: String,
    pub text: String,
    /// What the prompt displays; not necessarily the gold set.
    pub shown_labels: LabelSet,
}

impl Demonstration {
    fn gold(ex: &LabeledExample) -> Self {
        Demonstration {
            example_id: ex.id.clone(),
            text: ex.text.clone(),
            shown_labels: ex.gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Icl,
    Cossim,
    PriorIndependent,
    PriorUniform,
    PriorPrompt,
    ZeroShot,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::Icl,
        SchemeKind::Cossim,
        SchemeKind::PriorIndependent,
        SchemeKind::PriorUniform,
        SchemeKind::PriorPrompt,
        SchemeKind::ZeroShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Icl => "icl",
            SchemeKind::Cossim => "cossim",
            SchemeKind::PriorIndependent => "prior_independent",
            SchemeKind::PriorUniform => "prior_uniform",
            SchemeKind::PriorPrompt => "prior_prompt",
            SchemeKind::ZeroShot => "zero_shot",
        }
    }

    pub fn needs_demonstrations(self) -> bool {
        self != SchemeKind::ZeroShot
    }
}

/// How randomised demonstration labels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Whole gold label sets resampled from the pool's empirical distribution.
    Independent,
    /// Each taxonomy label included with probability 1/2.
    Uniform,
}

impl LabelMode {
    fn tag(self) -> &'static str {
        match self {
            LabelMode::Independent => "independent",
            LabelMode::Uniform => "uniform",
        }
    }
}

/// Which prior run group supplies demonstration labels for a prior-reinforced prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSource {
    pub kind: PriorKind,
    /// Shot count of the prior runs (0 for zero-shot).
    pub k: usize,
    pub sedl: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    ZeroShot,
    Independent,
    Uniform,
}

impl PriorKind {
    pub fn scheme(self) -> SchemeKind {
        match self {
            PriorKind::ZeroShot => SchemeKind::ZeroShot,
            PriorKind::Independent => SchemeKind::PriorIndependent,
            PriorKind::Uniform => SchemeKind::PriorUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub kind: SchemeKind,
    /// Same examples, different labels: texts fixed across runs, labels resampled per run.
    #[serde(default)]
    pub sedl: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source: Option<LabelSource>,
}

impl SamplingScheme {
    pub fn plain(kind: SchemeKind) -> Self {
        SamplingScheme {
            kind,
            sedl: false,
            label_source: None,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            SchemeKind::PriorIndependent | SchemeKind::PriorUniform => {}
            SchemeKind::PriorPrompt => {}
            _ if self.sedl => {
                return Err(format!("sedl is not meaningful for scheme {}", self.kind.as_str()))
            }
            _ => {}
        }
        match (self.kind, &self.label_source) {
            (SchemeKind::PriorPrompt, None) => {
                Err("prior_prompt requires a label_source".to_owned())
            }
            (SchemeKind::PriorPrompt, Some(src)) if src.sedl != self.sedl => Err(
                "prior_prompt sedl flag must match the sedl flag of its label source".to_owned(),
            ),
            (SchemeKind::PriorPrompt, Some(src)) if src.sedl && src.kind == PriorKind::ZeroShot => {
                Err("a zero-shot label source cannot be sedl".to_owned())
            }
            (SchemeKind::PriorPrompt, Some(_)) => Ok(()),
            (_, Some(_)) => Err(format!(
                "label_source is only valid for prior_prompt, not {}",
                self.kind.as_str()
            )),
            (_, None) => Ok(()),
        }
    }
}

/// Seeds for the two independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPair {
    pub text: u64,
    pub labels: u64,
}

impl SeedPair {
    /// The pair used by the single-seed sampling functions.
    pub fn from_single(seed: u64) -> Self {
        SeedPair {
            text: seed,
            labels: label_seed(seed, 0),
        }
    }
}

/// Scheme-independent seed for run `run_index`; shared by all schemes so their texts align.
pub fn run_seed(base_seed: u64, run_index: u32) -> u64 {
    StableHasher::new("run")
        .u64(base_seed)
        .u64(run_index as u64)
        .finish_u64()
}

/// Label stream seed for run `run_index` of a run whose texts come from `text_seed`.
pub fn label_seed(text_seed: u64, run_index: u32) -> u64 {
    StableHasher::new("labels")
        .u64(text_seed)
        .u64(run_index as u64)
        .finish_u64()
}

/// Seeds for a sedl run: texts depend only on `base_seed`, labels also on `run_index`.
pub fn sedl_seeds(base_seed: u64, run_index: u32) -> SeedPair {
    let text = run_seed(base_seed, 0);
    SeedPair {
        text,
        labels: label_seed(text, run_index),
    }
}

fn select_examples<'a>(
    pool: &'a MultilabelDataset,
    k: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<&'a LabeledExample>> {
    let excluded_in_pool = exclude.is_some_and(|id| pool.contains_id(id));
    let available = pool.len() - usize::from(excluded_in_pool);
    if k > available {
        return Err(Error::InsufficientPool {
            requested: k,
            available,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let take = (k + 1).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (head, _) = order.partial_shuffle(&mut rng, take);
    let ex = pool.examples();
    Ok(head
        .iter()
        .map(|&i| &ex[i])
        .filter(|e| Some(e.id.as_str()) != exclude)
        .take(k)
        .collect())
}

fn example_rng(labels_seed: u64, mode: LabelMode, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        StableHasher::new("demo-labels")
            .str(mode.tag())
            .u64(labels_seed)
            .str(id)
            .finish_u64(),
    )
}

fn random_labels(pool: &MultilabelDataset, labels_seed: u64, mode: LabelMode, id: &str) -> LabelSet {
    let mut rng = example_rng(labels_seed, mode, id);
    match mode {
        LabelMode::Independent => pool.examples()[rng.gen_range(0..pool.len())].gold,
        LabelMode::Uniform => {
            let mut s = LabelSet::EMPTY;
            for j in 0..pool.taxonomy().len() {
                if rng.gen_bool(0.5) {
                    s.insert(j);
                }
            }
            s
        }
    }
}

/// Ground-truth ICL: `k` distinct pool examples with their gold labels.
pub fn sample_icl(
    pool: &MultilabelDataset,
    k: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    Ok(select_examples(pool, k, seed, exclude)?
        .into_iter()
        .map(Demonstration::gold)
        .collect())
}

/// Task-recognition demonstrations: texts as in [`sample_icl`] with `seeds.text`, labels
/// randomised with `seeds.labels`.
pub fn sample_randomized(
    pool: &MultilabelDataset,
    k: usize,
    seeds: SeedPair,
    mode: LabelMode,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    Ok(select_examples(pool, k, seeds.text, exclude)?
        .into_iter()
        .map(|e| Demonstration {
            example_id: e.id.clone(),
            text: e.text.clone(),
            shown_labels: random_labels(pool, seeds.labels, mode, &e.id),
        })
        .collect())
}

/// Texts and labels sampled independently; labels are whole gold sets of pool examples.
pub fn sample_prior_independent(
    pool: &MultilabelDataset,
    k: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    sample_randomized(
        pool,
        k,
        SeedPair::from_single(seed),
        LabelMode::Independent,
        exclude,
    )
}

/// Texts as in [`sample_icl`]; each label shown with probability 1/2.
pub fn sample_prior_uniform(
    pool: &MultilabelDataset,
    k: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    sample_randomized(
        pool,
        k,
        SeedPair::from_single(seed),
        LabelMode::Uniform,
        exclude,
    )
}

/// Same examples for every run, labels resampled per run.
pub fn sample_sedl(
    pool: &MultilabelDataset,
    k: usize,
    base_seed: u64,
    run_index: u32,
    mode: LabelMode,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    sample_randomized(pool, k, sedl_seeds(base_seed, run_index), mode, exclude)
}

/// Texts as in [`sample_icl`]; labels are the predictions of `label_source` for each text.
pub fn sample_prior_prompt(
    pool: &MultilabelDataset,
    k: usize,
    seed: u64,
    label_source: &PredictionMap,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    select_examples(pool, k, seed, exclude)?
        .into_iter()
        .map(|e| {
            let shown = label_source
                .get(&e.id)
                .ok_or_else(|| Error::MissingPrediction(e.id.clone()))?;
            Ok(Demonstration {
                example_id: e.id.clone(),
                text: e.text.clone(),
                shown_labels: shown,
            })
        })
        .collect()
}

/// Example embeddings for similarity retrieval. Vectors are unit-normalised on insert.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::EmbeddingDimension {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(id));
        }
        self.vectors
            .insert(id, vector.into_iter().map(|x| x / norm).collect());
        Ok(())
    }

    /// Reads JSONL rows of `{"id": ..., "vector": [...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut store = EmbeddingStore::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: path.to_owned(),
                line: n + 1,
                message: e.to_string(),
            })?;
            store.insert(row.id, row.vector)?;
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }
}

/// Where the most similar demonstration goes in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalOrder {
    /// Most similar demonstration immediately before the query.
    #[default]
    MostSimilarLast,
    MostSimilarFirst,
}

/// Pool examples ranked by cosine similarity to the query, best first; ties by id.
pub fn rank_similar<'a>(
    query: &LabeledExample,
    pool: &'a MultilabelDataset,
    store: &EmbeddingStore,
) -> Result<Vec<(&'a LabeledExample, f64)>> {
    let q = store
        .get(&query.id)
        .ok_or_else(|| Error::MissingEmbedding(query.id.clone()))?;
    let mut scored = Vec::with_capacity(pool.len());
    for ex in pool.examples() {
        if ex.id == query.id {
            continue;
        }
        let v = store
            .get(&ex.id)
            .ok_or_else(|| Error::MissingEmbedding(ex.id.clone()))?;
        let cos: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
        scored.push((ex, cos));
    }
    scored.sort_by(|(a, sa), (b, sb)| sb.total_cmp(sa).then_with(|| a.id.cmp(&b.id)));
    Ok(scored)
}

/// The `k` nearest pool examples (query excluded) with gold labels, in prompt order.
pub fn retrieve_similar(
    query: &LabeledExample,
    pool: &MultilabelDataset,
    store: &EmbeddingStore,
    k: usize,
    order: RetrievalOrder,
) -> Result<Vec<Demonstration>> {
    let ranked = rank_similar(query, pool, store)?;
    if k > ranked.len() {
        return Err(Error::InsufficientPool {
            requested: k,
            available: ranked.len(),
        });
    }
    let mut demos: Vec<Demonstration> = ranked[..k]
        .iter()
        .map(|(e, _)| Demonstration::gold(e))
        .collect();
    if order == RetrievalOrder::MostSimilarLast {
        demos.reverse();
    }
    Ok(demos)
}
