//! Run execution and the four analyses over completed runs: improvement over task
//! priors, prior pull, cross-run consistency and proxy performance.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, MultilabelDataset};
use crate::error::{Error, Result};
use crate::exec::{self, Dispatcher, Exec};
use crate::experiment::naming;
use crate::metrics::{metric_triple, metric_triple_with, AlignMode, MetricTriple, PredictionMap, TripleStats};
use crate::model::Client;
use crate::prompt::{parse_output, render_prompt, ParseDiagnostics, PromptTemplate};
use crate::sampling::{
    self, retrieve_similar, run_seed, sample_icl, sample_prior_prompt, sample_randomized,
    sedl_seeds, Demonstration, EmbeddingStore, LabelMode, RetrievalOrder, SamplingScheme,
    SchemeKind, SeedPair,
};

/// Everything that determines one run's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub scheme: SamplingScheme,
    pub k: usize,
    pub run_index: u32,
    pub base_seed: u64,
    pub endpoint: String,
    pub template_sha256: String,
    pub label_format: crate::prompt::LabelFormat,
    pub max_output_tokens: u32,
    /// Also predict the demonstration pool, so the run can label prior-reinforced prompts.
    #[serde(default)]
    pub traindev: bool,
    #[serde(default)]
    pub retrieval_order: RetrievalOrder,
    /// For prior-reinforced runs: which run of the label-source group supplied the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source_run: Option<u32>,
}

impl RunManifest {
    /// Run-group name (`25s`, `proxy-prior-15s-sedl`, ...).
    pub fn run_name(&self) -> String {
        naming::run_name(&self.scheme, self.k, self.traindev)
    }

    /// Unique id of this run within an experiment.
    pub fn run_id(&self) -> String {
        format!("{}/run{}", self.run_name(), self.run_index)
    }
}

/// The outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub manifest: RunManifest,
    /// Ids of the evaluation split, sorted.
    pub evaluation: Vec<String>,
    /// Predictions for the evaluation split, plus the demonstration pool for traindev runs.
    pub predictions: PredictionMap,
    pub diagnostics: ParseDiagnostics,
}

impl PredictionSet {
    /// Predictions restricted to the evaluation split.
    pub fn eval_predictions(&self) -> Result<PredictionMap> {
        self.predictions
            .restrict(self.evaluation.iter().map(String::as_str))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Inputs shared by all runs of an experiment.
pub struct RunContext<'a> {
    pub eval: &'a MultilabelDataset,
    pub pool: &'a MultilabelDataset,
    pub template: &'a PromptTemplate,
    pub client: &'a Client,
    pub dispatcher: &'a Dispatcher,
    pub embeddings: Option<&'a EmbeddingStore>,
}

/// Demonstrations for `query` under the manifest's scheme.
pub fn demonstrations_for(
    manifest: &RunManifest,
    ctx: &RunContext<'_>,
    label_source: Option<&PredictionMap>,
    query: &LabeledExample,
) -> Result<Vec<Demonstration>> {
    let k = manifest.k;
    let exclude = Some(query.id.as_str());
    let seed = run_seed(manifest.base_seed, manifest.run_index);
    let scheme = &manifest.scheme;
    match scheme.kind {
        SchemeKind::ZeroShot => Ok(Vec::new()),
        SchemeKind::Icl => sample_icl(ctx.pool, k, seed, exclude),
        SchemeKind::Cossim => {
            let store = ctx
                .embeddings
                .ok_or_else(|| Error::Analysis("cossim scheme needs an embedding store".into()))?;
            retrieve_similar(query, ctx.pool, store, k, manifest.retrieval_order)
        }
        SchemeKind::PriorIndependent | SchemeKind::PriorUniform => {
            let mode = if scheme.kind == SchemeKind::PriorIndependent {
                LabelMode::Independent
            } else {
                LabelMode::Uniform
            };
            let seeds = if scheme.sedl {
                sedl_seeds(manifest.base_seed, manifest.run_index)
            } else {
                SeedPair::from_single(seed)
            };
            sample_randomized(ctx.pool, k, seeds, mode, exclude)
        }
        SchemeKind::PriorPrompt => {
            let source = label_source.ok_or_else(|| {
                Error::Analysis("prior_prompt run needs label-source predictions".into())
            })?;
            // examples drawn once and shared by every run
            sample_prior_prompt(ctx.pool, k, run_seed(manifest.base_seed, 0), source, exclude)
        }
    }
}

/// Samples, renders, completes (through the cache) and parses every query of the run.
pub fn execute_run(
    manifest: &RunManifest,
    ctx: &RunContext<'_>,
    label_source: Option<&PredictionMap>,
) -> Result<PredictionSet> {
    let taxonomy = ctx.eval.taxonomy();
    let mut queries: Vec<&LabeledExample> = ctx.eval.examples().iter().collect();
    if manifest.traindev {
        let seen: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
        queries.extend(
            ctx.pool
                .examples()
                .iter()
                .filter(|e| !seen.contains(e.id.as_str())),
        );
    }
    let run = manifest.run_id();
    let outcomes = ctx.dispatcher.try_map(&queries, |q| {
        let demos = demonstrations_for(manifest, ctx, label_source, q)?;
        let prompt = render_prompt(ctx.template, taxonomy, &demos, q)?;
        let (text, _hit) = ctx.client.cached_complete(&prompt)?;
        let parsed = parse_output(&text, taxonomy, ctx.template.label_format());
        Ok::<_, Error>((q.id.clone(), parsed))
    });
    let outcomes = outcomes.map_err(|e| match e {
        Error::Authentication { .. } | Error::Offline(_) => e,
        other => Error::Run {
            run: run.clone(),
            message: other.to_string(),
        },
    })?;
    let mut predictions = PredictionMap::new(taxonomy.clone());
    let mut diagnostics = ParseDiagnostics::default();
    for (id, parsed) in outcomes {
        diagnostics.record(parsed.status);
        predictions.insert(id, parsed.labels)?;
    }
    let mut evaluation: Vec<String> = ctx.eval.ids().map(str::to_owned).collect();
    evaluation.sort();
    Ok(PredictionSet {
        manifest: manifest.clone(),
        evaluation,
        predictions,
        diagnostics,
    })
}

/// Score of a run against the gold labels of `reference`.
pub fn performance(p: &PredictionSet, reference: &MultilabelDataset) -> Result<MetricTriple> {
    let preds = p.predictions.restrict(reference.ids())?;
    metric_triple(&PredictionMap::from_gold(reference), &preds)
}

/// Mean/std of performance over a group of runs.
pub fn group_performance(runs: &[PredictionSet], reference: &MultilabelDataset) -> Result<TripleStats> {
    let scores = runs
        .iter()
        .map(|r| performance(r, reference))
        .collect::<Result<Vec<_>>>()?;
    TripleStats::from_samples(&scores).ok_or_else(|| Error::Analysis("no runs to score".into()))
}

/// Per-metric percentage improvement; `None` where the best prior scores 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub jaccard: Option<f64>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrior {
    pub score: f64,
    pub prior: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    /// Best prior per metric, chosen independently for each metric.
    pub best: BTreeMap<String, BestPrior>,
    pub by_k: BTreeMap<usize, Improvement>,
}

/// `100 * (icl - best) / best` per metric and k, where `best` is the maximum over every
/// prior kind and every examined k.
pub fn improvement_over_prior(
    icl_perf: &BTreeMap<usize, MetricTriple>,
    prior_perfs: &BTreeMap<(String, usize), MetricTriple>,
) -> Result<ImprovementReport> {
    if prior_perfs.is_empty() {
        return Err(Error::Analysis(
            "improvement over prior needs at least one prior performance".into(),
        ));
    }
    let mut best: [Option<BestPrior>; 3] = Default::default();
    for ((prior, k), tri) in prior_perfs {
        for (m, v) in tri.as_array().into_iter().enumerate() {
            if best[m].as_ref().is_none_or(|b| v > b.score) {
                best[m] = Some(BestPrior {
                    score: v,
                    prior: prior.clone(),
                    k: *k,
                });
            }
        }
    }
    let best = best.map(|b| b.expect("non-empty priors"));
    let pct = |v: f64, b: f64| (b != 0.0).then(|| 100.0 * (v - b) / b);
    let by_k = icl_perf
        .iter()
        .map(|(k, tri)| {
            let a = tri.as_array();
            (
                *k,
                Improvement {
                    jaccard: pct(a[0], best[0].score),
                    micro_f1: pct(a[1], best[1].score),
                    macro_f1: pct(a[2], best[2].score),
                },
            )
        })
        .collect();
    Ok(ImprovementReport {
        best: crate::metrics::METRIC_NAMES
            .iter()
            .map(|s| s.to_string())
            .zip(best)
            .collect(),
        by_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullReport {
    pub k: usize,
    pub sim_to_ground_truth: TripleStats,
    pub sim_to_prior: TripleStats,
    /// `mean(sim_to_prior) - mean(sim_to_ground_truth)` per metric.
    pub pull: MetricTriple,
}

/// Pull over prediction maps: `icl` runs against `gold`, and every (icl, prior) pair.
pub fn pull_maps(
    k: usize,
    icl: &[PredictionMap],
    prior: &[PredictionMap],
    gold: &PredictionMap,
) -> Result<PullReport> {
    pull_maps_with(Exec::default(), k, icl, prior, gold)
}

pub fn pull_maps_with(
    exec: Exec,
    k: usize,
    icl: &[PredictionMap],
    prior: &[PredictionMap],
    gold: &PredictionMap,
) -> Result<PullReport> {
    if icl.is_empty() || prior.is_empty() {
        return Err(Error::Analysis("pull needs at least one icl and one prior run".into()));
    }
    let to_gt = icl
        .iter()
        .map(|p| metric_triple(gold, p))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..icl.len())
        .flat_map(|i| (0..prior.len()).map(move |j| (i, j)))
        .collect();
    let to_prior = exec::try_map(exec, &pairs, |&(i, j)| metric_triple(&prior[j], &icl[i]))?;
    let gt = TripleStats::from_samples(&to_gt).expect("non-empty");
    let pr = TripleStats::from_samples(&to_prior).expect("non-empty");
    Ok(PullReport {
        k,
        pull: pr.mean.zip_with(&gt.mean, |a, b| a - b),
        sim_to_ground_truth: gt,
        sim_to_prior: pr,
    })
}

/// Prior pull for ICL runs against task-prior runs of the same shot.
pub fn pull(
    icl_runs: &[PredictionSet],
    prior_runs: &[PredictionSet],
    gold: &MultilabelDataset,
) -> Result<PullReport> {
    let k = icl_runs
        .first()
        .map(|r| r.manifest.k)
        .ok_or_else(|| Error::Analysis("pull needs icl runs".into()))?;
    if let Some(bad) = icl_runs
        .iter()
        .chain(prior_runs)
        .find(|r| r.manifest.k != k)
    {
        return Err(Error::Analysis(format!(
            "k mismatch: {} has k={}, expected {k}",
            bad.manifest.run_id(),
            bad.manifest.k
        )));
    }
    pull_with_k(k, icl_runs, prior_runs, gold)
}

/// As [`pull`], without requiring the prior runs to share the ICL shot count.
pub fn pull_with_k(
    k: usize,
    icl_runs: &[PredictionSet],
    prior_runs: &[PredictionSet],
    gold: &MultilabelDataset,
) -> Result<PullReport> {
    let restrict = |runs: &[PredictionSet]| {
        runs.iter()
            .map(|r| r.predictions.restrict(gold.ids()))
            .collect::<Result<Vec<_>>>()
    };
    pull_maps(
        k,
        &restrict(icl_runs)?,
        &restrict(prior_runs)?,
        &PredictionMap::from_gold(gold),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSimilarity {
    pub config_a: String,
    pub config_b: String,
    pub pairs: usize,
    pub stats: TripleStats,
}

fn group_name(runs: &[PredictionSet]) -> String {
    runs.first()
        .map(|r| r.manifest.run_name())
        .unwrap_or_default()
}

/// Similarity over all unordered pairs within `group_a`, or all cross pairs with `group_b`.
pub fn consistency(
    group_a: &[PredictionSet],
    group_b: Option<&[PredictionSet]>,
) -> Result<PairwiseSimilarity> {
    consistency_with(group_a, group_b, AlignMode::Strict)
}

pub fn consistency_with(
    group_a: &[PredictionSet],
    group_b: Option<&[PredictionSet]>,
    align: AlignMode,
) -> Result<PairwiseSimilarity> {
    let maps = |g: &[PredictionSet]| {
        g.iter()
            .map(PredictionSet::eval_predictions)
            .collect::<Result<Vec<_>>>()
    };
    let a = maps(group_a)?;
    let (b, pairs): (Vec<PredictionMap>, Vec<(usize, usize)>) = match group_b {
        None => {
            if a.len() < 2 {
                return Err(Error::Analysis(format!(
                    "within-group consistency needs at least 2 runs, {} has {}",
                    group_name(group_a),
                    a.len()
                )));
            }
            let pairs = (0..a.len())
                .flat_map(|i| (i + 1..a.len()).map(move |j| (i, j)))
                .collect();
            (Vec::new(), pairs)
        }
        Some(g) => {
            let b = maps(g)?;
            if a.is_empty() || b.is_empty() {
                return Err(Error::Analysis("cross-group consistency needs runs on both sides".into()));
            }
            let pairs = (0..a.len())
                .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
                .collect();
            (b, pairs)
        }
    };
    let other = if group_b.is_some() { &b } else { &a };
    let scores = exec::try_map(Exec::Parallel, &pairs, |&(i, j)| {
        metric_triple_with(&a[i], &other[j], align)
    })?;
    Ok(PairwiseSimilarity {
        config_a: group_name(group_a),
        config_b: group_b.map_or_else(|| group_name(group_a), group_name),
        pairs: pairs.len(),
        stats: TripleStats::from_samples(&scores).expect("non-empty pairs"),
    })
}

/// Performance of prior-reinforced runs measured against the predictions that labelled
/// their prompts, restricted to the evaluation split.
pub fn proxy_performance(
    reinforced_runs: &[PredictionSet],
    sources: &[PredictionSet],
) -> Result<TripleStats> {
    let mut scores = Vec::with_capacity(reinforced_runs.len());
    for r in reinforced_runs {
        let src_ref = r.manifest.scheme.label_source.ok_or_else(|| {
            Error::Analysis(format!("{} has no label source", r.manifest.run_id()))
        })?;
        let idx = r.manifest.label_source_run.unwrap_or(0);
        let source = sources
            .iter()
            .find(|s| s.manifest.run_index == idx)
            .or_else(|| (sources.len() == 1).then(|| &sources[0]))
            .ok_or_else(|| {
                Error::Analysis(format!(
                    "label source run {idx} for {} not supplied",
                    r.manifest.run_id()
                ))
            })?;
        let s = &source.manifest.scheme;
        if s.kind != src_ref.kind.scheme() || s.sedl != src_ref.sedl || source.manifest.k != src_ref.k {
            return Err(Error::Analysis(format!(
                "label source mismatch: {} was labelled by {:?} but {} was supplied",
                r.manifest.run_id(),
                src_ref,
                source.manifest.run_id()
            )));
        }
        let reference = source.predictions.restrict(r.evaluation.iter().map(String::as_str))?;
        scores.push(metric_triple(&reference, &r.eval_predictions()?)?);
    }
    TripleStats::from_samples(&scores).ok_or_else(|| Error::Analysis("no reinforced runs".into()))
}

/// Per-run prediction maps over the demonstration pool, for use as prompt label sources.
pub fn build_prior_dataset(
    prior_runs: &[PredictionSet],
    pool: &MultilabelDataset,
) -> Result<Vec<PredictionMap>> {
    prior_runs
        .iter()
        .map(|r| r.predictions.restrict(pool.ids()))
        .collect()
}

/// Ids in `pool` missing from `run`, in pool order.
pub fn coverage_gaps(run: &PredictionSet, pool: &MultilabelDataset) -> Vec<String> {
    let have: BTreeSet<&str> = run.predictions.ids().collect();
    pool.ids()
        .filter(|id| !have.contains(id))
        .map(str::to_owned)
        .collect()
}

pub use sampling::PriorKind;
