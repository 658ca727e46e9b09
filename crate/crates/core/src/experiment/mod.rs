//! Experiment configuration, run planning and orchestration.

pub mod config;
pub mod naming;
pub mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use tracing::{info, warn};

use crate::analysis::{build_prior_dataset, coverage_gaps, execute_run, PredictionSet, RunContext, RunManifest};
use crate::corpus::{load_dataset, pool_labels, subsample, EmotionTaxonomy, MultilabelDataset, PoolingMap};
use crate::error::{Error, Result};
use crate::exec::Dispatcher;
use crate::hashing::sha256_hex;
use crate::model::{Client, TranscriptCache};
use crate::prompt::PromptTemplate;
use crate::sampling::{EmbeddingStore, LabelSource, PriorKind, SamplingScheme, SchemeKind};

pub use config::{validate_config, AnalysisKind, ExperimentConfig, SchemeRequest};
pub use naming::run_name;
pub use report::{emit_reports, load_runs, RunGroup};

/// One group of runs sharing scheme and k.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedGroup {
    pub scheme: SamplingScheme,
    pub k: usize,
    pub runs: u32,
    pub traindev: bool,
}

impl PlannedGroup {
    pub fn name(&self) -> String {
        run_name(&self.scheme, self.k, self.traindev)
    }

    /// The group whose predictions label this group's prompts.
    pub fn source(&self) -> Option<(SamplingScheme, usize)> {
        self.scheme
            .label_source
            .map(|s| (SamplingScheme { kind: s.kind.scheme(), sedl: s.sedl, label_source: None }, s.k))
    }
}

fn prior_scheme(kind: PriorKind, sedl: bool) -> SamplingScheme {
    SamplingScheme {
        kind: kind.scheme(),
        sedl,
        label_source: None,
    }
}

fn deterministic(kind: SchemeKind) -> bool {
    matches!(kind, SchemeKind::Cossim | SchemeKind::ZeroShot)
}

/// Expands the requested schemes and analyses into run groups, inserting every prior
/// group that a requested prior-reinforced prompt or analysis depends on. Groups that
/// supply labels come before the groups that consume them.
pub fn plan(cfg: &ExperimentConfig) -> Vec<PlannedGroup> {
    let mut wanted: Vec<(SamplingScheme, usize)> = Vec::new();
    let mut push = |s: SamplingScheme, k: usize| {
        let k = if s.kind == SchemeKind::ZeroShot { 0 } else { k };
        if !wanted.contains(&(s, k)) {
            wanted.push((s, k));
        }
    };
    let source_k = |k: usize| match cfg.prompt_source {
        PriorKind::ZeroShot => 0,
        _ => cfg.prompt_source_k.unwrap_or(k),
    };
    let prompt_scheme = |sedl: bool, k: usize| SamplingScheme {
        kind: SchemeKind::PriorPrompt,
        sedl,
        label_source: Some(LabelSource {
            kind: cfg.prompt_source,
            k: source_k(k),
            sedl,
        }),
    };
    let has = |kind: SchemeKind| cfg.schemes.iter().any(|s| s.kind == kind);
    for req in &cfg.schemes {
        for &k in &cfg.k {
            match req.kind {
                SchemeKind::PriorPrompt => {
                    push(prior_scheme(cfg.prompt_source, req.sedl), source_k(k));
                    push(prompt_scheme(req.sedl, k), k);
                }
                kind => push(
                    SamplingScheme {
                        kind,
                        sedl: req.sedl,
                        label_source: None,
                    },
                    k,
                ),
            }
        }
    }
    for a in &cfg.analyses {
        for &k in &cfg.k {
            match a {
                AnalysisKind::Pull => {
                    push(SamplingScheme::plain(SchemeKind::Icl), k);
                    push(prior_scheme(cfg.pull_prior, false), k);
                }
                AnalysisKind::Improvement => {
                    push(SamplingScheme::plain(SchemeKind::Icl), k);
                    let any_prior = has(SchemeKind::PriorIndependent)
                        || has(SchemeKind::PriorUniform)
                        || has(SchemeKind::ZeroShot);
                    if !any_prior {
                        push(prior_scheme(cfg.pull_prior, false), k);
                    }
                }
                AnalysisKind::Proxy if !has(SchemeKind::PriorPrompt) => {
                    push(prior_scheme(cfg.prompt_source, false), source_k(k));
                    push(prompt_scheme(false, k), k);
                }
                _ => {}
            }
        }
    }
    let sources: HashSet<(SamplingScheme, usize)> = wanted
        .iter()
        .filter_map(|(s, _)| s.label_source.map(|l| (prior_scheme(l.kind, l.sedl), l.k)))
        .collect();
    let separate = cfg.separate_pool();
    let mut groups: Vec<PlannedGroup> = wanted
        .into_iter()
        .map(|(scheme, k)| PlannedGroup {
            runs: if deterministic(scheme.kind) { 1 } else { cfg.runs },
            traindev: separate && sources.contains(&(scheme, k)),
            scheme,
            k,
        })
        .collect();
    groups.sort_by_key(|g| g.scheme.kind == SchemeKind::PriorPrompt);
    groups
}

/// Runtime overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub offline: bool,
    pub concurrency: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

/// Datasets, template and client of an experiment, ready to execute runs.
pub struct Workspace {
    pub eval: MultilabelDataset,
    pub pool: MultilabelDataset,
    pub template: PromptTemplate,
    pub client: Client,
    pub out_dir: PathBuf,
    pub concurrency: usize,
}

fn load_taxonomy(cfg: &ExperimentConfig) -> Result<Option<EmotionTaxonomy>> {
    cfg.dataset
        .taxonomy
        .as_ref()
        .map(EmotionTaxonomy::from_file)
        .transpose()
}

fn prepare(
    d: MultilabelDataset,
    pooling: Option<&PoolingMap>,
) -> Result<MultilabelDataset> {
    match pooling {
        Some(m) => pool_labels(&d, m),
        None => Ok(d),
    }
}

/// Loads the evaluation split and demonstration pool, applying pooling and subsampling.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(MultilabelDataset, MultilabelDataset)> {
    let ds = &cfg.dataset;
    let taxonomy = load_taxonomy(cfg)?;
    let pooling = ds.pooling_map.as_ref().map(PoolingMap::from_file).transpose()?;
    let eval = prepare(
        load_dataset(&ds.eval, ds.eval_format, taxonomy.as_ref(), ds.eval_split)?,
        pooling.as_ref(),
    )?;
    let eval = match ds.subsample {
        Some(n) => subsample(&eval, n, ds.subsample_seed)?,
        None => eval,
    };
    let pool = match &ds.pool {
        Some(p) if p != &ds.eval => prepare(
            load_dataset(p, ds.pool_format, taxonomy.as_ref(), ds.pool_split)?,
            pooling.as_ref(),
        )?,
        _ => eval.clone(),
    };
    if pool.taxonomy() != eval.taxonomy() {
        return Err(Error::Taxonomy(
            "evaluation split and demonstration pool use different taxonomies".into(),
        ));
    }
    Ok((eval, pool))
}

impl Workspace {
    pub fn open(cfg: &ExperimentConfig, opts: &Options) -> Result<Self> {
        let (eval, pool) = load_data(cfg)?;
        let template = match &cfg.template {
            Some(p) => PromptTemplate::from_file(p, cfg.label_format)?,
            None => PromptTemplate::default_with(cfg.label_format),
        };
        let cache = TranscriptCache::open(opts.cache_dir.as_ref().unwrap_or(&cfg.cache_dir))?;
        let client = Client::new(
            cfg.endpoint.clone(),
            eval.taxonomy(),
            template.clone(),
            Some(cache),
            opts.offline,
        )?;
        Ok(Workspace {
            eval,
            pool,
            template,
            client,
            out_dir: opts.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone()),
            concurrency: opts.concurrency.unwrap_or(cfg.concurrency).max(1),
        })
    }

    fn embeddings(&self, cfg: &ExperimentConfig) -> Result<EmbeddingStore> {
        if let Some(p) = &cfg.dataset.embeddings {
            return EmbeddingStore::load(p);
        }
        let mut seen = HashSet::new();
        let examples: Vec<_> = self
            .eval
            .examples()
            .iter()
            .chain(self.pool.examples())
            .filter(|e| seen.insert(e.id.as_str()))
            .collect();
        let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
        let vectors = self.client.embed(&texts)?;
        let mut store = EmbeddingStore::new();
        for (e, v) in examples.iter().zip(vectors) {
            store.insert(e.id.clone(), v)?;
        }
        Ok(store)
    }
}

/// Path of a persisted run.
pub fn run_path(out_dir: &Path, group: &str, run_index: u32) -> PathBuf {
    out_dir.join("runs").join(group).join(format!("run{run_index}.json"))
}

/// What an orchestration produced.
#[derive(Debug)]
pub struct Outcome {
    pub groups: Vec<RunGroup>,
    pub reports: Vec<PathBuf>,
    pub network_calls: u64,
    /// Groups that failed or were skipped because a dependency failed.
    pub failures: Vec<String>,
}

/// Executes every planned group with caching, persists the runs and emits the reports.
pub fn orchestrate(cfg: &ExperimentConfig, opts: &Options) -> Result<Outcome> {
    let ws = Workspace::open(cfg, opts)?;
    let dispatcher = Dispatcher::new(ws.concurrency);
    let planned = plan(cfg);
    let embeddings = if planned.iter().any(|g| g.scheme.kind == SchemeKind::Cossim) {
        Some(ws.embeddings(cfg)?)
    } else {
        None
    };
    let ctx = RunContext {
        eval: &ws.eval,
        pool: &ws.pool,
        template: &ws.template,
        client: &ws.client,
        dispatcher: &dispatcher,
        embeddings: embeddings.as_ref(),
    };
    let template_sha256 = sha256_hex(ws.template.source().as_bytes());
    let endpoint = ws.client.cache_model_id();

    let mut done: BTreeMap<(SamplingScheme, usize), Vec<PredictionSet>> = BTreeMap::new();
    let mut groups = Vec::new();
    let mut failures = Vec::new();
    for g in &planned {
        let name = g.name();
        let sources = match g.source() {
            None => None,
            Some(key) => match done.get(&key) {
                Some(runs) => Some(runs),
                None => {
                    warn!(group = %name, "skipped: label source unavailable");
                    failures.push(format!("{name}: skipped, label source unavailable"));
                    continue;
                }
            },
        };
        let maps = match sources {
            Some(runs) => match source_maps(runs, &ws.pool) {
                Ok(m) => Some(m),
                Err(e) => {
                    failures.push(format!("{name}: {e}"));
                    continue;
                }
            },
            None => None,
        };
        info!(group = %name, runs = g.runs, "executing");
        let mut runs = Vec::with_capacity(g.runs as usize);
        let mut failed = None;
        for r in 0..g.runs {
            let label_source_run = maps.as_ref().map(|m| r % m.len() as u32);
            let manifest = RunManifest {
                dataset: cfg.dataset.name.clone(),
                scheme: g.scheme,
                k: g.k,
                run_index: r,
                base_seed: cfg.base_seed,
                endpoint: endpoint.clone(),
                template_sha256: template_sha256.clone(),
                label_format: cfg.label_format,
                max_output_tokens: cfg.endpoint.max_output_tokens,
                traindev: g.traindev,
                retrieval_order: cfg.retrieval_order,
                label_source_run,
            };
            let label_source = maps
                .as_ref()
                .zip(label_source_run)
                .map(|(m, i)| &m[i as usize]);
            match execute_run(&manifest, &ctx, label_source) {
                Ok(p) => {
                    p.save(run_path(&ws.out_dir, &name, r))?;
                    runs.push(p);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            warn!(group = %name, error = %e, "run failed");
            failures.push(format!("{name}: {e}"));
            if matches!(e, Error::Authentication { .. } | Error::Offline(_)) {
                return Err(e);
            }
            continue;
        }
        done.insert((g.scheme, g.k), runs.clone());
        groups.push(RunGroup { name, runs });
    }
    let reports = emit_reports(cfg, &groups, &ws.eval, &ws.out_dir, &cfg.analyses)?;
    let network_calls = ws.client.network_calls();
    Ok(Outcome {
        groups,
        reports,
        network_calls,
        failures,
    })
}

fn source_maps(runs: &[PredictionSet], pool: &MultilabelDataset) -> Result<Vec<crate::metrics::PredictionMap>> {
    for r in runs {
        let gaps = coverage_gaps(r, pool);
        if !gaps.is_empty() {
            return Err(Error::Coverage(gaps));
        }
    }
    build_prior_dataset(runs, pool)
}

/// Removes persisted runs and reports under `out_dir`.
pub fn clean_outputs(out_dir: &Path) -> Result<()> {
    for sub in ["runs", "reports"] {
        let p = out_dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
