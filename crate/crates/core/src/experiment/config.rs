//! TOML experiment configuration and its validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetFormat, Split};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::model::{EndpointKind, ModelEndpoint};
use crate::prompt::LabelFormat;
use crate::sampling::{PriorKind, RetrievalOrder, SchemeKind};

pub const SCHEME_NAMES: [&str; 9] = [
    "icl",
    "cossim",
    "prior_independent",
    "prior_uniform",
    "prior_independent_sedl",
    "prior_uniform_sedl",
    "zero_shot",
    "prior_prompt",
    "prior_prompt_sedl",
];

pub const ANALYSIS_NAMES: [&str; 6] = [
    "performance",
    "improvement",
    "pull",
    "consistency",
    "proxy",
    "similarity_matrix",
];

const PRIOR_NAMES: [&str; 3] = ["independent", "uniform", "zero_shot"];

/// A scheme entry of the config: kind plus the sedl flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeRequest {
    pub kind: SchemeKind,
    pub sedl: bool,
}

impl SchemeRequest {
    pub fn parse(name: &str) -> Option<Self> {
        let (base, sedl) = match name.strip_suffix("_sedl") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let kind = match base {
            "icl" => SchemeKind::Icl,
            "cossim" if !sedl => SchemeKind::Cossim,
            "prior_independent" => SchemeKind::PriorIndependent,
            "prior_uniform" => SchemeKind::PriorUniform,
            "zero_shot" if !sedl => SchemeKind::ZeroShot,
            "prior_prompt" => SchemeKind::PriorPrompt,
            _ => return None,
        };
        if kind == SchemeKind::Icl && sedl {
            return None;
        }
        Some(SchemeRequest { kind, sedl })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Performance,
    Improvement,
    Pull,
    Consistency,
    Proxy,
    SimilarityMatrix,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 6] = [
        AnalysisKind::Performance,
        AnalysisKind::Improvement,
        AnalysisKind::Pull,
        AnalysisKind::Consistency,
        AnalysisKind::Proxy,
        AnalysisKind::SimilarityMatrix,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        ANALYSIS_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self::ALL[i])
    }

    pub fn as_str(self) -> &'static str {
        ANALYSIS_NAMES[self as usize]
    }
}

fn parse_prior(name: &str) -> Option<PriorKind> {
    match name {
        "independent" => Some(PriorKind::Independent),
        "uniform" => Some(PriorKind::Uniform),
        "zero_shot" => Some(PriorKind::ZeroShot),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetConfig {
    pub name: String,
    pub eval: PathBuf,
    pub eval_format: DatasetFormat,
    pub eval_split: Split,
    /// Demonstration pool; `None` means the evaluation split itself.
    pub pool: Option<PathBuf>,
    pub pool_format: DatasetFormat,
    pub pool_split: Split,
    pub taxonomy: Option<PathBuf>,
    pub pooling_map: Option<PathBuf>,
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
    pub embeddings: Option<PathBuf>,
}

/// A fully resolved experiment; paths are absolute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub base_seed: u64,
    pub k: Vec<usize>,
    pub runs: u32,
    pub concurrency: usize,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub template: Option<PathBuf>,
    pub label_format: LabelFormat,
    pub retrieval_order: RetrievalOrder,
    pub schemes: Vec<SchemeRequest>,
    pub analyses: Vec<AnalysisKind>,
    pub dataset: DatasetConfig,
    pub endpoint: ModelEndpoint,
    /// Which task prior ICL is compared against for pull.
    pub pull_prior: PriorKind,
    /// Also compare each ICL shot against priors of every other shot.
    pub pull_cross_shot: bool,
    pub prompt_source: PriorKind,
    /// Shot count of the label-source prior; `None` means the prompt's own k.
    pub prompt_source_k: Option<usize>,
    /// Digest over the config content, excluding execution-only settings.
    pub digest: String,
}

impl ExperimentConfig {
    /// True when the pool is a different file from the evaluation split, so prior runs
    /// that label prior-reinforced prompts must also predict the pool.
    pub fn separate_pool(&self) -> bool {
        self.dataset
            .pool
            .as_ref()
            .is_some_and(|p| p != &self.dataset.eval)
    }

    pub fn max_tokens_is_default(&self) -> bool {
        self.endpoint.max_output_tokens == crate::model::DEFAULT_MAX_OUTPUT_TOKENS
    }
}

/// Reads and validates `path`, reporting every problem found rather than the first.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let base = if base.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        base
    };
    parse_config(&text, &base)
}

struct Fields {
    table: toml::Table,
    errors: Vec<String>,
    prefix: String,
}

impl Fields {
    fn new(table: toml::Table, prefix: &str) -> Self {
        Fields {
            table,
            errors: Vec::new(),
            prefix: prefix.to_owned(),
        }
    }

    fn key(&self, k: &str) -> String {
        format!("{}{k}", self.prefix)
    }

    fn take<T: for<'de> Deserialize<'de>>(&mut self, k: &str) -> Option<T> {
        let v = self.table.remove(k)?;
        match v.try_into() {
            Ok(x) => Some(x),
            Err(e) => {
                let msg = format!("{}: {}", self.key(k), e.to_string().trim());
                self.errors.push(msg);
                None
            }
        }
    }

    fn take_or<T: for<'de> Deserialize<'de>>(&mut self, k: &str, default: T) -> T {
        self.take(k).unwrap_or(default)
    }

    fn require<T: for<'de> Deserialize<'de>>(&mut self, k: &str) -> Option<T> {
        if !self.table.contains_key(k) {
            let msg = format!("{}: missing required field", self.key(k));
            self.errors.push(msg);
            return None;
        }
        self.take(k)
    }

    fn choice<T>(&mut self, k: &str, allowed: &[&str], parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let s: String = self.take(k)?;
        match parse(&s) {
            Some(x) => Some(x),
            None => {
                let msg = format!(
                    "{}: unknown value {s:?}; allowed values: {}",
                    self.key(k),
                    allowed.join(", ")
                );
                self.errors.push(msg);
                None
            }
        }
    }

    fn finish(mut self, errors: &mut Vec<String>) {
        for k in self.table.keys() {
            self.errors.push(format!("{}: unknown field", self.key(k)));
        }
        errors.append(&mut self.errors);
    }
}

fn digest(table: &toml::Table) -> String {
    let mut t = table.clone();
    t.remove("concurrency");
    t.remove("out_dir");
    t.remove("cache_dir");
    let canonical = serde_json::to_vec(&t).expect("toml table serialises");
    sha256_hex(&canonical)
}

/// Validates config `text`, resolving relative paths against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("parse error: {}", e.to_string().trim())]))?;
    let digest = digest(&table);
    let mut errors = Vec::new();
    let mut f = Fields::new(table, "");
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let mut must_exist = Vec::new();

    let name: String = f.take_or("name", "experiment".to_owned());
    let base_seed: u64 = f.take_or("base_seed", 0);
    let k: Vec<usize> = f.take_or("k", vec![5, 15, 25]);
    let runs: u32 = f.take_or("runs", 3);
    let concurrency: usize = f.take_or("concurrency", 4);
    let cache_dir = resolve(f.take_or("cache_dir", PathBuf::from("cache")));
    let out_dir = resolve(f.take_or("out_dir", PathBuf::from("out")));
    let template: Option<PathBuf> = f.take("template").map(resolve);
    if let Some(t) = &template {
        must_exist.push(("template", t.clone()));
    }
    let label_format = f
        .choice("label_format", &["comma_separated", "json_object"], |s| match s {
            "comma_separated" => Some(LabelFormat::CommaSeparated),
            "json_object" => Some(LabelFormat::JsonObject),
            _ => None,
        })
        .unwrap_or_default();
    let retrieval_order = f
        .choice("retrieval_order", &["most_similar_last", "most_similar_first"], |s| match s {
            "most_similar_last" => Some(RetrievalOrder::MostSimilarLast),
            "most_similar_first" => Some(RetrievalOrder::MostSimilarFirst),
            _ => None,
        })
        .unwrap_or_default();

    let scheme_names: Vec<String> = f.take_or("schemes", vec!["icl".to_owned()]);
    let mut schemes = Vec::new();
    for s in &scheme_names {
        match SchemeRequest::parse(s) {
            Some(r) if !schemes.contains(&r) => schemes.push(r),
            Some(_) => {}
            None => f.errors.push(format!(
                "schemes: unknown scheme {s:?}; allowed values: {}",
                SCHEME_NAMES.join(", ")
            )),
        }
    }
    let analysis_names: Vec<String> =
        f.take_or("analyses", ANALYSIS_NAMES.iter().map(|s| s.to_string()).collect());
    let mut analyses = Vec::new();
    for a in &analysis_names {
        match AnalysisKind::parse(a) {
            Some(x) if !analyses.contains(&x) => analyses.push(x),
            Some(_) => {}
            None => f.errors.push(format!(
                "analyses: unknown analysis {a:?}; allowed values: {}",
                ANALYSIS_NAMES.join(", ")
            )),
        }
    }

    if k.is_empty() {
        f.errors.push("k: list must not be empty".into());
    }
    if k.contains(&0) && schemes.iter().any(|s| s.kind.needs_demonstrations()) {
        f.errors.push(
            "k: 0 is not allowed with schemes that need demonstrations (use zero_shot instead)".into(),
        );
    }
    if runs == 0 {
        f.errors.push("runs: must be at least 1".into());
    }
    if concurrency == 0 {
        f.errors.push("concurrency: must be at least 1".into());
    }

    let mut pull_prior = PriorKind::Independent;
    let mut pull_cross_shot = false;
    if let Some(t) = f.take::<toml::Table>("pull") {
        let mut p = Fields::new(t, "pull.");
        pull_prior = p.choice("prior", &PRIOR_NAMES, parse_prior).unwrap_or(pull_prior);
        pull_cross_shot = p.take_or("cross_shot", false);
        p.finish(&mut f.errors);
    }
    let mut prompt_source = PriorKind::Independent;
    let mut prompt_source_k = None;
    if let Some(t) = f.take::<toml::Table>("prior_prompt") {
        let mut p = Fields::new(t, "prior_prompt.");
        prompt_source = p.choice("source", &PRIOR_NAMES, parse_prior).unwrap_or(prompt_source);
        prompt_source_k = p.take("source_k");
        p.finish(&mut f.errors);
    }
    if prompt_source_k == Some(0) && prompt_source != PriorKind::ZeroShot {
        f.errors.push("prior_prompt.source_k: must be positive for a few-shot prior".into());
    }
    if prompt_source == PriorKind::ZeroShot
        && schemes.iter().any(|s| s.kind == SchemeKind::PriorPrompt && s.sedl)
    {
        f.errors.push("schemes: prior_prompt_sedl cannot use a zero_shot label source".into());
    }

    let dataset = match f.take::<toml::Table>("dataset") {
        None => {
            f.errors.push("dataset: missing required section".into());
            None
        }
        Some(t) => {
            let mut d = Fields::new(t, "dataset.");
            let fmt = |s: &str| match s {
                "jsonl" => Some(DatasetFormat::Jsonl),
                "semeval_tsv" => Some(DatasetFormat::SemevalTsv),
                _ => None,
            };
            let split = |s: &str| match s {
                "train" => Some(Split::Train),
                "dev" => Some(Split::Dev),
                "test" => Some(Split::Test),
                _ => None,
            };
            let eval: Option<PathBuf> = d.require("eval");
            let eval_format = d
                .choice("eval_format", &["jsonl", "semeval_tsv"], fmt)
                .unwrap_or(DatasetFormat::Jsonl);
            let eval_split = d.choice("eval_split", &["train", "dev", "test"], split).unwrap_or(Split::Dev);
            let pool: Option<PathBuf> = d.take("pool");
            let pool_format = d
                .choice("pool_format", &["jsonl", "semeval_tsv"], fmt)
                .unwrap_or(eval_format);
            let pool_split = d.choice("pool_split", &["train", "dev", "test"], split).unwrap_or(Split::Train);
            let taxonomy: Option<PathBuf> = d.take("taxonomy");
            let pooling_map: Option<PathBuf> = d.take("pooling_map");
            let subsample: Option<usize> = d.take("subsample");
            let subsample_seed: u64 = d.take_or("subsample_seed", base_seed);
            let embeddings: Option<PathBuf> = d.take("embeddings");
            let dname: Option<String> = d.take("name");
            d.finish(&mut f.errors);
            let uses_jsonl = eval_format == DatasetFormat::Jsonl
                || (pool.is_some() && pool_format == DatasetFormat::Jsonl);
            if uses_jsonl && taxonomy.is_none() {
                f.errors.push("dataset.taxonomy: required for jsonl datasets".into());
            }
            eval.map(|eval| {
                let eval = resolve(eval);
                let cfg = DatasetConfig {
                    name: dname.unwrap_or_else(|| {
                        eval.file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "dataset".into())
                    }),
                    eval,
                    eval_format,
                    eval_split,
                    pool: pool.map(resolve),
                    pool_format,
                    pool_split,
                    taxonomy: taxonomy.map(resolve),
                    pooling_map: pooling_map.map(resolve),
                    subsample,
                    subsample_seed,
                    embeddings: embeddings.map(resolve),
                };
                must_exist.push(("dataset.eval", cfg.eval.clone()));
                for (field, p) in [
                    ("dataset.pool", &cfg.pool),
                    ("dataset.taxonomy", &cfg.taxonomy),
                    ("dataset.pooling_map", &cfg.pooling_map),
                    ("dataset.embeddings", &cfg.embeddings),
                ] {
                    if let Some(p) = p {
                        must_exist.push((field, p.clone()));
                    }
                }
                cfg
            })
        }
    };

    let endpoint = match f.take::<toml::Value>("endpoint") {
        None => {
            f.errors.push("endpoint: missing required section".into());
            None
        }
        Some(v) => match v.try_into::<ModelEndpoint>() {
            Ok(ep) => {
                f.errors.extend(ep.validate());
                Some(ep)
            }
            Err(e) => {
                f.errors.push(format!("endpoint: {}", e.to_string().trim()));
                None
            }
        },
    };
    if let (Some(ep), Some(ds)) = (&endpoint, &dataset) {
        let cossim = schemes.iter().any(|s| s.kind == SchemeKind::Cossim);
        if cossim
            && ds.embeddings.is_none()
            && ep.kind != EndpointKind::Mock
            && ep.embedding_model.is_none()
        {
            f.errors.push(
                "dataset.embeddings: cossim needs an embedding store or endpoint.embedding_model"
                    .into(),
            );
        }
    }

    for (field, p) in must_exist {
        if !p.exists() {
            f.errors.push(format!("{field}: file not found: {}", p.display()));
        }
    }
    f.finish(&mut errors);
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    Ok(ExperimentConfig {
        name,
        base_seed,
        k,
        runs,
        concurrency,
        cache_dir,
        out_dir,
        template,
        label_format,
        retrieval_order,
        schemes,
        analyses,
        dataset: dataset.expect("no errors"),
        endpoint: endpoint.expect("no errors"),
        pull_prior,
        pull_cross_shot,
        prompt_source,
        prompt_source_k,
        digest,
    })
}
