use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use priorpull::analysis::{
    consistency_with, group_performance, proxy_performance, pull_with_k, PredictionSet,
};
use priorpull::experiment::{
    self, emit_reports, load_runs, plan, validate_config, AnalysisKind, ExperimentConfig, Options,
    RunGroup,
};
use priorpull::metrics::{metric_triple_with, AlignMode, PredictionMap};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "priorpull", version, about = "Measure the prior pull on in-context learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Forbid network access; answer only from the cache or a mock endpoint.
    #[arg(long)]
    offline: bool,
    /// Maximum number of concurrent model requests.
    #[arg(long, value_name = "N")]
    concurrency: Option<usize>,
    /// Output directory for runs and reports.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Transcript cache directory.
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            offline: self.offline,
            concurrency: self.concurrency,
            out_dir: self.out.clone(),
            cache_dir: self.cache_dir.clone(),
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        validate_config(&self.config).map_err(|e| anyhow!("{e}"))
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.out_dir.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print the planned run groups.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Execute every planned run and emit the requested reports.
    Run(Common),
    /// Re-run an experiment from the transcript cache only.
    Replay(Common),
    /// Regenerate reports from persisted runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Analyses to emit; defaults to those in the config.
        #[arg(long = "analysis", value_name = "NAME")]
        analyses: Vec<String>,
    },
    /// Score persisted run groups, or a single prediction file, against gold labels.
    Score {
        #[command(flatten)]
        common: Common,
        /// Run group to score; all groups when omitted.
        #[arg(long)]
        group: Vec<String>,
        /// A persisted run file to score instead of run groups.
        #[arg(long, value_name = "PATH", conflicts_with = "group")]
        pred: Option<PathBuf>,
        /// Score on the ids shared with the gold labels instead of failing on a mismatch.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Prior pull of an ICL group against a task-prior group.
    Pull {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "prior")]
        icl: Option<String>,
        #[arg(long, requires = "icl")]
        prior: Option<String>,
    },
    /// Pairwise agreement within one group or across two.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<String>,
        #[arg(long, requires = "a")]
        b: Option<String>,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Performance of prior-reinforced runs against the predictions that labelled them.
    Proxy {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "source")]
        group: Option<String>,
        #[arg(long, requires = "group")]
        source: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Validate { config } => validate(&config),
        Command::Run(c) => run(&c, false),
        Command::Replay(c) => run(&c, true),
        Command::Report { common, analyses } => report(&common, &analyses),
        Command::Score {
            common,
            group,
            pred,
            allow_partial,
        } => score(&common, &group, pred.as_deref(), allow_partial),
        Command::Pull { common, icl, prior } => match icl.zip(prior) {
            Some((i, p)) => pull_groups(&common, &i, &p),
            None => report(&common, &["pull".into()]),
        },
        Command::Consistency {
            common,
            a,
            b,
            allow_partial,
        } => match a {
            Some(a) => consistency_groups(&common, &a, b.as_deref(), allow_partial),
            None => report(&common, &["consistency".into(), "similarity_matrix".into()]),
        },
        Command::Proxy {
            common,
            group,
            source,
        } => match group.zip(source) {
            Some((g, s)) => proxy_groups(&common, &g, &s),
            None => report(&common, &["proxy".into()]),
        },
    }
}

fn validate(path: &Path) -> Result<ExitCode> {
    match validate_config(path) {
        Ok(cfg) => {
            println!("{}: ok (digest {})", path.display(), cfg.digest);
            for g in plan(&cfg) {
                println!("  {} x{}", g.name(), g.runs);
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("{}: invalid\n{e}", path.display());
            Ok(ExitCode::from(2))
        }
    }
}

fn run(c: &Common, replay: bool) -> Result<ExitCode> {
    let cfg = c.load()?;
    let mut opts = c.options();
    opts.offline |= replay;
    let outcome = experiment::orchestrate(&cfg, &opts).map_err(|e| anyhow!("{e}"))?;
    for g in &outcome.groups {
        println!("ran {} ({} runs)", g.name, g.runs.len());
    }
    for r in &outcome.reports {
        println!("wrote {}", r.display());
    }
    println!("network calls: {}", outcome.network_calls);
    if outcome.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &outcome.failures {
        eprintln!("failed: {f}");
    }
    Ok(ExitCode::FAILURE)
}

fn report(c: &Common, names: &[String]) -> Result<ExitCode> {
    let cfg = c.load()?;
    let analyses = if names.is_empty() {
        cfg.analyses.clone()
    } else {
        names
            .iter()
            .map(|n| {
                AnalysisKind::parse(n).ok_or_else(|| {
                    let all: Vec<_> = AnalysisKind::ALL.iter().map(|a| a.as_str()).collect();
                    anyhow!("unknown analysis {n:?}; expected one of {}", all.join(", "))
                })
            })
            .collect::<Result<_>>()?
    };
    let out = c.out_dir(&cfg);
    let (eval, _) = experiment::load_data(&cfg).map_err(|e| anyhow!("{e}"))?;
    let groups = load_runs(&out).map_err(|e| anyhow!("{e}"))?;
    let written = emit_reports(&cfg, &groups, &eval, &out, &analyses).map_err(|e| anyhow!("{e}"))?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

struct Loaded {
    eval: priorpull::MultilabelDataset,
    groups: Vec<RunGroup>,
}

impl Loaded {
    fn open(c: &Common) -> Result<Self> {
        let cfg = c.load()?;
        let (eval, _) = experiment::load_data(&cfg).map_err(|e| anyhow!("{e}"))?;
        let groups = load_runs(&c.out_dir(&cfg)).map_err(|e| anyhow!("{e}"))?;
        Ok(Loaded { eval, groups })
    }

    fn group(&self, name: &str) -> Result<&[PredictionSet]> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .map(|g| g.runs.as_slice())
            .ok_or_else(|| {
                let mut names: Vec<_> = self.groups.iter().map(|g| g.name.as_str()).collect();
                names.sort_unstable();
                anyhow!("no persisted group {name:?}; have {}", names.join(", "))
            })
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<ExitCode> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(ExitCode::SUCCESS)
}

fn align(allow_partial: bool) -> AlignMode {
    if allow_partial {
        AlignMode::Intersection
    } else {
        AlignMode::Strict
    }
}

fn score(c: &Common, groups: &[String], pred: Option<&Path>, allow_partial: bool) -> Result<ExitCode> {
    if let Some(path) = pred {
        let cfg = c.load()?;
        let (eval, _) = experiment::load_data(&cfg).map_err(|e| anyhow!("{e}"))?;
        let set = PredictionSet::load(path).map_err(|e| anyhow!("{e}"))?;
        let triple = metric_triple_with(&PredictionMap::from_gold(&eval), &set.predictions, align(allow_partial))
            .map_err(|e| anyhow!("{e}"))
            .with_context(|| format!("scoring {}", path.display()))?;
        return print_json(&serde_json::json!({
            "run": set.manifest.run_id(),
            "scores": triple,
            "diagnostics": set.diagnostics,
        }));
    }
    if allow_partial {
        bail!("--allow-partial applies to --pred only; persisted groups always cover the evaluation split");
    }
    let l = Loaded::open(c)?;
    let names: Vec<String> = if groups.is_empty() {
        l.groups.iter().map(|g| g.name.clone()).collect()
    } else {
        groups.to_vec()
    };
    let mut rows = serde_json::Map::new();
    for n in names {
        let stats = group_performance(l.group(&n)?, &l.eval).map_err(|e| anyhow!("{e}"))?;
        rows.insert(n, serde_json::to_value(stats)?);
    }
    print_json(&rows)
}

fn pull_groups(c: &Common, icl: &str, prior: &str) -> Result<ExitCode> {
    let l = Loaded::open(c)?;
    let icl_runs = l.group(icl)?;
    let k = icl_runs[0].manifest.k;
    let rep = pull_with_k(k, icl_runs, l.group(prior)?, &l.eval).map_err(|e| anyhow!("{e}"))?;
    print_json(&rep)
}

fn consistency_groups(c: &Common, a: &str, b: Option<&str>, allow_partial: bool) -> Result<ExitCode> {
    let l = Loaded::open(c)?;
    let other = b.map(|b| l.group(b)).transpose()?;
    let sim = consistency_with(l.group(a)?, other, align(allow_partial)).map_err(|e| anyhow!("{e}"))?;
    print_json(&sim)
}

fn proxy_groups(c: &Common, group: &str, source: &str) -> Result<ExitCode> {
    let l = Loaded::open(c)?;
    let stats = proxy_performance(l.group(group)?, l.group(source)?).map_err(|e| anyhow!("{e}"))?;
    print_json(&serde_json::json!({"group": group, "source": source, "proxy": stats}))
}
