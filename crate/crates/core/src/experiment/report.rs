//! Report emission: one JSON document per analysis plus flat CSV tables.
//!
//! Reports depend only on persisted runs and the config, so regenerating them from
//! `runs/` gives byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tracing::warn;

use super::config::{AnalysisKind, ExperimentConfig};
use crate::analysis::{
    consistency, group_performance, improvement_over_prior, proxy_performance, pull_with_k,
    PairwiseSimilarity, PredictionSet,
};
use crate::corpus::MultilabelDataset;
use crate::error::{Error, Result};
use crate::metrics::{MetricTriple, TripleStats, METRIC_NAMES};
use crate::prompt::ParseDiagnostics;
use crate::sampling::{PriorKind, SchemeKind};

/// All runs of one group, ordered by run index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunGroup {
    pub name: String,
    pub runs: Vec<PredictionSet>,
}

impl RunGroup {
    fn first(&self) -> &PredictionSet {
        &self.runs[0]
    }

    fn kind(&self) -> SchemeKind {
        self.first().manifest.scheme.kind
    }

    fn k(&self) -> usize {
        self.first().manifest.k
    }

    fn sort_key(&self) -> impl Ord {
        let m = &self.first().manifest;
        let rank = match m.scheme.kind {
            SchemeKind::ZeroShot => 0,
            SchemeKind::Icl => 1,
            SchemeKind::Cossim => 2,
            SchemeKind::PriorIndependent => 3,
            SchemeKind::PriorUniform => 4,
            SchemeKind::PriorPrompt => 5,
        };
        (m.k, rank, m.scheme.sedl, m.scheme.label_source, m.traindev)
    }
}

/// Loads `out_dir/runs/<group>/run<i>.json` into groups.
pub fn load_runs(out_dir: &Path) -> Result<Vec<RunGroup>> {
    let root = out_dir.join("runs");
    let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut groups = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let dir = entry.path();
        let mut runs = Vec::new();
        for f in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = f.map_err(|e| Error::io(&dir, e))?.path();
            if p.extension().is_some_and(|e| e == "json") {
                runs.push(PredictionSet::load(&p)?);
            }
        }
        if runs.is_empty() {
            continue;
        }
        runs.sort_by_key(|r| r.manifest.run_index);
        groups.push(RunGroup {
            name: entry.file_name().to_string_lossy().into_owned(),
            runs,
        });
    }
    if groups.is_empty() {
        return Err(Error::Analysis(format!("no persisted runs under {}", root.display())));
    }
    Ok(groups)
}

struct Csv(String);

impl Csv {
    fn new(header: &[&str]) -> Self {
        Csv(header.join(",") + "\n")
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.0.push_str(&cells.join(","));
        self.0.push('\n');
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn stats_cells(s: &TripleStats) -> Vec<String> {
    let (m, d) = (s.mean.as_array(), s.std.as_array());
    (0..3).flat_map(|i| [num(m[i]), num(d[i])]).collect()
}

const STATS_HEADER: [&str; 6] = [
    "jaccard_mean",
    "jaccard_std",
    "micro_f1_mean",
    "micro_f1_std",
    "macro_f1_mean",
    "macro_f1_std",
];

struct Emitter<'a> {
    cfg: &'a ExperimentConfig,
    eval: &'a MultilabelDataset,
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Emitter<'_> {
    fn meta(&self, decisions: Value) -> Value {
        json!({
            "experiment": self.cfg.name,
            "config_digest": self.cfg.digest,
            "dataset": self.cfg.dataset.name,
            "evaluation_examples": self.eval.len(),
            "model_id": self.cfg.endpoint.model_id,
            "max_output_tokens": self.cfg.endpoint.max_output_tokens,
            "max_output_tokens_is_default": self.cfg.max_tokens_is_default(),
            "decisions": decisions,
        })
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(file);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, analysis: AnalysisKind, inputs: &[String], decisions: Value, results: T) -> Result<()> {
        let doc = json!({
            "analysis": analysis.as_str(),
            "meta": self.meta(decisions),
            "inputs": inputs,
            "results": results,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        self.write(&format!("{}.json", analysis.as_str()), &bytes)
    }

    fn csv(&mut self, file: &str, csv: Csv) -> Result<()> {
        self.write(file, csv.0.as_bytes())
    }
}

#[derive(Serialize)]
struct PerformanceRow {
    group: String,
    k: usize,
    stats: TripleStats,
    diagnostics: ParseDiagnostics,
}

fn sum_diagnostics(g: &RunGroup) -> ParseDiagnostics {
    let mut d = ParseDiagnostics::default();
    for r in &g.runs {
        d.clean += r.diagnostics.clean;
        d.fuzzy_matched += r.diagnostics.fuzzy_matched;
        d.partial += r.diagnostics.partial;
        d.unparseable += r.diagnostics.unparseable;
    }
    d
}

fn is_prior(kind: SchemeKind) -> bool {
    matches!(
        kind,
        SchemeKind::PriorIndependent | SchemeKind::PriorUniform | SchemeKind::ZeroShot
    )
}

/// Computes the requested analyses over `groups` and writes them under `out_dir/reports`.
pub fn emit_reports(
    cfg: &ExperimentConfig,
    groups: &[RunGroup],
    eval: &MultilabelDataset,
    out_dir: &Path,
    analyses: &[AnalysisKind],
) -> Result<Vec<PathBuf>> {
    let mut groups: Vec<&RunGroup> = groups.iter().filter(|g| !g.runs.is_empty()).collect();
    groups.sort_by_key(|g| g.sort_key());
    let dir = out_dir.join("reports");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut em = Emitter {
        cfg,
        eval,
        dir,
        written: Vec::new(),
    };
    let names: Vec<String> = groups.iter().map(|g| g.name.clone()).collect();
    let mut perf: BTreeMap<&str, TripleStats> = BTreeMap::new();
    for g in &groups {
        perf.insert(&g.name, group_performance(&g.runs, eval)?);
    }
    let mut cross: BTreeMap<(usize, usize), PairwiseSimilarity> = BTreeMap::new();
    let mut cross_of = |i: usize, j: usize| -> Result<PairwiseSimilarity> {
        if let Some(c) = cross.get(&(i, j)) {
            return Ok(c.clone());
        }
        let c = consistency(&groups[i].runs, Some(&groups[j].runs))?;
        cross.insert((i, j), c.clone());
        Ok(c)
    };

    for &analysis in analyses {
        match analysis {
            AnalysisKind::Performance => {
                let rows: Vec<PerformanceRow> = groups
                    .iter()
                    .map(|g| PerformanceRow {
                        group: g.name.clone(),
                        k: g.k(),
                        stats: perf[g.name.as_str()],
                        diagnostics: sum_diagnostics(g),
                    })
                    .collect();
                let mut csv = Csv::new(
                    &[&["group", "k", "runs"][..], &STATS_HEADER, &["clean", "fuzzy_matched", "partial", "unparseable"]].concat(),
                );
                for r in &rows {
                    let d = &r.diagnostics;
                    csv.row(
                        [r.group.clone(), r.k.to_string(), r.stats.n.to_string()]
                            .into_iter()
                            .chain(stats_cells(&r.stats))
                            .chain([d.clean, d.fuzzy_matched, d.partial, d.unparseable].map(|x| x.to_string())),
                    );
                }
                em.json(analysis, &names, json!({"std": "population"}), &rows)?;
                em.csv("performance.csv", csv)?;
            }
            AnalysisKind::Improvement => {
                let icl: BTreeMap<usize, MetricTriple> = groups
                    .iter()
                    .filter(|g| g.kind() == SchemeKind::Icl)
                    .map(|g| (g.k(), perf[g.name.as_str()].mean))
                    .collect();
                let priors: BTreeMap<(String, usize), MetricTriple> = groups
                    .iter()
                    .filter(|g| is_prior(g.kind()))
                    .map(|g| ((g.name.clone(), g.k()), perf[g.name.as_str()].mean))
                    .collect();
                let decisions = json!({
                    "best_prior": "maximum over every prior group and k, chosen per metric independently",
                    "zero_best_prior": "improvement reported as null",
                });
                if icl.is_empty() || priors.is_empty() {
                    warn!("improvement: needs icl and prior groups, skipping");
                    em.json(analysis, &names, decisions, Value::Null)?;
                    continue;
                }
                let rep = improvement_over_prior(&icl, &priors)?;
                let mut csv = Csv::new(&["k", "metric", "icl", "best_prior", "best_prior_group", "improvement_pct"]);
                for (k, imp) in &rep.by_k {
                    let vals = [imp.jaccard, imp.micro_f1, imp.macro_f1];
                    for (m, name) in METRIC_NAMES.iter().enumerate() {
                        let best = &rep.best[*name];
                        csv.row([
                            k.to_string(),
                            name.to_string(),
                            num(icl[k].as_array()[m]),
                            num(best.score),
                            best.prior.clone(),
                            opt(vals[m]),
                        ]);
                    }
                }
                em.json(analysis, &names, decisions, &rep)?;
                em.csv("improvement.csv", csv)?;
            }
            AnalysisKind::Pull => {
                let prior_kind = cfg.pull_prior.scheme();
                let mut results = Vec::new();
                let mut csv = Csv::new(
                    &[
                        &["icl", "prior", "k", "prior_k", "metric"][..],
                        &["sim_to_ground_truth_mean", "sim_to_ground_truth_std", "sim_to_prior_mean", "sim_to_prior_std", "pull"],
                    ]
                    .concat(),
                );
                for icl in groups.iter().filter(|g| g.kind() == SchemeKind::Icl) {
                    for prior in groups.iter().filter(|g| {
                        g.kind() == prior_kind
                            && !g.first().manifest.scheme.sedl
                            && (cfg.pull_cross_shot
                                || g.k() == icl.k()
                                || cfg.pull_prior == PriorKind::ZeroShot)
                    }) {
                        let rep = pull_with_k(icl.k(), &icl.runs, &prior.runs, eval)?;
                        let (gt, pr) = (&rep.sim_to_ground_truth, &rep.sim_to_prior);
                        for (m, name) in METRIC_NAMES.iter().enumerate() {
                            csv.row([
                                icl.name.clone(),
                                prior.name.clone(),
                                icl.k().to_string(),
                                prior.k().to_string(),
                                name.to_string(),
                                num(gt.mean.as_array()[m]),
                                num(gt.std.as_array()[m]),
                                num(pr.mean.as_array()[m]),
                                num(pr.std.as_array()[m]),
                                num(rep.pull.as_array()[m]),
                            ]);
                        }
                        results.push(json!({
                            "icl": icl.name,
                            "prior": prior.name,
                            "prior_k": prior.k(),
                            "report": rep,
                        }));
                    }
                }
                let decisions = json!({
                    "prior": format!("{:?}", cfg.pull_prior).to_lowercase(),
                    "cross_shot": cfg.pull_cross_shot,
                    "sim_to_prior_pairs": "every (icl run, prior run) pair",
                });
                em.json(analysis, &names, decisions, &results)?;
                em.csv("pull.csv", csv)?;
            }
            AnalysisKind::Consistency => {
                let mut within = Vec::new();
                for g in groups.iter().filter(|g| g.runs.len() >= 2) {
                    within.push(consistency(&g.runs, None)?);
                }
                let mut across = Vec::new();
                for i in 0..groups.len() {
                    for j in i + 1..groups.len() {
                        across.push(cross_of(i, j)?);
                    }
                }
                let mut csv = Csv::new(&[&["config_a", "config_b", "pairs"][..], &STATS_HEADER].concat());
                for s in within.iter().chain(&across) {
                    csv.row(
                        [s.config_a.clone(), s.config_b.clone(), s.pairs.to_string()]
                            .into_iter()
                            .chain(stats_cells(&s.stats)),
                    );
                }
                em.json(
                    analysis,
                    &names,
                    json!({"std": "population", "pairs": "all distinct unordered pairs within a group, all cross pairs between groups"}),
                    json!({"within": within, "across": across}),
                )?;
                em.csv("consistency.csv", csv)?;
            }
            AnalysisKind::Proxy => {
                let mut results = Vec::new();
                let mut csv = Csv::new(
                    &[
                        &["group", "source", "metric"][..],
                        &["proxy_mean", "proxy_std", "ground_truth_mean", "ground_truth_std"],
                    ]
                    .concat(),
                );
                for g in groups.iter().filter(|g| g.kind() == SchemeKind::PriorPrompt) {
                    let Some(src) = g.first().manifest.scheme.label_source else {
                        continue;
                    };
                    let Some(source) = groups.iter().find(|s| {
                        let m = &s.first().manifest;
                        m.scheme.kind == src.kind.scheme() && m.scheme.sedl == src.sedl && m.k == src.k
                    }) else {
                        warn!(group = %g.name, "proxy: label source group missing, skipping");
                        continue;
                    };
                    let proxy = proxy_performance(&g.runs, &source.runs)?;
                    let gt = &perf[g.name.as_str()];
                    for (m, name) in METRIC_NAMES.iter().enumerate() {
                        csv.row([
                            g.name.clone(),
                            source.name.clone(),
                            name.to_string(),
                            num(proxy.mean.as_array()[m]),
                            num(proxy.std.as_array()[m]),
                            num(gt.mean.as_array()[m]),
                            num(gt.std.as_array()[m]),
                        ]);
                    }
                    results.push(json!({
                        "group": g.name,
                        "source": source.name,
                        "proxy": proxy,
                        "ground_truth": gt,
                    }));
                }
                em.json(
                    analysis,
                    &names,
                    json!({"reference": "label-source predictions restricted to the evaluation split"}),
                    &results,
                )?;
                em.csv("proxy.csv", csv)?;
            }
            AnalysisKind::SimilarityMatrix => {
                let n = groups.len();
                let mut cells: Vec<Vec<Option<TripleStats>>> = vec![vec![None; n + 1]; n + 1];
                for (i, g) in groups.iter().enumerate() {
                    let p = perf[g.name.as_str()];
                    cells[0][i + 1] = Some(p);
                    cells[i + 1][0] = Some(p);
                    if g.runs.len() >= 2 {
                        cells[i + 1][i + 1] = Some(consistency(&g.runs, None)?.stats);
                    }
                    for j in i + 1..n {
                        let s = cross_of(i, j)?.stats;
                        cells[i + 1][j + 1] = Some(s);
                        cells[j + 1][i + 1] = Some(s);
                    }
                }
                let labels: Vec<String> = std::iter::once("gold".to_owned()).chain(names.iter().cloned()).collect();
                for (m, metric) in METRIC_NAMES.iter().enumerate() {
                    let mut out = String::new();
                    let _ = writeln!(out, ",{}", labels.join(","));
                    for (r, label) in labels.iter().enumerate() {
                        out.push_str(label);
                        for c in &cells[r] {
                            out.push(',');
                            if let Some(s) = c {
                                let _ = write!(out, "{:.4}±{:.4}", s.mean.as_array()[m], s.std.as_array()[m]);
                            }
                        }
                        out.push('\n');
                    }
                    em.write(&format!("similarity_matrix_{metric}.csv"), out.as_bytes())?;
                }
                em.json(
                    analysis,
                    &names,
                    json!({"diagonal": "within-group consistency where a group has at least 2 runs", "gold": "performance against the evaluation gold labels"}),
                    json!({"labels": labels, "cells": cells}),
                )?;
            }
        }
    }
    Ok(em.written)
}
