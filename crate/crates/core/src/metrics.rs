//! Jaccard score, Micro F1 and Macro F1 as symmetric similarities between two aligned
//! prediction maps.
//!
//! The same functions score a run against ground truth (performance) and a run against
//! another run (agreement). All counting is done in integers, with one division per ratio,
//! so `m(a, b) == m(b, a)` holds bit-for-bit.
//!
//! Conventions for empty inputs:
//! * an example where both sides are empty contributes 1.0 to Jaccard;
//! * Micro F1 is 1.0 when every set on both sides is empty;
//! * a label that never occurs on either side scores 0 in Macro F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmotionTaxonomy, LabelSet, MultilabelDataset};
use crate::error::{Error, Result};

/// Per-example predictions over an evaluation set, keyed by example id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMap {
    taxonomy: EmotionTaxonomy,
    entries: BTreeMap<String, LabelSet>,
}

impl PredictionMap {
    pub fn new(taxonomy: EmotionTaxonomy) -> Self {
        PredictionMap {
            taxonomy,
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries<I>(taxonomy: EmotionTaxonomy, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, LabelSet)>,
    {
        let mut m = PredictionMap::new(taxonomy);
        for (id, set) in entries {
            m.insert(id, set)?;
        }
        Ok(m)
    }

    /// Gold labels of a dataset as a prediction map.
    pub fn from_gold(d: &MultilabelDataset) -> Self {
        PredictionMap {
            taxonomy: d.taxonomy().clone(),
            entries: d
                .examples()
                .iter()
                .map(|e| (e.id.clone(), e.gold))
                .collect(),
        }
    }

    pub fn insert(&mut self, id: String, set: LabelSet) -> Result<()> {
        if !self.taxonomy.contains_set(set) {
            return Err(Error::UnknownLabel {
                label: format!("{set:?}"),
                taxonomy: self.taxonomy.name().to_owned(),
            });
        }
        if self.entries.insert(id.clone(), set).is_some() {
            return Err(Error::DuplicateId(id));
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> &EmotionTaxonomy {
        &self.taxonomy
    }

    pub fn get(&self, id: &str) -> Option<LabelSet> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, LabelSet)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Keeps only `ids`; fails listing every id that is absent.
    pub fn restrict<'a, I>(&self, ids: I) -> Result<PredictionMap>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = PredictionMap::new(self.taxonomy.clone());
        let mut missing = Vec::new();
        for id in ids {
            match self.entries.get(id) {
                Some(s) => {
                    out.entries.insert(id.to_owned(), *s);
                }
                None => missing.push(id.to_owned()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::Coverage(missing))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionMapRepr {
    taxonomy: EmotionTaxonomy,
    entries: BTreeMap<String, Vec<String>>,
}

impl Serialize for PredictionMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PredictionMapRepr {
            taxonomy: self.taxonomy.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        self.taxonomy
                            .names(*v)
                            .into_iter()
                            .map(str::to_owned)
                            .collect(),
                    )
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PredictionMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PredictionMapRepr::deserialize(d)?;
        let mut out = PredictionMap::new(repr.taxonomy);
        for (id, labels) in repr.entries {
            let set = out
                .taxonomy
                .set_of(&labels)
                .map_err(serde::de::Error::custom)?;
            out.entries.insert(id, set);
        }
        Ok(out)
    }
}

/// How to treat prediction maps whose id sets differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Any id-set difference is an error.
    #[default]
    Strict,
    /// Score only the ids present on both sides.
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub jaccard: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl MetricTriple {
    pub const fn splat(x: f64) -> Self {
        MetricTriple {
            jaccard: x,
            micro_f1: x,
            macro_f1: x,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.jaccard, self.micro_f1, self.macro_f1]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        MetricTriple {
            jaccard: a[0],
            micro_f1: a[1],
            macro_f1: a[2],
        }
    }

    pub fn zip_with(&self, other: &MetricTriple, f: impl Fn(f64, f64) -> f64) -> MetricTriple {
        MetricTriple {
            jaccard: f(self.jaccard, other.jaccard),
            micro_f1: f(self.micro_f1, other.micro_f1),
            macro_f1: f(self.macro_f1, other.macro_f1),
        }
    }
}

pub const METRIC_NAMES: [&str; 3] = ["jaccard", "micro_f1", "macro_f1"];

/// Mean and (population) standard deviation of a sample of triples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleStats {
    pub n: usize,
    pub mean: MetricTriple,
    pub std: MetricTriple,
}

impl TripleStats {
    pub fn from_samples(samples: &[MetricTriple]) -> Option<TripleStats> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.as_array()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 3];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.as_array()).zip(mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.map(|v| (v / n).sqrt());
        Some(TripleStats {
            n: samples.len(),
            mean: MetricTriple::from_array(mean),
            std: MetricTriple::from_array(std),
        })
    }
}

/// Aligned pairs of label sets, in ascending id order.
fn aligned(a: &PredictionMap, b: &PredictionMap, mode: AlignMode) -> Result<Vec<(LabelSet, LabelSet)>> {
    if a.taxonomy != b.taxonomy {
        return Err(Error::Alignment(format!(
            "taxonomy {:?} vs {:?}",
            a.taxonomy.name(),
            b.taxonomy.name()
        )));
    }
    let pairs: Vec<_> = match mode {
        AlignMode::Strict => {
            if a.entries.len() != b.entries.len()
                || a.entries.keys().zip(b.entries.keys()).any(|(x, y)| x != y)
            {
                let only_a: Vec<_> = a
                    .ids()
                    .filter(|id| !b.entries.contains_key(*id))
                    .take(5)
                    .collect();
                let only_b: Vec<_> = b
                    .ids()
                    .filter(|id| !a.entries.contains_key(*id))
                    .take(5)
                    .collect();
                return Err(Error::Alignment(format!(
                    "id sets differ (only left: {only_a:?}, only right: {only_b:?})"
                )));
            }
            a.entries
                .values()
                .zip(b.entries.values())
                .map(|(x, y)| (*x, *y))
                .collect()
        }
        AlignMode::Intersection => a
            .entries
            .iter()
            .filter_map(|(id, x)| b.entries.get(id).map(|y| (*x, *y)))
            .collect(),
    };
    if pairs.is_empty() {
        return Err(Error::Alignment("no examples to score".into()));
    }
    Ok(pairs)
}

fn jaccard_of(pairs: &[(LabelSet, LabelSet)]) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|(x, y)| {
            let union = x.union(*y).len();
            if union == 0 {
                1.0
            } else {
                x.intersection(*y).len() as f64 / union as f64
            }
        })
        .sum();
    sum / pairs.len() as f64
}

fn f1(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| (2 * tp) as f64 / denom as f64)
}

fn micro_of(pairs: &[(LabelSet, LabelSet)]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (x, y) in pairs {
        tp += x.intersection(*y).len() as u64;
        fp += y.difference(*x).len() as u64;
        fn_ += x.difference(*y).len() as u64;
    }
    f1(tp, fp, fn_).unwrap_or(1.0)
}

fn macro_of(pairs: &[(LabelSet, LabelSet)], n_labels: usize) -> f64 {
    let mut tp = vec![0u64; n_labels];
    let mut fp = vec![0u64; n_labels];
    let mut fn_ = vec![0u64; n_labels];
    for (x, y) in pairs {
        for j in x.intersection(*y).iter() {
            tp[j] += 1;
        }
        for j in y.difference(*x).iter() {
            fp[j] += 1;
        }
        for j in x.difference(*y).iter() {
            fn_[j] += 1;
        }
    }
    let sum: f64 = (0..n_labels)
        .map(|j| f1(tp[j], fp[j], fn_[j]).unwrap_or(0.0))
        .sum();
    sum / n_labels as f64
}

pub fn jaccard_similarity(a: &PredictionMap, b: &PredictionMap) -> Result<f64> {
    Ok(jaccard_of(&aligned(a, b, AlignMode::Strict)?))
}

pub fn micro_f1(a: &PredictionMap, b: &PredictionMap) -> Result<f64> {
    Ok(micro_of(&aligned(a, b, AlignMode::Strict)?))
}

pub fn macro_f1(a: &PredictionMap, b: &PredictionMap) -> Result<f64> {
    Ok(macro_of(&aligned(a, b, AlignMode::Strict)?, a.taxonomy.len()))
}

pub fn metric_triple(a: &PredictionMap, b: &PredictionMap) -> Result<MetricTriple> {
    metric_triple_with(a, b, AlignMode::Strict)
}

pub fn metric_triple_with(
    a: &PredictionMap,
    b: &PredictionMap,
    mode: AlignMode,
) -> Result<MetricTriple> {
    let pairs = aligned(a, b, mode)?;
    Ok(MetricTriple {
        jaccard: jaccard_of(&pairs),
        micro_f1: micro_of(&pairs),
        macro_f1: macro_of(&pairs, a.taxonomy.len()),
    })
}
