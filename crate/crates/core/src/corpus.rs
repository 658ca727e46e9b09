//! Multilabel emotion datasets: taxonomy, examples, loaders, label pooling and subsampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on taxonomy size, fixed by the bitset representation of [`LabelSet`].
pub const MAX_LABELS: usize = 64;

pub(crate) fn normalize_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Ordered emotion vocabulary. Order is used verbatim for prompt rendering and metric indexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct EmotionTaxonomy {
    name: String,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    name: String,
    labels: Vec<String>,
}

impl TryFrom<TaxonomyRepr> for EmotionTaxonomy {
    type Error = Error;

    fn try_from(r: TaxonomyRepr) -> Result<Self> {
        EmotionTaxonomy::new(r.name, r.labels)
    }
}

impl From<EmotionTaxonomy> for TaxonomyRepr {
    fn from(t: EmotionTaxonomy) -> Self {
        TaxonomyRepr {
            name: t.name,
            labels: t.labels,
        }
    }
}

impl EmotionTaxonomy {
    pub fn new<I, S>(name: impl Into<String>, labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|l| normalize_label(l.as_ref()))
            .collect();
        if labels.is_empty() {
            return Err(Error::Taxonomy("taxonomy has no labels".into()));
        }
        if labels.len() > MAX_LABELS {
            return Err(Error::Taxonomy(format!(
                "{} labels exceeds the maximum of {MAX_LABELS}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::Taxonomy(format!("label {i} is empty")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate label {l:?}")));
            }
        }
        Ok(EmotionTaxonomy {
            name: name.into(),
            labels,
            index,
        })
    }

    /// Reads one label per line; blank lines are ignored. The taxonomy is named after the file stem.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Builds a set from label names, normalising case and whitespace.
    pub fn set_of<I, S>(&self, labels: I) -> Result<LabelSet>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = LabelSet::EMPTY;
        for l in labels {
            let norm = normalize_label(l.as_ref());
            let i = self.index_of(&norm).ok_or_else(|| Error::UnknownLabel {
                label: norm.clone(),
                taxonomy: self.name.clone(),
            })?;
            set.insert(i);
        }
        Ok(set)
    }

    /// Label names of `set` in taxonomy order.
    pub fn names(&self, set: LabelSet) -> Vec<&str> {
        set.iter().map(|i| self.labels[i].as_str()).collect()
    }

    pub fn full_set(&self) -> LabelSet {
        LabelSet::from_bits(if self.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.len()) - 1
        })
    }

    /// True if `set` has no bits outside this taxonomy.
    pub fn contains_set(&self, set: LabelSet) -> bool {
        set.bits() & !self.full_set().bits() == 0
    }
}

/// A set of taxonomy indices, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_bits(bits: u64) -> Self {
        LabelSet(bits)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(idx: I) -> Self {
        let mut s = LabelSet::EMPTY;
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < MAX_LABELS);
        self.0 |= 1 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1 << i);
    }

    pub fn toggle(&mut self, i: usize) {
        self.0 ^= 1 << i;
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_LABELS && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn difference(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & !other.0)
    }

    /// Indices in ascending (taxonomy) order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub gold: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Jsonl,
    SemevalTsv,
}

/// The canonical dataset: immutable after construction, ids unique, load order preserved.
#[derive(Debug, Clone)]
pub struct MultilabelDataset {
    taxonomy: EmotionTaxonomy,
    split: Split,
    examples: Vec<LabeledExample>,
    index: HashMap<String, usize>,
}

impl PartialEq for MultilabelDataset {
    fn eq(&self, other: &Self) -> bool {
        self.taxonomy == other.taxonomy
            && self.split == other.split
            && self.examples == other.examples
    }
}

impl MultilabelDataset {
    pub fn new(
        taxonomy: EmotionTaxonomy,
        split: Split,
        examples: Vec<LabeledExample>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if !taxonomy.contains_set(ex.gold) {
                return Err(Error::UnknownLabel {
                    label: format!("{:?}", ex.gold),
                    taxonomy: taxonomy.name().to_owned(),
                });
            }
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(MultilabelDataset {
            taxonomy,
            split,
            examples,
            index,
        })
    }

    pub fn taxonomy(&self) -> &EmotionTaxonomy {
        &self.taxonomy
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Serialises as canonical JSONL (`id`, `text`, `labels` in taxonomy order).
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ex in &self.examples {
            let row = JsonlRow {
                id: ex.id.clone(),
                text: ex.text.clone(),
                labels: self
                    .taxonomy
                    .names(ex.gold)
                    .into_iter()
                    .map(str::to_owned)
                    .collect(),
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    id: String,
    text: String,
    labels: Vec<String>,
}

/// Loads a dataset file.
///
/// JSONL needs an explicit taxonomy. For SemEval TSV the taxonomy comes from the header
/// columns unless one is supplied, in which case every header column must belong to it.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    taxonomy: Option<&EmotionTaxonomy>,
    split: Split,
) -> Result<MultilabelDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        DatasetFormat::Jsonl => {
            let taxonomy = taxonomy.ok_or_else(|| {
                Error::Taxonomy(format!("{}: jsonl datasets need a taxonomy", path.display()))
            })?;
            read_jsonl(path, reader, taxonomy.clone(), split)
        }
        DatasetFormat::SemevalTsv => read_semeval_tsv(path, reader, taxonomy, split),
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn read_jsonl<R: BufRead>(
    path: &Path,
    reader: R,
    taxonomy: EmotionTaxonomy,
    split: Split,
) -> Result<MultilabelDataset> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow =
            serde_json::from_str(&line).map_err(|e| malformed(path, lineno, e.to_string()))?;
        let gold = taxonomy
            .set_of(&row.labels)
            .map_err(|e| malformed(path, lineno, e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(malformed(
                path,
                lineno,
                Error::DuplicateId(row.id).to_string(),
            ));
        }
        examples.push(LabeledExample {
            id: row.id,
            text: row.text,
            gold,
        });
    }
    MultilabelDataset::new(taxonomy, split, examples)
}

fn read_semeval_tsv<R: BufRead>(
    path: &Path,
    reader: R,
    taxonomy: Option<&EmotionTaxonomy>,
    split: Split,
) -> Result<MultilabelDataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(malformed(path, 1, "missing header row")),
    };
    let header = header.trim_end_matches(['\r', '\n']);
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 3 || cols[0].trim() != "ID" || cols[1].trim() != "Tweet" {
        return Err(malformed(
            path,
            1,
            "header must be ID<TAB>Tweet<TAB><emotion columns...>",
        ));
    }
    let header_taxonomy = EmotionTaxonomy::new("semeval", &cols[2..])
        .map_err(|e| malformed(path, 1, e.to_string()))?;
    let taxonomy = match taxonomy {
        Some(t) => t.clone(),
        None => header_taxonomy.clone(),
    };
    // column position -> taxonomy index
    let mut column_index = Vec::with_capacity(header_taxonomy.len());
    for l in header_taxonomy.labels() {
        let i = taxonomy.index_of(l).ok_or_else(|| {
            malformed(
                path,
                1,
                Error::UnknownLabel {
                    label: l.clone(),
                    taxonomy: taxonomy.name().to_owned(),
                }
                .to_string(),
            )
        })?;
        column_index.push(i);
    }

    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(malformed(
                path,
                lineno,
                format!("expected {} columns, found {}", cols.len(), cells.len()),
            ));
        }
        let mut gold = LabelSet::EMPTY;
        for (c, cell) in cells[2..].iter().enumerate() {
            match cell.trim() {
                "0" => {}
                "1" => gold.insert(column_index[c]),
                other => {
                    return Err(malformed(
                        path,
                        lineno,
                        format!("column {:?} must be 0 or 1, found {other:?}", cols[c + 2]),
                    ))
                }
            }
        }
        let id = cells[0].trim().to_owned();
        if !seen.insert(id.clone()) {
            return Err(malformed(path, lineno, Error::DuplicateId(id).to_string()));
        }
        examples.push(LabeledExample {
            id,
            text: cells[1].to_owned(),
            gold,
        });
    }
    MultilabelDataset::new(taxonomy, split, examples)
}

/// Maps source labels onto cluster labels. A source label mapped to no cluster is dropped
/// (used for GoEmotions' `neutral`, which stands for the empty set).
#[derive(Debug, Clone)]
pub struct PoolingMap {
    clusters: EmotionTaxonomy,
    mapping: BTreeMap<String, Option<String>>,
}

impl PoolingMap {
    /// Cluster taxonomy order is the order of first appearance among the targets.
    pub fn new<I, S, T>(name: &str, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Option<T>)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut mapping = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (src, dst) in pairs {
            let src = normalize_label(src.as_ref());
            let dst = dst
                .map(|d| normalize_label(d.as_ref()))
                .filter(|d| !d.is_empty());
            if let Some(d) = &dst {
                if !order.contains(d) {
                    order.push(d.clone());
                }
            }
            if mapping.insert(src.clone(), dst).is_some() {
                return Err(Error::Taxonomy(format!(
                    "pooling map lists {src:?} twice"
                )));
            }
        }
        Ok(PoolingMap {
            clusters: EmotionTaxonomy::new(name, order)?,
            mapping,
        })
    }

    /// Reads `source<TAB>cluster` lines. An empty cluster drops the source label.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let src = parts.next().unwrap_or_default();
            let dst = parts
                .next()
                .ok_or_else(|| malformed(path, n + 1, "expected source<TAB>cluster"))?;
            pairs.push((src.to_owned(), Some(dst.to_owned())));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pooled".into());
        Self::new(&name, pairs)
    }

    pub fn identity(taxonomy: &EmotionTaxonomy) -> Self {
        PoolingMap {
            clusters: taxonomy.clone(),
            mapping: taxonomy
                .labels()
                .iter()
                .map(|l| (l.clone(), Some(l.clone())))
                .collect(),
        }
    }

    pub fn clusters(&self) -> &EmotionTaxonomy {
        &self.clusters
    }

    /// `None` when the label is not mapped at all; `Some(None)` when it maps to nothing.
    pub fn target(&self, label: &str) -> Option<Option<&str>> {
        self.mapping.get(label).map(|d| d.as_deref())
    }
}

/// Replaces every gold set by its image under `map`. Fails on the first label the map
/// does not cover.
pub fn pool_labels(d: &MultilabelDataset, map: &PoolingMap) -> Result<MultilabelDataset> {
    let src = d.taxonomy();
    let clusters = map.clusters();
    let table: Vec<std::result::Result<Option<usize>, &str>> = (0..src.len())
        .map(|i| {
            let label = src.label(i);
            match map.target(label) {
                None => Err(label),
                Some(None) => Ok(None),
                Some(Some(c)) => Ok(clusters.index_of(c)),
            }
        })
        .collect();
    let mut examples = Vec::with_capacity(d.len());
    for ex in d.examples() {
        let mut gold = LabelSet::EMPTY;
        for i in ex.gold.iter() {
            match table[i] {
                Ok(Some(c)) => gold.insert(c),
                Ok(None) => {}
                Err(label) => return Err(Error::MissingMapping(label.to_owned())),
            }
        }
        examples.push(LabeledExample {
            id: ex.id.clone(),
            text: ex.text.clone(),
            gold,
        });
    }
    MultilabelDataset::new(clusters.clone(), d.split(), examples)
}

/// Uniform sample of `n` examples without replacement; original relative order is kept.
pub fn subsample(d: &MultilabelDataset, n: usize, seed: u64) -> Result<MultilabelDataset> {
    if n > d.len() {
        return Err(Error::SubsampleTooLarge {
            requested: n,
            available: d.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, d.len(), n).into_vec();
    picked.sort_unstable();
    let examples = picked.into_iter().map(|i| d.examples[i].clone()).collect();
    MultilabelDataset::new(d.taxonomy.clone(), d.split, examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax(labels: &[&str]) -> EmotionTaxonomy {
        EmotionTaxonomy::new("t", labels).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn taxonomy_normalizes_and_rejects_duplicates() {
        let t = tax(&[" Joy", "ANGER"]);
        assert_eq!(t.labels(), &["joy", "anger"]);
        assert!(EmotionTaxonomy::new("t", ["joy", "Joy "]).is_err());
        assert!(EmotionTaxonomy::new("t", Vec::<String>::new()).is_err());
        assert!(EmotionTaxonomy::new("t", ["joy", " "]).is_err());
    }

    #[test]
    fn jsonl_three_rows_in_file_order() {
        let t = tax(&["joy", "anger"]);
        let f = write_tmp(
            r#"{"id":"a","text":"yay","labels":["joy"]}
{"id":"b","text":"grr","labels":["Anger","joy"]}
{"id":"c","text":"meh","labels":[]}
"#,
        );
        let d = load_dataset(f.path(), DatasetFormat::Jsonl, Some(&t), Split::Dev).unwrap();
        assert_eq!(d.len(), 3);
        let ids: Vec<_> = d.ids().collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(d.get("b").unwrap().gold, LabelSet::from_indices([0, 1]));
        assert!(d.get("c").unwrap().gold.is_empty());
    }

    #[test]
    fn jsonl_unknown_label_reports_line() {
        let t = tax(&["joy"]);
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\",\"labels\":[\"joy\"]}\n{\"id\":\"b\",\"text\":\"y\",\"labels\":[\"rage\"]}\n",
        );
        let err = load_dataset(f.path(), DatasetFormat::Jsonl, Some(&t), Split::Dev).unwrap_err();
        match err {
            Error::Malformed { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("rage"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn jsonl_duplicate_id_and_bad_json() {
        let t = tax(&["joy"]);
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\",\"labels\":[]}\n{\"id\":\"a\",\"text\":\"y\",\"labels\":[]}\n",
        );
        let err = load_dataset(f.path(), DatasetFormat::Jsonl, Some(&t), Split::Dev).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\",\"labels\":[]}\nnot json\n");
        let err = load_dataset(f.path(), DatasetFormat::Jsonl, Some(&t), Split::Dev).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn semeval_header_only_is_empty() {
        let f = write_tmp("ID\tTweet\tanger\tjoy\n");
        let d = load_dataset(f.path(), DatasetFormat::SemevalTsv, None, Split::Dev).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.taxonomy().labels(), &["anger", "joy"]);
    }

    #[test]
    fn semeval_rows_and_errors() {
        let f = write_tmp("ID\tTweet\tanger\tjoy\n2018-1\thello\t0\t1\n2018-2\tugh\t1\t1\n");
        let d = load_dataset(f.path(), DatasetFormat::SemevalTsv, None, Split::Dev).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples()[1].gold.len(), 2);

        let f = write_tmp("ID\tTweet\tanger\n1\tx\t2\n");
        let err = load_dataset(f.path(), DatasetFormat::SemevalTsv, None, Split::Dev).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));

        let f = write_tmp("ID\tTweet\tanger\n1\tx\n");
        let err = load_dataset(f.path(), DatasetFormat::SemevalTsv, None, Split::Dev).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }

    #[test]
    fn semeval_with_supplied_taxonomy_uses_its_order() {
        let t = tax(&["joy", "anger"]);
        let f = write_tmp("ID\tTweet\tanger\tjoy\n1\tx\t1\t0\n");
        let d = load_dataset(f.path(), DatasetFormat::SemevalTsv, Some(&t), Split::Dev).unwrap();
        assert_eq!(d.examples()[0].gold, LabelSet::from_indices([1]));
    }

    fn toy(n: usize) -> MultilabelDataset {
        let t = tax(&["a", "b", "c"]);
        let ex = (0..n)
            .map(|i| LabeledExample {
                id: format!("e{i}"),
                text: format!("text {i}"),
                gold: LabelSet::from_bits((i % 8) as u64),
            })
            .collect();
        MultilabelDataset::new(t, Split::Dev, ex).unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let d = toy(10);
        let f = tempfile::NamedTempFile::new().unwrap();
        d.save_jsonl(f.path()).unwrap();
        let back =
            load_dataset(f.path(), DatasetFormat::Jsonl, Some(d.taxonomy()), Split::Dev).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn pooling_merges_and_dedups() {
        let d = toy(8);
        let map = PoolingMap::new("p", [("a", Some("x")), ("b", Some("x")), ("c", Some("y"))])
            .unwrap();
        let p = pool_labels(&d, &map).unwrap();
        assert_eq!(p.taxonomy().labels(), &["x", "y"]);
        assert_eq!(p.len(), d.len());
        // e3 has {a, b} -> {x}
        assert_eq!(p.get("e3").unwrap().gold, LabelSet::from_indices([0]));
        for (o, q) in d.examples().iter().zip(p.examples()) {
            assert_eq!(o.id, q.id);
            assert!(q.gold.len() <= o.gold.len());
        }
    }

    #[test]
    fn pooling_identity_and_missing() {
        let d = toy(8);
        let p = pool_labels(&d, &PoolingMap::identity(d.taxonomy())).unwrap();
        assert_eq!(p, d);
        let map = PoolingMap::new("p", [("a", Some("x")), ("b", Some("x"))]).unwrap();
        assert!(matches!(
            pool_labels(&d, &map),
            Err(Error::MissingMapping(l)) if l == "c"
        ));
    }

    #[test]
    fn pooling_drop_target() {
        let d = toy(8);
        let map = PoolingMap::new(
            "p",
            [("a", Some("x")), ("b", None::<&str>), ("c", Some("x"))],
        )
        .unwrap();
        let p = pool_labels(&d, &map).unwrap();
        assert_eq!(p.get("e2").unwrap().gold, LabelSet::EMPTY);
    }

    #[test]
    fn subsample_contract() {
        let d = toy(10);
        let a = subsample(&d, 3, 1).unwrap();
        let b = subsample(&d, 3, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let pos: Vec<usize> = a
            .ids()
            .map(|id| d.ids().position(|x| x == id).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&d, 10, 5).unwrap(), d);
        assert!(matches!(
            subsample(&d, 11, 0),
            Err(Error::SubsampleTooLarge { .. })
        ));
        let seeds: Vec<Vec<String>> = (0..5)
            .map(|s| subsample(&d, 3, s).unwrap().ids().map(str::to_owned).collect())
            .collect();
        assert!(seeds.iter().any(|s| s != &seeds[0]));
    }
}
