//! Deterministic stand-in for a language model with a tunable pull towards its own prior.
//!
//! For a query `x` the oracle has a fixed prior label set `g(x)` and a
//! demonstration-induced set `h(x)` (the labels shown on the demonstration whose text
//! shares the most tokens with `x`). Each label is taken from `g` with probability
//! `lambda` (decided by a per-label hash, so the choice is fixed per query) and from `h`
//! otherwise.
//!
//! Queries are identified by their text, since that is all a rendered prompt carries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmotionTaxonomy, LabelSet, LabeledExample};
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::prompt::{format_labels, parse_output, PromptTemplate};
use crate::sampling::Demonstration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockOracle {
    pub prior_seed: u64,
    /// Prior-pull strength in `[0, 1]`.
    pub lambda: f64,
    pub taxonomy: EmotionTaxonomy,
}

pub(crate) fn tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl MockOracle {
    pub fn new(prior_seed: u64, lambda: f64, taxonomy: EmotionTaxonomy) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(vec![format!(
                "mock lambda must be in [0, 1], got {lambda}"
            )]));
        }
        Ok(MockOracle {
            prior_seed,
            lambda,
            taxonomy,
        })
    }

    /// The oracle's prior `g(x)`.
    pub fn prior(&self, text: &str) -> LabelSet {
        let mut s = LabelSet::EMPTY;
        for j in 0..self.taxonomy.len() {
            let h = StableHasher::new("mock-prior")
                .u64(self.prior_seed)
                .str(text)
                .u64(j as u64)
                .finish_u64();
            if h.is_multiple_of(2) {
                s.insert(j);
            }
        }
        s
    }

    fn follows_prior(&self, text: &str, j: usize) -> bool {
        StableHasher::new("mock-mix")
            .u64(self.prior_seed)
            .str(text)
            .u64(j as u64)
            .finish_unit()
            < self.lambda
    }

    /// The demonstration-induced set `h(x)`.
    pub fn demo_labels<'a, I>(&self, text: &str, demos: I) -> LabelSet
    where
        I: IntoIterator<Item = (&'a str, LabelSet)>,
    {
        let q = tokens(text);
        let mut best: Option<(usize, LabelSet)> = None;
        for (t, labels) in demos {
            let overlap = tokens(t).intersection(&q).count();
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, labels));
            }
        }
        best.map_or(LabelSet::EMPTY, |(_, l)| l)
    }

    fn mix(&self, text: &str, demo: LabelSet) -> LabelSet {
        let prior = self.prior(text);
        let mut out = LabelSet::EMPTY;
        for j in 0..self.taxonomy.len() {
            let src = if self.follows_prior(text, j) { prior } else { demo };
            if src.contains(j) {
                out.insert(j);
            }
        }
        out
    }

    pub fn predict(&self, query: &LabeledExample, demos: &[Demonstration]) -> LabelSet {
        let h = self.demo_labels(
            &query.text,
            demos.iter().map(|d| (d.text.as_str(), d.shown_labels)),
        );
        self.mix(&query.text, h)
    }

    /// Answers a rendered prompt: recovers demonstrations and query from the text, predicts,
    /// and formats the answer in the template's label format.
    pub fn complete_prompt(&self, template: &PromptTemplate, prompt: &str) -> Result<String> {
        let (query, demos) = decompose_prompt(template, &self.taxonomy, prompt)?;
        let h = self.demo_labels(query, demos.iter().map(|(t, l)| (*t, *l)));
        Ok(format_labels(
            &self.taxonomy,
            self.mix(query, h),
            template.label_format(),
        ))
    }

    /// Identity string folded into cache keys so differently tuned oracles never share
    /// transcripts.
    pub fn fingerprint(&self) -> String {
        format!(
            "mock(seed={},lambda={},taxonomy={})",
            self.prior_seed,
            self.lambda,
            self.taxonomy.labels().join("|")
        )
    }
}

/// Splits a prompt rendered with `template` into the query text and the
/// (text, shown labels) demonstrations.
pub fn decompose_prompt<'p>(
    template: &PromptTemplate,
    taxonomy: &EmotionTaxonomy,
    prompt: &'p str,
) -> Result<(&'p str, Vec<(&'p str, LabelSet)>)> {
    let bad = |m: &str| Error::Template(format!("cannot decompose prompt: {m}"));
    let source = template.source();
    let text_at = source.find("{text}").expect("validated template");
    let label_at = source.find("{label}").expect("validated template");
    let mid = &source[text_at + "{text}".len()..label_at];
    let tail = &source[label_at + "{label}".len()..];
    let marker = template.input_marker();

    let header_len = source[..text_at].len() - marker.len();
    let header = source[..header_len].replace("{labels}", &taxonomy.labels().join(", "));
    let body = prompt
        .strip_prefix(header.as_str())
        .ok_or_else(|| bad("header mismatch"))?;
    let body = body
        .strip_prefix(marker)
        .ok_or_else(|| bad("missing input marker"))?;
    let delim = format!("{}{}", template.separator(), marker);
    let chunks: Vec<&str> = body.split(delim.as_str()).collect();
    let (last, demo_chunks) = chunks.split_last().expect("split yields at least one chunk");
    let query = last.strip_suffix(mid).unwrap_or(last);
    let mut demos = Vec::with_capacity(demo_chunks.len());
    for &c in demo_chunks {
        let c = c.strip_suffix(tail).unwrap_or(c);
        let (text, label) = if mid.is_empty() {
            (c, "")
        } else {
            c.rsplit_once(mid).ok_or_else(|| bad("demonstration without label"))?
        };
        let parsed = parse_output(label, taxonomy, template.label_format());
        demos.push((text, parsed.labels));
    }
    Ok((query, demos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render_prompt, LabelFormat};

    fn tax() -> EmotionTaxonomy {
        EmotionTaxonomy::new("t", ["anger", "joy", "fear", "sadness"]).unwrap()
    }

    fn q(text: &str) -> LabeledExample {
        LabeledExample {
            id: "q".into(),
            text: text.into(),
            gold: LabelSet::EMPTY,
        }
    }

    fn demo(text: &str, bits: u64) -> Demonstration {
        Demonstration {
            example_id: text.into(),
            text: text.into(),
            shown_labels: LabelSet::from_bits(bits),
        }
    }

    #[test]
    fn lambda_one_returns_prior() {
        let m = MockOracle::new(3, 1.0, tax()).unwrap();
        let query = q("what a lovely day");
        let d = vec![demo("what a lovely day", 0b1111)];
        assert_eq!(m.predict(&query, &d), m.prior(&query.text));
        assert_eq!(m.predict(&query, &[]), m.prior(&query.text));
    }

    #[test]
    fn lambda_zero_follows_matching_demo() {
        let m = MockOracle::new(3, 0.0, tax()).unwrap();
        let d = vec![demo("other words here", 0b0001), demo("lovely day", 0b0110), demo("more", 0b1000)];
        assert_eq!(m.predict(&q("lovely day"), &d), LabelSet::from_bits(0b0110));
        assert_eq!(m.predict(&q("lovely day"), &[]), LabelSet::EMPTY);
        // ties resolve to the earliest demonstration
        assert_eq!(m.predict(&q("zzz"), &d), LabelSet::from_bits(0b0001));
    }

    #[test]
    fn deterministic() {
        let m = MockOracle::new(9, 0.5, tax()).unwrap();
        let d = vec![demo("a b", 3), demo("c d", 12)];
        let a = m.predict(&q("a c"), &d);
        assert_eq!(a, m.predict(&q("a c"), &d));
        assert!(MockOracle::new(9, 1.5, tax()).is_err());
    }

    #[test]
    fn half_lambda_agreement_with_prior() {
        // Monte Carlo: agreement(pred, g) per label bit is lambda + (1 - lambda) * P(h == g)
        let m = MockOracle::new(21, 0.5, tax()).unwrap();
        let n = 1000;
        let (mut agree, mut chance) = (0usize, 0usize);
        for i in 0..n {
            let text = format!("query {i}");
            let d = vec![demo(&text, (i as u64 * 7 + 3) % 16)];
            let pred = m.predict(&q(&text), &d);
            let g = m.prior(&text);
            let h = d[0].shown_labels;
            for j in 0..4 {
                agree += usize::from(pred.contains(j) == g.contains(j));
                chance += usize::from(h.contains(j) == g.contains(j));
            }
        }
        let bits = (n * 4) as f64;
        let measured = agree as f64 / bits;
        let expected = 0.5 + 0.5 * (chance as f64 / bits);
        let sigma = (0.25 / bits).sqrt();
        assert!((measured - expected).abs() <= 3.0 * sigma, "{measured} vs {expected}");
    }

    #[test]
    fn prompt_path_matches_direct_prediction() {
        let t = tax();
        for format in [LabelFormat::CommaSeparated, LabelFormat::JsonObject] {
            let tpl = PromptTemplate::default_with(format);
            let m = MockOracle::new(5, 0.3, t.clone()).unwrap();
            let d = vec![demo("so angry now", 0b0001), demo("joy joy", 0b0010), demo("empty", 0)];
            let query = q("angry and sad");
            let prompt = render_prompt(&tpl, &t, &d, &query).unwrap();
            let (qt, parsed) = decompose_prompt(&tpl, &t, &prompt).unwrap();
            assert_eq!(qt, "angry and sad");
            assert_eq!(parsed.len(), 3);
            assert_eq!(parsed[0], ("so angry now", LabelSet::from_bits(1)));
            let out = m.complete_prompt(&tpl, &prompt).unwrap();
            let back = parse_output(&out, &t, format);
            assert_eq!(back.labels, m.predict(&query, &d));
        }
    }

    #[test]
    fn zero_shot_prompt_decomposes() {
        let t = tax();
        let tpl = PromptTemplate::default_with(LabelFormat::CommaSeparated);
        let prompt = render_prompt(&tpl, &t, &[], &q("hi there")).unwrap();
        let (qt, demos) = decompose_prompt(&tpl, &t, &prompt).unwrap();
        assert_eq!(qt, "hi there");
        assert!(demos.is_empty());
    }
}
