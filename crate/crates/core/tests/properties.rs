mod common;

use common::{semeval, synthetic};
use priorpull::analysis::pull_maps;
use priorpull::corpus::{load_dataset, pool_labels, subsample, DatasetFormat, PoolingMap};
use priorpull::metrics::{jaccard_similarity, macro_f1, metric_triple, micro_f1};
use priorpull::prompt::{parse_output, render_prompt, LabelFormat, PromptTemplate};
use priorpull::sampling::{
    sample_icl, sample_prior_independent, sample_prior_uniform, sample_sedl, LabelMode,
};
use priorpull::{EmotionTaxonomy, LabelSet, LabeledExample, MultilabelDataset, PredictionMap, Split};
use proptest::prelude::*;

fn taxonomy(l: usize) -> EmotionTaxonomy {
    EmotionTaxonomy::new("p", (0..l).map(|j| format!("l{j}"))).unwrap()
}

fn map(tax: &EmotionTaxonomy, rows: &[u64]) -> PredictionMap {
    let mask = tax.full_set().bits();
    PredictionMap::from_entries(
        tax.clone(),
        rows.iter()
            .enumerate()
            .map(|(i, b)| (format!("x{i:03}"), LabelSet::from_bits(b & mask))),
    )
    .unwrap()
}

/// Label count plus two aligned row vectors of bitmasks.
fn pair() -> impl Strategy<Value = (usize, Vec<u64>, Vec<u64>)> {
    (1usize..=28, 1usize..=40).prop_flat_map(|(l, n)| {
        (
            Just(l),
            prop::collection::vec(any::<u64>(), n),
            prop::collection::vec(any::<u64>(), n),
        )
    })
}

proptest! {
    #[test]
    fn metrics_bounded_and_symmetric((l, a, b) in pair()) {
        let tax = taxonomy(l);
        let (a, b) = (map(&tax, &a), map(&tax, &b));
        let ab = metric_triple(&a, &b).unwrap();
        prop_assert_eq!(ab, metric_triple(&b, &a).unwrap());
        for v in ab.as_array() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn identity_scores_one_except_macro((l, a, _b) in pair()) {
        let tax = taxonomy(l);
        let a = map(&tax, &a);
        prop_assert_eq!(jaccard_similarity(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(micro_f1(&a, &a).unwrap(), 1.0);
        let present = (0..l).filter(|&j| a.iter().any(|(_, s)| s.contains(j))).count();
        prop_assert_eq!(macro_f1(&a, &a).unwrap(), present as f64 / l as f64);
    }

    #[test]
    fn flipping_a_bit_never_raises_jaccard((l, a, _b) in pair(), row in any::<prop::sample::Index>(), bit in any::<prop::sample::Index>()) {
        let tax = taxonomy(l);
        let a = map(&tax, &a);
        let ids: Vec<String> = a.ids().map(str::to_owned).collect();
        let target = &ids[row.index(ids.len())];
        let copy = PredictionMap::from_entries(
            tax.clone(),
            a.iter().map(|(id, mut s)| {
                if id == target {
                    s.toggle(bit.index(l));
                }
                (id.to_owned(), s)
            }),
        )
        .unwrap();
        prop_assert!(jaccard_similarity(&a, &copy).unwrap() <= jaccard_similarity(&a, &a).unwrap());
    }

    #[test]
    fn pull_negates_when_gold_and_prior_swap((l, a, b) in pair(), c in prop::collection::vec(any::<u64>(), 40)) {
        let tax = taxonomy(l);
        let gold = map(&tax, &a);
        let prior = map(&tax, &b);
        let icl = map(&tax, &c[..a.len()]);
        let fwd = pull_maps(5, std::slice::from_ref(&icl), std::slice::from_ref(&prior), &gold).unwrap();
        let rev = pull_maps(5, std::slice::from_ref(&icl), std::slice::from_ref(&gold), &prior).unwrap();
        prop_assert_eq!(fwd.pull.as_array().map(|v| -v), rev.pull.as_array());
    }

    #[test]
    fn parse_stays_inside_taxonomy(raw in ".{0,80}", fmt in prop_oneof![Just(LabelFormat::CommaSeparated), Just(LabelFormat::JsonObject)]) {
        let tax = semeval();
        let out = parse_output(&raw, &tax, fmt);
        prop_assert!(tax.contains_set(out.labels));
    }

    #[test]
    fn prompt_has_one_input_block_per_demo_plus_query(k in 0usize..30, seed in any::<u64>()) {
        let s = synthetic(40, 3, 1);
        let query = &s.eval.examples()[0];
        let demos = sample_icl(&s.pool, k, seed, Some(&query.id)).unwrap();
        let p = render_prompt(&PromptTemplate::default_with(LabelFormat::CommaSeparated), &semeval(), &demos, query).unwrap();
        prop_assert_eq!(p.matches("Input:").count(), k + 1);
    }

    #[test]
    fn sampling_excludes_query_and_is_deterministic(k in 1usize..20, seed in any::<u64>(), q in 0usize..30, run in 0u32..4) {
        let s = synthetic(30, 3, 2);
        let pool = &s.eval;
        let qid = pool.examples()[q].id.clone();
        let draws = [
            sample_icl(pool, k, seed, Some(&qid)).unwrap(),
            sample_prior_independent(pool, k, seed, Some(&qid)).unwrap(),
            sample_prior_uniform(pool, k, seed, Some(&qid)).unwrap(),
            sample_sedl(pool, k, seed, run, LabelMode::Uniform, Some(&qid)).unwrap(),
        ];
        for d in &draws {
            prop_assert_eq!(d.len(), k);
            prop_assert!(d.iter().all(|x| x.example_id != qid));
        }
        prop_assert_eq!(&draws[0], &sample_icl(pool, k, seed, Some(&qid)).unwrap());
        prop_assert_eq!(&draws[1], &sample_prior_independent(pool, k, seed, Some(&qid)).unwrap());
        let texts = |i: usize| draws[i].iter().map(|x| x.text.clone()).collect::<Vec<_>>();
        prop_assert_eq!(texts(0), texts(1));
        prop_assert_eq!(texts(0), texts(2));
    }

    #[test]
    fn jsonl_round_trip_and_subsample_determinism(n in 1usize..40, m in 0usize..40, seed in any::<u64>()) {
        let s = synthetic(n, 4, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        s.eval.save_jsonl(&path).unwrap();
        let back = load_dataset(&path, DatasetFormat::Jsonl, Some(s.eval.taxonomy()), Split::Dev).unwrap();
        prop_assert_eq!(&back, &s.eval);
        let m = m.min(n);
        let mut x = Vec::new();
        let mut y = Vec::new();
        subsample(&s.eval, m, seed).unwrap().write_jsonl(&mut x).unwrap();
        subsample(&s.eval, m, seed).unwrap().write_jsonl(&mut y).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn pooling_keeps_ids_and_never_grows_gold(golds in prop::collection::vec(0u64..(1 << 11), 1..30), assign in prop::collection::vec(0usize..4, 11)) {
        let tax = semeval();
        let examples: Vec<LabeledExample> = golds
            .iter()
            .enumerate()
            .map(|(i, b)| LabeledExample { id: format!("g{i}"), text: format!("t{i}"), gold: LabelSet::from_bits(*b) })
            .collect();
        let d = MultilabelDataset::new(tax.clone(), Split::Train, examples).unwrap();
        let clusters = ["c0", "c1", "c2"];
        let pairs: Vec<(String, Option<String>)> = tax
            .labels()
            .iter()
            .zip(&assign)
            .enumerate()
            .map(|(j, (l, &a))| {
                let a = if j == 0 { a % clusters.len() } else { a };
                (l.clone(), clusters.get(a).map(|c| c.to_string()))
            })
            .collect();
        let pm = PoolingMap::new("pooled", pairs).unwrap();
        let pooled = pool_labels(&d, &pm).unwrap();
        prop_assert_eq!(pooled.len(), d.len());
        for (a, b) in d.examples().iter().zip(pooled.examples()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert!(b.gold.len() <= a.gold.len());
        }
    }
}
