use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use uniparse::corpus::{
    gen_corpus, grouping_f1, load_truth, order_edit_distance, save_corpus, CorpusSpec, ModalityMix, SplitKind,
};
use uniparse::docmodel::{load_document, validate_document};

/// Plain recursive edit distance, memoized.
fn levenshtein(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let cost = usize::from(a[0] != b[0]);
    let d = (levenshtein(&a[1..], &b[1..], memo) + cost)
        .min(levenshtein(&a[1..], b, memo) + 1)
        .min(levenshtein(a, &b[1..], memo) + 1);
    memo.insert((a.len(), b.len()), d);
    d
}

fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

#[test]
fn edit_distance_examples() {
    let e: [&str; 0] = [];
    assert_eq!(order_edit_distance(&e, &e), 0.0);
    assert!((order_edit_distance(&["a", "b", "c"], &["a", "c", "b"]) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(order_edit_distance(&["a"], &e), 1.0);
}

#[test]
fn grouping_examples() {
    let truth = pairs(&[("t1", "c1"), ("f1", "q1")]);
    let s = grouping_f1(&[], &truth);
    assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    let s = grouping_f1(&pairs(&[("c1", "t1"), ("f1", "c1")]), &truth);
    assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    assert_eq!(grouping_f1(&[], &[]).f1, 1.0);
}

proptest! {
    #[test]
    fn edit_distance_matches_oracle(a in prop::collection::vec(0u8..5, 0..12), b in prop::collection::vec(0u8..5, 0..12)) {
        let n = a.len().max(b.len());
        let expect = if n == 0 { 0.0 } else { levenshtein(&a, &b, &mut HashMap::new()) as f64 / n as f64 };
        prop_assert!((order_edit_distance(&a, &b) - expect).abs() < 1e-12);
        prop_assert!((order_edit_distance(&b, &a) - expect).abs() < 1e-12);
    }

    #[test]
    fn grouping_matches_set_oracle(
        p in prop::collection::vec((0u8..4, 0u8..4), 0..8),
        t in prop::collection::vec((0u8..4, 0u8..4), 0..8),
    ) {
        let norm = |v: &[(u8, u8)]| v.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect::<BTreeSet<_>>();
        let (ps, ts) = (norm(&p), norm(&t));
        let hit = ps.intersection(&ts).count() as f64;
        let as_pairs = |v: &[(u8, u8)]| v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect::<Vec<_>>();
        let s = grouping_f1(&as_pairs(&p), &as_pairs(&t));
        if ps.is_empty() && ts.is_empty() {
            prop_assert_eq!(s.f1, 1.0);
        } else {
            let prec = if ps.is_empty() { 0.0 } else { hit / ps.len() as f64 };
            let rec = if ts.is_empty() { 0.0 } else { hit / ts.len() as f64 };
            prop_assert!((s.precision - prec).abs() < 1e-12);
            prop_assert!((s.recall - rec).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_same_corpus() {
    let spec = CorpusSpec {
        seed: 5,
        n_docs: 4,
        jitter_sigma: 0.01,
        merge_prob: 0.3,
        substitution_prob: 0.2,
        ..CorpusSpec::default()
    };
    let (a, ta) = gen_corpus(&spec).unwrap();
    let (b, tb) = gen_corpus(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = gen_corpus(&CorpusSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn perturbed_corpora_stay_valid() {
    let spec = CorpusSpec {
        seed: 9,
        n_docs: 20,
        jitter_sigma: 0.02,
        merge_prob: 0.5,
        substitution_prob: 0.3,
        group_hints: false,
        ..CorpusSpec::default()
    };
    let (docs, _) = gen_corpus(&spec).unwrap();
    for d in &docs {
        let r = validate_document(d);
        assert!(!r.has_errors(), "{}: {:?}", d.doc_id, r.errors().collect::<Vec<_>>());
    }
}

#[test]
fn truth_is_recorded_before_merging() {
    let spec = CorpusSpec {
        seed: 2,
        n_docs: 6,
        merge_prob: 1.0,
        mix: ModalityMix::only_paragraphs(),
        cross_page_split_prob: 0.0,
        ..CorpusSpec::default()
    };
    let (docs, truth) = gen_corpus(&spec).unwrap();
    let emitted: BTreeSet<&str> = docs.iter().flat_map(|d| d.detections()).map(|d| d.id.as_str()).collect();
    let absent = truth
        .docs
        .iter()
        .flat_map(|d| &d.pages)
        .flat_map(|p| &p.order)
        .filter(|id| !emitted.contains(id.as_str()))
        .count();
    assert!(absent > 0);
}

#[test]
fn splits_pair_consecutive_pages() {
    let spec = CorpusSpec {
        seed: 4,
        n_docs: 5,
        cross_page_split_prob: 1.0,
        ..CorpusSpec::default()
    };
    let (docs, truth) = gen_corpus(&spec).unwrap();
    for (d, t) in docs.iter().zip(&truth.docs) {
        assert_eq!(t.splits.len(), d.pages.len() - 1);
        let page_of = |id: &str| d.detections().find(|x| x.id == id).map(|_| {
            d.pages.iter().position(|p| p.detections.iter().any(|x| x.id == id)).unwrap()
        });
        for s in &t.splits {
            let (p1, p2) = (page_of(&s.first).unwrap(), page_of(&s.second).unwrap());
            assert_eq!(p1 + 1, p2);
            match s.kind {
                SplitKind::Table => assert!(s.cells > 0),
                SplitKind::Paragraph => assert!(s.text.is_some()),
            }
        }
    }
}

#[test]
fn unknown_spec_keys_are_rejected() {
    assert!(serde_json::from_str::<CorpusSpec>(r#"{"seed": 1, "pages": 3}"#).is_err());
    let s: CorpusSpec = serde_json::from_str(r#"{"seed": 1, "columns": [2]}"#).unwrap();
    assert_eq!(s.columns, vec![2]);
    let bad = CorpusSpec {
        columns: vec![4],
        ..CorpusSpec::default()
    };
    assert!(gen_corpus(&bad).is_err());
}

#[test]
fn corpus_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        n_docs: 2,
        ..CorpusSpec::default()
    };
    let (docs, truth) = gen_corpus(&spec).unwrap();
    save_corpus(&docs, &truth, dir.path()).unwrap();
    assert_eq!(load_truth(dir.path()).unwrap(), truth);
    let back = load_document(dir.path().join(format!("{}.json", docs[1].doc_id))).unwrap();
    assert_eq!(back, docs[1]);
}
