use std::collections::BTreeSet;

use proptest::prelude::*;
use uniparse::config::LayoutConfig;
use uniparse::consolidate::{integrate_sections, FlowItem};
use uniparse::corpus::{evaluate, gen_corpus, CorpusSpec};
use uniparse::dispatch::{batch_stack, ModalityQueue, RoutePolicy, Task};
use uniparse::docmodel::{load_document, save_document, BoundingBox, Detection, SemanticCategory};
use uniparse::engine::{parse_document_direct, prepare_document};
use uniparse::experts::{Expert, ExpertDescriptor, MockExpert};
use uniparse::format::{to_html, to_markdown, to_structured};
use uniparse::layout::{build_tree, filter_functional, pair_groups};
use uniparse::runtime::{simulate, Mode, PipelineConfig};
use uniparse::EngineConfig;

fn spec(seed: u64, n_docs: usize) -> CorpusSpec {
    CorpusSpec {
        seed,
        n_docs,
        pages_per_doc: [1, 3],
        ..CorpusSpec::default()
    }
}

fn random_detections() -> impl Strategy<Value = Vec<Detection>> {
    let cat = prop::sample::select(SemanticCategory::ALL.to_vec());
    prop::collection::vec((cat, 0u32..900, 0u32..900, 4u32..400, 4u32..300), 0..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, x, y, w, h))| {
                let q = |v: u32| f64::from(v.min(1024)) / 1024.0;
                Detection::new(format!("d{i:02}"), c, BoundingBox::new(q(x), q(y), q(x + w), q(y + h)))
            })
            .collect()
    })
}

fn plan_tasks(seed: u64) -> Vec<Task> {
    let (docs, _) = gen_corpus(&spec(seed, 1)).unwrap();
    let plan = prepare_document(&docs[0], &EngineConfig::new(), &RoutePolicy::new(true));
    plan.tasks().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_accounts_for_every_detection(dets in random_detections()) {
        let cfg = LayoutConfig::default();
        let tree = filter_functional(pair_groups(build_tree(0, &dets, &cfg), &cfg));
        prop_assert_eq!(tree.node_count(), dets.len());
        for n in tree.top_level() {
            for c in &n.children {
                prop_assert!(c.children.is_empty(), "{} has grandchildren", n.id());
            }
        }
        let again = filter_functional(tree.clone());
        prop_assert_eq!(&again, &tree);
        let paired = pair_groups(tree.clone(), &cfg);
        prop_assert_eq!(paired, tree);
    }

    #[test]
    fn batches_leave_in_arrival_order(seed in any::<u64>(), max_batch in 1usize..7, wait in 0.0..20.0f64, step in 1u64..5000) {
        let tasks = plan_tasks(seed);
        let Some(m) = tasks.first().map(|t| t.modality) else { return Ok(()) };
        let mine: Vec<Task> = tasks.into_iter().filter(|t| t.modality == m).collect();
        let mut q = ModalityQueue::new(m);
        let mut out = Vec::new();
        let mut now = 0;
        for t in &mine {
            q.push(t.clone(), now);
            now += step;
            while let Some(b) = batch_stack(&mut q, now, max_batch, wait) {
                prop_assert!(b.tasks.len() <= max_batch);
                out.extend(b.tasks.into_iter().map(|t| t.task_id));
            }
        }
        while !q.is_empty() {
            now += 1_000_000;
            let b = batch_stack(&mut q, now, max_batch, wait).unwrap();
            out.extend(b.tasks.into_iter().map(|t| t.task_id));
        }
        let expect: Vec<String> = mine.into_iter().map(|t| t.task_id).collect();
        prop_assert_eq!(out, expect);
    }

    #[test]
    fn mock_experts_are_ordered_deterministic_and_monotone(seed in any::<u64>(), jitter in 0.0..3.0f64) {
        let tasks = plan_tasks(seed);
        for mut d in ExpertDescriptor::defaults() {
            d.latency.jitter_ms = jitter;
            d.latency.jitter_seed = seed;
            let expert = MockExpert::new(d.clone(), seed);
            let reqs: Vec<_> = tasks.iter().filter(|t| t.modality == d.modality).map(|t| t.request(0)).collect();
            for batch in reqs.chunks(d.max_batch) {
                let a = expert.process_batch(batch).unwrap();
                prop_assert_eq!(&a, &expert.process_batch(batch).unwrap());
                let ids: Vec<_> = a.iter().map(|r| r.task_id.as_str()).collect();
                let want: Vec<_> = batch.iter().map(|r| r.task_id.as_str()).collect();
                prop_assert_eq!(ids, want);
                for k in 1..batch.len() {
                    prop_assert!(expert.latency_ms(&batch[..k]) <= expert.latency_ms(&batch[..k + 1]));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn documents_survive_save_and_load(seed in any::<u64>(), jitter in 0.0..0.02f64) {
        let dir = tempfile::tempdir().unwrap();
        let (docs, _) = gen_corpus(&CorpusSpec { jitter_sigma: jitter, ..spec(seed, 2) }).unwrap();
        for d in &docs {
            let path = dir.path().join("doc.json");
            save_document(d, &path).unwrap();
            let back = load_document(&path).unwrap();
            prop_assert_eq!(back.to_canonical_string(), d.to_canonical_string());
            prop_assert_eq!(&back, d);
        }
    }

    #[test]
    fn every_token_is_resolved_or_failed(seed in any::<u64>(), failure in 0.0..0.6f64) {
        let (docs, _) = gen_corpus(&spec(seed, 3)).unwrap();
        let mut cfg = PipelineConfig::new(Mode::PipelineParallel, 2).with_seed(seed);
        for e in &mut cfg.experts {
            e.failure_rate = failure;
        }
        for out in simulate(&docs, &cfg).unwrap().outputs {
            let t = out.tokens;
            prop_assert_eq!(t.skipped, 0);
            prop_assert_eq!(t.emitted, t.resolved + t.failed, "{}", out.doc_id);
        }
    }

    #[test]
    fn sections_partition_the_items(seed in any::<u64>()) {
        let (docs, _) = gen_corpus(&CorpusSpec { cross_page_split_prob: 0.5, ..spec(seed, 2) }).unwrap();
        let policy = RoutePolicy::new(true);
        for d in &docs {
            let out = parse_document_direct(d, &EngineConfig::new(), &policy);
            let items: Vec<FlowItem> = out.root.items().into_iter().cloned().collect();
            let ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
            prop_assert_eq!(ids.len(), items.len());
            let rebuilt = integrate_sections(items.clone(), None);
            let flat: Vec<FlowItem> = rebuilt.items().into_iter().cloned().collect();
            prop_assert_eq!(flat, items);
        }
    }

    #[test]
    fn emission_is_deterministic(seed in any::<u64>()) {
        let (docs, _) = gen_corpus(&spec(seed, 2)).unwrap();
        let policy = RoutePolicy::new(true);
        for d in &docs {
            let a = parse_document_direct(d, &EngineConfig::new(), &policy);
            let b = parse_document_direct(d, &EngineConfig::new(), &policy);
            prop_assert_eq!(to_markdown(&a), to_markdown(&b));
            prop_assert_eq!(to_html(&a), to_html(&b));
            prop_assert_eq!(to_structured(&a), to_structured(&b));
        }
    }

    #[test]
    fn metrics_stay_in_bounds(seed in any::<u64>(), jitter in 0.0..0.05f64, merge in 0.0..0.5f64, hints in any::<bool>()) {
        let s = CorpusSpec { jitter_sigma: jitter, merge_prob: merge, substitution_prob: 0.2, group_hints: hints, ..spec(seed, 2) };
        let (docs, truth) = gen_corpus(&s).unwrap();
        let policy = RoutePolicy::new(true);
        let outs: Vec<_> = docs.iter().map(|d| parse_document_direct(d, &EngineConfig::new(), &policy)).collect();
        let r = evaluate(&outs, &truth);
        for p in &r.per_page {
            prop_assert!((0.0..=1.0).contains(&p.edit_distance));
        }
        prop_assert!((0.0..=1.0).contains(&r.mean_edit_distance));
        for v in [r.grouping.precision, r.grouping.recall, r.grouping.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.inline.placed <= r.inline.expected);
    }
}
