use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use uniparse::config::{LayoutConfig, OrderingConfig};
use uniparse::consolidate::{merge_cross_page, FlowItem};
use uniparse::corpus::{evaluate, gen_corpus, split_check, CorpusSpec, ModalityMix};
use uniparse::dispatch::{route, RoutePolicy, Task};
use uniparse::docmodel::{validate_document, BoundingBox, Detection, DocumentIr, SemanticCategory};
use uniparse::engine::{finish_document, parse_document_direct, prepare_document, record_batch};
use uniparse::experts::{Expert, ExpertDescriptor, MockExpert};
use uniparse::format::{to_structured, ParsedDocument};
use uniparse::layout::{layout_page, pair_groups, LayoutNode, LayoutTree};
use uniparse::ordering::reading_order;
use uniparse::runtime::{simulate, Mode, PipelineConfig};
use uniparse::EngineConfig;

/// Boxes on a 1/1024 grid so translations stay exact.
fn grid_box() -> impl Strategy<Value = (u32, u32, u32, u32)> {
    (0u32..800, 0u32..900, 8u32..300, 4u32..120)
}

fn tree_of(boxes: &[(u32, u32, u32, u32)], dx: u32, dy: u32) -> LayoutTree {
    let q = |v: u32| f64::from(v) / 1024.0;
    let roots = boxes
        .iter()
        .enumerate()
        .map(|(i, &(x, y, w, h))| {
            let b = BoundingBox::new(q(x + dx), q(y + dy), q(x + dx + w), q(y + dy + h));
            LayoutNode::new(Detection::new(format!("u{i:02}"), SemanticCategory::Paragraph, b))
        })
        .collect();
    LayoutTree {
        page_index: 0,
        roots,
        orphans: Vec::new(),
        removed: Vec::new(),
        page_numbers: Vec::new(),
        warnings: Vec::new(),
    }
}

fn small_spec(seed: u64, n_docs: usize) -> CorpusSpec {
    CorpusSpec {
        seed,
        n_docs,
        pages_per_doc: [1, 3],
        ..CorpusSpec::default()
    }
}

fn parse_all(docs: &[DocumentIr]) -> Vec<ParsedDocument> {
    let policy = RoutePolicy::new(true);
    docs.iter().map(|d| parse_document_direct(d, &EngineConfig::new(), &policy)).collect()
}

fn walk<'a>(n: &'a LayoutNode, out: &mut Vec<&'a LayoutNode>) {
    out.push(n);
    for c in &n.children {
        walk(c, out);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn order_is_a_permutation(boxes in prop::collection::vec(grid_box(), 0..30)) {
        let tree = tree_of(&boxes, 0, 0);
        let mut order = reading_order(&tree, &OrderingConfig::default());
        order.sort();
        let ids: Vec<String> = (0..boxes.len()).map(|i| format!("u{i:02}")).collect();
        prop_assert_eq!(order, ids);
    }

    #[test]
    fn order_survives_translation(boxes in prop::collection::vec(grid_box(), 0..30), dx in 0u32..100, dy in 0u32..60) {
        let cfg = OrderingConfig::default();
        prop_assert_eq!(reading_order(&tree_of(&boxes, 0, 0), &cfg), reading_order(&tree_of(&boxes, dx, dy), &cfg));
    }

    #[test]
    fn stacked_blocks_read_top_down(heights in prop::collection::vec(10u32..60, 1..12), x in 0u32..200, w in 100u32..600) {
        // separated by at least 2% of the page
        let mut y = 0;
        let mut boxes = Vec::new();
        for h in &heights {
            boxes.push((x, y, w, *h));
            y += h + 24;
        }
        prop_assume!(y < 1024);
        let order = reading_order(&tree_of(&boxes, 0, 0), &OrderingConfig::default());
        let expect: Vec<String> = (0..heights.len()).map(|i| format!("u{i:02}")).collect();
        prop_assert_eq!(order, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_corpora_are_valid_and_exact(seed in any::<u64>()) {
        let (docs, truth) = gen_corpus(&small_spec(seed, 3)).unwrap();
        for d in &docs {
            prop_assert!(!validate_document(d).has_errors());
        }
        let r = evaluate(&parse_all(&docs), &truth);
        prop_assert_eq!(r.mean_edit_distance, 0.0);
        prop_assert_eq!(r.grouping.f1, 1.0);
        prop_assert_eq!(r.inline.placed, r.inline.expected);
    }

    #[test]
    fn groups_are_contiguous_in_order(seed in any::<u64>(), jitter in 0.0..0.01f64) {
        let spec = CorpusSpec { jitter_sigma: jitter, ..small_spec(seed, 2) };
        let (docs, _) = gen_corpus(&spec).unwrap();
        for out in parse_all(&docs) {
            for page in &out.pages {
                // every partner shares its anchor's unit, so it never shows up as a unit itself
                let units: BTreeSet<&str> = page.order.iter().map(String::as_str).collect();
                for (anchor, partner) in &page.groups {
                    prop_assert!(units.contains(anchor.as_str()) || !units.contains(partner.as_str()));
                    prop_assert!(!units.contains(partner.as_str()));
                }
            }
        }
    }

    #[test]
    fn splits_conserve_content(seed in any::<u64>(), tables in any::<bool>()) {
        let spec = CorpusSpec {
            cross_page_split_prob: 1.0,
            mix: if tables { ModalityMix::only_tables() } else { ModalityMix::only_paragraphs() },
            ..small_spec(seed, 3)
        };
        let (docs, truth) = gen_corpus(&spec).unwrap();
        let s = split_check(&parse_all(&docs), &truth);
        prop_assert!(s.all_conserved(), "{:?}", s);
    }

    #[test]
    fn no_detection_is_lost(seed in any::<u64>()) {
        let (docs, _) = gen_corpus(&small_spec(seed, 2)).unwrap();
        for (doc, out) in docs.iter().zip(parse_all(&docs)) {
            let mut seen = BTreeSet::new();
            for item in out.root.items() {
                seen.extend(item.provenance.iter().map(|p| p.id.clone()));
                let mut stack: Vec<_> = item.members.iter().collect();
                while let Some(n) = stack.pop() {
                    seen.insert(n.id.clone());
                    stack.extend(n.children.iter());
                }
            }
            for page in &out.pages {
                seen.extend(page.removed.iter().cloned());
            }
            for d in doc.detections() {
                prop_assert!(
                    seen.contains(&d.id) || d.category == SemanticCategory::PageNumber,
                    "{} missing", d.id
                );
            }
        }
    }

    #[test]
    fn cross_page_merge_is_idempotent(seed in any::<u64>()) {
        let spec = CorpusSpec { cross_page_split_prob: 1.0, ..small_spec(seed, 2) };
        let (docs, _) = gen_corpus(&spec).unwrap();
        let cfg = EngineConfig::new();
        for out in parse_all(&docs) {
            let items: Vec<FlowItem> = out.root.items().into_iter().cloned().collect();
            let once = merge_cross_page(items.clone(), &cfg.consolidate, false);
            let twice = merge_cross_page(once.clone(), &cfg.consolidate, false);
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn pairing_is_idempotent(seed in any::<u64>(), hints in any::<bool>()) {
        let spec = CorpusSpec { group_hints: hints, jitter_sigma: 0.004, ..small_spec(seed, 1) };
        let (docs, _) = gen_corpus(&spec).unwrap();
        let cfg = LayoutConfig::default();
        for page in &docs[0].pages {
            let tree = layout_page(page, &cfg);
            prop_assert_eq!(pair_groups(tree.clone(), &cfg), tree);
        }
    }

    #[test]
    fn gather_ignores_batching_and_arrival_order(seed in any::<u64>(), chunk in 1usize..9, rotate in 0usize..50) {
        let (docs, _) = gen_corpus(&small_spec(seed, 1)).unwrap();
        let cfg = EngineConfig::new();
        let policy = RoutePolicy::new(true);
        let plan = prepare_document(&docs[0], &cfg, &policy);
        let reference = to_structured(&parse_document_direct(&docs[0], &cfg, &policy));

        let experts: BTreeMap<_, _> = ExpertDescriptor::defaults()
            .into_iter()
            .map(|d| (d.modality, MockExpert::new(d, 0)))
            .collect();
        let mut tasks: Vec<&Task> = plan.tasks().collect();
        if !tasks.is_empty() {
            let k = rotate % tasks.len();
            tasks.rotate_left(k);
        }
        let mut results = BTreeMap::new();
        let mut by_modality: BTreeMap<_, Vec<&Task>> = BTreeMap::new();
        for t in tasks {
            by_modality.entry(t.modality).or_default().push(t);
        }
        for (m, ts) in by_modality.iter().rev() {
            for batch in ts.chunks(chunk) {
                let reqs: Vec<_> = batch.iter().map(|t| t.request(0)).collect();
                record_batch(batch.iter().map(|t| t.task_id.as_str()), experts[m].process_batch(&reqs), &mut results);
            }
        }
        let out = finish_document(&plan, &results, &cfg).unwrap();
        prop_assert_eq!(to_structured(&out), reference);
    }

    #[test]
    fn routing_is_total(seed in any::<u64>(), captioning in any::<bool>()) {
        let (docs, _) = gen_corpus(&small_spec(seed, 1)).unwrap();
        let policy = RoutePolicy::new(captioning);
        let plan = prepare_document(&docs[0], &EngineConfig::new(), &policy);
        for page in &plan.pages {
            let mut nodes = Vec::new();
            for n in page.tree.top_level() {
                walk(n, &mut nodes);
            }
            let expected: BTreeSet<&str> = nodes
                .iter()
                .filter(|n| policy.active_route(n.category()).is_some())
                .map(|n| n.id())
                .collect();
            let tasked: BTreeSet<&str> = page.tasks.iter().map(|t| t.detection.id.as_str()).collect();
            prop_assert_eq!(&tasked, &expected);
            for t in &page.tasks {
                prop_assert_eq!(Some(t.modality), route(t.detection.category, captioning));
            }
        }
    }

    #[test]
    fn runtime_invariants_hold(
        seed in any::<u64>(),
        mode in prop::sample::select(Mode::ALL.to_vec()),
        workers in 1usize..6,
        capacity in 1usize..12,
        inflight in 1usize..5,
        failure in 0.0..0.4f64,
    ) {
        let (docs, _) = gen_corpus(&small_spec(seed, 3)).unwrap();
        let mut cfg = PipelineConfig::new(mode, workers).with_seed(seed);
        cfg.queue_capacity = capacity;
        cfg.max_inflight_docs = inflight;
        for e in &mut cfg.experts {
            e.failure_rate = failure;
        }
        let a = simulate(&docs, &cfg).unwrap();
        let m = &a.metrics;
        prop_assert_eq!(m.tasks.dispatched, m.tasks.completed + m.tasks.failed);
        for q in &m.queue_depth {
            prop_assert!(q.max_depth <= capacity, "{} reached {}", q.lane, q.max_depth);
        }
        for s in &m.per_stage {
            let slots = if s.stage.on_accelerator() { m.workers } else { m.cpu_workers } as u64;
            prop_assert_eq!(s.busy_us + s.idle_us, slots * m.wall_us);
        }
        prop_assert_eq!(a.outputs.len(), docs.len());
        let b = simulate(&docs, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        if failure == 0.0 {
            let direct: Vec<String> = parse_all(&docs).iter().map(to_structured).collect();
            let got: Vec<String> = a.outputs.iter().map(to_structured).collect();
            prop_assert_eq!(got, direct);
        }
    }
}

#[test]
fn every_category_has_a_route_decision() {
    for c in SemanticCategory::ALL {
        let parsed = route(c, true).is_some();
        assert_eq!(parsed, !matches!(
            c,
            SemanticCategory::Header
                | SemanticCategory::Footer
                | SemanticCategory::Sidebar
                | SemanticCategory::Watermark
                | SemanticCategory::DividerLine
        ), "{c:?}");
    }
}
