//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniparse::config::OrderingConfig;
use uniparse::corpus::{evaluate, gen_corpus, CorpusSpec, EvalReport, GroundTruth, ModalityMix};
use uniparse::docmodel::{validate_document, BoundingBox, Detection, DocumentIr, SemanticCategory};
use uniparse::engine::parse_document_direct;
use uniparse::format::{to_html, to_markdown, to_structured, ParsedDocument};
use uniparse::layout::{LayoutNode, LayoutTree};
use uniparse::ordering::reading_order;
use uniparse::runtime::{
    bubble_report, compare_modes, simulate, simulate_scaling, Mode, PipelineConfig, Stage, Workload,
};
use uniparse::EngineConfig;

type Outcome = Result<String, String>;

fn parse_all(docs: &[DocumentIr]) -> Vec<ParsedDocument> {
    let cfg = EngineConfig::new();
    let policy = PipelineConfig::new(Mode::Sequential, 1).policy();
    docs.iter().map(|d| parse_document_direct(d, &cfg, &policy)).collect()
}

fn run_spec(spec: &CorpusSpec) -> (Vec<DocumentIr>, GroundTruth, Vec<ParsedDocument>, EvalReport) {
    let (docs, truth) = gen_corpus(spec).expect("valid spec");
    let out = parse_all(&docs);
    let report = evaluate(&out, &truth);
    (docs, truth, out, report)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn clean_order() -> Outcome {
    let t = Instant::now();
    let mut spec = CorpusSpec::with_pages(0, 200);
    spec.jitter_sigma = 0.0;
    spec.merge_prob = 0.0;
    let (_, truth, _, r) = run_spec(&spec);
    let secs = t.elapsed().as_secs_f64();
    check(
        truth.pages() == 200 && r.mean_edit_distance == 0.0 && secs < 30.0,
        format!("pages={} mean_edit_distance={} elapsed={secs:.2}s", truth.pages(), r.mean_edit_distance),
    )
}

fn jitter_order() -> Outcome {
    let means: Vec<f64> = [0.0, 0.005, 0.02]
        .iter()
        .map(|&s| {
            let mut spec = CorpusSpec::with_pages(0, 200);
            spec.jitter_sigma = s;
            run_spec(&spec).3.mean_edit_distance
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    check(means[1] <= 0.05 && monotone, format!("means over sigma 0/0.005/0.02 = {means:?}"))
}

fn grouping() -> Outcome {
    let mut spec = CorpusSpec::with_pages(0, 200);
    let with = run_spec(&spec).3.grouping;
    spec.group_hints = false;
    let without = run_spec(&spec).3.grouping;
    check(
        with.f1 == 1.0 && without.f1 >= 0.95,
        format!("f1 with hints={:.4} geometry only={:.4}", with.f1, without.f1),
    )
}

fn placeholders() -> Outcome {
    let (_, _, out, r) = run_spec(&CorpusSpec::default());
    let leaks = out
        .iter()
        .filter(|d| [to_markdown(d), to_html(d), to_structured(d)].iter().any(|s| s.contains("[[UPH:")))
        .count();
    check(
        r.tokens_emitted == r.tokens_resolved && leaks == 0 && r.inline.rate() == 1.0 && r.inline.expected > 0,
        format!(
            "tokens {}/{} leaking_docs={leaks} inline {}/{}",
            r.tokens_resolved, r.tokens_emitted, r.inline.placed, r.inline.expected
        ),
    )
}

fn splits() -> Outcome {
    let mut spec = CorpusSpec::with_pages(0, 200);
    spec.cross_page_split_prob = 1.0;
    spec.mix = ModalityMix::only_tables();
    let t = run_spec(&spec).3.splits;
    spec.mix = ModalityMix::only_paragraphs();
    let p = run_spec(&spec).3.splits;
    check(
        t.tables > 0 && p.paragraphs > 0 && t.all_conserved() && p.all_conserved(),
        format!(
            "tables merged {}/{} cells ok {}; paragraphs merged {}/{} text ok {}",
            t.tables_merged, t.tables, t.cells_conserved, p.paragraphs_merged, p.paragraphs, p.text_conserved
        ),
    )
}

fn throughput() -> Outcome {
    let w = Workload::reference(0);
    let rows = compare_modes(&w).map_err(|e| e.to_string())?;
    let tp = |m: Mode| rows.iter().find(|r| r.mode == m).map_or(0.0, |r| r.throughput_pps);
    let (seq, par, pipe) = (tp(Mode::Sequential), tp(Mode::ParallelGather), tp(Mode::PipelineParallel));
    let b = bubble_report(&w).map_err(|e| e.to_string())?;
    let f = |m| b.fraction(m, Stage::Experts);
    let smallest = f(Mode::PipelineParallel) < f(Mode::Sequential) && f(Mode::PipelineParallel) < f(Mode::ParallelGather);
    check(
        pipe >= 1.5 * seq && pipe >= 1.1 * par && smallest,
        format!(
            "pps seq={seq:.1} par={par:.1} pipe={pipe:.1} (x{:.2} / x{:.2}); expert bubble seq={:.3} par={:.3} pipe={:.3}",
            pipe / seq,
            pipe / par,
            f(Mode::Sequential),
            f(Mode::ParallelGather),
            f(Mode::PipelineParallel)
        ),
    )
}

fn scaling() -> Outcome {
    let w = Workload::contention_free(0, 40);
    let c = simulate_scaling(&w, &[1, 2, 4, 8]).map_err(|e| e.to_string())?;
    let pts: Vec<String> = c.points.iter().map(|p| format!("{}:{:.1}", p.workers, p.throughput_pps)).collect();
    check(
        c.r_squared >= 0.98 && c.efficiency >= 0.8,
        format!("r2={:.4} efficiency={:.3} points=[{}]", c.r_squared, c.efficiency, pts.join(" ")),
    )
}

fn determinism() -> Outcome {
    let spec = CorpusSpec {
        seed: 7,
        n_docs: 12,
        ..CorpusSpec::default()
    };
    let dump = |docs: &[DocumentIr]| docs.iter().map(DocumentIr::to_canonical_string).collect::<Vec<_>>();
    let (a, _) = gen_corpus(&spec).map_err(|e| e.to_string())?;
    let (b, _) = gen_corpus(&spec).map_err(|e| e.to_string())?;
    let same_corpus = dump(&a) == dump(&b);

    let reference: Vec<String> = parse_all(&a).iter().map(to_structured).collect();
    let mut same_outputs = true;
    let mut same_metrics = true;
    for mode in Mode::ALL {
        for workers in [1, 3, 8] {
            let cfg = PipelineConfig::new(mode, workers);
            let r1 = simulate(&a, &cfg).map_err(|e| e.to_string())?;
            let r2 = simulate(&b, &cfg).map_err(|e| e.to_string())?;
            same_outputs &= outputs_of(&r1.outputs) == reference && outputs_of(&r2.outputs) == reference;
            same_metrics &= r1.metrics.to_json() == r2.metrics.to_json();
        }
    }
    check(
        same_corpus && same_outputs && same_metrics,
        format!("corpus identical={same_corpus} outputs identical across modes/workers={same_outputs} metrics identical={same_metrics}"),
    )
}

fn outputs_of(docs: &[ParsedDocument]) -> Vec<String> {
    docs.iter().map(to_structured).collect()
}

fn random_page(rng: &mut ChaCha8Rng) -> LayoutTree {
    let n = rng.random_range(0..25);
    let mut roots = Vec::new();
    for i in 0..n {
        let x0: f64 = rng.random_range(0.0..0.9);
        let y0: f64 = rng.random_range(0.0..0.95);
        let w = rng.random_range(0.01..(1.0 - x0).min(0.5));
        let h = rng.random_range(0.005..(1.0 - y0).min(0.2));
        let d = Detection::new(format!("u{i:02}"), SemanticCategory::Paragraph, BoundingBox::new(x0, y0, x0 + w, y0 + h));
        roots.push(LayoutNode::new(d));
    }
    LayoutTree {
        page_index: 0,
        roots,
        orphans: Vec::new(),
        removed: Vec::new(),
        page_numbers: Vec::new(),
        warnings: Vec::new(),
    }
}

fn invariants() -> Outcome {
    let (docs, truth) = gen_corpus(&CorpusSpec::default()).map_err(|e| e.to_string())?;
    let invalid = docs.iter().filter(|d| validate_document(d).has_errors()).count();
    let truth_pages_match = truth.docs.iter().zip(&docs).all(|(t, d)| t.pages.len() == d.pages.len());

    let cfg = PipelineConfig::new(Mode::PipelineParallel, 4);
    let m = simulate(&docs, &cfg).map_err(|e| e.to_string())?.metrics;
    let no_loss = m.tasks.dispatched == m.tasks.completed + m.tasks.failed;
    let bounded = m.queue_depth.iter().all(|q| q.max_depth <= cfg.queue_capacity);
    let accounted = m.per_stage.iter().all(|s| {
        let slots = if s.stage.on_accelerator() { m.workers } else { m.cpu_workers } as u64;
        s.busy_us + s.idle_us == slots * m.wall_us
    });

    let ocfg = OrderingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut fuzz_failures = 0;
    for _ in 0..10_000 {
        let tree = random_page(&mut rng);
        let mut ids: Vec<String> = tree.roots.iter().map(|n| n.id().to_string()).collect();
        let order = reading_order(&tree, &ocfg);
        let again = reading_order(&tree, &ocfg);
        let mut sorted = order.clone();
        sorted.sort();
        ids.sort();
        if sorted != ids || order != again {
            fuzz_failures += 1;
        }
    }
    check(
        invalid == 0 && truth_pages_match && no_loss && bounded && accounted && fuzz_failures == 0,
        format!(
            "invalid_docs={invalid} truth_aligned={truth_pages_match} no_task_loss={no_loss} queues_bounded={bounded} accounting={accounted} fuzz_failures={fuzz_failures}/10000"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("clean reading order", clean_order),
        ("jittered reading order", jitter_order),
        ("caption and id pairing", grouping),
        ("placeholder resolution", placeholders),
        ("cross-page merging", splits),
        ("mode throughput and bubbles", throughput),
        ("worker scaling", scaling),
        ("determinism", determinism),
        ("invariants and ordering fuzz", invariants),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS {} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
