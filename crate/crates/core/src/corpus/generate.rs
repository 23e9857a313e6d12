use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{
    CorpusError, CorpusSpec, DocTruth, GroundTruth, InlineSlot, InlineTruth, PageTruth, SplitKind,
    SplitTruth,
};
use crate::docmodel::{
    BoundingBox, ContentPayload, Detection, DocumentIr, OutlineEntry, PageIr, SemanticCategory as C,
    TableGrid, OBJECT_MARKER,
};

const LEFT: f64 = 0.08;
const RIGHT: f64 = 0.92;
const TOP: f64 = 0.06;
const BOTTOM: f64 = 0.94;
const GUTTER: f64 = 0.04;
/// Whitespace between units; comfortably above the XY-cut minimum.
const GAP: f64 = 0.02;
/// Around full-width slots; wider than GAP so two column flows whose gaps
/// happen to line up never look like a section break.
const BAND_GAP: f64 = 0.03;
/// Anchor to partner spacing inside a group.
const TIGHT: f64 = 0.006;
const LINE: f64 = 0.018;
const ROW: f64 = 0.02;
const CAPTION: f64 = 0.02;

const WORDS: &[&str] = &[
    "model", "layout", "page", "structure", "method", "result", "analysis", "data", "sample",
    "reaction", "compound", "yield", "table", "figure", "signal", "process", "phase", "energy",
    "surface", "catalyst", "solvent", "measure", "value", "range", "order", "region", "element",
    "network", "training", "error", "metric", "baseline", "system", "stage", "batch", "latency",
    "document", "section", "column", "parser", "expert", "feature", "image", "text", "formula",
    "molecule", "bond", "ring", "chain", "acid", "base", "salt", "ligand", "complex", "spectrum",
    "peak", "band", "shift", "field", "scale", "ratio", "mean", "set", "series", "case", "study",
    "effect", "rate", "time", "step", "level", "flow", "unit", "point", "line", "curve", "map",
];

const SMILES: &[&str] = &[
    "CCO", "c1ccccc1", "CC(=O)O", "C1CCCCC1", "CC(C)O", "O=C=O", "c1ccncc1", "CC(=O)Nc1ccccc1",
    "C[C@H](N)C(=O)O", "OC1=CC=CC=C1", "CN1C=NC2=C1C(=O)N(C)C(=O)N2C", "ClC(Cl)Cl",
];

const LATEX: &[&str] = &[
    "x^2", "\\alpha+\\beta", "E=mc^2", "\\frac{a}{b}", "\\sum_{i=1}^{n} x_i", "\\sqrt{2}",
    "k_{B}T", "\\Delta G", "\\int_0^1 f(t)\\,dt", "p<0.05",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Paragraph,
    SectionTitle,
    Table,
    Formula,
    Figure,
    Image,
    Molecule,
    Reaction,
    Chart,
    Other,
}

const KINDS: [Kind; 10] = [
    Kind::Paragraph,
    Kind::SectionTitle,
    Kind::Table,
    Kind::Formula,
    Kind::Figure,
    Kind::Image,
    Kind::Molecule,
    Kind::Reaction,
    Kind::Chart,
    Kind::Other,
];

struct Block {
    unit: String,
    dets: Vec<Detection>,
    pairs: Vec<(String, String)>,
    /// Flow the block was placed in; merges only join blocks of one flow.
    flow: usize,
    /// A plain paragraph that merge perturbation may join with its successor.
    mergeable: bool,
    inline: Vec<InlineTruth>,
    outline: Option<OutlineEntry>,
    bottom: f64,
}

impl Block {
    fn single(det: Detection, flow: usize, bottom: f64) -> Self {
        Self {
            unit: det.id.clone(),
            dets: vec![det],
            pairs: Vec::new(),
            flow,
            mergeable: false,
            inline: Vec::new(),
            outline: None,
            bottom,
        }
    }
}

enum Carry {
    Table {
        first: String,
        rows: Vec<Vec<String>>,
        cells: usize,
        number: usize,
    },
    Paragraph {
        first: String,
        words: Vec<String>,
        text: String,
    },
}

struct DocGen<'a> {
    spec: &'a CorpusSpec,
    rng: ChaCha8Rng,
    doc_id: String,
    page: usize,
    next_block: usize,
    next_hint: usize,
    counters: [usize; 4],
    kinds: Option<WeightedIndex<f64>>,
}

fn mix(seed: u64, i: u64) -> u64 {
    // splitmix64
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates the corpus and its ground truth; each document draws from its
/// own seed derived from `spec.seed` and its index.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<(Vec<DocumentIr>, GroundTruth), CorpusError> {
    spec.check()?;
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut truth = GroundTruth::default();
    for i in 0..spec.n_docs {
        let mut g = DocGen {
            spec,
            rng: ChaCha8Rng::seed_from_u64(mix(spec.seed, i as u64)),
            doc_id: format!("doc{:04}", i),
            page: 0,
            next_block: 0,
            next_hint: 0,
            counters: [0; 4],
            kinds: WeightedIndex::new(spec.mix.weights()).ok(),
        };
        let (doc, t) = g.document();
        docs.push(doc);
        truth.docs.push(t);
    }
    Ok((docs, truth))
}

impl DocGen<'_> {
    fn document(&mut self) -> (DocumentIr, DocTruth) {
        let [lo, hi] = self.spec.pages_per_doc;
        let n_pages = self.rng.random_range(lo..=hi);
        let mut doc = DocumentIr::new(self.doc_id.clone());
        doc.language_tag = self.spec.language_tag.clone();
        let mut truth = DocTruth {
            doc_id: self.doc_id.clone(),
            pages: Vec::new(),
            splits: Vec::new(),
            inline: Vec::new(),
        };
        let mut outline = Vec::new();
        let mut carry = None;
        for p in 0..n_pages {
            self.page = p;
            self.next_block = 0;
            let (page, pt, next, split, mut blocks) = self.page(carry.take(), p + 1 == n_pages);
            let _ = page;
            carry = next;
            if let Some(s) = split {
                truth.splits.push(s);
            }
            for b in &blocks {
                outline.extend(b.outline.clone());
                truth.inline.extend(b.inline.iter().cloned());
            }
            self.perturb(&mut blocks);
            let mut page = PageIr::new(p);
            page.detections = blocks.into_iter().flat_map(|b| b.dets).collect();
            if self.spec.functional {
                page.detections.extend(self.functional());
            }
            page.detections.shuffle(&mut self.rng);
            doc.pages.push(page);
            truth.pages.push(pt);
        }
        if self.spec.outline && !outline.is_empty() {
            doc.outline = Some(outline);
        }
        (doc, truth)
    }

    fn id(&mut self) -> String {
        self.next_block += 1;
        format!("{}-p{}-b{:02}", self.doc_id, self.page, self.next_block)
    }

    fn hint(&mut self) -> String {
        self.next_hint += 1;
        format!("g{}", self.next_hint)
    }

    fn number(&mut self, which: usize) -> usize {
        self.counters[which] += 1;
        self.counters[which]
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| WORDS[self.rng.random_range(0..WORDS.len())].to_string())
            .collect()
    }

    fn sentence(&mut self, n: usize) -> String {
        capitalize(&self.words(n.max(1)).join(" ")) + "."
    }

    fn pick(&mut self, opts: &'static [&'static str]) -> String {
        opts[self.rng.random_range(0..opts.len())].to_string()
    }

    fn functional(&mut self) -> Vec<Detection> {
        let p = self.page;
        vec![
            Detection::new(
                format!("{}-p{p}-hdr", self.doc_id),
                C::Header,
                BoundingBox::new(LEFT, 0.015, RIGHT, 0.035),
            )
            .with_text(format!("Proceedings of {}", self.doc_id)),
            Detection::new(
                format!("{}-p{p}-num", self.doc_id),
                C::PageNumber,
                BoundingBox::new(0.47, 0.955, 0.53, 0.975),
            )
            .with_text((p + 1).to_string()),
        ]
    }

    /// Lays out one page. Returns the page (unperturbed), its truth, the
    /// continuation for the next page, the split it started and its blocks.
    #[allow(clippy::type_complexity)]
    fn page(
        &mut self,
        carry: Option<Carry>,
        last_page: bool,
    ) -> (PageIr, PageTruth, Option<Carry>, Option<SplitTruth>, Vec<Block>) {
        let mut blocks: Vec<Block> = Vec::new();
        let mut y = TOP;
        if self.page == 0 {
            let id = self.id();
            let text = capitalize(&self.words(5).join(" "));
            let d = Detection::new(id, C::DocumentTitle, BoundingBox::new(0.15, y, 0.85, y + 0.04))
                .with_text(text);
            blocks.push(Block::single(d, 0, y + 0.04));
            y += 0.04 + BAND_GAP;
        }
        let cols = self.spec.columns[self.rng.random_range(0..self.spec.columns.len())] as usize;

        let mut sections = vec![(y, BOTTOM)];
        let mut slot_at = None;
        if cols > 1 && BOTTOM - y > 0.6 && self.rng.random_bool(self.spec.slot_prob) {
            let slot_h = self.rng.random_range(0.14..0.2);
            let split = y + self.rng.random_range(0.22..0.38);
            slot_at = Some((split + BAND_GAP, slot_h));
            sections = vec![(y, split), (split + BAND_GAP + slot_h + TIGHT + CAPTION + BAND_GAP, BOTTOM)];
        }

        let split_kind = if last_page || !self.rng.random_bool(self.spec.cross_page_split_prob) {
            None
        } else {
            let (t, p) = (self.spec.mix.table, self.spec.mix.paragraph);
            if t + p <= 0.0 {
                None
            } else if self.rng.random_bool(t / (t + p)) {
                Some(SplitKind::Table)
            } else {
                Some(SplitKind::Paragraph)
            }
        };

        let width = (RIGHT - LEFT - GUTTER * (cols as f64 - 1.0)) / cols as f64;
        let mut carry = carry;
        let mut pending_split = None;
        let mut next_carry = None;
        let n_sections = sections.len();
        for (si, &(top, bottom)) in sections.iter().enumerate() {
            for c in 0..cols {
                let x0 = LEFT + c as f64 * (width + GUTTER);
                let x1 = x0 + width;
                let flow = si * 4 + c + 1;
                let mut cy = top;
                if let Some(k) = carry.take() {
                    let (b, s) = self.continuation(k, x0, x1, cy, flow);
                    cy = b.bottom + GAP;
                    pending_split = s;
                    blocks.push(b);
                }
                let start = blocks.len();
                cy = self.fill(x0, x1, cy, bottom, flow, &mut blocks);
                let last = si + 1 == n_sections && c + 1 == cols;
                if let (true, Some(kind)) = (last, split_kind) {
                    // make room for the split part by dropping trailing blocks
                    let need = match kind {
                        SplitKind::Table => CAPTION + TIGHT + 3.0 * ROW,
                        SplitKind::Paragraph => 0.05,
                    };
                    while bottom - cy < need && blocks.len() > start {
                        blocks.pop();
                        cy = blocks.get(start..).and_then(|b| b.last()).map_or(top, |b| b.bottom + GAP);
                        if blocks.len() == start {
                            cy = if start > 0 && blocks[start - 1].flow == flow {
                                blocks[start - 1].bottom + GAP
                            } else {
                                top
                            };
                        }
                    }
                    if bottom - cy >= need {
                        let (b, k) = self.split_first(kind, x0, x1, cy, bottom, flow);
                        blocks.push(b);
                        next_carry = Some(k);
                    }
                }
            }
            if let (0, Some((sy, sh))) = (si, slot_at) {
                let b = self.slot(sy, sh);
                blocks.push(b);
            }
        }
        if let Some(k) = carry {
            // nothing could hold the continuation; keep the document valid
            let (b, s) = self.continuation(k, LEFT, LEFT + width, TOP, 0);
            pending_split = s;
            blocks.push(b);
        }

        let pt = PageTruth {
            page_index: self.page,
            order: blocks.iter().map(|b| b.unit.clone()).collect(),
            groups: blocks.iter().flat_map(|b| b.pairs.iter().cloned()).collect(),
        };
        (PageIr::new(self.page), pt, next_carry, pending_split, blocks)
    }

    fn fill(&mut self, x0: f64, x1: f64, mut y: f64, bottom: f64, flow: usize, out: &mut Vec<Block>) -> f64 {
        let Some(dist) = self.kinds.clone() else { return y };
        let mut misses = 0;
        while bottom - y >= 0.025 && misses < 4 {
            let kind = KINDS[dist.sample(&mut self.rng)];
            match self.block(kind, x0, x1, y, bottom - y, flow) {
                Some(b) => {
                    y = b.bottom + GAP;
                    out.push(b);
                }
                None => misses += 1,
            }
        }
        y
    }

    fn block(&mut self, kind: Kind, x0: f64, x1: f64, y: f64, avail: f64, flow: usize) -> Option<Block> {
        match kind {
            Kind::Paragraph => self.paragraph(x0, x1, y, avail, flow),
            Kind::SectionTitle => {
                let h = 0.025;
                if avail < h {
                    return None;
                }
                let n = self.number(3);
                let title = format!("{n} {}", capitalize(&self.words(3).join(" ")));
                let id = self.id();
                let d = Detection::new(id, C::SectionTitle, BoundingBox::new(x0, y, x0 + (x1 - x0) * 0.7, y + h))
                    .with_text(title.clone());
                let mut b = Block::single(d, flow, y + h);
                b.outline = Some(OutlineEntry {
                    level: 1,
                    title,
                    page_index: self.page,
                });
                Some(b)
            }
            Kind::Table => self.table(x0, x1, y, avail, flow),
            Kind::Formula => {
                let h = self.rng.random_range(0.035..0.05);
                if avail < h {
                    return None;
                }
                let id = self.id();
                let n = self.number(2);
                let hint = self.hint();
                let latex = self.pick(LATEX);
                let f = Detection::new(id.clone(), C::Formula, BoundingBox::new(x0 + 0.02, y, x1 - 0.07, y + h))
                    .with_payload(ContentPayload::Latex { latex })
                    .with_hint(hint.clone());
                let mid = y + h / 2.0;
                let fid = Detection::new(format!("{id}q"), C::FormulaId, BoundingBox::new(x1 - 0.045, mid - 0.008, x1, mid + 0.008))
                    .with_text(format!("({n})"))
                    .with_hint(hint);
                Some(self.group(id, f, vec![fid], flow, y + h))
            }
            Kind::Figure | Kind::Image | Kind::Chart | Kind::Reaction => {
                let (lo, hi) = if kind == Kind::Reaction { (0.07, 0.1) } else { (0.1, 0.18) };
                let mut h = self.rng.random_range(lo..hi);
                if h + TIGHT + CAPTION > avail {
                    h = avail - TIGHT - CAPTION;
                }
                if h < 0.07 {
                    return None;
                }
                let w = x1 - x0;
                Some(self.visual(kind, x0 + 0.1 * w, x1 - 0.1 * w, x0, x1, y, h, flow))
            }
            Kind::Molecule => {
                let h = self.rng.random_range(0.07..0.1);
                if h + 0.02 > avail {
                    return None;
                }
                let w = x1 - x0;
                let (mx0, mx1) = (x0 + 0.25 * w, x1 - 0.25 * w);
                let id = self.id();
                let hint = self.hint();
                let n = self.number(1);
                let smiles = self.pick(SMILES);
                let m = Detection::new(id.clone(), C::Molecule, BoundingBox::new(mx0, y, mx1, y + h))
                    .with_payload(ContentPayload::ESmiles { smiles })
                    .with_hint(hint.clone());
                let label = Detection::new(format!("{id}m"), C::MoleculeIdentifier, BoundingBox::new(mx0, y + h + 0.005, mx1, y + h + 0.02))
                    .with_text(format!("{n}a"))
                    .with_hint(hint);
                Some(self.group(id, m, vec![label], flow, y + h + 0.02))
            }
            Kind::Other => {
                let h = self.rng.random_range(0.04..0.07_f64).min(avail);
                if h < 0.04 {
                    return None;
                }
                let cat = [C::CodeBlock, C::KeyValueItem, C::Footnote, C::References][self.rng.random_range(0..4)];
                let text = match cat {
                    C::CodeBlock => format!("let {} = {};", self.pick(WORDS), self.rng.random_range(0..100)),
                    C::KeyValueItem => format!("{}: {}", capitalize(&self.pick(WORDS)), self.rng.random_range(0..1000)),
                    C::References => format!("[{}] {}", self.rng.random_range(1..40), self.sentence(6)),
                    _ => self.sentence(8),
                };
                let id = self.id();
                let d = Detection::new(id, cat, BoundingBox::new(x0, y, x1, y + h)).with_text(text);
                Some(Block::single(d, flow, y + h))
            }
        }
    }

    fn group(&mut self, unit: String, anchor: Detection, partners: Vec<Detection>, flow: usize, bottom: f64) -> Block {
        let pairs = partners.iter().map(|p| (anchor.id.clone(), p.id.clone())).collect();
        let mut dets = vec![anchor];
        dets.extend(partners);
        Block {
            unit,
            dets,
            pairs,
            flow,
            mergeable: false,
            inline: Vec::new(),
            outline: None,
            bottom,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn visual(&mut self, kind: Kind, ax0: f64, ax1: f64, cx0: f64, cx1: f64, y: f64, h: f64, flow: usize) -> Block {
        let id = self.id();
        let hint = self.hint();
        let n = self.number(0);
        let desc = self.words(4).join(" ");
        let bbox = BoundingBox::new(ax0, y, ax1, y + h);
        let anchor = match kind {
            Kind::Chart => {
                let rows = vec![
                    vec!["x".to_string(), "y".to_string()],
                    vec!["1".to_string(), self.rng.random_range(0..50).to_string()],
                    vec!["2".to_string(), self.rng.random_range(0..50).to_string()],
                ];
                Detection::new(id.clone(), C::Chart, bbox).with_payload(ContentPayload::ChartTable {
                    table: TableGrid::from_rows(&rows),
                })
            }
            Kind::Reaction => {
                let (r, p) = (self.pick(SMILES), self.pick(SMILES));
                Detection::new(id.clone(), C::ChemicalReaction, bbox).with_payload(ContentPayload::Reaction {
                    reactants: vec![r],
                    conditions: vec![format!("{} C", self.rng.random_range(20..120))],
                    products: vec![p],
                })
            }
            Kind::Image => Detection::new(id.clone(), C::Image, bbox).with_text(format!("a photo of the {desc}")),
            _ => Detection::new(id.clone(), C::Figure, bbox).with_text(format!("a plot of the {desc}")),
        };
        let caption = Detection::new(
            format!("{id}c"),
            C::Caption,
            BoundingBox::new(cx0, y + h + TIGHT, cx1, y + h + TIGHT + CAPTION),
        )
        .with_text(format!("Figure {n}: {}", self.sentence(5)))
        .with_hint(hint.clone());
        self.group(id, anchor.with_hint(hint), vec![caption], flow, y + h + TIGHT + CAPTION)
    }

    /// A full-width figure or table between two column flows.
    fn slot(&mut self, y: f64, h: f64) -> Block {
        if self.spec.mix.table > 0.0 && self.rng.random_bool(0.3) {
            let rows = ((h - CAPTION - TIGHT) / ROW).floor() as usize;
            let mut b = self.table_block((LEFT, RIGHT), y, rows.clamp(3, 8), 0, None, false);
            b.bottom = b.bottom.max(y);
            // keep the reserved extent so the next flow starts where planned
            b
        } else {
            let kind = if self.rng.random_bool(0.5) { Kind::Figure } else { Kind::Chart };
            self.visual(kind, 0.2, 0.8, 0.15, 0.85, y, h, 0)
        }
    }

    fn paragraph(&mut self, x0: f64, x1: f64, y: f64, avail: f64, flow: usize) -> Option<Block> {
        if avail < 0.04 {
            return None;
        }
        let h = self.rng.random_range(0.05..0.14_f64).min(avail);
        let max_k = (((h - 0.006) / LINE).floor() as usize).min(3);
        let k = if max_k >= 1 && self.rng.random_bool(self.spec.inline_prob) {
            self.rng.random_range(1..=max_k)
        } else {
            0
        };
        let n_words = ((h / 0.004) as usize).max(8) + self.rng.random_range(0..8);
        let mut words = self.words(n_words);
        words[0] = capitalize(&words[0]);
        let mut slots: Vec<usize> = (1..n_words).collect();
        slots.shuffle(&mut self.rng);
        let mut at: Vec<usize> = slots.into_iter().take(k).collect();
        at.sort_unstable();
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            if at.contains(&i) {
                text.push(OBJECT_MARKER);
                text.push(' ');
            }
            text.push_str(w);
            text.push(if i + 1 == n_words { '.' } else { ' ' });
        }
        let id = self.id();
        let mut dets = vec![Detection::new(id.clone(), C::Paragraph, BoundingBox::new(x0, y, x1, y + h)).with_text(text)];
        let mut inline = Vec::new();
        for i in 0..k {
            let yc = y + LINE * (i as f64 + 1.0);
            let cx = self.rng.random_range(x0 + 0.03..x1 - 0.03);
            let child_id = format!("{id}.i{i}");
            dets.push(self.inline_object(child_id.clone(), BoundingBox::new(cx - 0.02, yc - 0.006, cx + 0.02, yc + 0.006)));
            inline.push(InlineTruth {
                parent: id.clone(),
                child: child_id,
                slot: InlineSlot::Text { ordinal: i },
            });
        }
        Some(Block {
            unit: id,
            dets,
            pairs: Vec::new(),
            flow,
            mergeable: k == 0,
            inline,
            outline: None,
            bottom: y + h,
        })
    }

    fn inline_object(&mut self, id: String, bbox: BoundingBox) -> Detection {
        if self.rng.random_bool(0.7) {
            let latex = self.pick(LATEX);
            Detection::new(id, C::FormulaInline, bbox).with_payload(ContentPayload::Latex { latex })
        } else {
            let smiles = self.pick(SMILES);
            Detection::new(id, C::Molecule, bbox).with_payload(ContentPayload::ESmiles { smiles })
        }
    }

    fn table_rows(&mut self, rows: usize, cols: usize) -> Vec<Vec<String>> {
        let mut out = vec![(0..cols).map(|c| format!("{} {c}", capitalize(&self.pick(WORDS)))).collect::<Vec<_>>()];
        for _ in 1..rows {
            out.push(
                (0..cols)
                    .map(|_| format!("{:.1}", self.rng.random_range(0.0..100.0_f64)))
                    .collect(),
            );
        }
        out
    }

    fn table(&mut self, x0: f64, x1: f64, y: f64, avail: f64, flow: usize) -> Option<Block> {
        let note = self.rng.random_bool(0.25);
        let fit = ((avail - CAPTION - TIGHT - if note { 0.02 } else { 0.0 }) / ROW).floor();
        if fit < 3.0 {
            return None;
        }
        let rows = self.rng.random_range(3..=8).min(fit as usize);
        Some(self.table_block((x0, x1), y, rows, flow, None, note))
    }

    /// Caption above, grid, optional footnote below. With `given`, the rows
    /// are fixed and no inline object is added.
    fn table_block(
        &mut self,
        (x0, x1): (f64, f64),
        y: f64,
        rows: usize,
        flow: usize,
        given: Option<Vec<Vec<String>>>,
        note: bool,
    ) -> Block {
        let max_cols = if x1 - x0 < 0.3 { 3 } else { 5 };
        let fixed = given.is_some();
        let mut grid_rows = given.unwrap_or_else(|| {
            let cols = self.rng.random_range(2..=max_cols);
            self.table_rows(rows, cols)
        });
        let rows = grid_rows.len();
        let cols = grid_rows[0].len();
        let id = self.id();
        let hint = self.hint();
        let n = self.number(1);
        let caption = Detection::new(format!("{id}c"), C::Caption, BoundingBox::new(x0, y, x1, y + CAPTION))
            .with_text(format!("Table {n}: {}", self.sentence(4)))
            .with_hint(hint.clone());
        let ty = y + CAPTION + TIGHT;
        let tb = ty + rows as f64 * ROW;
        let mut inline = Vec::new();
        let mut children = Vec::new();
        if !fixed && rows > 1 && self.rng.random_bool(self.spec.table_inline_prob) {
            let r = self.rng.random_range(1..rows);
            let c = self.rng.random_range(0..cols);
            grid_rows[r][c] = OBJECT_MARKER.to_string();
            let cx = x0 + (c as f64 + 0.5) / cols as f64 * (x1 - x0);
            let cy = ty + (r as f64 + 0.5) * ROW;
            let child_id = format!("{id}.i0");
            children.push(self.inline_object(child_id.clone(), BoundingBox::new(cx - 0.015, cy - 0.006, cx + 0.015, cy + 0.006)));
            inline.push(InlineTruth {
                parent: id.clone(),
                child: child_id,
                slot: InlineSlot::Cell { row: r, col: c },
            });
        }
        let table = Detection::new(id.clone(), C::Table, BoundingBox::new(x0, ty, x1, tb))
            .with_payload(ContentPayload::TableGrid(TableGrid::from_rows(&grid_rows)))
            .with_hint(hint.clone());
        let mut partners = vec![caption];
        let mut bottom = tb;
        if note {
            partners.push(
                Detection::new(format!("{id}n"), C::TableFootnote, BoundingBox::new(x0, tb + 0.005, x0 + 0.6 * (x1 - x0), tb + 0.02))
                    .with_text("Values are means of three runs.")
                    .with_hint(hint),
            );
            bottom = tb + 0.02;
        }
        let mut b = self.group(id, table, partners, flow, bottom);
        b.dets.extend(children);
        b.inline = inline;
        b
    }

    /// The first part of a block that continues on the next page, filling
    /// the column from `y` to `bottom`.
    fn split_first(&mut self, kind: SplitKind, x0: f64, x1: f64, y: f64, bottom: f64, flow: usize) -> (Block, Carry) {
        match kind {
            SplitKind::Table => {
                let fit = (((bottom - y - CAPTION - TIGHT) / ROW).floor() as usize).max(2);
                let max_cols = if x1 - x0 < 0.3 { 3 } else { 5 };
                let cols = self.rng.random_range(2..=max_cols);
                let first_rows = fit.min(6);
                let total = first_rows + self.rng.random_range(1..=4);
                let all = self.table_rows(total, cols);
                let number = self.counters[1] + 1;
                let b = self.table_block((x0, x1), y, first_rows, flow, Some(all[..first_rows].to_vec()), false);
                let carry = Carry::Table {
                    first: b.unit.clone(),
                    rows: all[first_rows..].to_vec(),
                    cells: total * cols,
                    number,
                };
                (b, carry)
            }
            SplitKind::Paragraph => {
                let h = (bottom - y).min(0.12);
                let n1 = ((h / 0.004) as usize).max(6);
                let n2 = self.rng.random_range(6..20);
                let mut words = self.words(n1 + n2);
                words[0] = capitalize(&words[0]);
                let first_text = words[..n1].join(" ");
                let text = words.join(" ") + ".";
                let id = self.id();
                let d = Detection::new(id.clone(), C::Paragraph, BoundingBox::new(x0, y, x1, y + h)).with_text(first_text);
                let carry = Carry::Paragraph {
                    first: id,
                    words: words[n1..].to_vec(),
                    text,
                };
                (Block::single(d, flow, y + h), carry)
            }
        }
    }

    fn continuation(&mut self, carry: Carry, x0: f64, x1: f64, y: f64, flow: usize) -> (Block, Option<SplitTruth>) {
        match carry {
            Carry::Table {
                first,
                rows,
                cells,
                number,
            } => {
                let id = self.id();
                let mut dets = Vec::new();
                let mut pairs = Vec::new();
                let mut ty = y;
                let grid = ContentPayload::TableGrid(TableGrid::from_rows(&rows));
                if self.rng.random_bool(0.5) {
                    let hint = self.hint();
                    let cap = Detection::new(format!("{id}c"), C::Caption, BoundingBox::new(x0, y, x1, y + CAPTION))
                        .with_text(format!("Table {number} (continued)"))
                        .with_hint(hint.clone());
                    pairs.push((id.clone(), cap.id.clone()));
                    ty = y + CAPTION + TIGHT;
                    dets.push(
                        Detection::new(id.clone(), C::Table, BoundingBox::new(x0, ty, x1, ty + rows.len() as f64 * ROW))
                            .with_payload(grid)
                            .with_hint(hint),
                    );
                    dets.push(cap);
                } else {
                    dets.push(
                        Detection::new(id.clone(), C::Table, BoundingBox::new(x0, ty, x1, ty + rows.len() as f64 * ROW))
                            .with_payload(grid),
                    );
                }
                let bottom = ty + rows.len() as f64 * ROW;
                let split = SplitTruth {
                    kind: SplitKind::Table,
                    first,
                    second: id.clone(),
                    cells,
                    text: None,
                };
                let b = Block {
                    unit: id,
                    dets,
                    pairs,
                    flow,
                    mergeable: false,
                    inline: Vec::new(),
                    outline: None,
                    bottom,
                };
                (b, Some(split))
            }
            Carry::Paragraph { first, words, text } => {
                let id = self.id();
                let h = 0.04 + 0.002 * words.len() as f64;
                let d = Detection::new(id.clone(), C::Paragraph, BoundingBox::new(x0, y, x1, y + h))
                    .with_text(words.join(" ") + ".");
                let split = SplitTruth {
                    kind: SplitKind::Paragraph,
                    first,
                    second: id,
                    cells: 0,
                    text: Some(text),
                };
                (Block::single(d, flow, y + h), Some(split))
            }
        }
    }

    fn perturb(&mut self, blocks: &mut Vec<Block>) {
        let spec = self.spec;
        if spec.merge_prob > 0.0 {
            let mut out: Vec<Block> = Vec::with_capacity(blocks.len());
            for b in blocks.drain(..) {
                if let Some(prev) = out.last_mut() {
                    if prev.mergeable && b.mergeable && prev.flow == b.flow && self.rng.random_bool(spec.merge_prob) {
                        let (a, other) = (&mut prev.dets[0], &b.dets[0]);
                        a.bbox = a.bbox.union(&other.bbox);
                        let joined = format!(
                            "{} {}",
                            a.truth_text.as_deref().unwrap_or(""),
                            other.truth_text.as_deref().unwrap_or("")
                        );
                        a.truth_text = Some(joined);
                        prev.mergeable = false;
                        continue;
                    }
                }
                out.push(b);
            }
            *blocks = out;
        }
        if spec.substitution_prob > 0.0 {
            for det in blocks.iter_mut().flat_map(|b| b.dets.iter_mut()) {
                if !self.rng.random_bool(spec.substitution_prob) {
                    continue;
                }
                match det.category {
                    C::FormulaInline => {
                        det.category = C::Molecule;
                        det.truth_payload = Some(ContentPayload::ESmiles {
                            smiles: SMILES[self.rng.random_range(0..SMILES.len())].into(),
                        });
                    }
                    C::Molecule if det.group_hint.is_none() => {
                        det.category = C::FormulaInline;
                        det.truth_payload = Some(ContentPayload::Latex {
                            latex: LATEX[self.rng.random_range(0..LATEX.len())].into(),
                        });
                    }
                    C::Molecule => {
                        det.truth_payload = Some(ContentPayload::ESmiles {
                            smiles: SMILES[self.rng.random_range(0..SMILES.len())].into(),
                        });
                    }
                    C::Formula => {
                        det.truth_payload = Some(ContentPayload::Latex {
                            latex: LATEX[self.rng.random_range(0..LATEX.len())].into(),
                        });
                    }
                    _ => {}
                }
            }
        }
        if spec.jitter_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.jitter_sigma).expect("sigma checked non-negative");
            for det in blocks.iter_mut().flat_map(|b| b.dets.iter_mut()) {
                let b = det.bbox;
                let mut j = |v: f64| (v + normal.sample(&mut self.rng)).clamp(0.0, 1.0);
                let moved = BoundingBox::new(j(b.x0), j(b.y0), j(b.x1), j(b.y1));
                if moved.width() > 0.002 && moved.height() > 0.002 {
                    det.bbox = moved;
                }
            }
        }
        if !spec.group_hints {
            for det in blocks.iter_mut().flat_map(|b| b.dets.iter_mut()) {
                det.group_hint = None;
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
