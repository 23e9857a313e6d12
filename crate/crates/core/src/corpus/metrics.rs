use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GroundTruth, InlineSlot, SplitKind};
use crate::consolidate::FlowItem;
use crate::dispatch::{render_inline, NodeStatus, ResolvedNode};
use crate::docmodel::{ContentPayload, InlineItem};
use crate::format::ParsedDocument;

/// Levenshtein distance normalized by the longer sequence.
pub fn order_edit_distance<T: PartialEq>(pred: &[T], truth: &[T]) -> f64 {
    let n = pred.len().max(truth.len());
    if n == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=truth.len()).collect();
    let mut cur = vec![0; truth.len() + 1];
    for (i, p) in pred.iter().enumerate() {
        cur[0] = i + 1;
        for (j, t) in truth.iter().enumerate() {
            let sub = prev[j] + usize::from(p != t);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[truth.len()] as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn unordered(pairs: &[(String, String)]) -> BTreeSet<(&str, &str)> {
    pairs
        .iter()
        .map(|(a, b)| if a <= b { (a.as_str(), b.as_str()) } else { (b.as_str(), a.as_str()) })
        .collect()
}

/// Pair-level precision, recall and F1 over unordered pairs. Both sides
/// empty counts as a perfect score; an empty prediction against a non-empty
/// truth scores zero.
pub fn grouping_f1(pred: &[(String, String)], truth: &[(String, String)]) -> GroupingScore {
    let (p, t) = (unordered(pred), unordered(truth));
    if p.is_empty() && t.is_empty() {
        return GroupingScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let hit = p.intersection(&t).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { hit / p.len() as f64 };
    let recall = if t.is_empty() { 0.0 } else { hit / t.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    GroupingScore { precision, recall, f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageScore {
    pub doc_id: String,
    pub page_index: usize,
    pub edit_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub tables: usize,
    pub tables_merged: usize,
    pub cells_conserved: usize,
    pub paragraphs: usize,
    pub paragraphs_merged: usize,
    pub text_conserved: usize,
}

impl SplitScore {
    /// Every split merged with its content conserved.
    pub fn all_conserved(&self) -> bool {
        self.tables_merged == self.tables
            && self.cells_conserved == self.tables
            && self.paragraphs_merged == self.paragraphs
            && self.text_conserved == self.paragraphs
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InlineScore {
    pub expected: usize,
    pub placed: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub misplaced: Vec<String>,
}

impl InlineScore {
    pub fn rate(&self) -> f64 {
        if self.expected == 0 {
            1.0
        } else {
            self.placed as f64 / self.expected as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub docs: usize,
    pub pages: usize,
    pub missing_docs: Vec<String>,
    pub mean_edit_distance: f64,
    pub grouping: GroupingScore,
    pub splits: SplitScore,
    pub inline: InlineScore,
    pub tokens_emitted: usize,
    pub tokens_resolved: usize,
    pub per_page: Vec<PageScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn by_id(outputs: &[ParsedDocument]) -> BTreeMap<&str, &ParsedDocument> {
    outputs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

/// Scores parsed outputs against corpus truth. Documents without an output
/// are listed and count as maximally wrong.
pub fn evaluate(outputs: &[ParsedDocument], truth: &GroundTruth) -> EvalReport {
    let out = by_id(outputs);
    let mut per_page = Vec::new();
    let mut missing = Vec::new();
    let (mut pred_pairs, mut truth_pairs) = (Vec::new(), Vec::new());
    let (mut emitted, mut resolved) = (0, 0);
    for dt in &truth.docs {
        let doc = out.get(dt.doc_id.as_str());
        if doc.is_none() {
            missing.push(dt.doc_id.clone());
        }
        if let Some(d) = doc {
            emitted += d.tokens.emitted;
            resolved += d.tokens.resolved;
        }
        for pt in &dt.pages {
            let meta = doc.and_then(|d| d.pages.iter().find(|m| m.page_index == pt.page_index));
            let edit_distance = match meta {
                Some(m) => order_edit_distance(&m.order, &pt.order),
                None => 1.0,
            };
            if let Some(m) = meta {
                pred_pairs.extend(m.groups.iter().map(|(a, b)| (format!("{}/{a}", dt.doc_id), format!("{}/{b}", dt.doc_id))));
            }
            truth_pairs.extend(pt.groups.iter().map(|(a, b)| (format!("{}/{a}", dt.doc_id), format!("{}/{b}", dt.doc_id))));
            per_page.push(PageScore {
                doc_id: dt.doc_id.clone(),
                page_index: pt.page_index,
                edit_distance,
            });
        }
    }
    let mean = if per_page.is_empty() {
        0.0
    } else {
        per_page.iter().map(|p| p.edit_distance).sum::<f64>() / per_page.len() as f64
    };
    EvalReport {
        docs: truth.docs.len(),
        pages: per_page.len(),
        missing_docs: missing,
        mean_edit_distance: mean,
        grouping: grouping_f1(&pred_pairs, &truth_pairs),
        splits: split_check(outputs, truth),
        inline: inline_check(outputs, truth),
        tokens_emitted: emitted,
        tokens_resolved: resolved,
        per_page,
    }
}

fn cell_count(item: &FlowItem) -> Option<usize> {
    match &item.anchor_node().payload {
        Some(ContentPayload::TableGrid(g)) => Some(g.rows * g.cols),
        _ => None,
    }
}

/// Checks that each split entity came out as one item holding both parts,
/// with its cells or text intact.
pub fn split_check(outputs: &[ParsedDocument], truth: &GroundTruth) -> SplitScore {
    let out = by_id(outputs);
    let mut s = SplitScore::default();
    for dt in &truth.docs {
        let items = out.get(dt.doc_id.as_str()).map(|d| d.root.items()).unwrap_or_default();
        for split in &dt.splits {
            let merged = items
                .iter()
                .find(|i| i.id == split.first && i.merged_ids.contains(&split.second));
            match split.kind {
                SplitKind::Table => {
                    s.tables += 1;
                    if let Some(i) = merged {
                        s.tables_merged += 1;
                        if cell_count(i) == Some(split.cells) {
                            s.cells_conserved += 1;
                        }
                    }
                }
                SplitKind::Paragraph => {
                    s.paragraphs += 1;
                    if let Some(i) = merged {
                        s.paragraphs_merged += 1;
                        if split.text.as_deref() == Some(i.anchor_node().text().as_str()) {
                            s.text_conserved += 1;
                        }
                    }
                }
            }
        }
    }
    s
}

fn collect_nodes<'a>(n: &'a ResolvedNode, into: &mut BTreeMap<&'a str, &'a ResolvedNode>) {
    into.insert(n.id.as_str(), n);
    for c in &n.children {
        collect_nodes(c, into);
    }
}

/// Checks every inline child against its recorded slot: the n-th rendered
/// span of the parent's text, or the object reference in a table cell.
pub fn inline_check(outputs: &[ParsedDocument], truth: &GroundTruth) -> InlineScore {
    let out = by_id(outputs);
    let mut s = InlineScore::default();
    for dt in &truth.docs {
        let mut nodes = BTreeMap::new();
        if let Some(d) = out.get(dt.doc_id.as_str()) {
            for item in d.root.items() {
                for m in &item.members {
                    collect_nodes(m, &mut nodes);
                }
            }
        }
        for t in &dt.inline {
            s.expected += 1;
            let ok = match (nodes.get(t.parent.as_str()), nodes.get(t.child.as_str())) {
                (Some(parent), Some(child)) => placed(parent, child, &t.slot),
                _ => false,
            };
            if ok {
                s.placed += 1;
            } else {
                s.misplaced.push(format!("{}/{}", dt.doc_id, t.child));
            }
        }
    }
    s
}

fn placed(parent: &ResolvedNode, child: &ResolvedNode, slot: &InlineSlot) -> bool {
    if parent.status != NodeStatus::Resolved {
        return false;
    }
    match slot {
        InlineSlot::Text { ordinal } => {
            let mut spans: Vec<_> = parent.inline_spans.iter().collect();
            spans.sort_by_key(|sp| sp.start);
            let text = parent.text();
            spans.get(*ordinal).is_some_and(|sp| {
                sp.id == child.id && text.get(sp.start..sp.end) == Some(render_inline(child).as_str())
            })
        }
        InlineSlot::Cell { row, col } => match &parent.payload {
            Some(ContentPayload::TableGrid(g)) => g
                .cell_at(*row, *col)
                .is_some_and(|i| g.cells[i].content.contains(&InlineItem::Object(child.id.clone()))),
            _ => false,
        },
    }
}
