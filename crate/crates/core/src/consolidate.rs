//! Document-level assembly: text-flow merging across columns and pages,
//! cross-page table and reaction continuation, late multimodal linking and
//! section integration.
//!
//! Continuity cues are lexical: terminal punctuation, a trailing hyphen and
//! the case of the next fragment's first letter.

use serde::{Deserialize, Serialize};

use crate::config::ConsolidateConfig;
use crate::dispatch::{InlineSpan, NodeStatus, ResolvedNode};
use crate::docmodel::{BoundingBox, ContentPayload, InlineItem, OutlineEntry, SemanticCategory};
use crate::layout::{relation_for, GroupLink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub page_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// One element of the document-level reading sequence: a reading-order unit
/// with resolved payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowItem {
    pub id: String,
    pub page_index: usize,
    /// Last page this item spans, after cross-page merges.
    pub last_page: usize,
    pub category: SemanticCategory,
    /// Unit members in reading order; the anchor (or sole member) is `members[anchor]`.
    pub members: Vec<ResolvedNode>,
    pub anchor: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_ids: Vec<String>,
    pub provenance: Vec<Provenance>,
}

impl FlowItem {
    pub fn new(members: Vec<ResolvedNode>, anchor_id: &str) -> Self {
        let anchor = members
            .iter()
            .position(|m| m.id == anchor_id)
            .expect("anchor among members");
        let a = &members[anchor];
        let provenance = members
            .iter()
            .map(|m| Provenance {
                id: m.id.clone(),
                page_index: m.page_index,
                bbox: m.bbox,
            })
            .collect();
        Self {
            id: a.id.clone(),
            page_index: a.page_index,
            last_page: a.page_index,
            category: a.category,
            anchor,
            members,
            merged_ids: Vec::new(),
            provenance,
        }
    }

    pub fn anchor_node(&self) -> &ResolvedNode {
        &self.members[self.anchor]
    }

    fn anchor_mut(&mut self) -> &mut ResolvedNode {
        &mut self.members[self.anchor]
    }

    pub fn is_grouped(&self) -> bool {
        self.members.len() > 1
    }

    /// Text of all members joined by newlines.
    pub fn text(&self) -> String {
        self.members
            .iter()
            .map(ResolvedNode::text)
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Text of the sole paragraph member, when this item is a plain paragraph.
    fn paragraph_text(&self) -> Option<&str> {
        if self.category != SemanticCategory::Paragraph || self.members.len() != 1 {
            return None;
        }
        match &self.members[0].payload {
            Some(ContentPayload::Text { text }) if self.members[0].status == NodeStatus::Resolved => {
                Some(text)
            }
            _ => None,
        }
    }

    fn absorb_ids(&mut self, other: &FlowItem) {
        self.merged_ids.push(other.id.clone());
        self.merged_ids.extend(other.merged_ids.iter().cloned());
        self.provenance.extend(other.provenance.iter().cloned());
        self.last_page = self.last_page.max(other.last_page);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Join {
    Space,
    NoSpace,
    DropHyphen,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0xAC00..=0xD7AF)
}

/// How (and whether) `second` continues `first`.
fn continuity(first: &str, second: &str, cfg: &ConsolidateConfig, cjk: bool) -> Option<Join> {
    let a = first.trim_end();
    let b = second.trim_start();
    let last = a.chars().last()?;
    let next = b.chars().next()?;
    if last == '-' {
        let before = a.chars().rev().nth(1)?;
        return (before.is_alphabetic() && next.is_lowercase()).then_some(Join::DropHyphen);
    }
    if cjk {
        let terminal = cfg.terminal_punctuation.contains(last) || "。！？：；".contains(last);
        return (!terminal && (is_cjk(next) || next.is_lowercase())).then_some(Join::NoSpace);
    }
    if cfg.terminal_punctuation.contains(last) {
        return None;
    }
    next.is_lowercase().then_some(Join::Space)
}

/// Appends `second`'s paragraph into `first`, shifting inline spans.
fn join_paragraphs(first: &mut FlowItem, second: &FlowItem, join: Join) {
    let other = &second.members[0];
    let ContentPayload::Text { text: t2 } = other.payload.as_ref().expect("paragraph payload") else {
        unreachable!("checked by paragraph_text")
    };
    let node = first.anchor_mut();
    let Some(ContentPayload::Text { text: t1 }) = node.payload.as_mut() else {
        unreachable!("checked by paragraph_text")
    };
    let kept = t1.trim_end().len();
    t1.truncate(kept);
    if join == Join::DropHyphen {
        t1.pop();
    } else if join == Join::Space {
        t1.push(' ');
    }
    let lead = t2.len() - t2.trim_start().len();
    let offset = t1.len();
    t1.push_str(&t2[lead..]);
    node.inline_spans.extend(other.inline_spans.iter().map(|s| InlineSpan {
        start: s.start - lead + offset,
        end: s.end - lead + offset,
        id: s.id.clone(),
    }));
    node.children.extend(other.children.iter().cloned());
    first.absorb_ids(second);
}

fn try_text_merge(first: &mut FlowItem, second: &FlowItem, cfg: &ConsolidateConfig, cjk: bool) -> bool {
    let (Some(a), Some(b)) = (first.paragraph_text(), second.paragraph_text()) else {
        return false;
    };
    match continuity(a, b, cfg, cjk) {
        Some(join) => {
            join_paragraphs(first, second, join);
            true
        }
        None => false,
    }
}

/// Merges adjacent paragraph fragments on the same page.
pub fn merge_cross_column(items: Vec<FlowItem>, cfg: &ConsolidateConfig, cjk: bool) -> Vec<FlowItem> {
    let mut out: Vec<FlowItem> = Vec::with_capacity(items.len());
    for item in items {
        if let Some(prev) = out.last_mut() {
            if prev.last_page == item.page_index && try_text_merge(prev, &item, cfg, cjk) {
                continue;
            }
        }
        out.push(item);
    }
    out
}

const CONTINUED: &str = "(continued)";

fn table_grid(item: &FlowItem) -> Option<&crate::docmodel::TableGrid> {
    if item.category != SemanticCategory::Table {
        return None;
    }
    match &item.anchor_node().payload {
        Some(ContentPayload::TableGrid(g)) => Some(g),
        _ => None,
    }
}

fn caption_text(item: &FlowItem) -> Option<String> {
    item.members
        .iter()
        .filter(|m| m.category == SemanticCategory::Caption)
        .map(ResolvedNode::text)
        .next()
}

fn try_table_merge(first: &mut FlowItem, second: &FlowItem) -> bool {
    let (Some(g1), Some(g2)) = (table_grid(first), table_grid(second)) else {
        return false;
    };
    if g1.cols != g2.cols {
        return false;
    }
    let continued = match caption_text(second) {
        None => true,
        Some(c) => c.to_lowercase().contains(CONTINUED),
    };
    if !continued {
        return false;
    }
    let g2 = g2.clone();
    let node = first.anchor_mut();
    let Some(ContentPayload::TableGrid(g1)) = node.payload.as_mut() else {
        unreachable!()
    };
    let shift = g1.rows;
    g1.rows += g2.rows;
    g1.cells.extend(g2.cells.into_iter().map(|mut c| {
        c.row += shift;
        c
    }));
    let second_anchor = second.anchor_node();
    node.children.extend(second_anchor.children.iter().cloned());
    // the continuation's own caption and notes stay with the merged table
    let extra: Vec<ResolvedNode> = second
        .members
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != second.anchor)
        .map(|(_, m)| m.clone())
        .collect();
    first.members.extend(extra);
    first.absorb_ids(second);
    true
}

fn try_reaction_merge(first: &mut FlowItem, second: &FlowItem) -> bool {
    if first.category != SemanticCategory::ChemicalReaction
        || second.category != SemanticCategory::ChemicalReaction
    {
        return false;
    }
    let (h1, h2) = (&first.anchor_node().group_hint, &second.anchor_node().group_hint);
    if h1.is_none() || h1 != h2 {
        return false;
    }
    let Some(ContentPayload::Reaction {
        reactants: r2,
        conditions: c2,
        products: p2,
    }) = second.anchor_node().payload.clone()
    else {
        return false;
    };
    let Some(ContentPayload::Reaction {
        reactants,
        conditions,
        products,
    }) = first.anchor_mut().payload.as_mut()
    else {
        return false;
    };
    reactants.extend(r2);
    conditions.extend(c2);
    products.extend(p2);
    let extra: Vec<ResolvedNode> = second
        .members
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != second.anchor)
        .map(|(_, m)| m.clone())
        .collect();
    first.members.extend(extra);
    first.absorb_ids(second);
    true
}

/// Joins entities that continue from the last item of one page into the
/// first item of the next: running paragraphs, long tables and multi-step
/// reaction schemes.
pub fn merge_cross_page(items: Vec<FlowItem>, cfg: &ConsolidateConfig, cjk: bool) -> Vec<FlowItem> {
    let mut out: Vec<FlowItem> = Vec::with_capacity(items.len());
    let mut prev_page: Option<usize> = None;
    for item in items {
        let first_on_page = prev_page != Some(item.page_index);
        prev_page = Some(item.page_index);
        if let (true, Some(prev)) = (first_on_page, out.last_mut()) {
            if prev.last_page + 1 == item.page_index
                && (try_text_merge(prev, &item, cfg, cjk)
                    || try_table_merge(prev, &item)
                    || try_reaction_merge(prev, &item))
            {
                continue;
            }
        }
        out.push(item);
    }
    out
}

/// Links an unpaired anchor near the end of page p with a compatible unpaired
/// partner among the first two units of page p+1.
pub fn link_multimodal(items: Vec<FlowItem>) -> Vec<FlowItem> {
    use SemanticCategory::*;
    let mut items = items;
    let mut i = 0;
    while i < items.len() {
        let cat = items[i].category;
        let lone = !items[i].is_grouped() && items[i].anchor_node().links.is_empty();
        if !(matches!(cat, Molecule | Figure | Image) && lone) {
            i += 1;
            continue;
        }
        let page = items[i].last_page;
        let tail = items[i + 1..].iter().take_while(|x| x.page_index == page).count();
        if tail >= 2 {
            i += 1;
            continue;
        }
        let start = i + 1 + tail;
        let candidates = items[start..]
            .iter()
            .take_while(|x| x.page_index == page + 1)
            .take(2)
            .count();
        let anchor_hint = items[i].anchor_node().group_hint.clone();
        let found = (start..start + candidates).find(|&j| {
            let p = &items[j];
            let pn = p.anchor_node();
            !p.is_grouped()
                && pn.links.is_empty()
                && relation_for(cat, p.category).is_some()
                && match (&anchor_hint, &pn.group_hint) {
                    (Some(a), Some(b)) => a == b,
                    (None, None) => true,
                    _ => false,
                }
        });
        if let Some(j) = found {
            let partner = items.remove(j);
            let kind = relation_for(cat, partner.category).expect("checked");
            let mut pnode = partner.members[0].clone();
            pnode.links.push(GroupLink {
                kind,
                node_id: items[i].id.clone(),
            });
            let anchor = items[i].anchor_mut();
            anchor.links.push(GroupLink {
                kind,
                node_id: pnode.id.clone(),
            });
            anchor.links.sort_by(|a, b| a.node_id.cmp(&b.node_id));
            items[i].members.push(pnode);
            items[i].provenance.extend(partner.provenance);
            items[i].last_page = items[i].last_page.max(partner.last_page);
        }
        i += 1;
    }
    items
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionNode {
    pub level: u32,
    pub title: String,
    /// Flow item carrying the matched heading, when one was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_item: Option<String>,
    pub body: Vec<FlowItem>,
    pub children: Vec<SectionNode>,
}

impl SectionNode {
    pub fn root() -> Self {
        Self {
            level: 0,
            title: String::new(),
            title_item: None,
            body: Vec::new(),
            children: Vec::new(),
        }
    }

    /// Items in document order, depth-first.
    pub fn items(&self) -> Vec<&FlowItem> {
        let mut out: Vec<&FlowItem> = self.body.iter().collect();
        for c in &self.children {
            out.extend(c.items());
        }
        out
    }

    /// Sections in document order with their title paths (root excluded from paths).
    pub fn walk(&self) -> Vec<(Vec<String>, &SectionNode)> {
        fn rec<'a>(n: &'a SectionNode, path: Vec<String>, out: &mut Vec<(Vec<String>, &'a SectionNode)>) {
            out.push((path.clone(), n));
            for c in &n.children {
                let mut p = path.clone();
                p.push(c.title.clone());
                rec(c, p, out);
            }
        }
        let mut out = Vec::new();
        rec(self, Vec::new(), &mut out);
        out
    }
}

/// Case-folded title with whitespace runs collapsed.
pub fn normalize_title(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Builds the section tree from outline entries matched against section
/// headings (same normalized title, at most one page apart, in order).
pub fn integrate_sections(items: Vec<FlowItem>, outline: Option<&[OutlineEntry]>) -> SectionNode {
    let mut root = SectionNode::root();
    let Some(outline) = outline.filter(|o| !o.is_empty()) else {
        root.body = items;
        return root;
    };
    // match entries to item indices, monotonically
    let mut cursor = 0;
    let mut starts: Vec<Option<usize>> = Vec::with_capacity(outline.len());
    for entry in outline {
        let want = normalize_title(&entry.title);
        let hit = (cursor..items.len()).find(|&k| {
            let it = &items[k];
            it.category == SemanticCategory::SectionTitle
                && it.page_index.abs_diff(entry.page_index) <= 1
                && normalize_title(&it.text()) == want
        });
        if let Some(k) = hit {
            cursor = k + 1;
        }
        starts.push(hit);
    }
    let mut sections: Vec<SectionNode> = outline
        .iter()
        .map(|e| SectionNode {
            level: e.level,
            title: e.title.clone(),
            title_item: None,
            body: Vec::new(),
            children: Vec::new(),
        })
        .collect();
    // distribute items: each item goes to the last section whose start precedes it
    let mut owner: Option<usize> = None;
    let mut next_entry = 0;
    for (k, item) in items.into_iter().enumerate() {
        while next_entry < starts.len() {
            match starts[next_entry] {
                Some(s) if s <= k => {
                    owner = Some(next_entry);
                    sections[next_entry].title_item = Some(item.id.clone());
                    next_entry += 1;
                }
                Some(_) => break,
                // unmatched entries stay empty at their outline position
                None => next_entry += 1,
            }
        }
        match owner {
            Some(o) => sections[o].body.push(item),
            None => root.body.push(item),
        }
    }
    // nest by level
    let mut stack: Vec<SectionNode> = vec![root];
    for sec in sections {
        while stack.len() > 1 && stack.last().unwrap().level >= sec.level {
            let done = stack.pop().unwrap();
            stack.last_mut().unwrap().children.push(done);
        }
        stack.push(sec);
    }
    while stack.len() > 1 {
        let done = stack.pop().unwrap();
        stack.last_mut().unwrap().children.push(done);
    }
    stack.pop().unwrap()
}

/// Whole consolidation pass over per-page flow items in reading order.
pub fn consolidate(
    items: Vec<FlowItem>,
    outline: Option<&[OutlineEntry]>,
    cfg: &ConsolidateConfig,
    language_tag: &str,
) -> SectionNode {
    let cjk = cfg.cjk_for(language_tag);
    let items = merge_cross_column(items, cfg, cjk);
    let items = merge_cross_page(items, cfg, cjk);
    let items = link_multimodal(items);
    integrate_sections(items, outline)
}

/// Plain text of every table cell, in grid order, for conservation checks.
pub fn cell_texts(grid: &crate::docmodel::TableGrid) -> Vec<String> {
    grid.cells
        .iter()
        .map(|c| {
            c.content
                .iter()
                .map(|i| match i {
                    InlineItem::Text(t) | InlineItem::Placeholder(t) | InlineItem::Object(t) => t.as_str(),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::TableGrid;

    fn node(id: &str, cat: SemanticCategory, page: usize, payload: ContentPayload) -> ResolvedNode {
        ResolvedNode {
            id: id.into(),
            category: cat,
            page_index: page,
            bbox: BoundingBox::new(0.1, 0.1, 0.9, 0.2),
            modality: None,
            status: NodeStatus::Resolved,
            payload: Some(payload),
            error: None,
            inline_spans: vec![],
            children: vec![],
            links: vec![],
            group_hint: None,
        }
    }

    fn para(id: &str, page: usize, text: &str) -> FlowItem {
        FlowItem::new(vec![node(id, SemanticCategory::Paragraph, page, ContentPayload::text(text))], id)
    }

    fn title(id: &str, page: usize, text: &str) -> FlowItem {
        FlowItem::new(vec![node(id, SemanticCategory::SectionTitle, page, ContentPayload::text(text))], id)
    }

    fn table(id: &str, page: usize, rows: usize, cols: usize) -> FlowItem {
        let cells: Vec<Vec<String>> = (0..rows)
            .map(|r| (0..cols).map(|c| format!("{id}{r}.{c}")).collect())
            .collect();
        FlowItem::new(
            vec![node(id, SemanticCategory::Table, page, ContentPayload::TableGrid(TableGrid::from_rows(&cells)))],
            id,
        )
    }

    fn cfg() -> ConsolidateConfig {
        ConsolidateConfig::default()
    }

    fn texts(items: &[FlowItem]) -> Vec<String> {
        items.iter().map(FlowItem::text).collect()
    }

    #[test]
    fn hyphenated_word_rejoins() {
        let first = "The titration was per-";
        let second = "formed using a burette.";
        // hyphen-join oracle: drop the trailing hyphen, concatenate with no space
        let expect = format!("{}{}", &first[..first.len() - 1], second);
        let out = merge_cross_column(vec![para("a", 0, first), para("b", 0, second)], &cfg(), false);
        assert_eq!(texts(&out), vec![expect]);
        assert_eq!(out[0].merged_ids, vec!["b"]);
    }

    #[test]
    fn sentence_end_blocks_merge() {
        let out = merge_cross_column(
            vec![para("a", 0, "End of sentence."), para("b", 0, "New sentence here.")],
            &cfg(),
            false,
        );
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn lowercase_continuation_joins_with_one_space() {
        let out = merge_cross_column(
            vec![para("a", 0, "the reaction of "), para("b", 0, " the aldehyde proceeded")],
            &cfg(),
            false,
        );
        assert_eq!(texts(&out), vec!["the reaction of the aldehyde proceeded"]);
    }

    #[test]
    fn cjk_joins_without_space() {
        let out = merge_cross_column(vec![para("a", 0, "我们使用"), para("b", 0, "滴定法")], &cfg(), true);
        assert_eq!(texts(&out), vec!["我们使用滴定法"]);
    }

    #[test]
    fn page_boundary_paragraph_merge() {
        let out = merge_cross_page(
            vec![para("a", 0, "Viscosity was measured at"), para("b", 1, "room temperature.")],
            &cfg(),
            false,
        );
        assert_eq!(texts(&out), vec!["Viscosity was measured at room temperature."]);
        assert_eq!(out[0].last_page, 1);
    }

    #[test]
    fn page_boundary_requires_adjacent_pages_and_extremes() {
        let out = merge_cross_page(
            vec![para("a", 0, "measured at"), para("b", 2, "room temperature.")],
            &cfg(),
            false,
        );
        assert_eq!(out.len(), 2);
        let out = merge_cross_page(
            vec![para("a", 0, "measured at"), title("t", 1, "Results"), para("b", 1, "room temperature.")],
            &cfg(),
            false,
        );
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn split_table_rows_add_up() {
        let out = merge_cross_page(vec![table("t1", 0, 12, 5), table("t2", 1, 7, 5)], &cfg(), false);
        assert_eq!(out.len(), 1);
        let g = table_grid(&out[0]).unwrap();
        // row-count conservation oracle
        assert_eq!((g.rows, g.cols), (12 + 7, 5));
        assert_eq!(g.cells.len(), 12 * 5 + 7 * 5);
        assert!(g.check_tiling().is_ok());
        assert_eq!(out[0].merged_ids, vec!["t2"]);
    }

    #[test]
    fn column_mismatch_blocks_table_merge() {
        let out = merge_cross_page(vec![table("t1", 0, 3, 5), table("t2", 1, 3, 4)], &cfg(), false);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn captioned_continuation_needs_marker() {
        let mk = |cap: &str| {
            let mut t = table("t2", 1, 2, 3);
            t.members.push(node("c2", SemanticCategory::Caption, 1, ContentPayload::text(cap)));
            t
        };
        let out = merge_cross_page(vec![table("t1", 0, 2, 3), mk("Table 2. Yields")], &cfg(), false);
        assert_eq!(out.len(), 2);
        let out = merge_cross_page(vec![table("t1", 0, 2, 3), mk("Table 1 (Continued)")], &cfg(), false);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn merges_are_idempotent() {
        let items = vec![para("a", 0, "one two"), para("b", 0, "three four"), para("c", 1, "five.")];
        let once = merge_cross_page(merge_cross_column(items, &cfg(), false), &cfg(), false);
        let twice = merge_cross_page(merge_cross_column(once.clone(), &cfg(), false), &cfg(), false);
        assert_eq!(once, twice);
        assert_eq!(texts(&once), vec!["one two three four five."]);
    }

    fn lone(id: &str, cat: SemanticCategory, page: usize) -> FlowItem {
        FlowItem::new(vec![node(id, cat, page, ContentPayload::text(id))], id)
    }

    #[test]
    fn molecule_links_to_identifier_on_next_page() {
        let items = vec![
            para("p", 0, "Text."),
            lone("m", SemanticCategory::Molecule, 0),
            lone("id", SemanticCategory::MoleculeIdentifier, 1),
            para("q", 1, "More."),
        ];
        let out = link_multimodal(items);
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].members.len(), 2);
        assert_eq!(out[1].members[1].links[0].node_id, "m");
        assert_eq!(link_multimodal(out.clone()), out);
    }

    #[test]
    fn deep_partner_is_not_linked() {
        let items = vec![
            lone("m", SemanticCategory::Molecule, 0),
            para("a", 1, "A."),
            para("b", 1, "B."),
            lone("id", SemanticCategory::MoleculeIdentifier, 1),
        ];
        assert_eq!(link_multimodal(items).len(), 4);
    }

    fn outline(entries: &[(u32, &str, usize)]) -> Vec<OutlineEntry> {
        entries
            .iter()
            .map(|(l, t, p)| OutlineEntry {
                level: *l,
                title: t.to_string(),
                page_index: *p,
            })
            .collect()
    }

    #[test]
    fn outline_title_splits_sections() {
        let items = vec![
            para("intro", 2, "Intro."),
            title("h", 3, "2  METHODS"),
            para("m", 3, "We did things."),
        ];
        let ol = outline(&[(1, "2 Methods", 3), (1, "3 Missing", 4)]);
        let root = integrate_sections(items, Some(&ol));
        assert_eq!(root.body.len(), 1);
        assert_eq!(root.children.len(), 2);
        assert_eq!(root.children[0].title_item.as_deref(), Some("h"));
        assert_eq!(root.children[0].body.len(), 2);
        assert!(root.children[1].body.is_empty());
        assert_eq!(root.items().len(), 3);
    }

    #[test]
    fn nested_levels_and_no_outline() {
        let items = vec![title("a", 0, "A"), title("b", 0, "B"), para("x", 0, "x.")];
        let ol = outline(&[(1, "A", 0), (2, "B", 0)]);
        let root = integrate_sections(items.clone(), Some(&ol));
        assert_eq!(root.children.len(), 1);
        assert_eq!(root.children[0].children.len(), 1);
        assert_eq!(root.children[0].children[0].body.len(), 2);
        let flat = integrate_sections(items, None);
        assert_eq!(flat.body.len(), 3);
        assert!(flat.children.is_empty());
    }
}
