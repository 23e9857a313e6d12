//! Output formats: canonical structured dump, Markdown, HTML, interleaved
//! image-text records and section-aware chunks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::consolidate::{FlowItem, SectionNode};
use crate::dispatch::{render_cell_item, render_inline, NodeStatus, ResolvedNode, TokenStats};
use crate::docmodel::{ContentPayload, InlineItem, SemanticCategory, TableGrid};
use crate::layout::RelationKind;

pub const OUTPUT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageMeta {
    pub page_index: usize,
    /// Unit ids in recovered reading order.
    #[serde(default)]
    pub order: Vec<String>,
    /// Linked anchor/partner id pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub page_numbers: Vec<String>,
    /// Detections dropped by functional filtering.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The engine's final result for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub version: String,
    pub doc_id: String,
    pub language_tag: String,
    pub root: SectionNode,
    pub pages: Vec<PageMeta>,
    pub tokens: TokenStats,
    /// Tasks that ended in failure.
    pub failed_tasks: Vec<String>,
}

impl ParsedDocument {
    pub fn empty(doc_id: impl Into<String>) -> Self {
        Self {
            version: OUTPUT_VERSION.into(),
            doc_id: doc_id.into(),
            language_tag: "en".into(),
            root: SectionNode::root(),
            pages: Vec::new(),
            tokens: TokenStats::default(),
            failed_tasks: Vec::new(),
        }
    }
}

/// Canonical dump: pretty JSON in declaration key order plus a newline.
pub fn to_structured(doc: &ParsedDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("serializable");
    s.push('\n');
    s
}

pub fn from_structured(text: &str) -> serde_json::Result<ParsedDocument> {
    serde_json::from_str(text)
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// `<table>` markup for a grid; `cell` renders one inline item.
pub fn html_table(grid: &TableGrid, cell: &dyn Fn(&InlineItem) -> String) -> String {
    let mut cells: Vec<_> = grid.cells.iter().collect();
    cells.sort_by_key(|c| (c.row, c.col));
    let mut out = String::from("<table>");
    for r in 0..grid.rows {
        out.push_str("<tr>");
        for c in cells.iter().filter(|c| c.row == r) {
            out.push_str("<td");
            if c.rowspan > 1 {
                let _ = write!(out, " rowspan=\"{}\"", c.rowspan);
            }
            if c.colspan > 1 {
                let _ = write!(out, " colspan=\"{}\"", c.colspan);
            }
            out.push('>');
            for item in &c.content {
                out.push_str(&cell(item));
            }
            out.push_str("</td>");
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    out
}

fn pipe_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Pipe table for rectangular spanless grids; first row is the header.
fn pipe_table(grid: &TableGrid, children: &[ResolvedNode]) -> String {
    let mut rows = vec![vec![String::new(); grid.cols]; grid.rows];
    for c in &grid.cells {
        rows[c.row][c.col] = c.content.iter().map(|i| render_cell_item(i, children)).collect();
    }
    let line = |r: &[String]| format!("| {} |", r.iter().map(|s| pipe_cell(s)).collect::<Vec<_>>().join(" | "));
    let mut out = Vec::with_capacity(grid.rows + 1);
    if let Some(head) = rows.first() {
        out.push(line(head));
        out.push(format!("|{}", " --- |".repeat(grid.cols)));
    }
    for r in rows.iter().skip(1) {
        out.push(line(r));
    }
    out.join("\n")
}

fn markdown_grid(grid: &TableGrid, children: &[ResolvedNode]) -> String {
    if grid.has_spans() || grid.rows == 0 {
        html_table(grid, &|i| render_cell_item(i, children))
    } else {
        pipe_table(grid, children)
    }
}

fn formula_id(item: &FlowItem) -> Option<String> {
    let anchor = item.anchor_node();
    item.members
        .iter()
        .find(|m| {
            m.category == SemanticCategory::FormulaId
                && anchor
                    .links
                    .iter()
                    .any(|l| l.kind == RelationKind::FormulaId && l.node_id == m.id)
        })
        .map(ResolvedNode::text)
}

fn is_figure_like(c: SemanticCategory) -> bool {
    matches!(c, SemanticCategory::Image | SemanticCategory::Figure)
}

/// Markdown for one unit member.
fn member_markdown(item: &FlowItem, m: &ResolvedNode, heading: Option<usize>) -> String {
    if m.category == SemanticCategory::FormulaId && formula_id(item).is_some() {
        return String::new();
    }
    if is_figure_like(m.category) {
        let alt = match (&m.status, &m.payload) {
            (NodeStatus::Resolved, Some(ContentPayload::Caption { text })) => text.clone(),
            _ => m.id.clone(),
        };
        return format!("![{}]({})", alt.replace(['[', ']'], ""), m.id);
    }
    match (&m.status, &m.payload) {
        (NodeStatus::Failed, _) => render_inline(m),
        (NodeStatus::Skipped, _) | (_, None) => String::new(),
        (NodeStatus::Resolved, Some(p)) => match p {
            ContentPayload::Text { text } | ContentPayload::Caption { text } => match heading {
                Some(level) => format!("{} {}", "#".repeat(level.clamp(1, 6)), text.trim()),
                None => text.clone(),
            },
            ContentPayload::Latex { latex } => match formula_id(item) {
                Some(id) => format!("$${latex}$$ {}", id.trim()),
                None => format!("$${latex}$$"),
            },
            ContentPayload::TableGrid(g) => markdown_grid(g, &m.children),
            other => render_inline(&ResolvedNode {
                payload: Some(other.clone()),
                ..m.clone()
            }),
        },
    }
}

fn heading_level(item: &FlowItem, section_level: Option<u32>) -> Option<usize> {
    match item.category {
        SemanticCategory::DocumentTitle => Some(1),
        SemanticCategory::SectionTitle => Some(section_level.map_or(2, |l| l as usize + 1)),
        _ => None,
    }
}

/// Markdown block of one flow item; empty when nothing renders.
pub fn item_markdown(item: &FlowItem, section_level: Option<u32>) -> String {
    let heading = heading_level(item, section_level);
    item.members
        .iter()
        .map(|m| {
            let h = if m.id == item.id { heading } else { None };
            member_markdown(item, m, h)
        })
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn section_blocks(sec: &SectionNode, out: &mut Vec<String>) {
    let level = (sec.level > 0).then_some(sec.level);
    if sec.level > 0 && sec.title_item.is_none() {
        out.push(format!("{} {}", "#".repeat((sec.level as usize + 1).min(6)), sec.title));
    }
    for item in &sec.body {
        let lvl = if sec.title_item.as_deref() == Some(item.id.as_str()) {
            level
        } else {
            None
        };
        let b = item_markdown(item, lvl);
        if !b.is_empty() {
            out.push(b);
        }
    }
    for c in &sec.children {
        section_blocks(c, out);
    }
}

pub fn to_markdown(doc: &ParsedDocument) -> String {
    let mut blocks = Vec::new();
    section_blocks(&doc.root, &mut blocks);
    let mut s = blocks.join("\n\n");
    s.push('\n');
    s
}

/// HTML for an inline child inside running text.
fn inline_html(node: &ResolvedNode) -> String {
    match (&node.status, &node.payload) {
        (NodeStatus::Resolved, Some(ContentPayload::ESmiles { smiles })) => {
            format!("<smiles>{}</smiles>", escape_html(smiles))
        }
        (NodeStatus::Resolved, Some(ContentPayload::ChartTable { table }))
        | (NodeStatus::Resolved, Some(ContentPayload::TableGrid(table))) => grid_html(table, &node.children),
        _ => escape_html(&render_inline(node)),
    }
}

fn cell_html(item: &InlineItem, children: &[ResolvedNode]) -> String {
    match item {
        InlineItem::Object(id) => children
            .iter()
            .find(|c| &c.id == id)
            .map(inline_html)
            .unwrap_or_default(),
        other => escape_html(&render_cell_item(other, children)),
    }
}

fn grid_html(grid: &TableGrid, children: &[ResolvedNode]) -> String {
    html_table(grid, &|i| cell_html(i, children))
}

/// Running text with inline children rendered as markup.
fn text_html(node: &ResolvedNode, text: &str) -> String {
    let mut spans = node.inline_spans.clone();
    spans.sort_by_key(|s| s.start);
    let mut out = String::new();
    let mut at = 0;
    for s in spans {
        if s.start < at || s.end > text.len() {
            continue;
        }
        out.push_str(&escape_html(&text[at..s.start]));
        match node.child(&s.id) {
            Some(c) => out.push_str(&inline_html(c)),
            None => out.push_str(&escape_html(&text[s.start..s.end])),
        }
        at = s.end;
    }
    out.push_str(&escape_html(&text[at..]));
    out
}

fn member_html(item: &FlowItem, m: &ResolvedNode, heading: Option<usize>) -> String {
    if m.category == SemanticCategory::FormulaId && formula_id(item).is_some() {
        return String::new();
    }
    match (&m.status, &m.payload) {
        (NodeStatus::Failed, _) => format!("<p>{}</p>", escape_html(&render_inline(m))),
        (NodeStatus::Skipped, _) | (_, None) => String::new(),
        (NodeStatus::Resolved, Some(p)) => match p {
            ContentPayload::Text { text } | ContentPayload::Caption { text } => match heading {
                Some(l) => {
                    let l = l.clamp(1, 6);
                    format!("<h{l}>{}</h{l}>", text_html(m, text.trim()))
                }
                None => format!("<p>{}</p>", text_html(m, text)),
            },
            ContentPayload::Latex { latex } => {
                let id = formula_id(item).map(|i| format!(" {}", i.trim())).unwrap_or_default();
                format!("<p class=\"math\">{}</p>", escape_html(&format!("$${latex}$${id}")))
            }
            ContentPayload::TableGrid(g) => grid_html(g, &m.children),
            _ => format!("<p>{}</p>", inline_html(m)),
        },
    }
}

fn figure_html(item: &FlowItem) -> String {
    let a = item.anchor_node();
    let alt = match (&a.status, &a.payload) {
        (NodeStatus::Resolved, Some(ContentPayload::Caption { text })) => text.clone(),
        _ => a.id.clone(),
    };
    let mut out = format!(
        "<figure><img src=\"{}\" alt=\"{}\"/>",
        escape_html(&a.id),
        escape_html(&alt)
    );
    let caps: Vec<String> = item
        .members
        .iter()
        .filter(|m| m.id != a.id)
        .map(|m| match &m.payload {
            Some(ContentPayload::Text { text }) => text_html(m, text),
            _ => escape_html(&render_inline(m)),
        })
        .collect();
    if !caps.is_empty() {
        let _ = write!(out, "<figcaption>{}</figcaption>", caps.join(" "));
    }
    out.push_str("</figure>");
    out
}

pub fn item_html(item: &FlowItem, section_level: Option<u32>) -> String {
    if is_figure_like(item.category) {
        return figure_html(item);
    }
    let heading = heading_level(item, section_level);
    let parts: Vec<String> = item
        .members
        .iter()
        .map(|m| member_html(item, m, if m.id == item.id { heading } else { None }))
        .filter(|s| !s.is_empty())
        .collect();
    if item.is_grouped() {
        format!("<figure>{}</figure>", parts.join(""))
    } else {
        parts.join("")
    }
}

fn section_html(sec: &SectionNode, out: &mut String) {
    let level = (sec.level > 0).then_some(sec.level);
    if sec.level > 0 {
        let _ = write!(out, "<section data-level=\"{}\">", sec.level);
        if sec.title_item.is_none() {
            let l = (sec.level as usize + 1).min(6);
            let _ = write!(out, "<h{l}>{}</h{l}>", escape_html(&sec.title));
        }
    }
    for item in &sec.body {
        let lvl = if sec.title_item.as_deref() == Some(item.id.as_str()) {
            level
        } else {
            None
        };
        out.push_str(&item_html(item, lvl));
        out.push('\n');
    }
    for c in &sec.children {
        section_html(c, out);
    }
    if sec.level > 0 {
        out.push_str("</section>\n");
    }
}

pub fn to_html(doc: &ParsedDocument) -> String {
    let mut body = String::new();
    section_html(&doc.root, &mut body);
    format!(
        "<html lang=\"{}\"><head><meta charset=\"utf-8\"/><title>{}</title></head><body>\n{}</body></html>\n",
        escape_html(&doc.language_tag),
        escape_html(&doc.doc_id),
        body
    )
}

/// One record of the interleaved image-text stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Interleaved {
    Text { text: String },
    Image { id: String, page_index: usize, caption: String },
}

/// Text blocks alternating with figure references (by stable detection id).
pub fn to_interleaved(doc: &ParsedDocument) -> Vec<Interleaved> {
    let mut out = Vec::new();
    for (_, sec) in doc.root.walk() {
        for item in &sec.body {
            if is_figure_like(item.category) {
                let caption = item
                    .members
                    .iter()
                    .filter(|m| m.id != item.id)
                    .map(ResolvedNode::text)
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push(Interleaved::Image {
                    id: item.id.clone(),
                    page_index: item.page_index,
                    caption,
                });
            } else {
                let text = item_markdown(item, None);
                if !text.is_empty() {
                    out.push(Interleaved::Text { text });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkKind {
    Text,
    TableUnit,
    FigureUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub section_path: Vec<String>,
    pub kind: ChunkKind,
    pub item_ids: Vec<String>,
    pub text: String,
    pub token_estimate: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversize: bool,
}

pub fn token_estimate(s: &str) -> usize {
    s.split_whitespace().count()
}

fn unit_kind(item: &FlowItem) -> ChunkKind {
    use SemanticCategory::*;
    match item.category {
        Table => ChunkKind::TableUnit,
        Image | Figure | Chart | Molecule | ChemicalReaction => ChunkKind::FigureUnit,
        _ if item.is_grouped() => ChunkKind::FigureUnit,
        _ => ChunkKind::Text,
    }
}

/// Text of the whole body: every non-empty item block joined by blank lines.
pub fn document_text(doc: &ParsedDocument) -> String {
    let mut blocks = Vec::new();
    for (_, sec) in doc.root.walk() {
        let lvl = (sec.level > 0).then_some(sec.level);
        for item in &sec.body {
            let l = if sec.title_item.as_deref() == Some(item.id.as_str()) { lvl } else { None };
            let b = item_markdown(item, l);
            if !b.is_empty() {
                blocks.push(b);
            }
        }
    }
    blocks.join("\n\n")
}

/// Section-respecting greedy packing. Tables and figure groups are atomic
/// singleton chunks; text items pack until `max_tokens` would be exceeded.
pub fn chunk(doc: &ParsedDocument, max_tokens: usize) -> Vec<Chunk> {
    struct Open {
        path: Vec<String>,
        ids: Vec<String>,
        blocks: Vec<String>,
        tokens: usize,
    }
    let mut out: Vec<Chunk> = Vec::new();
    let push = |out: &mut Vec<Chunk>, path: &[String], ids: Vec<String>, blocks: Vec<String>, kind: ChunkKind| {
        if ids.is_empty() {
            return;
        }
        let text = blocks.join("\n\n");
        let token_estimate = token_estimate(&text);
        out.push(Chunk {
            chunk_id: format!("{}#{}", doc.doc_id, out.len()),
            section_path: path.to_vec(),
            kind,
            item_ids: ids,
            oversize: token_estimate > max_tokens,
            text,
            token_estimate,
        });
    };
    for (path, sec) in doc.root.walk() {
        let lvl = (sec.level > 0).then_some(sec.level);
        let mut open = Open {
            path: path.clone(),
            ids: Vec::new(),
            blocks: Vec::new(),
            tokens: 0,
        };
        for item in &sec.body {
            let l = if sec.title_item.as_deref() == Some(item.id.as_str()) { lvl } else { None };
            let block = item_markdown(item, l);
            let t = token_estimate(&block);
            let kind = unit_kind(item);
            let flush = kind != ChunkKind::Text || (open.tokens + t > max_tokens && !open.ids.is_empty());
            if flush {
                push(&mut out, &open.path, std::mem::take(&mut open.ids), std::mem::take(&mut open.blocks), ChunkKind::Text);
                open.tokens = 0;
            }
            if kind != ChunkKind::Text {
                let blocks = if block.is_empty() { vec![] } else { vec![block] };
                push(&mut out, &open.path, vec![item.id.clone()], blocks, kind);
                continue;
            }
            open.ids.push(item.id.clone());
            if !block.is_empty() {
                open.blocks.push(block);
            }
            open.tokens += t;
        }
        push(&mut out, &open.path, open.ids, open.blocks, ChunkKind::Text);
    }
    out
}
