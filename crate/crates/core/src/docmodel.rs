//! Document intermediate representation: detected pages, the IR file format,
//! and integrity validation.
//!
//! The IR is the hand-off point between an external layout detector and the
//! engine. Coordinates are page-normalized (`[0,1]`, origin top-left, y grows
//! downward). Ground-truth channels (`truth_text`, `truth_payload`) travel inside
//! the IR so that mock experts and evaluation stay hermetic.
//!
//! Inline objects (formulas, molecules, charts nested inside a text block) are
//! marked in `truth_text` with U+FFFC OBJECT REPLACEMENT CHARACTER, one per
//! nested element, in reading order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The only IR file version this engine reads and writes.
pub const IR_VERSION: &str = "1";

/// Marker for an inline object inside `truth_text`.
pub const OBJECT_MARKER: char = '\u{FFFC}';

#[derive(Debug, Error)]
pub enum IrError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("duplicate detection id {0:?}")]
    DuplicateId(String),
}

/// Axis-aligned box in page-normalized coordinates.
///
/// Serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const PAGE: BoundingBox = BoundingBox {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over the area of `self` (the candidate child).
    pub fn ioa(&self, parent: &BoundingBox) -> f64 {
        let a = self.area();
        if a <= 0.0 {
            return 0.0;
        }
        self.intersection_area(parent) / a
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Euclidean distance from a point to this box; zero when inside.
    pub fn distance_to_point(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn horizontal_overlap(&self, other: &BoundingBox) -> f64 {
        (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0)
    }

    pub fn vertical_overlap(&self, other: &BoundingBox) -> f64 {
        (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    /// Returns the first violated invariant, if any.
    pub fn check(&self) -> Result<(), &'static str> {
        let coords = [self.x0, self.y0, self.x1, self.y1];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coordinate");
        }
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("box outside page");
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err("degenerate box");
        }
        Ok(())
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(d)?;
        Ok(BoundingBox { x0, y0, x1, y1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Bottom,
    Top,
}

/// Layout element kinds, including the auxiliary group-member kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticCategory {
    DocumentTitle,
    SectionTitle,
    Paragraph,
    References,
    TableOfContents,
    KeyValueItem,
    CodeBlock,
    Header,
    Footer,
    Footnote,
    Sidebar,
    PageNumber,
    Watermark,
    DividerLine,
    Formula,
    Table,
    Image,
    FormulaInline,
    Molecule,
    ChemicalReaction,
    Chart,
    Figure,
    Caption,
    TableFootnote,
    FormulaId,
    MoleculeIdentifier,
    MarkushDescription,
    FigureLegend,
}

impl SemanticCategory {
    pub const ALL: [SemanticCategory; 28] = [
        Self::DocumentTitle,
        Self::SectionTitle,
        Self::Paragraph,
        Self::References,
        Self::TableOfContents,
        Self::KeyValueItem,
        Self::CodeBlock,
        Self::Header,
        Self::Footer,
        Self::Footnote,
        Self::Sidebar,
        Self::PageNumber,
        Self::Watermark,
        Self::DividerLine,
        Self::Formula,
        Self::Table,
        Self::Image,
        Self::FormulaInline,
        Self::Molecule,
        Self::ChemicalReaction,
        Self::Chart,
        Self::Figure,
        Self::Caption,
        Self::TableFootnote,
        Self::FormulaId,
        Self::MoleculeIdentifier,
        Self::MarkushDescription,
        Self::FigureLegend,
    ];

    pub fn layer(self) -> Layer {
        use SemanticCategory::*;
        match self {
            FormulaInline | Molecule | ChemicalReaction | Chart | Figure => Layer::Top,
            _ => Layer::Bottom,
        }
    }

    pub fn is_top(self) -> bool {
        self.layer() == Layer::Top
    }

    /// Headers, footers, sidebars and watermarks carry no document content.
    pub fn is_functional(self) -> bool {
        use SemanticCategory::*;
        matches!(self, Header | Footer | Sidebar | Watermark)
    }

    /// Categories that other elements are grouped around.
    pub fn is_anchor(self) -> bool {
        use SemanticCategory::*;
        matches!(
            self,
            Image | Table | Formula | Molecule | Figure | Chart | ChemicalReaction
        )
    }

    pub fn is_partner(self) -> bool {
        use SemanticCategory::*;
        matches!(
            self,
            Caption | TableFootnote | FormulaId | MoleculeIdentifier | MarkushDescription | FigureLegend
        )
    }

    pub fn as_str(self) -> &'static str {
        use SemanticCategory::*;
        match self {
            DocumentTitle => "document_title",
            SectionTitle => "section_title",
            Paragraph => "paragraph",
            References => "references",
            TableOfContents => "table_of_contents",
            KeyValueItem => "key_value_item",
            CodeBlock => "code_block",
            Header => "header",
            Footer => "footer",
            Footnote => "footnote",
            Sidebar => "sidebar",
            PageNumber => "page_number",
            Watermark => "watermark",
            DividerLine => "divider_line",
            Formula => "formula",
            Table => "table",
            Image => "image",
            FormulaInline => "formula_inline",
            Molecule => "molecule",
            ChemicalReaction => "chemical_reaction",
            Chart => "chart",
            Figure => "figure",
            Caption => "caption",
            TableFootnote => "table_footnote",
            FormulaId => "formula_id",
            MoleculeIdentifier => "molecule_identifier",
            MarkushDescription => "markush_description",
            FigureLegend => "figure_legend",
        }
    }
}

impl fmt::Display for SemanticCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One inline element of a table cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InlineItem {
    Text(String),
    Placeholder(String),
    /// A resolved inline child, by detection id.
    Object(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableCell {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
    pub content: Vec<InlineItem>,
}

impl TableCell {
    pub fn text(row: usize, col: usize, text: impl Into<String>) -> Self {
        Self {
            row,
            col,
            rowspan: 1,
            colspan: 1,
            content: vec![InlineItem::Text(text.into())],
        }
    }

    pub fn plain_text(&self) -> String {
        self.content
            .iter()
            .map(|i| match i {
                InlineItem::Text(t) | InlineItem::Placeholder(t) => t.as_str(),
                InlineItem::Object(_) => "",
            })
            .collect()
    }
}

/// Table structure grid plus per-cell payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<TableCell>,
}

impl TableGrid {
    /// A spanless grid from row-major cell texts.
    pub fn from_rows(rows: &[Vec<String>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let cells = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(c, t)| TableCell::text(r, c, t.clone()))
            })
            .collect();
        Self {
            rows: rows.len(),
            cols,
            cells,
        }
    }

    pub fn has_spans(&self) -> bool {
        self.cells.iter().any(|c| c.rowspan != 1 || c.colspan != 1)
    }

    /// Index of the cell covering grid slot `(row, col)`.
    pub fn cell_at(&self, row: usize, col: usize) -> Option<usize> {
        self.cells.iter().position(|c| {
            row >= c.row && row < c.row + c.rowspan && col >= c.col && col < c.col + c.colspan
        })
    }

    /// Checks that spans tile the grid exactly.
    pub fn check_tiling(&self) -> Result<(), String> {
        if self.rows == 0 || self.cols == 0 {
            return Err("empty grid".into());
        }
        let mut covered = vec![false; self.rows * self.cols];
        for cell in &self.cells {
            if cell.rowspan == 0 || cell.colspan == 0 {
                return Err(format!("zero span at ({},{})", cell.row, cell.col));
            }
            if cell.row + cell.rowspan > self.rows || cell.col + cell.colspan > self.cols {
                return Err(format!("span out of grid at ({},{})", cell.row, cell.col));
            }
            for r in cell.row..cell.row + cell.rowspan {
                for c in cell.col..cell.col + cell.colspan {
                    let slot = &mut covered[r * self.cols + c];
                    if *slot {
                        return Err(format!("overlapping spans at ({r},{c})"));
                    }
                    *slot = true;
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return Err("grid not fully tiled".into());
        }
        Ok(())
    }
}

/// Result of expert processing, tagged by `kind` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentPayload {
    Text {
        text: String,
    },
    Latex {
        latex: String,
    },
    TableGrid(TableGrid),
    ESmiles {
        smiles: String,
    },
    Reaction {
        reactants: Vec<String>,
        conditions: Vec<String>,
        products: Vec<String>,
    },
    ChartTable {
        table: TableGrid,
    },
    Caption {
        text: String,
    },
}

impl ContentPayload {
    pub fn text(s: impl Into<String>) -> Self {
        ContentPayload::Text { text: s.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ContentPayload::Text { .. } => "text",
            ContentPayload::Latex { .. } => "latex",
            ContentPayload::TableGrid(_) => "table_grid",
            ContentPayload::ESmiles { .. } => "e_smiles",
            ContentPayload::Reaction { .. } => "reaction",
            ContentPayload::ChartTable { .. } => "chart_table",
            ContentPayload::Caption { .. } => "caption",
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match self {
            ContentPayload::TableGrid(g) | ContentPayload::ChartTable { table: g } => g.check_tiling(),
            ContentPayload::ESmiles { smiles } if smiles.trim().is_empty() => {
                Err("empty e-smiles".into())
            }
            ContentPayload::Reaction {
                reactants,
                products,
                ..
            } => {
                if reactants.is_empty() || products.is_empty() {
                    Err("reaction needs at least one reactant and one product".into())
                } else if reactants.iter().chain(products).any(|s| s.trim().is_empty()) {
                    Err("empty e-smiles in reaction".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub category: SemanticCategory,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_hint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_payload: Option<ContentPayload>,
}

impl Detection {
    pub fn new(id: impl Into<String>, category: SemanticCategory, bbox: BoundingBox) -> Self {
        Self {
            id: id.into(),
            bbox,
            category,
            confidence: 1.0,
            group_hint: None,
            truth_text: None,
            truth_payload: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.truth_text = Some(text.into());
        self
    }

    pub fn with_payload(mut self, payload: ContentPayload) -> Self {
        self.truth_payload = Some(payload);
        self
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.group_hint = Some(hint.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageIr {
    pub page_index: usize,
    pub width_pt: f64,
    pub height_pt: f64,
    pub detections: Vec<Detection>,
}

impl PageIr {
    pub fn new(page_index: usize) -> Self {
        Self {
            page_index,
            width_pt: 612.0,
            height_pt: 792.0,
            detections: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlineEntry {
    pub level: u32,
    pub title: String,
    pub page_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentIr {
    pub version: String,
    pub doc_id: String,
    pub language_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outline: Option<Vec<OutlineEntry>>,
    pub pages: Vec<PageIr>,
}

impl DocumentIr {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            version: IR_VERSION.to_string(),
            doc_id: doc_id.into(),
            language_tag: "en".to_string(),
            outline: None,
            pages: Vec::new(),
        }
    }

    pub fn detection_count(&self) -> usize {
        self.pages.iter().map(|p| p.detections.len()).sum()
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.pages.iter().flat_map(|p| p.detections.iter())
    }

    /// Canonical serialization: pretty JSON with fixed key order and a trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("IR serialization is infallible");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    fn push(&mut self, severity: Severity, location: String, message: impl Into<String>) {
        self.findings.push(Finding {
            severity,
            location,
            message: message.into(),
        });
    }
}

/// Checks every IR invariant and reports findings instead of failing.
pub fn validate_document(doc: &DocumentIr) -> ValidationReport {
    let mut report = ValidationReport::default();
    if doc.version != IR_VERSION {
        report.push(
            Severity::Error,
            "version".into(),
            format!("unsupported version {:?}", doc.version),
        );
    }

    let mut seen: HashSet<&str> = HashSet::new();
    // hint -> pages on which it occurs, with counts
    let mut hints: HashMap<&str, Vec<usize>> = HashMap::new();

    for (pi, page) in doc.pages.iter().enumerate() {
        let ploc = format!("pages[{pi}]");
        if page.page_index != pi {
            report.push(
                Severity::Error,
                format!("{ploc}.page_index"),
                format!("expected contiguous page index {pi}, found {}", page.page_index),
            );
        }
        if !(page.width_pt.is_finite() && page.width_pt > 0.0)
            || !(page.height_pt.is_finite() && page.height_pt > 0.0)
        {
            report.push(Severity::Error, ploc.clone(), "non-positive page dimensions");
        }
        for (di, det) in page.detections.iter().enumerate() {
            let loc = format!("{ploc}.detections[{di}]");
            if det.id.is_empty() {
                report.push(Severity::Error, format!("{loc}.id"), "empty id");
            } else if !seen.insert(det.id.as_str()) {
                report.push(
                    Severity::Error,
                    format!("{loc}.id"),
                    format!("duplicate id {:?}", det.id),
                );
            }
            if let Err(msg) = det.bbox.check() {
                report.push(Severity::Error, format!("{loc}.box"), msg);
            }
            if !(det.confidence.is_finite() && (0.0..=1.0).contains(&det.confidence)) {
                report.push(
                    Severity::Error,
                    format!("{loc}.confidence"),
                    "confidence outside [0,1]",
                );
            }
            if let Some(p) = &det.truth_payload {
                if let Err(msg) = p.check() {
                    report.push(Severity::Error, format!("{loc}.truth_payload"), msg);
                }
            }
            if let Some(h) = &det.group_hint {
                hints.entry(h.as_str()).or_default().push(pi);
            }
        }
    }

    let mut hint_names: Vec<_> = hints.keys().copied().collect();
    hint_names.sort_unstable();
    for h in hint_names {
        let pages = &hints[h];
        let partnered = pages.iter().any(|&p| {
            pages.iter().filter(|&&q| q == p).count() >= 2
                || pages.iter().any(|&q| q + 1 == p || p + 1 == q)
        });
        if !partnered {
            report.push(
                Severity::Warning,
                format!("group_hint[{h}]"),
                "orphan group hint",
            );
        }
    }

    if let Some(outline) = &doc.outline {
        let mut prev = 0u32;
        for (i, e) in outline.iter().enumerate() {
            let loc = format!("outline[{i}]");
            if e.level < 1 {
                report.push(Severity::Error, format!("{loc}.level"), "outline level below 1");
            } else if e.level > prev + 1 {
                report.push(
                    Severity::Error,
                    format!("{loc}.level"),
                    format!("outline level jumps from {prev} to {}", e.level),
                );
            }
            if e.page_index >= doc.pages.len() {
                report.push(
                    Severity::Error,
                    format!("{loc}.page_index"),
                    "outline page index out of range",
                );
            }
            prev = e.level;
        }
    }
    report
}

/// Parses IR text and verifies every invariant; rejects rather than repairs.
pub fn parse_document(text: &str) -> Result<DocumentIr, IrError> {
    let doc: DocumentIr = serde_json::from_str(text).map_err(|e| IrError::SchemaViolation {
        field: format!("line {} column {}", e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for det in doc.detections() {
        if !seen.insert(det.id.as_str()) {
            return Err(IrError::DuplicateId(det.id.clone()));
        }
    }
    if let Some(f) = validate_document(&doc).errors().next() {
        return Err(IrError::SchemaViolation {
            field: f.location.clone(),
            reason: f.message.clone(),
        });
    }
    Ok(doc)
}

pub fn load_document(path: impl AsRef<Path>) -> Result<DocumentIr, IrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IrError::NotFound(path.display().to_string()),
        _ => IrError::Io {
            path: path.display().to_string(),
            source: e,
        },
    })?;
    parse_document(&text)
}

pub fn save_document(doc: &DocumentIr, path: impl AsRef<Path>) -> Result<(), IrError> {
    let path = path.as_ref();
    std::fs::write(path, doc.to_canonical_string()).map_err(|e| IrError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
