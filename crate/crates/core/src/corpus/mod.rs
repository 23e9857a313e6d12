//! Synthetic detected-page corpora with ground truth, and the metrics used
//! to score reading order and grouping against it.
//!
//! Pages follow a column-grid template family: an optional title band, one to
//! three column flows, and full-width figure slots between flows. Truth is
//! recorded before perturbation.

mod generate;
mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::gen_corpus;
pub use metrics::{
    evaluate, grouping_f1, inline_check, order_edit_distance, split_check, EvalReport, GroupingScore,
    InlineScore, PageScore, SplitScore,
};

use crate::docmodel::{save_document, DocumentIr, IrError};

/// Relative frequency of each block kind in column flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalityMix {
    pub paragraph: f64,
    pub section_title: f64,
    pub table: f64,
    pub formula: f64,
    pub figure: f64,
    pub image: f64,
    pub molecule: f64,
    pub reaction: f64,
    pub chart: f64,
    /// Code blocks, key-value items, footnotes and references.
    pub other: f64,
}

impl Default for ModalityMix {
    fn default() -> Self {
        Self {
            paragraph: 6.0,
            section_title: 1.0,
            table: 1.2,
            formula: 1.0,
            figure: 0.8,
            image: 0.4,
            molecule: 0.6,
            reaction: 0.3,
            chart: 0.4,
            other: 0.5,
        }
    }
}

impl ModalityMix {
    pub fn only_tables() -> Self {
        Self::none().with(|m| m.table = 1.0)
    }

    pub fn only_paragraphs() -> Self {
        Self::none().with(|m| m.paragraph = 1.0)
    }

    fn none() -> Self {
        Self {
            paragraph: 0.0,
            section_title: 0.0,
            table: 0.0,
            formula: 0.0,
            figure: 0.0,
            image: 0.0,
            molecule: 0.0,
            reaction: 0.0,
            chart: 0.0,
            other: 0.0,
        }
    }

    fn with(mut self, f: impl FnOnce(&mut Self)) -> Self {
        f(&mut self);
        self
    }

    pub(crate) fn weights(&self) -> [f64; 10] {
        [
            self.paragraph,
            self.section_title,
            self.table,
            self.formula,
            self.figure,
            self.image,
            self.molecule,
            self.reaction,
            self.chart,
            self.other,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_docs: usize,
    /// Inclusive page-count range per document.
    pub pages_per_doc: [usize; 2],
    /// Column counts a page may use, each in 1..=3.
    pub columns: Vec<u8>,
    pub mix: ModalityMix,
    /// Chance that a paragraph carries inline formulas or molecules.
    pub inline_prob: f64,
    /// Chance that a table carries an inline object in one cell.
    pub table_inline_prob: f64,
    /// Chance of a full-width figure slot between two column flows.
    pub slot_prob: f64,
    pub merge_prob: f64,
    pub jitter_sigma: f64,
    pub substitution_prob: f64,
    /// Chance that a page's last block continues on the next page.
    pub cross_page_split_prob: f64,
    /// Emit group hints; without them pairing falls back to geometry.
    pub group_hints: bool,
    /// Emit headers and page numbers.
    pub functional: bool,
    pub outline: bool,
    pub language_tag: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_docs: 50,
            pages_per_doc: [4, 4],
            columns: vec![1, 2, 2, 3],
            mix: ModalityMix::default(),
            inline_prob: 0.4,
            table_inline_prob: 0.3,
            slot_prob: 0.3,
            merge_prob: 0.0,
            jitter_sigma: 0.0,
            substitution_prob: 0.0,
            cross_page_split_prob: 0.2,
            group_hints: true,
            functional: true,
            outline: true,
            language_tag: "en".into(),
        }
    }
}

impl CorpusSpec {
    /// `pages` pages in four-page documents (the last may be shorter).
    pub fn with_pages(seed: u64, pages: usize) -> Self {
        let mut s = Self {
            seed,
            ..Self::default()
        };
        s.n_docs = pages.div_ceil(4);
        s
    }

    pub fn check(&self) -> Result<(), CorpusError> {
        let probs = [
            ("inline_prob", self.inline_prob),
            ("table_inline_prob", self.table_inline_prob),
            ("slot_prob", self.slot_prob),
            ("merge_prob", self.merge_prob),
            ("substitution_prob", self.substitution_prob),
            ("cross_page_split_prob", self.cross_page_split_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidSpec(format!("{name} must be in [0,1]")));
            }
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(CorpusError::InvalidSpec("jitter_sigma must be non-negative".into()));
        }
        let [lo, hi] = self.pages_per_doc;
        if lo == 0 || lo > hi {
            return Err(CorpusError::InvalidSpec("pages_per_doc must be a range within 1..".into()));
        }
        if self.columns.is_empty() || self.columns.iter().any(|c| !(1..=3).contains(c)) {
            return Err(CorpusError::InvalidSpec("columns must be drawn from 1, 2, 3".into()));
        }
        let w = self.mix.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CorpusError::InvalidSpec("mix weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Table,
    Paragraph,
}

/// One entity laid out across a page boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTruth {
    pub kind: SplitKind,
    /// Part at the end of the earlier page.
    pub first: String,
    /// Continuation at the top of the next page.
    pub second: String,
    /// Cell count of the whole table.
    #[serde(default)]
    pub cells: usize,
    /// Text of the whole paragraph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "in", rename_all = "snake_case")]
pub enum InlineSlot {
    /// The n-th object marker of the parent's text.
    Text { ordinal: usize },
    Cell { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineTruth {
    pub parent: String,
    pub child: String,
    pub slot: InlineSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageTruth {
    pub page_index: usize,
    /// Unit ids in intended reading order.
    pub order: Vec<String>,
    /// (anchor, partner) pairs.
    pub groups: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTruth {
    pub doc_id: String,
    pub pages: Vec<PageTruth>,
    #[serde(default)]
    pub splits: Vec<SplitTruth>,
    /// Inline placement of the emitted (post-perturbation) detections.
    #[serde(default)]
    pub inline: Vec<InlineTruth>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub docs: Vec<DocTruth>,
}

impl GroundTruth {
    pub fn pages(&self) -> usize {
        self.docs.iter().map(|d| d.pages.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes") + "\n"
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub const TRUTH_FILE: &str = "truth.json";

/// Writes one `<doc_id>.json` per document plus `truth.json`.
pub fn save_corpus(docs: &[DocumentIr], truth: &GroundTruth, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for d in docs {
        save_document(d, dir.join(format!("{}.json", d.doc_id)))?;
    }
    let path = dir.join(TRUTH_FILE);
    std::fs::write(&path, truth.to_json()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads `truth.json` from a corpus directory, or a truth file directly.
pub fn load_truth(path: &Path) -> Result<GroundTruth, CorpusError> {
    let file = if path.is_dir() { path.join(TRUTH_FILE) } else { path.to_path_buf() };
    let shown = file.display().to_string();
    let text = std::fs::read_to_string(&file).map_err(|source| CorpusError::Io {
        path: shown.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: shown, source })
}
