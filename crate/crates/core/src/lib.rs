//! Document parsing engine: layout analysis, reading order, expert dispatch,
//! cross-page consolidation and structured output, plus a simulated runtime
//! for scheduling experiments.

pub mod config;
pub mod consolidate;
pub mod corpus;
pub mod dispatch;
pub mod docmodel;
pub mod engine;
pub mod experts;
pub mod format;
pub mod layout;
pub mod ordering;
pub mod runtime;

pub use config::{ConfigOverrides, EngineConfig};
pub use docmodel::{
    BoundingBox, ContentPayload, Detection, DocumentIr, InlineItem, IrError, PageIr,
    SemanticCategory, TableCell, TableGrid,
};
pub use format::ParsedDocument;
