//! Benchmark fixtures.

use uniparse::config::LayoutConfig;
use uniparse::corpus::{gen_corpus, CorpusSpec};
use uniparse::layout::{layout_page, LayoutTree};
use uniparse::DocumentIr;

/// Generated documents with the given column layout.
pub fn documents(seed: u64, n_docs: usize, columns: u8) -> Vec<DocumentIr> {
    let spec = CorpusSpec {
        seed,
        n_docs,
        columns: vec![columns],
        ..CorpusSpec::default()
    };
    gen_corpus(&spec).expect("bench spec is valid").0
}

/// Laid-out pages ready for reading-order recovery.
pub fn layout_trees(seed: u64, n_docs: usize, columns: u8) -> Vec<LayoutTree> {
    let cfg = LayoutConfig::default();
    documents(seed, n_docs, columns)
        .iter()
        .flat_map(|d| d.pages.iter().map(|p| layout_page(p, &cfg)))
        .collect()
}
