//! Per-document pipeline phases shared by every execution mode: page
//! preparation (layout, order, tasks) before expert work and assembly after.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::consolidate::{consolidate, FlowItem};
use crate::dispatch::{
    gather_node, plan_tasks, GatherError, PlaceholderPlan, RoutePolicy, Task, TaskOutcome,
    TokenStats,
};
use crate::docmodel::{DocumentIr, OutlineEntry, PageIr};
use crate::experts::{Expert, ExpertError, MockExpert, Modality};
use crate::format::{PageMeta, ParsedDocument, OUTPUT_VERSION};
use crate::layout::{layout_page, LayoutTree};
use crate::ordering::{group_cluster, order_units, OrderUnit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePlan {
    pub page_index: usize,
    pub tree: LayoutTree,
    pub units: Vec<OrderUnit>,
    pub tasks: Vec<Task>,
    pub placeholders: BTreeMap<String, PlaceholderPlan>,
}

/// Layout, reading order and task planning for one page.
pub fn prepare_page(doc_id: &str, page: &PageIr, cfg: &EngineConfig, policy: &RoutePolicy) -> PagePlan {
    let tree = layout_page(page, &cfg.layout);
    let units = order_units(group_cluster(&tree, &cfg.ordering), &cfg.ordering);
    let by_id: HashMap<&str, &crate::layout::LayoutNode> = tree.top_level().map(|n| (n.id(), n)).collect();
    let ordered = units
        .iter()
        .flat_map(|u| u.member_ids.iter())
        .map(|id| by_id[id.as_str()]);
    let (tasks, placeholders) =
        plan_tasks(doc_id, page.page_index, ordered, policy, cfg.ordering.band_overlap);
    PagePlan {
        page_index: page.page_index,
        tree,
        units,
        tasks,
        placeholders,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPlan {
    pub doc_id: String,
    pub language_tag: String,
    pub outline: Option<Vec<OutlineEntry>>,
    pub pages: Vec<PagePlan>,
    pub policy: RoutePolicy,
}

impl DocPlan {
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.pages.iter().flat_map(|p| p.tasks.iter())
    }

    pub fn task_count(&self) -> usize {
        self.pages.iter().map(|p| p.tasks.len()).sum()
    }
}

pub fn prepare_document(doc: &DocumentIr, cfg: &EngineConfig, policy: &RoutePolicy) -> DocPlan {
    DocPlan {
        doc_id: doc.doc_id.clone(),
        language_tag: doc.language_tag.clone(),
        outline: doc.outline.clone(),
        pages: doc
            .pages
            .iter()
            .map(|p| prepare_page(&doc.doc_id, p, cfg, policy))
            .collect(),
        policy: *policy,
    }
}

/// Gather, consolidate and package a document once every task has an outcome.
pub fn finish_document(
    plan: &DocPlan,
    results: &BTreeMap<String, TaskOutcome>,
    cfg: &EngineConfig,
) -> Result<ParsedDocument, GatherError> {
    let mut stats = TokenStats::default();
    let mut items = Vec::new();
    let mut pages = Vec::new();
    for page in &plan.pages {
        let by_id: HashMap<&str, &crate::layout::LayoutNode> =
            page.tree.top_level().map(|n| (n.id(), n)).collect();
        for unit in &page.units {
            let mut members = Vec::with_capacity(unit.member_ids.len());
            for id in &unit.member_ids {
                members.push(gather_node(
                    by_id[id.as_str()],
                    &plan.doc_id,
                    page.page_index,
                    &plan.policy,
                    &page.placeholders,
                    results,
                    &mut stats,
                )?);
            }
            items.push(FlowItem::new(members, &unit.unit_id));
        }
        pages.push(PageMeta {
            page_index: page.page_index,
            order: page.units.iter().map(|u| u.unit_id.clone()).collect(),
            groups: page.tree.group_pairs(),
            page_numbers: page.tree.page_numbers.clone(),
            removed: page.tree.removed.iter().map(|r| r.detection.id.clone()).collect(),
            warnings: page.tree.warnings.clone(),
        });
    }
    let root = consolidate(items, plan.outline.as_deref(), &cfg.consolidate, &plan.language_tag);
    let failed_tasks = plan
        .tasks()
        .filter(|t| matches!(results.get(&t.task_id), Some(TaskOutcome::Failed(_))))
        .map(|t| t.task_id.clone())
        .collect();
    Ok(ParsedDocument {
        version: OUTPUT_VERSION.into(),
        doc_id: plan.doc_id.clone(),
        language_tag: plan.language_tag.clone(),
        root,
        pages,
        tokens: stats,
        failed_tasks,
    })
}

/// Runs every task of a plan through `experts` directly, one batch per
/// modality chunk, without scheduling. Retryable errors are retried up to
/// `max_retries` times.
pub fn run_tasks_direct(
    plan: &DocPlan,
    experts: &BTreeMap<Modality, Box<dyn Expert>>,
    max_retries: u32,
) -> BTreeMap<String, TaskOutcome> {
    let mut by_modality: BTreeMap<Modality, Vec<&Task>> = BTreeMap::new();
    for t in plan.tasks() {
        by_modality.entry(t.modality).or_default().push(t);
    }
    let mut results = BTreeMap::new();
    for (m, tasks) in by_modality {
        let Some(expert) = experts.get(&m) else {
            for t in tasks {
                results.insert(t.task_id.clone(), TaskOutcome::Failed(format!("no {m} expert")));
            }
            continue;
        };
        for batch in tasks.chunks(expert.descriptor().max_batch.max(1)) {
            let mut attempt = 0;
            let outcome = loop {
                let reqs: Vec<_> = batch.iter().map(|t| t.request(attempt)).collect();
                match expert.process_batch(&reqs) {
                    Err(e) if e.is_retryable() && attempt < max_retries => attempt += 1,
                    other => break other,
                }
            };
            record_batch(batch.iter().map(|t| t.task_id.as_str()), outcome, &mut results);
        }
    }
    results
}

/// Stores per-task outcomes of one finished batch.
pub fn record_batch<'a>(
    task_ids: impl Iterator<Item = &'a str>,
    outcome: Result<Vec<crate::experts::ExpertResponse>, ExpertError>,
    results: &mut BTreeMap<String, TaskOutcome>,
) {
    match outcome {
        Ok(items) => {
            for r in items {
                let o = match (r.payload, r.error) {
                    (Some(p), None) => TaskOutcome::Done(p),
                    (_, Some(e)) => TaskOutcome::Failed(e),
                    (None, None) => TaskOutcome::Failed("empty response item".into()),
                };
                results.insert(r.task_id, o);
            }
        }
        Err(e) => {
            for id in task_ids {
                results.insert(id.to_string(), TaskOutcome::Failed(e.to_string()));
            }
        }
    }
}

/// Default mock expert set keyed by modality.
pub fn mock_experts(seed: u64) -> BTreeMap<Modality, Box<dyn Expert>> {
    crate::experts::ExpertDescriptor::defaults()
        .into_iter()
        .map(|d| (d.modality, Box::new(MockExpert::new(d, seed)) as Box<dyn Expert>))
        .collect()
}

/// Parses one document synchronously with mock experts.
pub fn parse_document_direct(doc: &DocumentIr, cfg: &EngineConfig, policy: &RoutePolicy) -> ParsedDocument {
    let plan = prepare_document(doc, cfg, policy);
    let results = run_tasks_direct(&plan, &mock_experts(0), 3);
    finish_document(&plan, &results, cfg).expect("every task has an outcome")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{BoundingBox, ContentPayload, Detection, SemanticCategory::*, OBJECT_MARKER};
    use crate::format::{to_markdown, to_structured};

    fn det(id: &str, cat: crate::docmodel::SemanticCategory, b: [f64; 4]) -> Detection {
        Detection::new(id, cat, BoundingBox::new(b[0], b[1], b[2], b[3]))
    }

    #[test]
    fn paragraph_with_inline_formula_end_to_end() {
        let mut doc = DocumentIr::new("d");
        let mut page = PageIr::new(0);
        page.detections = vec![
            det("t", DocumentTitle, [0.1, 0.05, 0.9, 0.1]).with_text("A Title"),
            det("p", Paragraph, [0.1, 0.15, 0.9, 0.3]).with_text(format!("see {OBJECT_MARKER} here.")),
            det("f1", FormulaInline, [0.3, 0.2, 0.4, 0.22]).with_payload(ContentPayload::Latex { latex: "x^2".into() }),
            det("h", Header, [0.1, 0.0, 0.9, 0.03]).with_text("running head"),
        ];
        doc.pages.push(page);
        let out = parse_document_direct(&doc, &EngineConfig::new(), &RoutePolicy::new(true));
        assert_eq!(to_markdown(&out), "# A Title\n\nsee $x^2$ here.\n");
        assert_eq!(out.tokens.emitted, 1);
        assert_eq!(out.tokens.resolved, 1);
        assert_eq!(out.pages[0].removed, vec!["h"]);
        assert!(!to_structured(&out).contains("[[UPH:"));
    }
}
