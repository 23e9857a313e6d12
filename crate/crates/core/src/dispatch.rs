//! Routing of layout nodes to expert queues, placeholder substitution for
//! inline children, greedy batch stacking and result gathering.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{BoundingBox, ContentPayload, Detection, InlineItem, SemanticCategory};
use crate::experts::{ExpertRequest, Modality, PlaceholderSlot};
use crate::format::html_table;
use crate::layout::{GroupLink, LayoutNode};
use crate::ordering::band_order;

/// Parsing route of a category; `None` means the element is never parsed.
pub fn route(category: SemanticCategory, captioning: bool) -> Option<Modality> {
    use SemanticCategory::*;
    match category {
        DocumentTitle | SectionTitle | Paragraph | References | TableOfContents | KeyValueItem
        | Footnote | PageNumber | CodeBlock | Caption | TableFootnote | FormulaId
        | MoleculeIdentifier | MarkushDescription | FigureLegend => {
            Some(Modality::Ocr)
        }
        Formula | FormulaInline => Some(Modality::Formula),
        Table => Some(Modality::Table),
        Molecule => Some(Modality::Ocsr),
        ChemicalReaction => Some(Modality::Reaction),
        Chart => Some(Modality::Chart),
        Figure | Image => captioning.then_some(Modality::ImageCaption),
        Header | Footer | Sidebar | Watermark | DividerLine => None,
    }
}

/// Which routes are active for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoutePolicy {
    pub captioning: bool,
    /// Restrict parsing to one modality; every other node passes through unparsed.
    pub only: Option<Modality>,
}

impl RoutePolicy {
    pub fn new(captioning: bool) -> Self {
        Self {
            captioning,
            only: None,
        }
    }

    pub fn active_route(&self, category: SemanticCategory) -> Option<Modality> {
        route(category, self.captioning).filter(|m| self.only.is_none_or(|o| o == *m))
    }
}

pub fn placeholder_token(modality: Modality, id: &str) -> String {
    format!("[[UPH:{modality}:{id}]]")
}

pub fn failed_span(modality: Modality, id: &str) -> String {
    format!("[[FAILED:{modality}:{id}]]")
}

pub fn skipped_span(route: Option<Modality>, id: &str) -> String {
    format!("[[SKIPPED:{}:{id}]]", route.map_or("none", Modality::as_str))
}

/// Placeholder tokens of one parent, in the parent's reading order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderPlan {
    pub slots: Vec<PlaceholderSlot>,
    /// token -> child detection id
    pub map: BTreeMap<String, String>,
}

/// Whether a route produces text that can host placeholder tokens.
fn hosts_inline(route: Option<Modality>) -> bool {
    matches!(
        route,
        Some(Modality::Ocr | Modality::Table | Modality::ImageCaption)
    )
}

/// Emits one token per child, ordered by line band then x inside the parent.
///
/// Table parents also record each child's center relative to the table box so
/// the token can be placed in the right cell.
pub fn make_placeholders(parent: &LayoutNode, band_overlap: f64, captioning: bool) -> PlaceholderPlan {
    let boxes: Vec<(&str, BoundingBox)> = parent
        .children
        .iter()
        .map(|c| (c.id(), c.detection.bbox))
        .collect();
    let pb = parent.detection.bbox;
    let is_table = parent.category() == SemanticCategory::Table;
    let mut plan = PlaceholderPlan::default();
    for i in band_order(&boxes, band_overlap) {
        let child = &parent.children[i];
        let kind = route(child.category(), captioning).unwrap_or(Modality::ImageCaption);
        let token = placeholder_token(kind, child.id());
        let at = is_table.then(|| {
            let (cx, cy) = child.detection.bbox.center();
            [
                ((cx - pb.x0) / pb.width().max(f64::EPSILON)).clamp(0.0, 1.0),
                ((cy - pb.y0) / pb.height().max(f64::EPSILON)).clamp(0.0, 1.0),
            ]
        });
        plan.map.insert(token.clone(), child.id().to_string());
        plan.slots.push(PlaceholderSlot { token, at });
    }
    plan
}

/// One parsable detection bound to its expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub modality: Modality,
    pub doc_id: String,
    pub page_index: usize,
    pub detection: Detection,
    /// Parent block the result is reintegrated into, for inline children.
    pub parent_id: Option<String>,
    /// The token standing for this task inside its parent's text.
    pub token: Option<String>,
    pub placeholders: Vec<PlaceholderSlot>,
}

impl Task {
    pub fn id_for(doc_id: &str, detection_id: &str) -> String {
        format!("{doc_id}/{detection_id}")
    }

    pub fn request(&self, attempt: u32) -> ExpertRequest {
        ExpertRequest {
            task_id: self.task_id.clone(),
            modality: self.modality,
            doc_id: self.doc_id.clone(),
            page_index: self.page_index,
            detection_id: self.detection.id.clone(),
            category: self.detection.category,
            truth_text: self.detection.truth_text.clone(),
            truth_payload: self.detection.truth_payload.clone(),
            placeholders: self.placeholders.clone(),
            attempt,
        }
    }
}

/// Tasks and placeholder plans for a set of top-level nodes, emitted in the
/// given node order with each parent before its children.
pub fn plan_tasks<'a>(
    doc_id: &str,
    page_index: usize,
    nodes: impl IntoIterator<Item = &'a LayoutNode>,
    policy: &RoutePolicy,
    band_overlap: f64,
) -> (Vec<Task>, BTreeMap<String, PlaceholderPlan>) {
    let mut tasks = Vec::new();
    let mut plans = BTreeMap::new();
    for node in nodes {
        let route = policy.active_route(node.category());
        let plan = if hosts_inline(route) && !node.children.is_empty() {
            let p = make_placeholders(node, band_overlap, policy.captioning);
            plans.insert(node.id().to_string(), p.clone());
            p
        } else {
            PlaceholderPlan::default()
        };
        if let Some(m) = route {
            tasks.push(Task {
                task_id: Task::id_for(doc_id, node.id()),
                modality: m,
                doc_id: doc_id.to_string(),
                page_index,
                detection: node.detection.clone(),
                parent_id: None,
                token: None,
                placeholders: plan.slots.clone(),
            });
        }
        let token_of: BTreeMap<&str, &str> =
            plan.map.iter().map(|(t, c)| (c.as_str(), t.as_str())).collect();
        for child in &node.children {
            if let Some(m) = policy.active_route(child.category()) {
                tasks.push(Task {
                    task_id: Task::id_for(doc_id, child.id()),
                    modality: m,
                    doc_id: doc_id.to_string(),
                    page_index,
                    detection: child.detection.clone(),
                    parent_id: Some(node.id().to_string()),
                    token: token_of.get(child.id()).map(|t| t.to_string()),
                    placeholders: Vec::new(),
                });
            }
        }
    }
    (tasks, plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchReason {
    Full,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub modality: Modality,
    pub tasks: Vec<Task>,
    /// Logical time in microseconds.
    pub formed_at: u64,
    pub reason: BatchReason,
}

/// FIFO queue of one modality, each task stamped with its enqueue time.
#[derive(Debug, Clone)]
pub struct ModalityQueue {
    pub modality: Modality,
    items: VecDeque<(Task, u64)>,
}

impl ModalityQueue {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, task: Task, now: u64) {
        debug_assert_eq!(task.modality, self.modality);
        self.items.push_back((task, now));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn oldest_enqueued_at(&self) -> Option<u64> {
        self.items.front().map(|(_, t)| *t)
    }
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

/// Greedy batch stacking: a full batch of the oldest tasks as soon as
/// `max_batch` are waiting, otherwise everything (up to `max_batch`) once the
/// oldest task has waited `max_wait_ms`.
pub fn batch_stack(
    queue: &mut ModalityQueue,
    now: u64,
    max_batch: usize,
    max_wait_ms: f64,
) -> Option<Batch> {
    let (n, reason) = stack_decision(
        queue.len(),
        queue.oldest_enqueued_at(),
        now,
        max_batch,
        ms_to_us(max_wait_ms),
    )?;
    let tasks = queue.items.drain(..n).map(|(t, _)| t).collect();
    Some(Batch {
        modality: queue.modality,
        tasks,
        formed_at: now,
        reason,
    })
}

/// Size and reason of the batch a queue would emit now, if any.
pub fn stack_decision(
    len: usize,
    oldest: Option<u64>,
    now: u64,
    max_batch: usize,
    max_wait_us: u64,
) -> Option<(usize, BatchReason)> {
    let max_batch = max_batch.max(1);
    if len >= max_batch {
        return Some((max_batch, BatchReason::Full));
    }
    let oldest = oldest?;
    (now.saturating_sub(oldest) >= max_wait_us).then_some((len, BatchReason::Timeout))
}

/// Final state of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Done(ContentPayload),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Resolved,
    Failed,
    /// Not parsed: no route, or excluded by the active policy.
    Skipped,
}

/// Byte range of an inline child's rendering inside the parent's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineSpan {
    pub start: usize,
    pub end: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedNode {
    pub id: String,
    pub category: SemanticCategory,
    pub page_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ContentPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inline_spans: Vec<InlineSpan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ResolvedNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<GroupLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_hint: Option<String>,
}

impl ResolvedNode {
    /// Plain text of the payload, as used for continuity and chunk sizing.
    pub fn text(&self) -> String {
        match &self.payload {
            Some(ContentPayload::Text { text }) | Some(ContentPayload::Caption { text }) => {
                text.clone()
            }
            Some(p) => render_inline_payload(p, &[]),
            None => String::new(),
        }
    }

    pub fn child(&self, id: &str) -> Option<&ResolvedNode> {
        self.children.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStats {
    pub emitted: usize,
    pub resolved: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl TokenStats {
    pub fn add(&mut self, o: &TokenStats) {
        self.emitted += o.emitted;
        self.resolved += o.resolved;
        self.failed += o.failed;
        self.skipped += o.skipped;
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatherError {
    #[error("no result for task {0}")]
    MissingResult(String),
}

/// Inline form of a payload inside running text.
pub fn render_inline_payload(p: &ContentPayload, children: &[ResolvedNode]) -> String {
    match p {
        ContentPayload::Text { text } | ContentPayload::Caption { text } => text.clone(),
        ContentPayload::Latex { latex } => format!("${latex}$"),
        ContentPayload::ESmiles { smiles } => format!("<smiles>{smiles}</smiles>"),
        ContentPayload::Reaction {
            reactants,
            conditions,
            products,
        } => format!(
            "<smiles>{}>{}>{}</smiles>",
            reactants.join("."),
            conditions.join(";"),
            products.join(".")
        ),
        ContentPayload::ChartTable { table } | ContentPayload::TableGrid(table) => {
            html_table(table, &|item| render_cell_item(item, children))
        }
    }
}

/// Inline rendering of a resolved child, or its diagnostic span.
pub fn render_inline(node: &ResolvedNode) -> String {
    match (&node.status, &node.payload) {
        (NodeStatus::Resolved, Some(p)) => render_inline_payload(p, &node.children),
        (NodeStatus::Failed, _) => failed_span(node.modality.unwrap_or(Modality::Ocr), &node.id),
        _ => skipped_span(node.modality, &node.id),
    }
}

pub(crate) fn render_cell_item(item: &InlineItem, children: &[ResolvedNode]) -> String {
    match item {
        InlineItem::Text(t) | InlineItem::Placeholder(t) => t.clone(),
        InlineItem::Object(id) => children
            .iter()
            .find(|c| &c.id == id)
            .map(render_inline)
            .unwrap_or_default(),
    }
}

fn resolve_leaf(
    node: &LayoutNode,
    doc_id: &str,
    page_index: usize,
    policy: &RoutePolicy,
    results: &BTreeMap<String, TaskOutcome>,
) -> Result<ResolvedNode, GatherError> {
    let modality = policy.active_route(node.category());
    let (status, payload, error) = match modality {
        None => (NodeStatus::Skipped, None, None),
        Some(_) => {
            let tid = Task::id_for(doc_id, node.id());
            match results.get(&tid) {
                Some(TaskOutcome::Done(p)) => (NodeStatus::Resolved, Some(p.clone()), None),
                Some(TaskOutcome::Failed(e)) => (NodeStatus::Failed, None, Some(e.clone())),
                None => return Err(GatherError::MissingResult(tid)),
            }
        }
    };
    Ok(ResolvedNode {
        id: node.id().to_string(),
        category: node.category(),
        page_index,
        bbox: node.detection.bbox,
        modality: modality.or_else(|| route(node.category(), policy.captioning)),
        status,
        payload,
        error,
        inline_spans: Vec::new(),
        children: Vec::new(),
        links: node.group_links.clone(),
        group_hint: node.detection.group_hint.clone(),
    })
}

/// Replaces tokens in running text, recording where each rendering lands.
fn substitute_text(
    text: &str,
    plan: &PlaceholderPlan,
    children: &[ResolvedNode],
) -> (String, Vec<InlineSpan>) {
    let mut out = String::with_capacity(text.len());
    let mut spans = Vec::new();
    let mut rest = text;
    let mut seen = std::collections::BTreeSet::new();
    while let Some(pos) = rest.find("[[UPH:") {
        let Some(end) = rest[pos..].find("]]").map(|e| pos + e + 2) else {
            break;
        };
        let token = &rest[pos..end];
        out.push_str(&rest[..pos]);
        match plan.map.get(token).and_then(|id| children.iter().find(|c| &c.id == id)) {
            Some(child) => {
                let start = out.len();
                out.push_str(&render_inline(child));
                spans.push(InlineSpan {
                    start,
                    end: out.len(),
                    id: child.id.clone(),
                });
                seen.insert(token.to_string());
            }
            None => out.push_str(token),
        }
        rest = &rest[end..];
    }
    out.push_str(rest);
    // tokens the expert dropped are reattached at the end
    for (token, id) in &plan.map {
        if seen.contains(token) {
            continue;
        }
        if let Some(child) = children.iter().find(|c| &c.id == id) {
            if !out.is_empty() && !out.ends_with(char::is_whitespace) {
                out.push(' ');
            }
            let start = out.len();
            out.push_str(&render_inline(child));
            spans.push(InlineSpan {
                start,
                end: out.len(),
                id: id.clone(),
            });
        }
    }
    (out, spans)
}

fn substitute_grid(grid: &mut crate::docmodel::TableGrid, plan: &PlaceholderPlan) {
    let mut seen = std::collections::BTreeSet::new();
    for cell in &mut grid.cells {
        for item in &mut cell.content {
            if let InlineItem::Placeholder(t) = item {
                if let Some(id) = plan.map.get(t.as_str()) {
                    seen.insert(t.clone());
                    *item = InlineItem::Object(id.clone());
                }
            }
        }
    }
    let missing: Vec<String> = plan
        .map
        .iter()
        .filter(|(t, _)| !seen.contains(*t))
        .map(|(_, id)| id.clone())
        .collect();
    if let Some(last) = grid.cells.last_mut() {
        last.content.extend(missing.into_iter().map(InlineItem::Object));
    }
}

/// Reintegrates expert results into one top-level node and its inline children.
///
/// Output depends only on the plan and the result table, never on the order
/// in which results arrived.
pub fn gather_node(
    node: &LayoutNode,
    doc_id: &str,
    page_index: usize,
    policy: &RoutePolicy,
    plans: &BTreeMap<String, PlaceholderPlan>,
    results: &BTreeMap<String, TaskOutcome>,
    stats: &mut TokenStats,
) -> Result<ResolvedNode, GatherError> {
    let mut resolved = resolve_leaf(node, doc_id, page_index, policy, results)?;
    for child in &node.children {
        resolved
            .children
            .push(resolve_leaf(child, doc_id, page_index, policy, results)?);
    }
    let Some(plan) = plans.get(node.id()) else {
        return Ok(resolved);
    };
    if resolved.status != NodeStatus::Resolved {
        // the parent never produced text; its children stand alone
        return Ok(resolved);
    }
    for id in plan.map.values() {
        stats.emitted += 1;
        match resolved.child(id).map(|c| &c.status) {
            Some(NodeStatus::Resolved) => stats.resolved += 1,
            Some(NodeStatus::Failed) => stats.failed += 1,
            _ => stats.skipped += 1,
        }
    }
    let children = resolved.children.clone();
    match resolved.payload.take() {
        Some(ContentPayload::Text { text }) => {
            let (text, spans) = substitute_text(&text, plan, &children);
            resolved.payload = Some(ContentPayload::Text { text });
            resolved.inline_spans = spans;
        }
        Some(ContentPayload::Caption { text }) => {
            let (text, spans) = substitute_text(&text, plan, &children);
            resolved.payload = Some(ContentPayload::Caption { text });
            resolved.inline_spans = spans;
        }
        Some(ContentPayload::TableGrid(mut grid)) => {
            substitute_grid(&mut grid, plan);
            resolved.payload = Some(ContentPayload::TableGrid(grid));
        }
        other => resolved.payload = other,
    }
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LayoutConfig;
    use crate::docmodel::TableGrid;
    use crate::layout::build_tree;
    use SemanticCategory::*;

    fn det(id: &str, cat: SemanticCategory, b: [f64; 4]) -> Detection {
        Detection::new(id, cat, BoundingBox::new(b[0], b[1], b[2], b[3]))
    }

    fn task(id: &str) -> Task {
        Task {
            task_id: id.into(),
            modality: Modality::Ocr,
            doc_id: "d".into(),
            page_index: 0,
            detection: det(id, Paragraph, [0.1, 0.1, 0.2, 0.2]),
            parent_id: None,
            token: None,
            placeholders: vec![],
        }
    }

    #[test]
    fn routing_table() {
        assert_eq!(route(Molecule, true), Some(Modality::Ocsr));
        assert_eq!(route(Table, true), Some(Modality::Table));
        assert_eq!(route(Watermark, true), None);
        assert_eq!(route(Image, true), Some(Modality::ImageCaption));
        assert_eq!(route(Image, false), None);
        assert_eq!(route(CodeBlock, true), Some(Modality::Ocr));
        // functional elements never route
        for c in SemanticCategory::ALL {
            if c.is_functional() || c == DividerLine {
                assert_eq!(route(c, true), None, "{c}");
            }
        }
    }

    #[test]
    fn one_inline_formula_gives_one_token() {
        let tree = build_tree(
            0,
            &[
                det("p", Paragraph, [0.1, 0.1, 0.9, 0.3]),
                det("f1", FormulaInline, [0.3, 0.15, 0.4, 0.17]),
            ],
            &LayoutConfig::default(),
        );
        let plan = make_placeholders(&tree.roots[0], 0.5, true);
        assert_eq!(plan.slots.len(), 1);
        assert_eq!(plan.slots[0].token, "[[UPH:formula:f1]]");
        assert_eq!(plan.map.len(), 1);

        let lone = build_tree(0, &[det("q", Paragraph, [0.1, 0.1, 0.9, 0.3])], &LayoutConfig::default());
        assert!(make_placeholders(&lone.roots[0], 0.5, true).map.is_empty());
    }

    /// FIFO oracle: the first `max_batch` tasks by arrival time.
    #[test]
    fn full_batch_takes_oldest() {
        let mut q = ModalityQueue::new(Modality::Ocr);
        let arrivals: Vec<u64> = (0..10).map(|i| 100 + i * 7).collect();
        for (i, t) in arrivals.iter().enumerate() {
            q.push(task(&format!("t{i}")), *t);
        }
        let b = batch_stack(&mut q, 200, 8, 50.0).unwrap();
        assert_eq!(b.reason, BatchReason::Full);
        let mut by_arrival: Vec<(u64, String)> =
            arrivals.iter().enumerate().map(|(i, t)| (*t, format!("t{i}"))).collect();
        by_arrival.sort();
        let expect: Vec<String> = by_arrival.into_iter().take(8).map(|x| x.1).collect();
        let got: Vec<String> = b.tasks.iter().map(|t| t.task_id.clone()).collect();
        assert_eq!(got, expect);
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn young_queue_waits_and_old_queue_times_out() {
        let mut q = ModalityQueue::new(Modality::Ocr);
        for i in 0..3 {
            q.push(task(&format!("t{i}")), 1_000);
        }
        assert!(batch_stack(&mut q, 1_000, 8, 50.0).is_none());
        let b = batch_stack(&mut q, 51_000, 8, 50.0).unwrap();
        assert_eq!(b.reason, BatchReason::Timeout);
        assert_eq!(b.tasks.len(), 3);
        assert!(q.is_empty());
        assert!(batch_stack(&mut q, 99_000, 8, 50.0).is_none());
    }

    fn gathered(formula: TaskOutcome) -> (ResolvedNode, TokenStats) {
        let tree = build_tree(
            0,
            &[
                det("p", Paragraph, [0.1, 0.1, 0.9, 0.3]),
                det("f1", FormulaInline, [0.3, 0.15, 0.4, 0.17]),
            ],
            &LayoutConfig::default(),
        );
        let policy = RoutePolicy::new(true);
        let (_, plans) = plan_tasks("d", 0, tree.roots.iter(), &policy, 0.5);
        let mut results = BTreeMap::new();
        results.insert(
            "d/p".to_string(),
            TaskOutcome::Done(ContentPayload::text("see [[UPH:formula:f1]] here")),
        );
        results.insert("d/f1".to_string(), formula);
        let mut stats = TokenStats::default();
        let node = gather_node(&tree.roots[0], "d", 0, &policy, &plans, &results, &mut stats).unwrap();
        (node, stats)
    }

    #[test]
    fn gather_substitutes_latex() {
        let (node, stats) = gathered(TaskOutcome::Done(ContentPayload::Latex { latex: "x^2".into() }));
        // string-substitution oracle
        let expect = "see [[UPH:formula:f1]] here".replace("[[UPH:formula:f1]]", "$x^2$");
        assert_eq!(node.payload, Some(ContentPayload::text(expect)));
        assert_eq!(node.inline_spans, vec![InlineSpan { start: 4, end: 9, id: "f1".into() }]);
        assert_eq!((stats.emitted, stats.resolved, stats.failed), (1, 1, 0));
    }

    #[test]
    fn gather_marks_failures() {
        let (node, stats) = gathered(TaskOutcome::Failed("boom".into()));
        assert_eq!(node.payload, Some(ContentPayload::text("see [[FAILED:formula:f1]] here")));
        assert_eq!(stats.failed, 1);
    }

    #[test]
    fn missing_result_is_an_error() {
        let tree = build_tree(0, &[det("p", Paragraph, [0.1, 0.1, 0.9, 0.3])], &LayoutConfig::default());
        let policy = RoutePolicy::new(true);
        let err = gather_node(
            &tree.roots[0],
            "d",
            0,
            &policy,
            &BTreeMap::new(),
            &BTreeMap::new(),
            &mut TokenStats::default(),
        )
        .unwrap_err();
        assert_eq!(err, GatherError::MissingResult("d/p".into()));
    }

    #[test]
    fn table_token_becomes_object_cell() {
        let tree = build_tree(
            0,
            &[
                det("t", Table, [0.1, 0.1, 0.9, 0.5]),
                det("m", Molecule, [0.6, 0.35, 0.8, 0.45]),
            ],
            &LayoutConfig::default(),
        );
        let policy = RoutePolicy::new(true);
        let (tasks, plans) = plan_tasks("d", 0, tree.roots.iter(), &policy, 0.5);
        assert_eq!(tasks.len(), 2);
        let at = plans["t"].slots[0].at.unwrap();
        assert!(at[0] > 0.5 && at[1] > 0.5);
        let mut grid = TableGrid::from_rows(&[vec!["a".into(), "b".into()], vec!["c".into(), String::new()]]);
        grid.cells[3].content = vec![InlineItem::Placeholder("[[UPH:ocsr:m]]".into())];
        let mut results = BTreeMap::new();
        results.insert("d/t".to_string(), TaskOutcome::Done(ContentPayload::TableGrid(grid)));
        results.insert("d/m".to_string(), TaskOutcome::Done(ContentPayload::ESmiles { smiles: "CCO".into() }));
        let mut stats = TokenStats::default();
        let node = gather_node(&tree.roots[0], "d", 0, &policy, &plans, &results, &mut stats).unwrap();
        let Some(ContentPayload::TableGrid(g)) = &node.payload else { panic!() };
        assert_eq!(g.cells[3].content, vec![InlineItem::Object("m".into())]);
        assert_eq!(render_cell_item(&g.cells[3].content[0], &node.children), "<smiles>CCO</smiles>");
    }

    #[test]
    fn only_modality_skips_children() {
        let tree = build_tree(
            0,
            &[
                det("p", Paragraph, [0.1, 0.1, 0.9, 0.3]),
                det("f1", FormulaInline, [0.3, 0.15, 0.4, 0.17]),
            ],
            &LayoutConfig::default(),
        );
        let policy = RoutePolicy {
            captioning: true,
            only: Some(Modality::Ocr),
        };
        let (tasks, plans) = plan_tasks("d", 0, tree.roots.iter(), &policy, 0.5);
        assert_eq!(tasks.len(), 1);
        let mut results = BTreeMap::new();
        results.insert(
            "d/p".to_string(),
            TaskOutcome::Done(ContentPayload::text("a [[UPH:formula:f1]] b")),
        );
        let mut stats = TokenStats::default();
        let node = gather_node(&tree.roots[0], "d", 0, &policy, &plans, &results, &mut stats).unwrap();
        assert_eq!(node.payload, Some(ContentPayload::text("a [[SKIPPED:formula:f1]] b")));
        assert_eq!(stats.skipped, 1);
    }
}
