//! Two-layer group-based layout tree.
//!
//! Flat page detections become a forest: bottom-layer blocks are roots, top-layer
//! elements nest under the bottom block that contains them (or stay orphans),
//! and group links pair anchors (images, tables, formulas, molecules, ...) with
//! their captions, identifiers and footnotes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::LayoutConfig;
use crate::docmodel::{Detection, PageIr, SemanticCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Caption,
    Title,
    Footnote,
    FormulaId,
    MoleculeIdentifier,
    MarkushDescription,
    Legend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Above,
    Below,
    Right,
}

/// Relation an anchor/partner category pair forms, if any.
pub fn relation_for(anchor: SemanticCategory, partner: SemanticCategory) -> Option<RelationKind> {
    use SemanticCategory::*;
    match (anchor, partner) {
        (Table, Caption) => Some(RelationKind::Title),
        (Table, TableFootnote) => Some(RelationKind::Footnote),
        (Image | Figure | Chart | ChemicalReaction, Caption) => Some(RelationKind::Caption),
        (Figure | Chart | ChemicalReaction, FigureLegend) => Some(RelationKind::Legend),
        (Formula, FormulaId) => Some(RelationKind::FormulaId),
        (Molecule, MoleculeIdentifier) => Some(RelationKind::MoleculeIdentifier),
        (Molecule, MarkushDescription) => Some(RelationKind::MarkushDescription),
        _ => None,
    }
}

fn preferred_direction(kind: RelationKind) -> Direction {
    match kind {
        RelationKind::Title => Direction::Above,
        RelationKind::FormulaId => Direction::Right,
        _ => Direction::Below,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLink {
    pub kind: RelationKind,
    pub node_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    #[serde(flatten)]
    pub detection: Detection,
    #[serde(default)]
    pub children: Vec<LayoutNode>,
    #[serde(default)]
    pub group_links: Vec<GroupLink>,
}

impl LayoutNode {
    pub fn new(detection: Detection) -> Self {
        Self {
            detection,
            children: Vec::new(),
            group_links: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.detection.id
    }

    pub fn category(&self) -> SemanticCategory {
        self.detection.category
    }

    pub fn is_linked(&self) -> bool {
        !self.group_links.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedNode {
    pub detection: Detection,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutTree {
    pub page_index: usize,
    pub roots: Vec<LayoutNode>,
    pub orphans: Vec<LayoutNode>,
    #[serde(default)]
    pub removed: Vec<RemovedNode>,
    /// Text of page-number elements, kept as metadata only.
    #[serde(default)]
    pub page_numbers: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl LayoutTree {
    /// Roots followed by orphans: the nodes that take part in grouping and ordering.
    pub fn top_level(&self) -> impl Iterator<Item = &LayoutNode> {
        self.roots.iter().chain(self.orphans.iter())
    }

    fn top_level_mut(&mut self) -> impl Iterator<Item = &mut LayoutNode> {
        self.roots.iter_mut().chain(self.orphans.iter_mut())
    }

    /// Detections accounted for: roots, their children, orphans and removed nodes.
    pub fn node_count(&self) -> usize {
        self.roots.len()
            + self.roots.iter().map(|r| r.children.len()).sum::<usize>()
            + self.orphans.len()
            + self.removed.len()
    }

    /// Unordered (anchor, partner) pairs, anchor first.
    pub fn group_pairs(&self) -> Vec<(String, String)> {
        let cats: HashMap<&str, SemanticCategory> =
            self.top_level().map(|n| (n.id(), n.category())).collect();
        let mut pairs = BTreeSet::new();
        for n in self.top_level() {
            if !n.category().is_anchor() {
                continue;
            }
            for l in &n.group_links {
                if cats.contains_key(l.node_id.as_str()) {
                    pairs.insert((n.id().to_string(), l.node_id.clone()));
                }
            }
        }
        pairs.into_iter().collect()
    }
}

/// Maps each top-layer detection to its best containing bottom-layer block.
///
/// The parent maximizes IoA (intersection over the child's area), which must
/// reach `ioa_threshold`; ties go to the smaller parent, then the smaller id.
pub fn assign_children(
    detections: &[Detection],
    cfg: &LayoutConfig,
) -> (BTreeMap<String, String>, BTreeSet<String>) {
    const TIE_EPS: f64 = 1e-12;
    let parents: Vec<&Detection> = detections.iter().filter(|d| !d.category.is_top()).collect();
    let mut parent_map = BTreeMap::new();
    let mut orphans = BTreeSet::new();

    for child in detections.iter().filter(|d| d.category.is_top()) {
        let mut best: Option<(f64, f64, &str)> = None;
        for p in &parents {
            let ioa = child.bbox.ioa(&p.bbox);
            if ioa < cfg.ioa_threshold {
                continue;
            }
            let cand = (ioa, p.bbox.area(), p.id.as_str());
            best = match best {
                None => Some(cand),
                Some(cur) => {
                    let better = if (cand.0 - cur.0).abs() > TIE_EPS {
                        cand.0 > cur.0
                    } else if (cand.1 - cur.1).abs() > TIE_EPS {
                        cand.1 < cur.1
                    } else {
                        cand.2 < cur.2
                    };
                    Some(if better { cand } else { cur })
                }
            };
        }
        match best {
            Some((_, _, pid)) => {
                parent_map.insert(child.id.clone(), pid.to_string());
            }
            None => {
                orphans.insert(child.id.clone());
            }
        }
    }
    (parent_map, orphans)
}

/// Builds the unpaired tree for one page.
pub fn build_tree(page_index: usize, detections: &[Detection], cfg: &LayoutConfig) -> LayoutTree {
    let (parent_map, _) = assign_children(detections, cfg);
    let mut roots: Vec<LayoutNode> = detections
        .iter()
        .filter(|d| !d.category.is_top())
        .map(|d| LayoutNode::new(d.clone()))
        .collect();
    let index: HashMap<String, usize> = roots
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id().to_string(), i))
        .collect();
    let mut orphans = Vec::new();
    for d in detections.iter().filter(|d| d.category.is_top()) {
        match parent_map.get(&d.id) {
            Some(pid) => roots[index[pid]].children.push(LayoutNode::new(d.clone())),
            None => orphans.push(LayoutNode::new(d.clone())),
        }
    }
    LayoutTree {
        page_index,
        roots,
        orphans,
        removed: Vec::new(),
        page_numbers: Vec::new(),
        warnings: Vec::new(),
    }
}

/// Links anchors with partners: hint groups first, geometry for the rest.
///
/// Links are recomputed from scratch, so applying this twice is a no-op.
pub fn pair_groups(mut tree: LayoutTree, cfg: &LayoutConfig) -> LayoutTree {
    for n in tree.top_level_mut() {
        n.group_links.clear();
    }
    tree.warnings.retain(|w| !w.starts_with("group "));

    struct Info {
        id: String,
        cat: SemanticCategory,
        bbox: crate::docmodel::BoundingBox,
        hint: Option<String>,
    }
    let infos: Vec<Info> = tree
        .top_level()
        .map(|n| Info {
            id: n.id().to_string(),
            cat: n.category(),
            bbox: n.detection.bbox,
            hint: n.detection.group_hint.clone(),
        })
        .collect();

    let mut links: Vec<(usize, usize, RelationKind)> = Vec::new();
    let mut warnings = Vec::new();

    let mut by_hint: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, info) in infos.iter().enumerate() {
        if let Some(h) = &info.hint {
            by_hint.entry(h.as_str()).or_default().push(i);
        }
    }
    for (hint, members) in &by_hint {
        if members.len() < 2 {
            continue;
        }
        let mut anchors: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| infos[i].cat.is_anchor())
            .collect();
        anchors.sort_by(|&a, &b| infos[a].id.cmp(&infos[b].id));
        let Some(&anchor) = anchors.first() else {
            warnings.push(format!("group {hint}: no anchor among members"));
            continue;
        };
        if anchors.len() > 1 {
            warnings.push(format!("group {hint}: {} anchors", anchors.len()));
        }
        for &m in members {
            if anchors.contains(&m) {
                continue;
            }
            match relation_for(infos[anchor].cat, infos[m].cat) {
                Some(kind) => links.push((anchor, m, kind)),
                None => warnings.push(format!(
                    "group {hint}: {} cannot group with {}",
                    infos[m].cat, infos[anchor].cat
                )),
            }
        }
    }

    // Geometric fallback over hint-free elements.
    let mut candidates: Vec<(u8, i64, usize, usize, RelationKind)> = Vec::new();
    for (a, anchor) in infos.iter().enumerate() {
        if anchor.hint.is_some() || !anchor.cat.is_anchor() {
            continue;
        }
        for (p, partner) in infos.iter().enumerate() {
            if p == a || partner.hint.is_some() {
                continue;
            }
            let Some(kind) = relation_for(anchor.cat, partner.cat) else {
                continue;
            };
            let (cx, cy) = partner.bbox.center();
            let dist = anchor.bbox.distance_to_point(cx, cy);
            if dist > cfg.caption_distance {
                continue;
            }
            let preferred = match preferred_direction(kind) {
                Direction::Below => cy >= anchor.bbox.y1,
                Direction::Above => cy <= anchor.bbox.y0,
                Direction::Right => cx >= anchor.bbox.x1,
            };
            // quantized so that float noise does not break exact geometric ties
            let dist_key = (dist * 1e9).round() as i64;
            candidates.push((u8::from(!preferred), dist_key, a, p, kind));
        }
    }
    candidates.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(x.1.cmp(&y.1))
            .then_with(|| infos[x.2].id.cmp(&infos[y.2].id))
            .then_with(|| infos[x.3].id.cmp(&infos[y.3].id))
    });
    let mut partner_used = vec![false; infos.len()];
    let mut anchor_kinds: BTreeSet<(usize, RelationKind)> = BTreeSet::new();
    for (_, _, a, p, kind) in candidates {
        if partner_used[p] || anchor_kinds.contains(&(a, kind)) {
            continue;
        }
        partner_used[p] = true;
        anchor_kinds.insert((a, kind));
        links.push((a, p, kind));
    }

    let ids: Vec<String> = infos.iter().map(|i| i.id.clone()).collect();
    let mut per_node: Vec<Vec<GroupLink>> = vec![Vec::new(); infos.len()];
    for (a, p, kind) in links {
        per_node[a].push(GroupLink {
            kind,
            node_id: ids[p].clone(),
        });
        per_node[p].push(GroupLink {
            kind,
            node_id: ids[a].clone(),
        });
    }
    for (node, mut l) in tree.top_level_mut().zip(per_node) {
        l.sort_by(|x, y| x.node_id.cmp(&y.node_id).then(x.kind.cmp(&y.kind)));
        node.group_links = l;
    }
    tree.warnings.extend(warnings);
    tree
}

/// Drops headers, footers, sidebars and watermarks; page numbers become
/// metadata. Linked nodes are always kept.
pub fn filter_functional(mut tree: LayoutTree) -> LayoutTree {
    let roots = std::mem::take(&mut tree.roots);
    for node in roots {
        let cat = node.category();
        let drop = !node.is_linked() && (cat.is_functional() || cat == SemanticCategory::PageNumber);
        if !drop {
            tree.roots.push(node);
            continue;
        }
        if cat == SemanticCategory::PageNumber {
            tree.page_numbers.push(
                node.detection
                    .truth_text
                    .clone()
                    .unwrap_or_else(|| node.detection.id.clone()),
            );
        }
        let reason = format!("functional:{cat}");
        for child in node.children {
            tree.removed.push(RemovedNode {
                detection: child.detection,
                reason: format!("parent removed:{cat}"),
            });
        }
        tree.removed.push(RemovedNode {
            detection: node.detection,
            reason,
        });
    }
    tree
}

/// Full layout phase for one page: containment, pairing, filtering.
pub fn layout_page(page: &PageIr, cfg: &LayoutConfig) -> LayoutTree {
    let tree = build_tree(page.page_index, &page.detections, cfg);
    filter_functional(pair_groups(tree, cfg))
}
