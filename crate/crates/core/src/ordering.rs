//! Per-page reading-order recovery.
//!
//! Composition is fixed: group clustering collapses linked elements into one
//! unit, XY-cut splits the page along the widest whitespace gaps, and each leaf
//! XY-cut cannot split further is ordered by gap-tree precedence. Rules assume
//! left-to-right scripts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::OrderingConfig;
use crate::docmodel::{BoundingBox, SemanticCategory};
use crate::layout::{LayoutNode, LayoutTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderUnit {
    pub unit_id: String,
    /// Member detection ids in intra-unit reading order.
    pub member_ids: Vec<String>,
    pub boxes: Vec<BoundingBox>,
    pub category: SemanticCategory,
    pub page_index: usize,
}

impl OrderUnit {
    pub fn hull(&self) -> BoundingBox {
        let mut it = self.boxes.iter();
        let first = *it.next().expect("unit has at least one box");
        it.fold(first, |acc, b| acc.union(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CutTree {
    HCut {
        at: f64,
        first: Box<CutTree>,
        second: Box<CutTree>,
    },
    VCut {
        at: f64,
        first: Box<CutTree>,
        second: Box<CutTree>,
    },
    Leaf(Vec<String>),
}

impl CutTree {
    /// Leaves in depth-first, reading-first order.
    pub fn leaves(&self) -> Vec<&[String]> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a [String]>) {
        match self {
            CutTree::Leaf(ids) => out.push(ids),
            CutTree::HCut { first, second, .. } | CutTree::VCut { first, second, .. } => {
                first.collect_leaves(out);
                second.collect_leaves(out);
            }
        }
    }

    pub fn unit_ids(&self) -> Vec<String> {
        self.leaves().into_iter().flatten().cloned().collect()
    }
}

/// Sorts boxes into line bands (top to bottom) and left to right within a band.
///
/// Returns indices into `boxes`. Two boxes share a band when their vertical
/// overlap reaches `band_overlap` of the shorter of the two.
pub fn band_order(boxes: &[(&str, BoundingBox)], band_overlap: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ca, cb) = (boxes[a].1.center().1, boxes[b].1.center().1);
        ca.total_cmp(&cb)
            .then(boxes[a].1.x0.total_cmp(&boxes[b].1.x0))
            .then(boxes[a].0.cmp(boxes[b].0))
    });
    let mut bands: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        let b = boxes[i].1;
        let joins = bands.last().is_some_and(|band| {
            band.iter().any(|&j| {
                let o = boxes[j].1;
                b.vertical_overlap(&o) >= band_overlap * b.height().min(o.height())
            })
        });
        if joins {
            bands.last_mut().unwrap().push(i);
        } else {
            bands.push(vec![i]);
        }
    }
    bands
        .into_iter()
        .flat_map(|mut band| {
            band.sort_by(|&a, &b| {
                boxes[a].1.x0.total_cmp(&boxes[b].1.x0).then(boxes[a].0.cmp(boxes[b].0))
            });
            band
        })
        .collect()
}

/// Collapses every linked group into one unit; other nodes become singletons.
pub fn group_cluster(tree: &LayoutTree, cfg: &OrderingConfig) -> Vec<OrderUnit> {
    let nodes: Vec<&LayoutNode> = tree.top_level().collect();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();

    // union-find over group links
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (i, n) in nodes.iter().enumerate() {
        for l in &n.group_links {
            if let Some(&j) = index.get(l.node_id.as_str()) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        let r = find(&mut parent, i);
        components.entry(r).or_default().push(i);
    }

    components
        .into_values()
        .map(|members| {
            let anchor = members
                .iter()
                .copied()
                .filter(|&i| nodes[i].category().is_anchor())
                .min_by(|&a, &b| nodes[a].id().cmp(nodes[b].id()))
                .unwrap_or_else(|| {
                    members
                        .iter()
                        .copied()
                        .min_by(|&a, &b| nodes[a].id().cmp(nodes[b].id()))
                        .unwrap()
                });
            let boxes: Vec<(&str, BoundingBox)> = members
                .iter()
                .map(|&i| (nodes[i].id(), nodes[i].detection.bbox))
                .collect();
            let order = band_order(&boxes, cfg.band_overlap);
            OrderUnit {
                unit_id: nodes[anchor].id().to_string(),
                member_ids: order.iter().map(|&k| boxes[k].0.to_string()).collect(),
                boxes: order.iter().map(|&k| boxes[k].1).collect(),
                category: nodes[anchor].category(),
                page_index: tree.page_index,
            }
        })
        .collect()
}

/// Widest internal gap of a set of intervals: `(width, midpoint)`.
fn widest_gap(mut intervals: Vec<(f64, f64)>) -> Option<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut best: Option<(f64, f64)> = None;
    let mut reach = intervals.first()?.1;
    for &(lo, hi) in &intervals[1..] {
        if lo > reach {
            let w = lo - reach;
            if best.is_none_or(|(bw, _)| w > bw) {
                best = Some((w, (lo + reach) / 2.0));
            }
        }
        reach = reach.max(hi);
    }
    best
}

/// Recursive XY-cut over unit hulls.
///
/// At each step the widest horizontal or vertical whitespace gap of at least
/// `min_gap` is cut (horizontal wins ties). Regions without such a gap become
/// leaves ordered by `(y0, x0)`.
pub fn xy_cut(units: &[OrderUnit], region: BoundingBox, cfg: &OrderingConfig) -> CutTree {
    let hulls: Vec<(String, BoundingBox)> =
        units.iter().map(|u| (u.unit_id.clone(), u.hull())).collect();
    cut_rec(&hulls, region, cfg)
}

fn cut_rec(items: &[(String, BoundingBox)], region: BoundingBox, cfg: &OrderingConfig) -> CutTree {
    if items.len() <= 1 {
        return CutTree::Leaf(items.iter().map(|i| i.0.clone()).collect());
    }
    let h = widest_gap(items.iter().map(|i| (i.1.y0, i.1.y1)).collect());
    let v = widest_gap(items.iter().map(|i| (i.1.x0, i.1.x1)).collect());
    let admissible = |g: Option<(f64, f64)>| g.filter(|(w, _)| *w >= cfg.min_gap);
    let choice = match (admissible(h), admissible(v)) {
        (Some(hg), Some(vg)) => Some(if hg.0 >= vg.0 { (true, hg.1) } else { (false, vg.1) }),
        (Some(hg), None) => Some((true, hg.1)),
        (None, Some(vg)) => Some((false, vg.1)),
        (None, None) => None,
    };
    match choice {
        None => {
            let mut sorted: Vec<&(String, BoundingBox)> = items.iter().collect();
            sorted.sort_by(|a, b| {
                a.1.y0
                    .total_cmp(&b.1.y0)
                    .then(a.1.x0.total_cmp(&b.1.x0))
                    .then(a.0.cmp(&b.0))
            });
            CutTree::Leaf(sorted.into_iter().map(|i| i.0.clone()).collect())
        }
        Some((horizontal, at)) => {
            let (first, second): (Vec<_>, Vec<_>) = items
                .iter()
                .cloned()
                .partition(|i| if horizontal { i.1.y1 <= at } else { i.1.x1 <= at });
            let (r1, r2) = if horizontal {
                (
                    BoundingBox { y1: at, ..region },
                    BoundingBox { y0: at, ..region },
                )
            } else {
                (
                    BoundingBox { x1: at, ..region },
                    BoundingBox { x0: at, ..region },
                )
            };
            let first = Box::new(cut_rec(&first, r1, cfg));
            let second = Box::new(cut_rec(&second, r2, cfg));
            if horizontal {
                CutTree::HCut { at, first, second }
            } else {
                CutTree::VCut { at, first, second }
            }
        }
    }
}

/// Precedence-graph order for units XY-cut cannot separate.
///
/// `u` precedes `v` when `u` sits above `v` with enough horizontal overlap, or
/// when both share a band and `u` lies to the left. Kahn's algorithm picks the
/// available unit with the smallest `(y0, x0)`; cycles are broken the same way.
pub fn gap_tree_order(units: &[OrderUnit], cfg: &OrderingConfig) -> Vec<String> {
    let hulls: Vec<BoundingBox> = units.iter().map(OrderUnit::hull).collect();
    let n = units.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for u in 0..n {
        for v in 0..n {
            if u != v && precedes(&hulls[u], &hulls[v], cfg) {
                succ[u].push(v);
                indeg[v] += 1;
            }
        }
    }
    let key = |i: usize| (hulls[i].y0, hulls[i].x0, units[i].unit_id.as_str());
    let less = |a: usize, b: usize| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.cmp(kb.2))
    };
    let mut done = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ready = (0..n).filter(|&i| !done[i] && indeg[i] == 0).min_by(|&a, &b| less(a, b));
        let pick = ready.unwrap_or_else(|| {
            (0..n)
                .filter(|&i| !done[i])
                .min_by(|&a, &b| less(a, b))
                .expect("remaining unit")
        });
        done[pick] = true;
        for &v in &succ[pick] {
            indeg[v] = indeg[v].saturating_sub(1);
        }
        out.push(units[pick].unit_id.clone());
    }
    out
}

pub(crate) fn precedes(u: &BoundingBox, v: &BoundingBox, cfg: &OrderingConfig) -> bool {
    let above = u.y1 <= v.y0
        && u.horizontal_overlap(v) >= cfg.stack_overlap * u.width().min(v.width());
    let left = u.vertical_overlap(v) >= cfg.band_overlap * u.height().min(v.height())
        && u.x1 - v.x0 < cfg.align_tolerance
        && u.x0 < v.x0;
    above || left
}

/// Orders units: XY-cut first, then gap-tree inside multi-unit leaves.
pub fn order_units(units: Vec<OrderUnit>, cfg: &OrderingConfig) -> Vec<OrderUnit> {
    let tree = xy_cut(&units, BoundingBox::PAGE, cfg);
    let mut by_id: HashMap<String, OrderUnit> =
        units.into_iter().map(|u| (u.unit_id.clone(), u)).collect();
    let mut out = Vec::with_capacity(by_id.len());
    for leaf in tree.leaves() {
        if leaf.len() == 1 {
            out.push(by_id.remove(&leaf[0]).expect("leaf unit"));
            continue;
        }
        let leaf_units: Vec<OrderUnit> = leaf.iter().map(|id| by_id[id].clone()).collect();
        for id in gap_tree_order(&leaf_units, cfg) {
            out.push(by_id.remove(&id).expect("leaf unit"));
        }
    }
    out
}

/// Reading order of a filtered, paired page as unit ids.
pub fn reading_order(tree: &LayoutTree, cfg: &OrderingConfig) -> Vec<String> {
    order_units(group_cluster(tree, cfg), cfg)
        .into_iter()
        .map(|u| u.unit_id)
        .collect()
}

/// Reading order expanded to member detection ids.
pub fn detection_order(units: &[OrderUnit]) -> Vec<String> {
    units.iter().flat_map(|u| u.member_ids.iter().cloned()).collect()
}
