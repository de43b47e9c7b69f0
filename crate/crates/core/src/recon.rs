//! Multi-source shortest-path-tree reconstruction.
//!
//! Every source starts at distance 0; each reachable vertex takes the label
//! and parent chain of its cheapest source. Ties between equal tentative
//! distances go to the smaller `(dist, predecessor id, label)` triple, so the
//! result is a pure function of the graph and the sources.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centers::CenterVoxelSet;
use crate::error::{Error, Result};
use crate::io;
use crate::metricgraph::MetricGraph;
use crate::phantom::{distance, CenterlineTree, Phantom, TreeNode};
use crate::volume::Label;

pub const DEFAULT_SNAP_RADIUS: f64 = 10.0;
pub const RECONSTRUCTED_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePoint {
    pub label: Label,
    pub position: [f64; 3],
}

fn default_snap_radius() -> f64 {
    DEFAULT_SNAP_RADIUS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub sources: Vec<SourcePoint>,
    #[serde(default = "default_snap_radius")]
    pub snap_radius: f64,
}

impl SourceSpec {
    /// Tree roots of a phantom as sources.
    pub fn from_phantom(phantom: &Phantom) -> Self {
        SourceSpec {
            sources: phantom
                .source_positions()
                .into_iter()
                .map(|(label, position)| SourcePoint { label, position })
                .collect(),
            snap_radius: DEFAULT_SNAP_RADIUS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::invalid("source spec lists no sources"));
        }
        if !(self.snap_radius >= 0.0 && self.snap_radius.is_finite()) {
            return Err(Error::invalid("snap_radius must be finite and non-negative"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.sources {
            if s.label == 0 {
                return Err(Error::invalid("source label 0 is reserved for background"));
            }
            if !seen.insert(s.label) {
                return Err(Error::invalid(format!("class {} has more than one source", s.label)));
            }
        }
        Ok(())
    }
}

/// Nearest center within `snap_radius` of each source (ties to the smaller
/// id), returned as `(label, vertex)` in spec order.
pub fn snap_sources(spec: &SourceSpec, centers: &CenterVoxelSet) -> Result<Vec<(Label, usize)>> {
    spec.validate()?;
    if centers.is_empty() {
        return Err(Error::invalid("no centers to snap sources to"));
    }
    spec.sources
        .iter()
        .map(|s| {
            let mut best: Option<(f64, usize)> = None;
            for c in &centers.entries {
                let d = distance(s.position, c.position());
                if d <= spec.snap_radius && best.is_none_or(|(bd, bid)| d < bd || (d == bd && c.id < bid)) {
                    best = Some((d, c.id));
                }
            }
            best.map(|(_, id)| (s.label, id)).ok_or(Error::SourceNotSnapped(s.label))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexAssignment {
    pub label: Option<Label>,
    pub parent: Option<usize>,
    pub dist: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedForest {
    pub vertices: Vec<VertexAssignment>,
    pub sources: Vec<(Label, usize)>,
}

impl ReconstructedForest {
    pub fn unassigned(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&v| self.vertices[v].label.is_none())
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Queued {
    dist: f64,
    vertex: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Tentative state; `pred` of a source is `None`, which orders before any id.
type Key = (f64, Option<usize>, Label);

fn key_less(a: &Key, b: &Key) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)) == Ordering::Less
}

pub fn shortest_path_forest(graph: &MetricGraph, sources: &[(Label, usize)]) -> Result<ReconstructedForest> {
    let n = graph.n_vertices;
    let mut first_label: BTreeMap<usize, Label> = BTreeMap::new();
    let mut labels_seen = std::collections::HashSet::new();
    for &(label, v) in sources {
        if v >= n {
            return Err(Error::invalid(format!("source vertex {v} is not in the graph")));
        }
        if !labels_seen.insert(label) {
            return Err(Error::invalid(format!("class {label} has more than one source")));
        }
        if let Some(&first) = first_label.get(&v) {
            return Err(Error::DuplicateSource { vertex: v, first, second: label });
        }
        first_label.insert(v, label);
    }

    let adj = graph.adjacency();
    let mut best: Vec<Option<Key>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(label, v) in sources {
        best[v] = Some((0.0, None, label));
        heap.push(Queued { dist: 0.0, vertex: v });
    }
    while let Some(Queued { dist, vertex: u }) = heap.pop() {
        if settled[u] || best[u].map(|k| k.0) != Some(dist) {
            continue;
        }
        settled[u] = true;
        let label = best[u].expect("queued vertices have a key").2;
        for &(v, w) in &adj[u] {
            if settled[v] {
                continue;
            }
            let cand = (dist + w, Some(u), label);
            if best[v].is_none_or(|cur| key_less(&cand, &cur)) {
                let improved = best[v].is_none_or(|cur| cand.0 < cur.0);
                best[v] = Some(cand);
                if improved {
                    heap.push(Queued { dist: cand.0, vertex: v });
                }
            }
        }
    }
    let vertices = best
        .into_iter()
        .map(|k| match k {
            Some((dist, parent, label)) => VertexAssignment { label: Some(label), parent, dist: Some(dist) },
            None => VertexAssignment { label: None, parent: None, dist: None },
        })
        .collect();
    Ok(ReconstructedForest { vertices, sources: sources.to_vec() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub unassigned_count: usize,
    pub per_class_vertex_counts: BTreeMap<Label, usize>,
    /// Sum of the weights of all parent edges.
    pub total_cost: f64,
}

/// One tree per source class, nodes at center positions with radius 1.0;
/// unassigned vertices are left out and counted in the report.
pub fn forest_to_trees(
    forest: &ReconstructedForest,
    centers: &CenterVoxelSet,
    graph: &MetricGraph,
) -> Result<(Vec<CenterlineTree>, ReconReport)> {
    if forest.vertices.len() != centers.len() {
        return Err(Error::invalid("forest and center set differ in size"));
    }
    let weights: std::collections::HashMap<(usize, usize), f64> =
        graph.edges.iter().map(|e| ((e.i, e.j), e.weight)).collect();
    let mut by_label: BTreeMap<Label, Vec<TreeNode>> =
        forest.sources.iter().map(|&(l, _)| (l, Vec::new())).collect();
    let mut total_cost = 0.0;
    for (v, a) in forest.vertices.iter().enumerate() {
        let Some(label) = a.label else { continue };
        if let Some(p) = a.parent {
            let w = weights
                .get(&(p.min(v), p.max(v)))
                .ok_or_else(|| Error::invalid(format!("parent edge ({p}, {v}) is not in the graph")))?;
            total_cost += w;
        }
        by_label.entry(label).or_default().push(TreeNode {
            id: centers.entries[v].id,
            pos: centers.entries[v].position(),
            radius: RECONSTRUCTED_RADIUS,
            parent: a.parent.map(|p| centers.entries[p].id),
            label,
        });
    }
    let per_class_vertex_counts = by_label.iter().map(|(&l, nodes)| (l, nodes.len())).collect();
    let trees: Vec<CenterlineTree> = by_label.into_values().map(|nodes| CenterlineTree { nodes }).collect();
    for t in &trees {
        t.validate()?;
    }
    let report = ReconReport {
        unassigned_count: forest.unassigned().len(),
        per_class_vertex_counts,
        total_cost,
    };
    Ok((trees, report))
}

pub fn write_report(path: &Path, report: &ReconReport) -> Result<()> {
    io::write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<ReconReport> {
    io::read_json(path)
}
