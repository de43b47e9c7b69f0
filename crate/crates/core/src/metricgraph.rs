//! Reconstruction graphs over center-voxels.
//!
//! Vertices are center ids `0..n`; candidate edges are the center pairs within
//! the voxel-space neighborhood radius, and each builder decides which of
//! those survive and with what weight.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centers::CenterVoxelSet;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io;
use crate::losses::cosine_similarity;
use crate::spatial::{pairs_within, squared_distance};
use crate::volume::Label;

pub const DEFAULT_RADIUS: f64 = 15.0;
pub const DEFAULT_ALPHA: f64 = 1.0 / 15.0;
pub const DEFAULT_CUTOFF: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricGraph {
    pub n_vertices: usize,
    pub edges: Vec<Edge>,
}

impl MetricGraph {
    /// Sorts edges by `(i, j)` and checks the graph invariants.
    pub fn new(n_vertices: usize, mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_by_key(|e| (e.i, e.j));
        for (k, e) in edges.iter().enumerate() {
            if e.i >= e.j {
                return Err(Error::invalid(format!("edge ({}, {}) must satisfy i < j", e.i, e.j)));
            }
            if e.j >= n_vertices {
                return Err(Error::invalid(format!("edge ({}, {}) names a missing vertex", e.i, e.j)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::invalid(format!("edge ({}, {}) has weight {}", e.i, e.j, e.weight)));
            }
            if k > 0 && (edges[k - 1].i, edges[k - 1].j) == (e.i, e.j) {
                return Err(Error::invalid(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(MetricGraph { n_vertices, edges })
    }

    /// Adjacency lists, neighbors in ascending id order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for e in &self.edges {
            adj[e.i].push((e.j, e.weight));
            adj[e.j].push((e.i, e.weight));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        adj
    }

    /// Every edge joins centers within `radius` voxels of each other.
    pub fn check_support(&self, centers: &CenterVoxelSet, radius: f64) -> Result<()> {
        if centers.len() != self.n_vertices {
            return Err(Error::invalid(format!(
                "graph has {} vertices but {} centers were given",
                self.n_vertices,
                centers.len()
            )));
        }
        for e in &self.edges {
            let d2 = squared_distance(&centers.entries[e.i].position(), &centers.entries[e.j].position());
            if d2 > radius * radius {
                return Err(Error::invalid(format!("edge ({}, {}) spans more than {radius} voxels", e.i, e.j)));
            }
        }
        Ok(())
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius >= 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("radius must be finite and non-negative, got {radius}")))
    }
}

fn embedding_of(embeddings: &EmbeddingTable, id: usize) -> Result<&crate::embed::Embedding> {
    embeddings.get(id).ok_or(Error::MissingEmbedding(id))
}

/// Edge iff the feature-space distance `w` is below `cutoff`; weight `(w/α)²`.
pub fn build_topology_graph(
    centers: &CenterVoxelSet,
    embeddings: &EmbeddingTable,
    radius: f64,
    alpha: f64,
    cutoff: f64,
) -> Result<MetricGraph> {
    check_radius(radius)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    for c in &centers.entries {
        embedding_of(embeddings, c.id)?;
    }
    let mut edges = Vec::new();
    for (a, b) in pairs_within(&centers.positions(), radius) {
        let (i, j) = (centers.entries[a].id, centers.entries[b].id);
        let (xi, xj) = (embedding_of(embeddings, i)?, embedding_of(embeddings, j)?);
        let w = xi.iter().zip(xj).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if w < cutoff {
            edges.push(Edge { i: i.min(j), j: i.max(j), weight: (w / alpha).powi(2) });
        }
    }
    MetricGraph::new(centers.len(), edges)
}

/// Edge iff the signed cosine similarity `S ≥ 0`; weight `E·(1 − S)` with `E`
/// the voxel-space distance.
pub fn build_cosine_graph(centers: &CenterVoxelSet, embeddings: &EmbeddingTable, radius: f64) -> Result<MetricGraph> {
    check_radius(radius)?;
    for c in &centers.entries {
        let x = embedding_of(embeddings, c.id)?;
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::UndefinedCosine);
        }
    }
    let positions = centers.positions();
    let mut edges = Vec::new();
    for (a, b) in pairs_within(&positions, radius) {
        let (i, j) = (centers.entries[a].id, centers.entries[b].id);
        let s = cosine_similarity(embedding_of(embeddings, i)?, embedding_of(embeddings, j)?)
            .ok_or(Error::UndefinedCosine)?;
        if s >= 0.0 {
            let e = squared_distance(&positions[a], &positions[b]).sqrt();
            edges.push(Edge { i: i.min(j), j: i.max(j), weight: e * (1.0 - s) });
        }
    }
    MetricGraph::new(centers.len(), edges)
}

/// Edges only between same-label centers; weight is the squared voxel distance.
pub fn build_label_graph(centers: &CenterVoxelSet, labels: &[Label], radius: f64) -> Result<MetricGraph> {
    check_radius(radius)?;
    if labels.len() != centers.len() {
        return Err(Error::invalid("one label per center is required"));
    }
    let positions = centers.positions();
    let edges = pairs_within(&positions, radius)
        .into_iter()
        .filter(|&(a, b)| labels[a] == labels[b])
        .map(|(a, b)| {
            let (i, j) = (centers.entries[a].id, centers.entries[b].id);
            Edge { i: i.min(j), j: i.max(j), weight: squared_distance(&positions[a], &positions[b]) }
        })
        .collect();
    MetricGraph::new(centers.len(), edges)
}

const GRAPH_HEADER: [&str; 3] = ["i", "j", "weight"];

pub fn write_graph(path: &Path, graph: &MetricGraph) -> Result<()> {
    let mut out = String::from("i,j,weight\n");
    for e in &graph.edges {
        out.push_str(&format!("{},{},{}\n", e.i, e.j, e.weight));
    }
    io::write_bytes(path, out.as_bytes())
}

/// Reads an edge list; the vertex count comes from the center set it was
/// built over.
pub fn read_graph(path: &Path, n_vertices: usize) -> Result<MetricGraph> {
    let mut reader = io::csv_reader(path, &GRAPH_HEADER)?;
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        edges.push(Edge {
            i: io::csv_field(path, &record, 0, "i")?,
            j: io::csv_field(path, &record, 1, "j")?,
            weight: io::csv_field(path, &record, 2, "weight")?,
        });
    }
    MetricGraph::new(n_vertices, edges).map_err(|e| Error::format(path, e.to_string()))
}
