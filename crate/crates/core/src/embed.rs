//! Per-center embeddings optimized directly as free variables.
//!
//! The training pairs are all center pairs within the neighborhood radius.
//! Same-tree pairs carry the along-tree distance between the tree nodes
//! nearest to each center; different-tree pairs carry nothing.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::centers::CenterVoxelSet;
use crate::error::{Error, Result};
use crate::io;
use crate::losses::{Objective, PairSample, ResolvedPairs, TopologyLossParams};
use crate::phantom::{distance, GeodesicIndex, Phantom};
use crate::spatial::pairs_within;
use crate::volume::Label;

pub const EMBED_DIM: usize = 8;

pub type Embedding = [f64; EMBED_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<usize>,
    vectors: Vec<Embedding>,
    slots: HashMap<usize, usize>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<usize>, vectors: Vec<Embedding>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::invalid("embedding ids and vectors differ in length"));
        }
        let mut slots = HashMap::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            if slots.insert(id, k).is_some() {
                return Err(Error::invalid(format!("duplicate embedding id {id}")));
            }
        }
        if let Some(k) = vectors.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid(format!("embedding {} is not finite", ids[k])));
        }
        Ok(EmbeddingTable { ids, vectors, slots })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Embedding] {
        &self.vectors
    }

    pub fn slot(&self, id: usize) -> Option<usize> {
        self.slots.get(&id).copied()
    }

    pub fn get(&self, id: usize) -> Option<&Embedding> {
        self.slot(id).map(|k| &self.vectors[k])
    }

    /// Applies `f` to every vector, keeping ids.
    pub fn map_vectors(&self, f: impl FnMut(&Embedding) -> Embedding) -> Result<Self> {
        Self::new(self.ids.clone(), self.vectors.iter().map(f).collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingEntry {
    id: usize,
    vec: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    dim: usize,
    entries: Vec<EmbeddingEntry>,
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let entries = table
        .ids
        .iter()
        .zip(&table.vectors)
        .map(|(&id, v)| EmbeddingEntry { id, vec: v.to_vec() })
        .collect();
    io::write_json(path, &EmbeddingFile { dim: EMBED_DIM, entries })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file: EmbeddingFile = io::read_json(path)?;
    if file.dim != EMBED_DIM {
        return Err(Error::format(path, format!("expected dim {EMBED_DIM}, found {}", file.dim)));
    }
    let mut ids = Vec::with_capacity(file.entries.len());
    let mut vectors = Vec::with_capacity(file.entries.len());
    for e in file.entries {
        let v: Embedding = e
            .vec
            .as_slice()
            .try_into()
            .map_err(|_| Error::format(path, format!("entry {} has {} values", e.id, e.vec.len())))?;
        ids.push(e.id);
        vectors.push(v);
    }
    EmbeddingTable::new(ids, vectors).map_err(|e| Error::format(path, e.to_string()))
}

const PAIRS_HEADER: [&str; 4] = ["i", "j", "same_label", "geodesic"];

pub fn write_pairs(path: &Path, pairs: &[PairSample]) -> Result<()> {
    let mut out = String::from("i,j,same_label,geodesic\n");
    for p in pairs {
        let d = p.geodesic.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.i, p.j, p.same_label as u8, d));
    }
    io::write_bytes(path, out.as_bytes())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSample>> {
    let mut reader = io::csv_reader(path, &PAIRS_HEADER)?;
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let same: u8 = io::csv_field(path, &record, 2, "same_label")?;
        let geodesic = match record.get(3).map(str::trim) {
            Some("") | None => None,
            Some(_) => Some(io::csv_field::<f64>(path, &record, 3, "geodesic")?),
        };
        let pair = PairSample {
            i: io::csv_field(path, &record, 0, "i")?,
            j: io::csv_field(path, &record, 1, "j")?,
            same_label: same == 1,
            geodesic,
        };
        pair.validate().map_err(|e| Error::format(path, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Tree label of every center, read from the phantom's label volume.
pub fn center_labels(phantom: &Phantom, centers: &CenterVoxelSet) -> Result<Vec<Label>> {
    let dims = phantom.dims();
    centers
        .entries
        .iter()
        .map(|c| {
            let [x, y, z] = c.voxel;
            if x >= dims.nx || y >= dims.ny || z >= dims.nz {
                return Err(Error::invalid(format!("center {} lies outside the phantom", c.id)));
            }
            match phantom.vessel_labels.get(x, y, z) {
                0 => Err(Error::invalid(format!("center {} lies outside every vessel", c.id))),
                l => Ok(l),
            }
        })
        .collect()
}

/// Nearest node (ties to the lower id) of the tree each center is labeled with.
fn nearest_nodes(phantom: &Phantom, centers: &CenterVoxelSet, labels: &[Label]) -> Result<Vec<usize>> {
    centers
        .entries
        .iter()
        .zip(labels)
        .map(|(c, &label)| {
            let tree = phantom
                .tree(label)
                .ok_or_else(|| Error::invalid(format!("no tree carries label {label}")))?;
            let p = c.position();
            let mut best: Option<(f64, usize)> = None;
            for n in &tree.nodes {
                let d = distance(p, n.pos);
                let better = match best {
                    None => true,
                    Some((bd, bid)) => d < bd || (d == bd && n.id < bid),
                };
                if better {
                    best = Some((d, n.id));
                }
            }
            best.map(|(_, id)| id)
                .ok_or_else(|| Error::invalid(format!("tree {label} is empty")))
        })
        .collect()
}

/// Every center pair within `radius` voxels, labeled same/different tree,
/// with along-tree distances for same-tree pairs.
pub fn build_pair_set(phantom: &Phantom, centers: &CenterVoxelSet, radius: f64) -> Result<Vec<PairSample>> {
    let labels = center_labels(phantom, centers)?;
    let nodes = nearest_nodes(phantom, centers, &labels)?;
    let mut indexes: HashMap<Label, GeodesicIndex> = HashMap::new();
    for t in &phantom.trees {
        if let Some(l) = t.label() {
            indexes.insert(l, GeodesicIndex::new(t)?);
        }
    }
    pairs_within(&centers.positions(), radius)
        .into_iter()
        .map(|(a, b)| {
            let (i, j) = (centers.entries[a].id, centers.entries[b].id);
            if labels[a] == labels[b] {
                let d = indexes[&labels[a]].distance(nodes[a], nodes[b])?;
                Ok(PairSample::same(i, j, d))
            } else {
                Ok(PairSample::different(i, j))
            }
        })
        .collect()
}

fn default_init_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Step size per unit of mean pair degree (see [`optimize_embeddings`]).
    pub step_size: f64,
    pub momentum: f64,
    pub max_iters: usize,
    pub target_loss: f64,
    #[serde(default)]
    pub log_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            seed: 0,
            init_scale: 1.0,
            step_size: 0.1,
            momentum: 0.9,
            max_iters: 5000,
            target_loss: 0.004,
            log_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }
}

/// Iteration span over which the loss is expected never to rise.
pub const DIVERGENCE_WINDOW: usize = 50;

/// Seeded isotropic Gaussian starting point for ids `0..n`.
pub fn initial_embeddings(n: usize, scale: f64, seed: u64) -> Result<EmbeddingTable> {
    let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = (0..n)
        .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
        .collect();
    EmbeddingTable::new((0..n).collect(), vectors)
}

/// Momentum gradient descent on the mean pair loss over embeddings for
/// centers `0..n_centers`.
///
/// The raw gradient of a mean over `m` pairs shrinks like `1/m`, so the step
/// is rescaled by `m / mean_degree` (`mean_degree = 2m / n`): `step_size`
/// then acts on the average per-pair pull a center feels, independent of how
/// many pairs the set holds. Returns the final table and the loss recorded
/// before every update.
pub fn optimize_embeddings(
    pairs: &[PairSample],
    n_centers: usize,
    config: &OptimizerConfig,
    objective: Objective,
    params: &TopologyLossParams,
) -> Result<(EmbeddingTable, Vec<f64>)> {
    config.validate()?;
    params.validate()?;
    let mut table = initial_embeddings(n_centers, config.init_scale, config.seed)?;
    let resolved = ResolvedPairs::new(&table, pairs)?;
    let effective_step = config.step_size * n_centers as f64 / 2.0;

    let mut vectors = table.vectors.clone();
    let mut velocity = vec![[0.0; EMBED_DIM]; n_centers];
    let mut grad = vec![[0.0; EMBED_DIM]; n_centers];
    let mut trace = Vec::new();
    let mut warned = false;
    for iter in 0..config.max_iters {
        let loss = resolved.evaluate(&vectors, objective, params, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(iter));
        }
        if iter >= DIVERGENCE_WINDOW && loss > trace[iter - DIVERGENCE_WINDOW] && !warned {
            log::warn!("loss rose over the {DIVERGENCE_WINDOW} iterations before {iter}; step_size may be too large");
            warned = true;
        }
        trace.push(loss);
        if config.log_every > 0 && iter % config.log_every == 0 {
            log::info!("iteration {iter}: loss {loss:.6} over {} pairs", resolved.len());
        }
        if loss <= config.target_loss {
            break;
        }
        for ((x, v), g) in vectors.iter_mut().zip(&mut velocity).zip(&grad) {
            for k in 0..EMBED_DIM {
                v[k] = config.momentum * v[k] - effective_step * g[k];
                x[k] += v[k];
            }
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(iter));
        }
    }
    table.vectors = vectors;
    Ok((table, trace))
}

/// Adds seeded per-coordinate Gaussian noise of standard deviation `sigma`.
pub fn perturb_embeddings(table: &EmbeddingTable, sigma: f64, seed: u64) -> Result<EmbeddingTable> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    if sigma == 0.0 {
        return Ok(table.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    table.map_vectors(|v| v.map(|x| x + normal.sample(&mut rng)))
}
