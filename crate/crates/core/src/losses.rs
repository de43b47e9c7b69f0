//! Loss functions with hand-derived gradients: vessel dice, weighted
//! smooth-L1 centerness regression, the topology pair loss and its mean over
//! a pair set, the cosine metric loss, and the multi-class dice used by the
//! classification baseline.
//!
//! Totals are always accumulated in ascending `(min(i,j), max(i,j))` order so
//! that the value does not depend on how the caller ordered the pairs.

use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, EmbeddingTable, EMBED_DIM};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume};

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1`]; `sign(x)` at `|x| = 1`, where both sides agree.
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `1 − 2Σv·p / (Σv + Σp)` and its gradient with respect to `pred`.
pub fn dice_loss(truth: &[f64], pred: &[f64]) -> Result<(f64, Vec<f64>)> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "dice needs equal non-empty inputs, got {} and {}",
            truth.len(),
            pred.len()
        )));
    }
    let inter: f64 = truth.iter().zip(pred).map(|(v, p)| v * p).sum();
    let denom: f64 = truth.iter().sum::<f64>() + pred.iter().sum::<f64>();
    if denom == 0.0 {
        return Err(Error::DegenerateDice);
    }
    let value = 1.0 - 2.0 * inter / denom;
    let grad = truth
        .iter()
        .map(|v| -2.0 * v / denom + 2.0 * inter / (denom * denom))
        .collect();
    Ok((value, grad))
}

/// Sum of per-class dice losses over the same voxels (one-hot truth and
/// predicted class probabilities, class-major).
pub fn multiclass_dice_loss(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::invalid("multi-class dice needs one truth and one prediction per class"));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(truth.len());
    for (t, p) in truth.iter().zip(pred) {
        let (v, g) = dice_loss(t, p)?;
        total += v;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Inverse-square weight, with the centerline singularity clamped at 1 voxel.
pub fn centerness_weight(truth: f64) -> f64 {
    let s = truth.max(1.0);
    1.0 / (s * s)
}

/// Weighted smooth-L1 centerness regression over the vessel voxels,
/// normalized by the vessel voxel count. Returns the gradient with respect
/// to `pred` (zero outside the mask).
pub fn centerness_loss_values(truth: &[f64], pred: &[f64], in_vessel: &[bool]) -> Result<(f64, Vec<f64>)> {
    if truth.len() != pred.len() || truth.len() != in_vessel.len() {
        return Err(Error::invalid("centerness inputs differ in length"));
    }
    let count = in_vessel.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("centerness loss needs at least one vessel voxel"));
    }
    let norm = count as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..truth.len() {
        if !in_vessel[i] {
            continue;
        }
        let w = centerness_weight(truth[i]);
        let r = truth[i] - pred[i];
        value += w * smooth_l1(r);
        grad[i] = -w * smooth_l1_grad(r) / norm;
    }
    Ok((value / norm, grad))
}

pub fn centerness_loss(
    truth: &ScalarVolume,
    pred: &ScalarVolume,
    vessel_mask: &LabelVolume,
) -> Result<(f64, Vec<f64>)> {
    if truth.dims() != pred.dims() || truth.dims() != vessel_mask.dims() {
        return Err(Error::invalid("centerness volumes differ in dims"));
    }
    let t: Vec<f64> = truth.data().iter().map(|&v| v as f64).collect();
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let m: Vec<bool> = vessel_mask.data().iter().map(|&l| l > 0).collect();
    centerness_loss_values(&t, &p, &m)
}

/// One training pair of center ids. `geodesic` is the along-tree distance,
/// present exactly when both centers belong to the same tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub same_label: bool,
    pub geodesic: Option<f64>,
}

impl PairSample {
    pub fn same(i: usize, j: usize, geodesic: f64) -> Self {
        PairSample { i, j, same_label: true, geodesic: Some(geodesic) }
    }

    pub fn different(i: usize, j: usize) -> Self {
        PairSample { i, j, same_label: false, geodesic: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == self.j {
            return Err(Error::invalid(format!("pair ({}, {}) repeats a center", self.i, self.j)));
        }
        match (self.same_label, self.geodesic) {
            (true, Some(d)) if d >= 0.0 && d.is_finite() => Ok(()),
            (true, Some(d)) => Err(Error::invalid(format!("pair ({}, {}) has invalid geodesic {d}", self.i, self.j))),
            (true, None) => Err(Error::invalid(format!(
                "same-label pair ({}, {}) has no geodesic distance",
                self.i, self.j
            ))),
            (false, Some(_)) => Err(Error::invalid(format!(
                "different-label pair ({}, {}) carries a geodesic distance",
                self.i, self.j
            ))),
            (false, None) => Ok(()),
        }
    }

    fn order_key(&self) -> (usize, usize, usize, usize) {
        (self.i.min(self.j), self.i.max(self.j), self.i, self.j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyLossParams {
    pub alpha: f64,
    pub gamma: f64,
    pub margin: f64,
    pub neighborhood_radius: f64,
}

impl Default for TopologyLossParams {
    fn default() -> Self {
        TopologyLossParams {
            alpha: 1.0 / 15.0,
            gamma: 1.0 / 3.0,
            margin: 3.0,
            neighborhood_radius: 15.0,
        }
    }
}

impl TopologyLossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("margin", self.margin),
            ("neighborhood_radius", self.neighborhood_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.alpha * self.neighborhood_radius - 1.0).abs() > 1e-9 {
            log::warn!(
                "alpha * neighborhood_radius = {} (not 1); same-tree targets are no longer normalized to [0, 1]",
                self.alpha * self.neighborhood_radius
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_i: Embedding,
    pub grad_j: Embedding,
}

fn difference(a: &Embedding, b: &Embedding) -> (Embedding, f64) {
    let mut d = [0.0; EMBED_DIM];
    let mut sq = 0.0;
    for k in 0..EMBED_DIM {
        d[k] = a[k] - b[k];
        sq += d[k] * d[k];
    }
    (d, sq.sqrt())
}

/// Same tree: `smooth_l1(‖xi − xj‖ − α·D)`. Different trees:
/// `γ·max(0, K − ‖xi − xj‖)`. At coincident embeddings the direction of the
/// difference is undefined and the gradient is taken as zero.
pub fn topology_pair_loss(
    xi: &Embedding,
    xj: &Embedding,
    pair: &PairSample,
    params: &TopologyLossParams,
) -> Result<PairLoss> {
    if pair.same_label && pair.geodesic.is_none() {
        return Err(Error::invalid(format!(
            "same-label pair ({}, {}) has no geodesic distance",
            pair.i, pair.j
        )));
    }
    Ok(topology_pair_unchecked(xi, xj, pair.geodesic, params))
}

#[inline]
fn topology_pair_unchecked(
    xi: &Embedding,
    xj: &Embedding,
    geodesic: Option<f64>,
    params: &TopologyLossParams,
) -> PairLoss {
    let (diff, dist) = difference(xi, xj);
    let (value, slope) = match geodesic {
        Some(d) => {
            let r = dist - params.alpha * d;
            (smooth_l1(r), smooth_l1_grad(r))
        }
        None if dist < params.margin => (params.gamma * (params.margin - dist), -params.gamma),
        None => (0.0, 0.0),
    };
    let mut grad_i = [0.0; EMBED_DIM];
    let mut grad_j = [0.0; EMBED_DIM];
    if dist > 0.0 && slope != 0.0 {
        let s = slope / dist;
        for k in 0..EMBED_DIM {
            grad_i[k] = s * diff[k];
            grad_j[k] = -grad_i[k];
        }
    }
    PairLoss { value, grad_i, grad_j }
}

/// `0.5(1 − S)` for same-label pairs and `0.5(1 + S)` otherwise, with `S`
/// the signed cosine similarity.
pub fn cosine_pair_loss(xi: &Embedding, xj: &Embedding, same_label: bool) -> Result<PairLoss> {
    let ni = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::UndefinedCosine);
    }
    let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
    let s = dot / (ni * nj);
    let (value, ds) = if same_label {
        (0.5 * (1.0 - s), -0.5)
    } else {
        (0.5 * (1.0 + s), 0.5)
    };
    let mut grad_i = [0.0; EMBED_DIM];
    let mut grad_j = [0.0; EMBED_DIM];
    for k in 0..EMBED_DIM {
        grad_i[k] = ds * (xj[k] / (ni * nj) - s * xi[k] / (ni * ni));
        grad_j[k] = ds * (xi[k] / (ni * nj) - s * xj[k] / (nj * nj));
    }
    Ok(PairLoss { value, grad_i, grad_j })
}

/// Signed cosine similarity; `None` when either vector is zero.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Which pairwise objective to average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Topology,
    Cosine,
}

/// A pair set with ids resolved to table slots and sorted into summation order.
#[derive(Clone, Debug)]
pub(crate) struct ResolvedPairs {
    pairs: Vec<(usize, usize, bool, Option<f64>)>,
}

impl ResolvedPairs {
    pub(crate) fn new(table: &EmbeddingTable, pairs: &[PairSample]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("pair set is empty"));
        }
        let mut ordered: Vec<&PairSample> = pairs.iter().collect();
        ordered.sort_by_key(|p| p.order_key());
        let mut resolved = Vec::with_capacity(pairs.len());
        for p in ordered {
            p.validate()?;
            let si = table.slot(p.i).ok_or(Error::MissingEmbedding(p.i))?;
            let sj = table.slot(p.j).ok_or(Error::MissingEmbedding(p.j))?;
            resolved.push((si, sj, p.same_label, p.geodesic));
        }
        Ok(ResolvedPairs { pairs: resolved })
    }

    pub(crate) fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Mean loss and its gradient, written into `grad` (one row per slot).
    pub(crate) fn evaluate(
        &self,
        vectors: &[Embedding],
        objective: Objective,
        params: &TopologyLossParams,
        grad: &mut [Embedding],
    ) -> Result<f64> {
        for g in grad.iter_mut() {
            *g = [0.0; EMBED_DIM];
        }
        let mut total = 0.0;
        for &(si, sj, same, geodesic) in &self.pairs {
            let (xi, xj) = (&vectors[si], &vectors[sj]);
            let pl = match objective {
                Objective::Topology => topology_pair_unchecked(xi, xj, geodesic, params),
                Objective::Cosine => cosine_pair_loss(xi, xj, same)?,
            };
            total += pl.value;
            for k in 0..EMBED_DIM {
                grad[si][k] += pl.grad_i[k];
                grad[sj][k] += pl.grad_j[k];
            }
        }
        let n = self.pairs.len() as f64;
        for g in grad.iter_mut() {
            for v in g.iter_mut() {
                *v /= n;
            }
        }
        Ok(total / n)
    }
}

/// Mean topology pair loss over `pairs` and its gradient, one row per table
/// entry in table order.
pub fn topology_total_loss(
    table: &EmbeddingTable,
    pairs: &[PairSample],
    params: &TopologyLossParams,
) -> Result<(f64, Vec<Embedding>)> {
    total_loss(table, pairs, Objective::Topology, params)
}

pub fn cosine_total_loss(table: &EmbeddingTable, pairs: &[PairSample]) -> Result<(f64, Vec<Embedding>)> {
    total_loss(table, pairs, Objective::Cosine, &TopologyLossParams::default())
}

pub fn total_loss(
    table: &EmbeddingTable,
    pairs: &[PairSample],
    objective: Objective,
    params: &TopologyLossParams,
) -> Result<(f64, Vec<Embedding>)> {
    let resolved = ResolvedPairs::new(table, pairs)?;
    let mut grad = vec![[0.0; EMBED_DIM]; table.len()];
    let value = resolved.evaluate(table.vectors(), objective, params, &mut grad)?;
    Ok((value, grad))
}
