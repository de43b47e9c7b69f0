//! Center-voxel extraction: vessel-mask gating, thresholding and 3D
//! non-maximum suppression on the negated centerness score.
//!
//! A voxel becomes a candidate when it lies in the vessel mask, scores below
//! the threshold, and is a (non-strict) minimum of its clipped window.
//! Candidates are then accepted greedily in ascending `(score, linear index)`
//! order, each accepted voxel suppressing every other candidate within
//! Chebyshev distance `window / 2`. Strict minima are therefore always kept,
//! and a flat run of equal scores (a noiseless centerline, where the distance
//! transform is exactly 0) yields one detection every few voxels instead of
//! none.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::phantom::{check_drop_fraction, drop_selection, Phantom};
use crate::volume::{GridDims, LabelVolume, ScalarVolume};

pub const DEFAULT_THRESHOLD: f64 = 1.5;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterVoxel {
    pub id: usize,
    pub voxel: [usize; 3],
    pub score: f32,
}

impl CenterVoxel {
    pub fn position(&self) -> [f64; 3] {
        self.voxel.map(|v| v as f64)
    }
}

/// Extracted centers with dense ids `0..n` in ascending linear-index order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CenterVoxelSet {
    pub entries: Vec<CenterVoxel>,
}

impl CenterVoxelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.entries.iter().map(CenterVoxel::position).collect()
    }

    /// Rebuilds from voxels and scores, sorting by linear index and renumbering.
    fn from_selection(dims: GridDims, mut picked: Vec<(usize, f32)>) -> Self {
        picked.sort_by_key(|&(i, _)| i);
        CenterVoxelSet {
            entries: picked
                .into_iter()
                .enumerate()
                .map(|(id, (i, score))| CenterVoxel {
                    id,
                    voxel: dims.coords(i),
                    score,
                })
                .collect(),
        }
    }

    /// Checks dense ids and uniqueness of voxels.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (k, c) in self.entries.iter().enumerate() {
            if c.id != k {
                return Err(Error::invalid(format!(
                    "center ids must be dense and ordered; entry {k} has id {}",
                    c.id
                )));
            }
            if !seen.insert(c.voxel) {
                return Err(Error::invalid(format!("duplicate center voxel {:?}", c.voxel)));
            }
        }
        Ok(())
    }
}

const CENTERS_HEADER: [&str; 5] = ["id", "x", "y", "z", "score"];

pub fn write_centers(path: &Path, centers: &CenterVoxelSet) -> Result<()> {
    let mut out = String::from("id,x,y,z,score\n");
    for c in &centers.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.id, c.voxel[0], c.voxel[1], c.voxel[2], c.score
        ));
    }
    io::write_bytes(path, out.as_bytes())
}

pub fn read_centers(path: &Path) -> Result<CenterVoxelSet> {
    let mut reader = io::csv_reader(path, &CENTERS_HEADER)?;
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        entries.push(CenterVoxel {
            id: io::csv_field(path, &record, 0, "id")?,
            voxel: [
                io::csv_field(path, &record, 1, "x")?,
                io::csv_field(path, &record, 2, "y")?,
                io::csv_field(path, &record, 3, "z")?,
            ],
            score: io::csv_field(path, &record, 4, "score")?,
        });
    }
    let set = CenterVoxelSet { entries };
    set.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(set)
}

/// Minimum over the clipped `(2h+1)` window along one axis.
fn min_filter_axis(src: &[f32], dims: GridDims, axis: usize, h: usize) -> Vec<f32> {
    let n = dims.as_array();
    let stride = [1, n[0], n[0] * n[1]][axis];
    let len = n[axis];
    let mut out = vec![0.0f32; src.len()];
    for base in 0..src.len() {
        if dims.coords(base)[axis] != 0 {
            continue;
        }
        for k in 0..len {
            let lo = k.saturating_sub(h);
            let hi = (k + h).min(len - 1);
            let mut m = f32::INFINITY;
            for j in lo..=hi {
                m = m.min(src[base + j * stride]);
            }
            out[base + k * stride] = m;
        }
    }
    out
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "NMS window must be odd and at least 3, got {window}"
        )));
    }
    Ok(())
}

pub fn extract_centers(
    score: &ScalarVolume,
    vessel_mask: &LabelVolume,
    threshold: f64,
    window: usize,
) -> Result<CenterVoxelSet> {
    check_window(window)?;
    let dims = score.dims();
    if dims != vessel_mask.dims() {
        return Err(Error::invalid("score and vessel mask dims differ"));
    }
    if !score.all_finite() {
        return Err(Error::invalid("score volume holds non-finite values"));
    }
    let h = window / 2;
    let mut wmin = score.data().to_vec();
    for axis in 0..3 {
        wmin = min_filter_axis(&wmin, dims, axis, h);
    }
    let mut candidates: Vec<(usize, f32)> = (0..dims.len())
        .filter(|&i| {
            let s = score.data()[i];
            vessel_mask.data()[i] > 0 && (s as f64) < threshold && s <= wmin[i]
        })
        .map(|i| (i, score.data()[i]))
        .collect();
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let n = dims.as_array();
    let mut suppressed = vec![false; dims.len()];
    let mut picked = Vec::new();
    for (i, s) in candidates {
        if suppressed[i] {
            continue;
        }
        picked.push((i, s));
        let c = dims.coords(i);
        let lo = c.map(|v| v.saturating_sub(h));
        let hi = [0, 1, 2].map(|a| (c[a] + h).min(n[a] - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    suppressed[dims.index(x, y, z)] = true;
                }
            }
        }
    }
    Ok(CenterVoxelSet::from_selection(dims, picked))
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

/// How the CNN-free pipeline turns a phantom into detected centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterParams {
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub drop_fraction: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CenterParams {
    fn default() -> Self {
        CenterParams {
            noise_sigma: 0.0,
            drop_fraction: 0.0,
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

impl CenterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        check_drop_fraction(self.drop_fraction)?;
        check_window(self.window)
    }
}

/// Ground-truth centerness plus seeded Gaussian noise, extracted, then
/// thinned by dropping `⌊drop_fraction · n⌋` detections.
pub fn centers_from_ground_truth(phantom: &Phantom, params: &CenterParams) -> Result<CenterVoxelSet> {
    params.validate()?;
    let mut score = phantom.gt_centerness.clone();
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for v in score.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    let found = extract_centers(&score, &phantom.vessel_labels, params.threshold, params.window)?;
    if params.drop_fraction == 0.0 {
        return Ok(found);
    }
    let dropped = drop_selection(found.len(), params.drop_fraction, params.seed.wrapping_add(1));
    let dims = phantom.dims();
    let kept = found
        .entries
        .iter()
        .zip(dropped)
        .filter(|(_, d)| !d)
        .map(|(c, _)| (dims.index(c.voxel[0], c.voxel[1], c.voxel[2]), c.score))
        .collect();
    Ok(CenterVoxelSet::from_selection(dims, kept))
}
