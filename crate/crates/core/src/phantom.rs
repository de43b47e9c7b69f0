//! Synthetic multi-tree vascular phantoms.
//!
//! Each tree grows by recursive bifurcation from its root. Segments are
//! straight runs of nodes spaced at most 0.5 voxels apart; each child turns
//! away from its parent's axis by an angle drawn from the configured range
//! and inherits the parent radius times the decay factor. Segments that would
//! leave the volume or come closer than `min_separation` to an existing
//! centerline are redrawn a few times and otherwise dropped, so the output
//! trees never touch.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::volume::{
    euclidean_distance_transform, read_volume, write_volume, BinaryMask, GridDims, Label,
    LabelVolume, ScalarVolume,
};

/// Node spacing along generated branches.
pub const NODE_SPACING: f64 = 0.5;

const PLACEMENT_ATTEMPTS: usize = 100;
const SEGMENT_TRIES: usize = 10;
/// Arc length at the start of a segment that is exempt from the same-tree
/// separation check (it necessarily starts at its parent).
const BRANCH_EXEMPT_ARC: f64 = 5.0;
const BORDER_MARGIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub pos: [f64; 3],
    pub radius: f64,
    pub parent: Option<usize>,
    pub label: Label,
}

/// One labeled tree. Node ids are unique within a forest, not just a tree.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CenterlineTree {
    pub nodes: Vec<TreeNode>,
}

impl CenterlineTree {
    pub fn label(&self) -> Option<Label> {
        self.nodes.first().map(|n| n.label)
    }

    pub fn root(&self) -> Option<&TreeNode> {
        self.nodes.iter().find(|n| n.parent.is_none())
    }

    /// Structural checks: one label, exactly one root, parents resolve, no cycles.
    pub fn validate(&self) -> Result<()> {
        let label = self
            .label()
            .ok_or_else(|| Error::invalid("tree has no nodes"))?;
        let mut index = HashMap::with_capacity(self.nodes.len());
        for (k, n) in self.nodes.iter().enumerate() {
            if n.label != label {
                return Err(Error::invalid(format!(
                    "tree {label} contains node {} labeled {}",
                    n.id, n.label
                )));
            }
            if !n.radius.is_finite() || n.radius <= 0.0 {
                return Err(Error::invalid(format!(
                    "node {} has non-positive radius {}",
                    n.id, n.radius
                )));
            }
            if n.pos.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("node {} has a non-finite position", n.id)));
            }
            if index.insert(n.id, k).is_some() {
                return Err(Error::invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::invalid(format!(
                "tree {label} has {roots} root nodes, expected 1"
            )));
        }
        // Every parent chain must reach the root within `len` steps.
        for n in &self.nodes {
            let mut cur = n;
            let mut steps = 0;
            while let Some(p) = cur.parent {
                let &k = index.get(&p).ok_or_else(|| {
                    Error::invalid(format!("node {} has unknown parent {p}", cur.id))
                })?;
                cur = &self.nodes[k];
                steps += 1;
                if steps > self.nodes.len() {
                    return Err(Error::invalid(format!("cycle through node {}", n.id)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    nodes: Vec<TreeNode>,
}

/// Writes a forest as a single `{nodes: [...]}` document; trees are told
/// apart by label.
pub fn write_trees(path: &Path, trees: &[CenterlineTree]) -> Result<()> {
    let nodes = trees.iter().flat_map(|t| t.nodes.iter().cloned()).collect();
    io::write_json(path, &TreeFile { nodes })
}

/// Reads a forest file, grouping nodes by label (ascending) and validating
/// each tree.
pub fn read_trees(path: &Path) -> Result<Vec<CenterlineTree>> {
    let file: TreeFile = io::read_json(path)?;
    let trees = group_by_label(file.nodes);
    for t in &trees {
        t.validate().map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(trees)
}

pub(crate) fn group_by_label(nodes: Vec<TreeNode>) -> Vec<CenterlineTree> {
    let mut by_label: std::collections::BTreeMap<Label, Vec<TreeNode>> = Default::default();
    for n in nodes {
        by_label.entry(n.label).or_default().push(n);
    }
    by_label
        .into_values()
        .map(|nodes| CenterlineTree { nodes })
        .collect()
}

/// Precomputed parent structure for repeated along-tree distance queries.
#[derive(Clone, Debug)]
pub struct GeodesicIndex {
    slot: HashMap<usize, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    edge_len: Vec<f64>,
}

impl GeodesicIndex {
    pub fn new(tree: &CenterlineTree) -> Result<Self> {
        tree.validate()?;
        let n = tree.nodes.len();
        let slot: HashMap<usize, usize> = tree
            .nodes
            .iter()
            .enumerate()
            .map(|(k, node)| (node.id, k))
            .collect();
        let parent: Vec<Option<usize>> = tree
            .nodes
            .iter()
            .map(|node| node.parent.map(|p| slot[&p]))
            .collect();
        let edge_len = (0..n)
            .map(|k| match parent[k] {
                Some(p) => distance(tree.nodes[k].pos, tree.nodes[p].pos),
                None => 0.0,
            })
            .collect();
        let mut depth = vec![usize::MAX; n];
        for start in 0..n {
            let mut chain = Vec::new();
            let mut cur = start;
            while depth[cur] == usize::MAX {
                chain.push(cur);
                match parent[cur] {
                    Some(p) => cur = p,
                    None => {
                        depth[cur] = 0;
                        chain.pop();
                        break;
                    }
                }
            }
            let mut d = depth[cur];
            for &k in chain.iter().rev() {
                d += 1;
                depth[k] = d;
            }
        }
        Ok(GeodesicIndex {
            slot,
            parent,
            depth,
            edge_len,
        })
    }

    pub fn contains(&self, id: usize) -> bool {
        self.slot.contains_key(&id)
    }

    /// Sum of Euclidean edge lengths along the tree path between two node ids.
    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let (Some(&sa), Some(&sb)) = (self.slot.get(&a), self.slot.get(&b)) else {
            return Err(Error::NoTreePath(a, b));
        };
        let (mut u, mut v) = (sa, sb);
        let (mut up, mut down) = (0.0, 0.0);
        while self.depth[u] > self.depth[v] {
            up += self.edge_len[u];
            u = self.parent[u].expect("non-root has a parent");
        }
        while self.depth[v] > self.depth[u] {
            down += self.edge_len[v];
            v = self.parent[v].expect("non-root has a parent");
        }
        while u != v {
            up += self.edge_len[u];
            down += self.edge_len[v];
            u = self.parent[u].expect("non-root has a parent");
            v = self.parent[v].expect("non-root has a parent");
        }
        Ok(up + down)
    }
}

/// Along-tree distances for each requested node pair.
pub fn tree_geodesic_matrix(tree: &CenterlineTree, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let index = GeodesicIndex::new(tree)?;
    pairs.iter().map(|&(a, b)| index.distance(a, b)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub root: [f64; 3],
    /// Initial growth direction; defaults to pointing at the volume center.
    #[serde(default)]
    pub direction: Option<[f64; 3]>,
    pub root_radius: f64,
    pub depth: usize,
    /// Inclusive range, degrees, of each child's turn away from its parent axis.
    pub branch_angle_deg: [f64; 2],
    pub radius_decay: f64,
    pub segment_length: [f64; 2],
}

/// Far enough apart that a centerline voxel of one branch is never inside
/// the default 5³ suppression window of another branch's voxel.
fn default_min_separation() -> f64 {
    4.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub seed: u64,
    pub dims: GridDims,
    pub trees: Vec<TreeSpec>,
    /// When set, two differently labeled nodes must come within
    /// `crossing_gap + r_i + r_j` of each other.
    #[serde(default)]
    pub crossing_gap: Option<f64>,
    /// Minimum centerline-to-centerline distance between unrelated branches.
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
}

impl PhantomConfig {
    /// Two trees entering a 64³ volume from opposite faces.
    pub fn standard(seed: u64) -> Self {
        let tree = |root: [f64; 3], dir: [f64; 3]| TreeSpec {
            root,
            direction: Some(dir),
            root_radius: 5.0,
            depth: 9,
            branch_angle_deg: [25.0, 55.0],
            radius_decay: 0.98,
            segment_length: [8.0, 14.0],
        };
        PhantomConfig {
            seed,
            dims: GridDims::cube(64).expect("static dims"),
            trees: vec![
                tree([4.0, 20.0, 32.0], [1.0, 0.3, 0.0]),
                tree([59.0, 44.0, 32.0], [-1.0, -0.3, 0.0]),
            ],
            crossing_gap: None,
            min_separation: default_min_separation(),
        }
    }

    /// The standard layout with the two trees forced to pass within a few
    /// voxels of each other.
    pub fn crossing(seed: u64, gap: f64) -> Self {
        PhantomConfig {
            crossing_gap: Some(gap),
            ..Self::standard(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::invalid("phantom config has no trees"));
        }
        if self.trees.len() > Label::MAX as usize {
            return Err(Error::invalid("too many trees"));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(Error::invalid("min_separation must be a finite non-negative number"));
        }
        if let Some(g) = self.crossing_gap {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid("crossing_gap must be finite and non-negative"));
            }
            if self.trees.len() < 2 {
                return Err(Error::invalid("crossing_gap needs at least two trees"));
            }
        }
        let n = self.dims.as_array();
        for (k, t) in self.trees.iter().enumerate() {
            let name = k + 1;
            if !(0..3).all(|a| t.root[a] >= 0.0 && t.root[a] <= (n[a] - 1) as f64) {
                return Err(Error::invalid(format!("tree {name}: root lies outside the volume")));
            }
            if !(t.root_radius > 0.0 && t.root_radius.is_finite()) {
                return Err(Error::invalid(format!("tree {name}: root_radius must be positive")));
            }
            if !(t.radius_decay > 0.0 && t.radius_decay <= 1.0) {
                return Err(Error::invalid(format!(
                    "tree {name}: radius_decay must lie in (0, 1]"
                )));
            }
            let [a0, a1] = t.branch_angle_deg;
            if !(0.0 <= a0 && a0 <= a1 && a1 <= 90.0) {
                return Err(Error::invalid(format!(
                    "tree {name}: branch_angle_deg must satisfy 0 <= min <= max <= 90"
                )));
            }
            let [l0, l1] = t.segment_length;
            if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
                return Err(Error::invalid(format!(
                    "tree {name}: segment_length must satisfy 0 < min <= max"
                )));
            }
            if let Some(d) = t.direction {
                if norm(d) == 0.0 || d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("tree {name}: direction must be non-zero")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceVoxel {
    pub label: Label,
    pub voxel_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub trees: Vec<CenterlineTree>,
    pub vessel_labels: LabelVolume,
    pub center_mask: BinaryMask,
    pub gt_centerness: ScalarVolume,
    pub sources: Vec<SourceVoxel>,
    /// Voxels claimed by more than one tree's tube; the later tree keeps them.
    pub overlap_voxels: usize,
}

impl Phantom {
    pub fn dims(&self) -> GridDims {
        self.vessel_labels.dims()
    }

    pub fn tree(&self, label: Label) -> Option<&CenterlineTree> {
        self.trees.iter().find(|t| t.label() == Some(label))
    }

    pub fn labels(&self) -> Vec<Label> {
        self.trees.iter().filter_map(|t| t.label()).collect()
    }

    /// Root positions, one per tree.
    pub fn source_positions(&self) -> Vec<(Label, [f64; 3])> {
        self.trees
            .iter()
            .filter_map(|t| Some((t.label()?, t.root()?.pos)))
            .collect()
    }
}

/// Generates the phantom described by `config`; identical configs give
/// identical phantoms.
pub fn generate_phantom(config: &PhantomConfig) -> Result<Phantom> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for attempt in 0..PLACEMENT_ATTEMPTS {
        let mut grower = Grower::new(config);
        if !grower.grow(&mut rng) {
            log::debug!("phantom attempt {attempt}: a root segment did not fit");
            continue;
        }
        if let Some(gap) = config.crossing_gap {
            if !grower.has_crossing(gap) {
                log::debug!("phantom attempt {attempt}: trees never came within the crossing gap");
                continue;
            }
        }
        let trees = group_by_label(grower.nodes);
        return rasterize(config.dims, trees);
    }
    Err(Error::PhantomDoesNotFit)
}

struct Grower<'a> {
    config: &'a PhantomConfig,
    nodes: Vec<TreeNode>,
    cells: HashMap<[i64; 3], Vec<usize>>,
    cell_size: f64,
}

struct PendingSegment {
    tree: usize,
    start: usize,
    dir: [f64; 3],
    radius: f64,
    level: usize,
}

impl<'a> Grower<'a> {
    fn new(config: &'a PhantomConfig) -> Self {
        Grower {
            config,
            nodes: Vec::new(),
            cells: HashMap::new(),
            cell_size: config.min_separation.max(1.0),
        }
    }

    fn cell_of(&self, p: [f64; 3]) -> [i64; 3] {
        p.map(|v| (v / self.cell_size).floor() as i64)
    }

    fn insert(&mut self, node: TreeNode) {
        let c = self.cell_of(node.pos);
        self.cells.entry(c).or_default().push(self.nodes.len());
        self.nodes.push(node);
    }

    fn in_bounds(&self, p: [f64; 3]) -> bool {
        let n = self.config.dims.as_array();
        (0..3).all(|a| p[a] >= BORDER_MARGIN && p[a] <= (n[a] - 1) as f64 - BORDER_MARGIN)
    }

    /// True when `p` keeps `min_separation` from every placed node, ignoring
    /// nodes of `label` if `skip_same_tree`.
    fn is_clear(&self, p: [f64; 3], label: Label, skip_same_tree: bool) -> bool {
        let sep = self.config.min_separation;
        let c = self.cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &k in bucket {
                        let other = &self.nodes[k];
                        if skip_same_tree && other.label == label {
                            continue;
                        }
                        if distance(other.pos, p) < sep {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Candidate node positions for a straight segment starting at `start`
    /// (exclusive), or `None` if it leaves the volume or hits another branch.
    fn trace(
        &self,
        start: [f64; 3],
        dir: [f64; 3],
        length: f64,
        label: Label,
    ) -> Option<Vec<[f64; 3]>> {
        let steps = (length / NODE_SPACING).ceil().max(1.0) as usize;
        let step = length / steps as f64;
        let mut out = Vec::with_capacity(steps);
        for k in 1..=steps {
            let arc = step * k as f64;
            let p = add(start, scale(dir, arc));
            if !self.in_bounds(p) {
                return None;
            }
            if !self.is_clear(p, label, arc < BRANCH_EXEMPT_ARC) {
                return None;
            }
            out.push(p);
        }
        Some(out)
    }

    /// Plants every root segment, then grows all trees breadth-first with
    /// one shared queue so no tree claims the free space before the others.
    fn grow(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let config = self.config;
        let mut queue = VecDeque::new();
        for (k, spec) in config.trees.iter().enumerate() {
            match self.plant(k, spec, rng) {
                Some(seg) => queue.push_back(seg),
                None => return false,
            }
        }
        while let Some(seg) = queue.pop_front() {
            let spec = &config.trees[seg.tree];
            if seg.level >= spec.depth {
                continue;
            }
            let label = (seg.tree + 1) as Label;
            let child_radius = seg.radius * spec.radius_decay;
            let axis = random_perpendicular(seg.dir, rng);
            for side in [1.0, -1.0] {
                for attempt in 0..SEGMENT_TRIES {
                    let angle = sample_range(spec.branch_angle_deg, rng).to_radians();
                    let side_axis = if attempt == 0 {
                        scale(axis, side)
                    } else {
                        random_perpendicular(seg.dir, rng)
                    };
                    let dir = add(scale(seg.dir, angle.cos()), scale(side_axis, angle.sin()));
                    let dir = normalize(dir).expect("unit combination");
                    let length = sample_range(spec.segment_length, rng);
                    let start_pos = self.nodes[seg.start].pos;
                    if let Some(points) = self.trace(start_pos, dir, length, label) {
                        let end = self.commit(seg.start, &points, child_radius, label);
                        queue.push_back(PendingSegment {
                            tree: seg.tree,
                            start: end,
                            dir,
                            radius: child_radius,
                            level: seg.level + 1,
                        });
                        break;
                    }
                }
            }
        }
        true
    }

    fn plant(&mut self, tree: usize, spec: &TreeSpec, rng: &mut ChaCha8Rng) -> Option<PendingSegment> {
        let label = (tree + 1) as Label;
        let dims = self.config.dims.as_array();
        let center = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let base_dir = normalize(spec.direction.unwrap_or_else(|| sub(center, spec.root)))
            .unwrap_or([1.0, 0.0, 0.0]);

        if !self.in_bounds(spec.root) || !self.is_clear(spec.root, label, false) {
            return None;
        }
        let root_id = self.nodes.len();
        self.insert(TreeNode {
            id: root_id,
            pos: spec.root,
            radius: spec.root_radius,
            parent: None,
            label,
        });
        for attempt in 0..SEGMENT_TRIES {
            // The first try follows the configured direction exactly.
            let dir = if attempt == 0 {
                base_dir
            } else {
                turn(base_dir, rng.random_range(0.0..20f64).to_radians(), rng)
            };
            let length = sample_range(spec.segment_length, rng);
            if let Some(points) = self.trace(spec.root, dir, length, label) {
                let end = self.commit(root_id, &points, spec.root_radius, label);
                return Some(PendingSegment {
                    tree,
                    start: end,
                    dir,
                    radius: spec.root_radius,
                    level: 0,
                });
            }
        }
        None
    }

    fn commit(&mut self, parent: usize, points: &[[f64; 3]], radius: f64, label: Label) -> usize {
        let mut prev = parent;
        for &p in points {
            let id = self.nodes.len();
            self.insert(TreeNode {
                id,
                pos: p,
                radius,
                parent: Some(prev),
                label,
            });
            prev = id;
        }
        prev
    }

    fn has_crossing(&self, gap: f64) -> bool {
        let max_r = self.nodes.iter().map(|n| n.radius).fold(0.0, f64::max);
        let reach = gap + 2.0 * max_r;
        let cells = (reach / self.cell_size).ceil() as i64;
        for a in &self.nodes {
            let c = self.cell_of(a.pos);
            for dx in -cells..=cells {
                for dy in -cells..=cells {
                    for dz in -cells..=cells {
                        let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                            continue;
                        };
                        for &k in bucket {
                            let b = &self.nodes[k];
                            if b.label != a.label && distance(a.pos, b.pos) <= gap + a.radius + b.radius {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

fn rasterize(dims: GridDims, trees: Vec<CenterlineTree>) -> Result<Phantom> {
    let mut labels = LabelVolume::filled(dims, 0);
    let mut overlapped = vec![false; dims.len()];
    let n = dims.as_array();
    for tree in &trees {
        for node in &tree.nodes {
            let r = node.radius;
            let lo = |a: usize| ((node.pos[a] - r).ceil().max(0.0)) as usize;
            let hi = |a: usize| ((node.pos[a] + r).floor().min((n[a] - 1) as f64)) as isize;
            for z in lo(2) as isize..=hi(2) {
                for y in lo(1) as isize..=hi(1) {
                    for x in lo(0) as isize..=hi(0) {
                        let (x, y, z) = (x as usize, y as usize, z as usize);
                        let d2 = (x as f64 - node.pos[0]).powi(2)
                            + (y as f64 - node.pos[1]).powi(2)
                            + (z as f64 - node.pos[2]).powi(2);
                        if d2 > r * r {
                            continue;
                        }
                        let i = dims.index(x, y, z);
                        let prev = labels.data()[i];
                        if prev != 0 && prev != node.label {
                            overlapped[i] = true;
                        }
                        labels.data_mut()[i] = node.label;
                    }
                }
            }
        }
    }
    let mut center_mask = BinaryMask::filled(dims, false);
    for tree in &trees {
        for node in &tree.nodes {
            let i = dims
                .voxel_of(node.pos)
                .ok_or(Error::PhantomDoesNotFit)?;
            center_mask.data_mut()[i] = true;
            labels.data_mut()[i] = node.label;
        }
    }
    let gt_centerness = euclidean_distance_transform(&center_mask)?;
    let sources = trees
        .iter()
        .map(|t| {
            let root = t.root().expect("generated trees have a root");
            SourceVoxel {
                label: root.label,
                voxel_index: dims.voxel_of(root.pos).expect("root inside volume"),
            }
        })
        .collect();
    Ok(Phantom {
        trees,
        vessel_labels: labels,
        center_mask,
        gt_centerness,
        sources,
        overlap_voxels: overlapped.iter().filter(|&&o| o).count(),
    })
}

/// Number of items removed when dropping `fraction` of `count`.
///
/// The product is nudged up by 1e-9 before flooring so that fractions such
/// as 0.29 of 100 are not lost to binary rounding.
pub fn drop_count(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64 + 1e-9).floor() as usize).min(count)
}

pub(crate) fn check_drop_fraction(fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "drop fraction must lie in [0, 1), got {fraction}"
        )));
    }
    Ok(())
}

/// Which of `count` items to drop. For a fixed seed the dropped sets are
/// nested as the fraction grows.
pub(crate) fn drop_selection(count: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dropped = vec![false; count];
    for &k in &order[..drop_count(count, fraction)] {
        dropped[k] = true;
    }
    dropped
}

/// Removes `⌊fraction · count⌋` uniformly chosen true voxels.
pub fn corrupt_centers(mask: &BinaryMask, drop_fraction: f64, seed: u64) -> Result<BinaryMask> {
    check_drop_fraction(drop_fraction)?;
    let on: Vec<usize> = (0..mask.data().len()).filter(|&i| mask.data()[i]).collect();
    let dropped = drop_selection(on.len(), drop_fraction, seed);
    let mut out = mask.clone();
    for (k, &i) in on.iter().enumerate() {
        if dropped[k] {
            out.data_mut()[i] = false;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhantomMeta {
    dims: GridDims,
    sources: Vec<SourceVoxel>,
    overlap_voxels: usize,
}

pub const LABELS_FILE: &str = "vessel_labels.json";
pub const CENTER_MASK_FILE: &str = "center_mask.json";
pub const CENTERNESS_FILE: &str = "gt_centerness.json";
pub const TREES_FILE: &str = "trees.json";
pub const META_FILE: &str = "phantom.json";

/// Artifact file names written by [`save_phantom`], relative to its directory.
pub fn phantom_files() -> Vec<String> {
    let mut files = Vec::new();
    for vol in [LABELS_FILE, CENTER_MASK_FILE, CENTERNESS_FILE] {
        files.push(vol.to_string());
        files.push(vol.replace(".json", ".raw"));
    }
    files.push(TREES_FILE.to_string());
    files.push(META_FILE.to_string());
    files
}

pub fn save_phantom(phantom: &Phantom, dir: &Path) -> Result<()> {
    write_volume(&phantom.vessel_labels, &dir.join(LABELS_FILE))?;
    write_volume(&phantom.center_mask, &dir.join(CENTER_MASK_FILE))?;
    write_volume(&phantom.gt_centerness, &dir.join(CENTERNESS_FILE))?;
    write_trees(&dir.join(TREES_FILE), &phantom.trees)?;
    io::write_json(
        &dir.join(META_FILE),
        &PhantomMeta {
            dims: phantom.dims(),
            sources: phantom.sources.clone(),
            overlap_voxels: phantom.overlap_voxels,
        },
    )
}

pub fn load_phantom(dir: &Path) -> Result<Phantom> {
    let meta: PhantomMeta = io::read_json(&dir.join(META_FILE))?;
    let vessel_labels: LabelVolume = read_volume(&dir.join(LABELS_FILE))?;
    let center_mask: BinaryMask = read_volume(&dir.join(CENTER_MASK_FILE))?;
    let gt_centerness: ScalarVolume = read_volume(&dir.join(CENTERNESS_FILE))?;
    let trees = read_trees(&dir.join(TREES_FILE))?;
    for (name, d) in [
        (LABELS_FILE, vessel_labels.dims()),
        (CENTER_MASK_FILE, center_mask.dims()),
        (CENTERNESS_FILE, gt_centerness.dims()),
    ] {
        if d != meta.dims {
            return Err(Error::format(dir.join(name), "dims differ from phantom.json"));
        }
    }
    Ok(Phantom {
        trees,
        vessel_labels,
        center_mask,
        gt_centerness,
        sources: meta.sources,
        overlap_voxels: meta.overlap_voxels,
    })
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    a.map(|v| v * s)
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| scale(v, 1.0 / n))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sample_range(range: [f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Unit vector orthogonal to the unit vector `dir`, uniformly oriented.
fn random_perpendicular(dir: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let helper = if dir[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let u = normalize(cross(dir, helper)).expect("helper is not parallel");
    let w = cross(dir, u);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    add(scale(u, phi.cos()), scale(w, phi.sin()))
}

fn turn(dir: [f64; 3], angle: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let axis = random_perpendicular(dir, rng);
    normalize(add(scale(dir, angle.cos()), scale(axis, angle.sin()))).expect("unit combination")
}
