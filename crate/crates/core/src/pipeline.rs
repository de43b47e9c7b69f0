//! End-to-end experiment runs and parameter sweeps.
//!
//! A run executes phantom → centers → pairs → embeddings → graph → forest →
//! evaluation and persists every intermediate in its output directory. The
//! manifest records a hash of the config (output directory excluded) and a
//! content hash of every artifact, so two runs of one config can be compared
//! byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::centers::{centers_from_ground_truth, write_centers, CenterParams, CenterVoxelSet};
use crate::embed::{
    build_pair_set, center_labels, optimize_embeddings, write_embeddings, write_pairs, OptimizerConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_eval_report, EvalReport};
use crate::io;
use crate::losses::{Objective, TopologyLossParams};
use crate::metricgraph::{
    build_cosine_graph, build_label_graph, build_topology_graph, write_graph, MetricGraph, DEFAULT_ALPHA,
    DEFAULT_CUTOFF, DEFAULT_RADIUS,
};
use crate::phantom::{generate_phantom, save_phantom, write_trees, Phantom, PhantomConfig};
use crate::recon::{forest_to_trees, shortest_path_forest, snap_sources, write_report, SourceSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CLASSIFICATION_NOTE: &str = "gt-label-classification: graph built from ground-truth labels \
(same-label edges only, weight = squared voxel distance); this upper-bounds a trained classification head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Topology,
    Cosine,
    GtLabelClassification,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Topology => "topology",
            Variant::Cosine => "cosine",
            Variant::GtLabelClassification => "gt-label-classification",
        }
    }
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphParams {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { radius: DEFAULT_RADIUS, alpha: DEFAULT_ALPHA, cutoff: DEFAULT_CUTOFF }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKeyword {
    FromPhantom,
}

/// `"from-phantom"` (tree roots) or an explicit [`SourceSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sources {
    Keyword(SourceKeyword),
    Spec(SourceSpec),
}

impl Default for Sources {
    fn default() -> Self {
        Sources::Keyword(SourceKeyword::FromPhantom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub centers: CenterParams,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub variant: Variant,
    #[serde(default)]
    pub loss: TopologyLossParams,
    #[serde(default)]
    pub graph: GraphParams,
    #[serde(default)]
    pub sources: Sources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn standard(seed: u64, variant: Variant) -> Self {
        ExperimentConfig {
            phantom: PhantomConfig::standard(seed),
            centers: CenterParams { seed, ..Default::default() },
            optimizer: OptimizerConfig { seed, ..Default::default() },
            variant,
            loss: TopologyLossParams::default(),
            graph: GraphParams::default(),
            sources: Sources::default(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.centers.validate()?;
        if self.variant != Variant::GtLabelClassification {
            self.optimizer.validate()?;
            self.loss.validate()?;
        }
        let g = &self.graph;
        if !(g.radius >= 0.0 && g.radius.is_finite()) {
            return Err(Error::invalid("graph radius must be finite and non-negative"));
        }
        if !(g.alpha > 0.0 && g.alpha.is_finite() && g.cutoff > 0.0 && g.cutoff.is_finite()) {
            return Err(Error::invalid("graph alpha and cutoff must be positive"));
        }
        if let Sources::Spec(s) = &self.sources {
            s.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(io::sha256_hex(&bytes))
    }
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = io::read_json(path)?;
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub phantom: u64,
    pub centers: u64,
    pub optimizer: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub variant: Variant,
    pub seeds: Seeds,
    pub artifacts: Vec<Artifact>,
    pub eval_report: String,
    pub n_centers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl RunManifest {
    /// Re-hashes every listed artifact under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let got = io::sha256_file(&dir.join(&a.path))?;
            if got != a.sha256 {
                return Err(Error::invalid(format!("artifact {} does not match its recorded hash", a.path)));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_FILE: &str = "eval.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub out_dir: Option<PathBuf>,
    /// Also write per-stage wall times to `timings.json` (outside the manifest,
    /// which must stay byte-stable).
    pub record_timings: bool,
}

struct Recorder<'a> {
    dir: &'a Path,
    artifacts: Vec<Artifact>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl<'a> Recorder<'a> {
    fn add(&mut self, name: &str, rel: &str) -> Result<()> {
        let sha256 = io::sha256_file(&self.dir.join(rel))?;
        self.artifacts.push(Artifact { name: name.to_string(), path: rel.to_string(), sha256 });
        Ok(())
    }

    fn lap(&mut self, stage: &str) {
        self.timings.insert(stage.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

}

fn at<T>(dir: &Path, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage, artifacts: dir.to_path_buf(), source: Box::new(e) })
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,loss\n");
    for (k, v) in trace.iter().enumerate() {
        out.push_str(&format!("{k},{v}\n"));
    }
    io::write_bytes(path, out.as_bytes())
}

/// Builds the reconstruction graph for `variant` (training embeddings when
/// the variant needs them). Returns the graph and the final loss trace.
fn graph_stage(
    config: &ExperimentConfig,
    phantom: &Phantom,
    centers: &CenterVoxelSet,
    rec: &mut Recorder,
) -> Result<(MetricGraph, Option<Vec<f64>>)> {
    let dir = rec.dir;
    let g = &config.graph;
    let objective = match config.variant {
        Variant::GtLabelClassification => {
            let labels = at(dir, "labels", center_labels(phantom, centers))?;
            let graph = at(dir, "graph", build_label_graph(centers, &labels, g.radius))?;
            return Ok((graph, None));
        }
        Variant::Topology => Objective::Topology,
        Variant::Cosine => Objective::Cosine,
    };
    let pairs = at(dir, "pairs", build_pair_set(phantom, centers, config.loss.neighborhood_radius))?;
    at(dir, "pairs", write_pairs(&dir.join("pairs.csv"), &pairs))?;
    at(dir, "pairs", rec.add("pairs", "pairs.csv"))?;
    rec.lap("pairs");

    let (table, trace) = at(dir, 
        "embed",
        optimize_embeddings(&pairs, centers.len(), &config.optimizer, objective, &config.loss),
    )?;
    at(dir, "embed", write_embeddings(&dir.join("embeddings.json"), &table))?;
    at(dir, "embed", write_trace(&dir.join("loss_trace.csv"), &trace))?;
    at(dir, "embed", rec.add("embeddings", "embeddings.json"))?;
    at(dir, "embed", rec.add("loss_trace", "loss_trace.csv"))?;
    rec.lap("embed");

    let graph = match objective {
        Objective::Topology => build_topology_graph(centers, &table, g.radius, g.alpha, g.cutoff),
        Objective::Cosine => build_cosine_graph(centers, &table, g.radius),
    };
    Ok((at(dir, "graph", graph)?, Some(trace)))
}

pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunManifest> {
    config.validate()?;
    let dir = options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::invalid("no output directory given"))?;
    let mut rec = Recorder { dir: &dir, artifacts: Vec::new(), timings: BTreeMap::new(), clock: Instant::now() };

    let mut stored = config.clone();
    stored.output_dir = None;
    at(&dir, "config", io::write_json(&dir.join("config.json"), &stored))?;
    at(&dir, "config", rec.add("config", "config.json"))?;

    let phantom = at(&dir, "phantom", generate_phantom(&config.phantom))?;
    at(&dir, "phantom", save_phantom(&phantom, &dir.join("phantom")))?;
    for f in crate::phantom::phantom_files() {
        at(&dir, "phantom", rec.add("phantom", &format!("phantom/{f}")))?;
    }
    rec.lap("phantom");

    let centers = at(&dir, "centers", centers_from_ground_truth(&phantom, &config.centers))?;
    at(&dir, "centers", write_centers(&dir.join("centers.csv"), &centers))?;
    at(&dir, "centers", rec.add("centers", "centers.csv"))?;
    rec.lap("centers");

    let (graph, trace) = graph_stage(config, &phantom, &centers, &mut rec)?;
    at(&dir, "graph", write_graph(&dir.join("graph.csv"), &graph))?;
    at(&dir, "graph", rec.add("graph", "graph.csv"))?;
    rec.lap("graph");

    let spec = match &config.sources {
        Sources::Keyword(SourceKeyword::FromPhantom) => SourceSpec::from_phantom(&phantom),
        Sources::Spec(s) => s.clone(),
    };
    at(&dir, "reconstruct", io::write_json(&dir.join("sources.json"), &spec))?;
    at(&dir, "reconstruct", rec.add("sources", "sources.json"))?;
    let snapped = at(&dir, "reconstruct", snap_sources(&spec, &centers))?;
    let forest = at(&dir, "reconstruct", shortest_path_forest(&graph, &snapped))?;
    let (trees, report) = at(&dir, "reconstruct", forest_to_trees(&forest, &centers, &graph))?;
    at(&dir, "reconstruct", write_trees(&dir.join("trees.json"), &trees))?;
    at(&dir, "reconstruct", write_report(&dir.join("recon_report.json"), &report))?;
    at(&dir, "reconstruct", rec.add("trees", "trees.json"))?;
    at(&dir, "reconstruct", rec.add("recon_report", "recon_report.json"))?;
    rec.lap("reconstruct");

    let mut eval = at(&dir, "evaluate", evaluate(&phantom.trees, &trees))?;
    if config.variant == Variant::GtLabelClassification {
        eval.notes.push(CLASSIFICATION_NOTE.to_string());
    }
    at(&dir, "evaluate", write_eval_report(&dir.join(EVAL_FILE), &eval))?;
    at(&dir, "evaluate", rec.add("eval", EVAL_FILE))?;
    rec.lap("evaluate");

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash()?,
        variant: config.variant,
        seeds: Seeds {
            phantom: config.phantom.seed,
            centers: config.centers.seed,
            optimizer: config.optimizer.seed,
        },
        artifacts: rec.artifacts,
        eval_report: EVAL_FILE.to_string(),
        n_centers: centers.len(),
        final_loss: trace.as_ref().and_then(|t| t.last().copied()),
        iterations: trace.as_ref().map(|t| t.len()),
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    if options.record_timings {
        io::write_json(&dir.join(TIMINGS_FILE), &rec.timings)?;
    }
    Ok(manifest)
}

/// Dotted config paths mapped to the values to sweep over.
pub type SweepGrid = BTreeMap<String, Vec<Value>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub run: String,
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub point: SweepPoint,
    pub result: Result<(RunManifest, EvalReport)>,
}

pub const SWEEP_CSV: &str = "sweep.csv";

/// Cartesian product of the grid, last key varying fastest.
pub fn grid_points(grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut points: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
    for (key, values) in grid {
        if values.is_empty() {
            return Err(Error::invalid(format!("sweep parameter `{key}` has no values")));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(k, params)| SweepPoint { run: format!("run_{k:03}"), params })
        .collect())
}

/// Replaces the value at each dotted path; every path must already exist.
pub fn apply_params(base: &ExperimentConfig, params: &BTreeMap<String, Value>) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(base).map_err(|e| Error::invalid(e.to_string()))?;
    for (path, v) in params {
        let pointer = format!("/{}", path.replace('.', "/"));
        let slot = value
            .pointer_mut(&pointer)
            .ok_or_else(|| Error::invalid(format!("sweep parameter `{path}` names no config field")))?;
        *slot = v.clone();
    }
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::invalid(format!("swept config is invalid: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// One run per grid point in `out_dir/run_NNN`, at most `jobs` at a time.
/// Failed runs are recorded and do not stop the sweep.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid, out_dir: &Path, jobs: usize) -> Result<Vec<SweepOutcome>> {
    let points = grid_points(grid)?;
    // fail fast on typos in the grid, before any run starts
    for p in &points {
        apply_params(base, &p.params)?;
    }
    io::write_json(&out_dir.join("grid.json"), grid)?;
    let slots: Vec<Mutex<Option<Result<(RunManifest, EvalReport)>>>> =
        points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, points.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = points.get(k) else { break };
                let dir = out_dir.join(&point.run);
                let result = apply_params(base, &point.params).and_then(|config| {
                    let options = RunOptions { out_dir: Some(dir.clone()), record_timings: false };
                    let manifest = run_experiment(&config, &options)?;
                    let report = crate::eval::read_eval_report(&dir.join(&manifest.eval_report))?;
                    Ok((manifest, report))
                });
                if let Err(e) = &result {
                    log::warn!("{} failed: {e}", point.run);
                }
                *slots[k].lock().expect("no panics while holding the lock") = Some(result);
            });
        }
    });
    let outcomes: Vec<SweepOutcome> = points
        .into_iter()
        .zip(slots)
        .map(|(point, slot)| SweepOutcome {
            point,
            result: slot.into_inner().expect("lock not poisoned").expect("every point ran"),
        })
        .collect();
    io::write_bytes(&out_dir.join(SWEEP_CSV), sweep_csv(grid, &outcomes)?.as_bytes())?;
    Ok(outcomes)
}

/// Aggregate table: run, one column per swept parameter, status, then the
/// dice of every class seen in any successful run.
pub fn sweep_csv(grid: &SweepGrid, outcomes: &[SweepOutcome]) -> Result<String> {
    let classes: BTreeSet<_> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok())
        .flat_map(|(_, r)| r.classes.keys().copied())
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string()];
    header.extend(grid.keys().cloned());
    header.push("status".to_string());
    header.extend(classes.iter().map(|c| format!("dice_{c}")));
    w.write_record(&header).map_err(|e| Error::invalid(e.to_string()))?;
    for o in outcomes {
        let mut row = vec![o.point.run.clone()];
        row.extend(o.point.params.values().map(|v| v.to_string()));
        match &o.result {
            Ok((_, report)) => {
                row.push("ok".to_string());
                for c in &classes {
                    row.push(
                        report
                            .classes
                            .get(c)
                            .and_then(|m| m.dice)
                            .map(|d| format!("{d:.6}"))
                            .unwrap_or_else(|| "NA".to_string()),
                    );
                }
            }
            Err(e) => {
                row.push(format!("error[{}]: {e}", e.category().as_str()));
                row.extend(classes.iter().map(|_| "NA".to_string()));
            }
        }
        w.write_record(&row).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}
