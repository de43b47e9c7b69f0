//! `treemetric` command-line front end: one subcommand per pipeline stage,
//! plus `run`, `sweep` and `export`.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 validation,
//! 5 numeric divergence. Failures print one line `error[<category>]: <msg>`
//! to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use treemetric::centers::{centers_from_ground_truth, extract_centers, read_centers, write_centers, CenterParams};
use treemetric::embed::{
    build_pair_set, center_labels, optimize_embeddings, perturb_embeddings, read_embeddings, read_pairs,
    write_embeddings, write_pairs, OptimizerConfig,
};
use treemetric::eval::{compare_runs, evaluate, read_eval_report, write_eval_report};
use treemetric::export::{trees_to_obj, trees_to_polyline_csv};
use treemetric::io;
use treemetric::losses::{Objective, TopologyLossParams};
use treemetric::metricgraph::{
    build_cosine_graph, build_label_graph, build_topology_graph, read_graph, write_graph, DEFAULT_ALPHA,
    DEFAULT_CUTOFF, DEFAULT_RADIUS,
};
use treemetric::phantom::{generate_phantom, load_phantom, read_trees, save_phantom, write_trees, PhantomConfig};
use treemetric::pipeline::{read_config, run_experiment, run_sweep, RunOptions, SweepGrid};
use treemetric::recon::{forest_to_trees, shortest_path_forest, snap_sources, write_report, SourceSpec};
use treemetric::volume::{read_volume, LabelVolume, ScalarVolume};
use treemetric::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "treemetric", version, about = "Topology-metric vessel tree reconstruction")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vessel phantom.
    Phantom(PhantomArgs),
    /// Extract center-voxels from a phantom or a score volume.
    Centers(CentersArgs),
    /// Build the training pair set.
    Pairs(PairsArgs),
    /// Optimize per-center embeddings.
    Embed(EmbedArgs),
    /// Build the reconstruction graph.
    Graph(GraphArgs),
    /// Multi-source shortest-path-tree reconstruction.
    Reconstruct(ReconstructArgs),
    /// Evaluate predicted trees, or compare evaluation reports.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from one config file.
    Run(RunArgs),
    /// Run an experiment over a parameter grid.
    Sweep(SweepArgs),
    /// Export trees as a line mesh and CSV polylines.
    Export(ExportArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CentersArgs {
    /// Phantom directory; centers come from its ground-truth centerness.
    #[arg(long, conflicts_with_all = ["score", "mask"], required_unless_present = "score")]
    phantom: Option<PathBuf>,
    /// Score volume header, used instead of a phantom.
    #[arg(long, requires = "mask")]
    score: Option<PathBuf>,
    /// Vessel label volume header gating `--score`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_fraction: f64,
    #[arg(long, default_value_t = treemetric::centers::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = treemetric::centers::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    phantom: PathBuf,
    #[arg(long)]
    centers: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Topology,
    Cosine,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    centers: PathBuf,
    #[arg(long, value_enum, default_value = "topology")]
    objective: ObjectiveArg,
    /// Optimizer config (JSON); defaults are used when absent.
    #[arg(long)]
    optimizer: Option<PathBuf>,
    /// Topology loss parameters (JSON).
    #[arg(long)]
    loss: Option<PathBuf>,
    /// Overrides the optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Add seeded Gaussian noise of this scale to the optimized embeddings.
    #[arg(long)]
    perturb_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    perturb_seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Topology,
    Cosine,
    GtLabels,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    centers: PathBuf,
    #[arg(long, value_enum, default_value = "topology")]
    metric: MetricArg,
    /// Embeddings (topology and cosine metrics).
    #[arg(long, required_unless_present = "phantom")]
    embeddings: Option<PathBuf>,
    /// Phantom directory (gt-labels metric).
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    centers: PathBuf,
    /// Source spec (JSON).
    #[arg(long, required_unless_present = "phantom", conflicts_with = "phantom")]
    sources: Option<PathBuf>,
    /// Take sources from the tree roots of this phantom.
    #[arg(long)]
    phantom: Option<PathBuf>,
    /// Output trees (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Run report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Full per-vertex forest (JSON).
    #[arg(long)]
    forest: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth trees (JSON).
    #[arg(long, required_unless_present = "compare", conflicts_with = "compare")]
    gt: Option<PathBuf>,
    /// Predicted trees (JSON).
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    /// `name=report.json` entries to tabulate instead of evaluating.
    #[arg(long, num_args = 1..)]
    compare: Vec<String>,
    /// Report (JSON) or, with `--compare`, table (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-stage wall times to timings.json.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid (JSON object of dotted config path to value list).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    trees: PathBuf,
    /// Line mesh output.
    #[arg(long, required_unless_present = "csv")]
    obj: Option<PathBuf>,
    /// Polyline CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Io => 3,
        ErrorCategory::Validation => 4,
        ErrorCategory::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category().as_str());
            ExitCode::from(exit_code(e.category()))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => phantom(a),
        Command::Centers(a) => centers(a),
        Command::Pairs(a) => pairs(a),
        Command::Embed(a) => embed(a),
        Command::Graph(a) => graph(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Export(a) => export(a),
    }
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let mut config: PhantomConfig = io::read_json(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let p = generate_phantom(&config)?;
    save_phantom(&p, &a.out)?;
    let sizes: Vec<String> = p.trees.iter().map(|t| t.nodes.len().to_string()).collect();
    println!("phantom: {} trees ({} nodes), {} overlap voxels", p.trees.len(), sizes.join("+"), p.overlap_voxels);
    Ok(())
}

fn centers(a: CentersArgs) -> Result<()> {
    let set = match (&a.phantom, &a.score, &a.mask) {
        (Some(dir), _, _) => {
            let params = CenterParams {
                noise_sigma: a.noise_sigma,
                drop_fraction: a.drop_fraction,
                threshold: a.threshold,
                window: a.window,
                seed: a.seed,
            };
            centers_from_ground_truth(&load_phantom(dir)?, &params)?
        }
        (None, Some(score), Some(mask)) => {
            let score: ScalarVolume = read_volume(score)?;
            let mask: LabelVolume = read_volume(mask)?;
            extract_centers(&score, &mask, a.threshold, a.window)?
        }
        _ => return Err(Error::Invalid("give --phantom, or --score with --mask".into())),
    };
    write_centers(&a.out, &set)?;
    println!("centers: {}", set.len());
    Ok(())
}

fn pairs(a: PairsArgs) -> Result<()> {
    let phantom = load_phantom(&a.phantom)?;
    let centers = read_centers(&a.centers)?;
    let pairs = build_pair_set(&phantom, &centers, a.radius)?;
    write_pairs(&a.out, &pairs)?;
    let same = pairs.iter().filter(|p| p.same_label).count();
    println!("pairs: {} ({} same-label)", pairs.len(), same);
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let mut config: OptimizerConfig = match &a.optimizer {
        Some(p) => io::read_json(p)?,
        None => OptimizerConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let params: TopologyLossParams = match &a.loss {
        Some(p) => io::read_json(p)?,
        None => TopologyLossParams::default(),
    };
    let objective = match a.objective {
        ObjectiveArg::Topology => Objective::Topology,
        ObjectiveArg::Cosine => Objective::Cosine,
    };
    let pairs = read_pairs(&a.pairs)?;
    let centers = read_centers(&a.centers)?;
    let (mut table, trace) = optimize_embeddings(&pairs, centers.len(), &config, objective, &params)?;
    if let Some(sigma) = a.perturb_sigma {
        table = perturb_embeddings(&table, sigma, a.perturb_seed)?;
    }
    write_embeddings(&a.out, &table)?;
    if let Some(path) = &a.trace {
        let mut out = String::from("iteration,loss\n");
        for (k, v) in trace.iter().enumerate() {
            out.push_str(&format!("{k},{v}\n"));
        }
        io::write_bytes(path, out.as_bytes())?;
    }
    println!("embed: {} iterations, final loss {}", trace.len(), trace.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn graph(a: GraphArgs) -> Result<()> {
    let centers = read_centers(&a.centers)?;
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| Error::Invalid(format!("this metric needs --{flag}")))
    };
    let g = match a.metric {
        MetricArg::Topology => {
            let e = read_embeddings(&need(&a.embeddings, "embeddings")?)?;
            build_topology_graph(&centers, &e, a.radius, a.alpha, a.cutoff)?
        }
        MetricArg::Cosine => build_cosine_graph(&centers, &read_embeddings(&need(&a.embeddings, "embeddings")?)?, a.radius)?,
        MetricArg::GtLabels => {
            let phantom = load_phantom(&need(&a.phantom, "phantom")?)?;
            build_label_graph(&centers, &center_labels(&phantom, &centers)?, a.radius)?
        }
    };
    write_graph(&a.out, &g)?;
    println!("graph: {} vertices, {} edges", g.n_vertices, g.edges.len());
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let centers = read_centers(&a.centers)?;
    let graph = read_graph(&a.graph, centers.len())?;
    let spec = match (&a.sources, &a.phantom) {
        (Some(p), _) => io::read_json::<SourceSpec>(p)?,
        (None, Some(dir)) => SourceSpec::from_phantom(&load_phantom(dir)?),
        (None, None) => return Err(Error::Invalid("give --sources or --phantom".into())),
    };
    let snapped = snap_sources(&spec, &centers)?;
    let forest = shortest_path_forest(&graph, &snapped)?;
    let (trees, report) = forest_to_trees(&forest, &centers, &graph)?;
    write_trees(&a.out, &trees)?;
    if let Some(p) = &a.report {
        write_report(p, &report)?;
    }
    if let Some(p) = &a.forest {
        io::write_json(p, &forest)?;
    }
    println!(
        "reconstruct: {} trees, {} unassigned, total cost {}",
        trees.len(),
        report.unassigned_count,
        report.total_cost
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    if !a.compare.is_empty() {
        let mut reports = Vec::new();
        for entry in &a.compare {
            let (name, path) = entry
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("--compare entry `{entry}` is not name=path")))?;
            reports.push((name.to_string(), read_eval_report(Path::new(path))?));
        }
        let table = compare_runs(&reports)?;
        io::write_bytes(&a.out, table.as_bytes())?;
        print!("{table}");
        return Ok(());
    }
    let (Some(gt), Some(pred)) = (&a.gt, &a.pred) else {
        return Err(Error::Invalid("give --gt and --pred, or --compare".into()));
    };
    let report = evaluate(&read_trees(gt)?, &read_trees(pred)?)?;
    write_eval_report(&a.out, &report)?;
    print_dice(&report);
    Ok(())
}

fn print_dice(report: &treemetric::eval::EvalReport) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    for (label, m) in &report.classes {
        println!(
            "class {label}: dice {} sensitivity {} specificity {}",
            fmt(m.dice),
            fmt(m.sensitivity),
            fmt(m.specificity)
        );
    }
    println!("ignored predictions: {}", report.ignored_predictions);
}

fn run(a: RunArgs) -> Result<()> {
    let config = read_config(&a.config)?;
    let options = RunOptions { out_dir: a.out.clone(), record_timings: a.timings };
    let manifest = run_experiment(&config, &options)?;
    let dir = a.out.or(config.output_dir).expect("run_experiment checked the output dir");
    println!("run: {} centers, config {}", manifest.n_centers, &manifest.config_hash[..12]);
    if let Some(loss) = manifest.final_loss {
        println!("final loss: {loss}");
    }
    print_dice(&read_eval_report(&dir.join(&manifest.eval_report))?);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = read_config(&a.config)?;
    let grid: SweepGrid = io::read_json(&a.grid)?;
    let outcomes = run_sweep(&base, &grid, &a.out, a.jobs)?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    println!("sweep: {} runs, {} failed", outcomes.len(), failed);
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let trees = read_trees(&a.trees)?;
    if let Some(p) = &a.obj {
        io::write_bytes(p, trees_to_obj(&trees)?.as_bytes())?;
    }
    if let Some(p) = &a.csv {
        io::write_bytes(p, trees_to_polyline_csv(&trees)?.as_bytes())?;
    }
    Ok(())
}
