use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use treemetric::centers::read_centers;
use treemetric::embed::{read_pairs, DIVERGENCE_WINDOW};
use treemetric::metricgraph::read_graph;
use treemetric::phantom::PhantomConfig;
use treemetric::pipeline::{
    run_experiment, run_sweep, ExperimentConfig, RunManifest, RunOptions, SweepGrid, Variant, MANIFEST_FILE,
};
use treemetric::spatial::squared_distance;

/// A 40³ two-tree phantom that runs in well under a second.
fn small_config(variant: Variant) -> ExperimentConfig {
    let mut c = ExperimentConfig::standard(2, variant);
    let mut p = PhantomConfig::standard(2);
    p.dims = treemetric::volume::GridDims::cube(40).unwrap();
    p.trees[0].depth = 6;
    p.trees[1].depth = 6;
    p.trees[1].root = [35.0, 28.0, 20.0];
    p.trees[0].root = [4.0, 12.0, 20.0];
    c.phantom = p;
    c
}

fn run(config: &ExperimentConfig, dir: &Path) -> RunManifest {
    let options = RunOptions { out_dir: Some(dir.to_path_buf()), record_timings: false };
    run_experiment(config, &options).unwrap()
}

fn read_trace(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(Variant::Topology);
    let a = run(&config, &tmp.path().join("a"));
    let b = run(&config, &tmp.path().join("b"));
    assert_eq!(a, b);
    for art in &a.artifacts {
        let x = std::fs::read(tmp.path().join("a").join(&art.path)).unwrap();
        let y = std::fs::read(tmp.path().join("b").join(&art.path)).unwrap();
        assert_eq!(x, y, "{}", art.path);
    }
    let ma = std::fs::read(tmp.path().join("a").join(MANIFEST_FILE)).unwrap();
    let mb = std::fs::read(tmp.path().join("b").join(MANIFEST_FILE)).unwrap();
    assert_eq!(ma, mb);
    a.verify(&tmp.path().join("a")).unwrap();
}

#[test]
fn artifacts_are_consistent_with_each_other() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(Variant::Topology);
    let manifest = run(&config, tmp.path());

    let centers = read_centers(&tmp.path().join("centers.csv")).unwrap();
    assert_eq!(centers.len(), manifest.n_centers);

    let graph = read_graph(&tmp.path().join("graph.csv"), centers.len()).unwrap();
    graph.check_support(&centers, config.graph.radius).unwrap();

    // pair set is exactly the centers within the loss neighborhood
    let pts = centers.positions();
    let r2 = config.loss.neighborhood_radius.powi(2);
    let mut brute = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if squared_distance(&pts[i], &pts[j]) <= r2 {
                brute += 1;
            }
        }
    }
    assert_eq!(read_pairs(&tmp.path().join("pairs.csv")).unwrap().len(), brute);

    let trace = read_trace(&tmp.path().join("loss_trace.csv"));
    assert_eq!(Some(trace.len()), manifest.iterations);
    for k in DIVERGENCE_WINDOW..trace.len() {
        assert!(trace[k] <= trace[k - DIVERGENCE_WINDOW], "loss rose before iteration {k}");
    }
}

#[test]
fn classification_variant_runs_without_embeddings() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = run(&small_config(Variant::GtLabelClassification), tmp.path());
    assert_eq!(manifest.final_loss, None);
    assert!(!tmp.path().join("embeddings.json").exists());
}

#[test]
fn drop_sweep_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let grid: SweepGrid =
        BTreeMap::from([("centers.drop_fraction".to_string(), vec![json!(0.0), json!(0.1)])]);
    let outcomes = run_sweep(&small_config(Variant::Topology), &grid, tmp.path(), 2).unwrap();
    assert_eq!(outcomes.len(), 2);
    let reports: Vec<_> = outcomes.into_iter().map(|o| o.result.unwrap().1).collect();
    for (c, m) in &reports[0].classes {
        assert!(m.dice.unwrap() >= reports[1].classes[c].dice.unwrap());
    }
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(tmp.path().join("run_001").join(MANIFEST_FILE).exists());
}

#[test]
fn bad_sweep_path_fails_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let grid: SweepGrid = BTreeMap::from([("centers.no_such_field".to_string(), vec![json!(1)])]);
    assert!(run_sweep(&small_config(Variant::Topology), &grid, tmp.path(), 1).is_err());
    assert!(!tmp.path().join("run_000").exists());
}
