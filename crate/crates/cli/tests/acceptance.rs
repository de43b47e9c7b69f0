//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use treemetric::centers::extract_centers;
use treemetric::embed::{Embedding, EMBED_DIM};
use treemetric::eval::{evaluate, read_eval_report, EvalReport};
use treemetric::losses::{
    centerness_loss_values, cosine_pair_loss, dice_loss, topology_pair_loss, PairSample, TopologyLossParams,
};
use treemetric::metricgraph::{Edge, MetricGraph};
use treemetric::phantom::{generate_phantom, PhantomConfig};
use treemetric::pipeline::{run_experiment, run_sweep, ExperimentConfig, RunOptions, SweepGrid, Variant};
use treemetric::recon::shortest_path_forest;
use treemetric::volume::{euclidean_distance_transform, BinaryMask, Grid, GridDims, LabelVolume, ScalarVolume};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;
const FD_POINTS: usize = 100;

/// Max-norm relative error; two exactly zero gradients agree.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + FD_STEP;
            let up = f(&probe);
            probe[k] = x[k] - FD_STEP;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn split(x: &[f64]) -> (Embedding, Embedding) {
    let mut a = [0.0; EMBED_DIM];
    let mut b = [0.0; EMBED_DIM];
    a.copy_from_slice(&x[..EMBED_DIM]);
    b.copy_from_slice(&x[EMBED_DIM..]);
    (a, b)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Draws points until `FD_POINTS` of them are away from every kink, and
/// returns the worst relative error seen.
fn check_points(
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<(Vec<f64>, Vec<f64>)>,
) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for _ in 0..100 * FD_POINTS {
        if used == FD_POINTS {
            break;
        }
        if let Some((analytic, numeric)) = draw(rng) {
            worst = worst.max(relative_error(&analytic, &numeric));
            used += 1;
        }
    }
    ensure(used == FD_POINTS, || format!("only {used} non-kink points drawn"))?;
    ensure(worst < FD_TOL, || format!("relative error {worst:.2e}"))?;
    Ok(worst)
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dice = check_points(&mut rng, |rng| {
        let n = rng.random_range(4..40);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, g) = dice_loss(&truth, &pred).ok()?;
        Some((g, central_difference(&pred, |p| dice_loss(&truth, p).unwrap().0)))
    })?;
    let centerness = check_points(&mut rng, |rng| {
        let n = rng.random_range(4..40);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..7.0)).collect();
        let mask: Vec<bool> = (0..n).map(|k| k == 0 || rng.random_bool(0.7)).collect();
        // smooth-L1 changes branch at |truth - pred| = 1
        if truth.iter().zip(&pred).any(|(t, p)| ((t - p).abs() - 1.0).abs() < 1e-2) {
            return None;
        }
        let (_, g) = centerness_loss_values(&truth, &pred, &mask).ok()?;
        Some((g, central_difference(&pred, |p| centerness_loss_values(&truth, p, &mask).unwrap().0)))
    })?;
    let params = TopologyLossParams::default();
    let topology = check_points(&mut rng, |rng| {
        let x: Vec<f64> = (0..2 * EMBED_DIM).map(|_| rng.random_range(-1.5..1.5)).collect();
        let pair = if rng.random_bool(0.5) {
            PairSample::same(0, 1, rng.random_range(0.0..15.0))
        } else {
            PairSample::different(0, 1)
        };
        let (a, b) = split(&x);
        let dist = norm(&x[..EMBED_DIM].iter().zip(&x[EMBED_DIM..]).map(|(p, q)| p - q).collect::<Vec<_>>());
        let kink = match pair.geodesic {
            Some(d) => ((dist - params.alpha * d).abs() - 1.0).abs(),
            None => (dist - params.margin).abs(),
        };
        if kink < 1e-2 || dist < 1e-2 {
            return None;
        }
        let pl = topology_pair_loss(&a, &b, &pair, &params).ok()?;
        let analytic: Vec<f64> = pl.grad_i.iter().chain(&pl.grad_j).copied().collect();
        let numeric = central_difference(&x, |y| {
            let (a, b) = split(y);
            topology_pair_loss(&a, &b, &pair, &params).unwrap().value
        });
        Some((analytic, numeric))
    })?;
    let cosine = check_points(&mut rng, |rng| {
        let x: Vec<f64> = (0..2 * EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        if norm(&x[..EMBED_DIM]) < 0.1 || norm(&x[EMBED_DIM..]) < 0.1 {
            return None;
        }
        let same = rng.random_bool(0.5);
        let (a, b) = split(&x);
        let pl = cosine_pair_loss(&a, &b, same).ok()?;
        let analytic: Vec<f64> = pl.grad_i.iter().chain(&pl.grad_j).copied().collect();
        let numeric = central_difference(&x, |y| {
            let (a, b) = split(y);
            cosine_pair_loss(&a, &b, same).unwrap().value
        });
        Some((analytic, numeric))
    })?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "max rel err dice {dice:.1e}, centerness {centerness:.1e}, topology {topology:.1e}, cosine {cosine:.1e}"
    ))
}

// ---------------------------------------------------------------- SPT oracle

/// Minimum path length from any source to every vertex by enumerating all
/// simple paths.
fn enumerate_distances(n: usize, adj: &[Vec<(usize, u32)>], sources: &[usize]) -> Vec<Option<u32>> {
    fn walk(u: usize, len: u32, adj: &[Vec<(usize, u32)>], on_path: &mut [bool], best: &mut [Option<u32>]) {
        if best[u].is_none_or(|b| len < b) {
            best[u] = Some(len);
        }
        for &(v, w) in &adj[u] {
            if !on_path[v] {
                on_path[v] = true;
                walk(v, len + w, adj, on_path, best);
                on_path[v] = false;
            }
        }
    }
    let mut best = vec![None; n];
    for &s in sources {
        let mut on_path = vec![false; n];
        on_path[s] = true;
        walk(s, 0, adj, &mut on_path, &mut best);
    }
    best
}

fn criterion_spt() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0;
    for trial in 0..200 {
        let n = rng.random_range(1..=9);
        let density = rng.random_range(0.2..0.9);
        let mut edges = Vec::new();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    // small integer weights: sums are exact and ties are common
                    let w: u32 = rng.random_range(1..=4);
                    edges.push(Edge { i, j, weight: w as f64 });
                    adj[i].push((j, w));
                    adj[j].push((i, w));
                }
            }
        }
        let mut vertices: Vec<usize> = (0..n).collect();
        let k = rng.random_range(1..=n.min(3));
        let mut sources = Vec::new();
        for label in 1..=k as u16 {
            let v = vertices.swap_remove(rng.random_range(0..vertices.len()));
            sources.push((label, v));
        }
        let graph = MetricGraph::new(n, edges).map_err(|e| e.to_string())?;
        let forest = shortest_path_forest(&graph, &sources).map_err(|e| e.to_string())?;

        let source_ids: Vec<usize> = sources.iter().map(|s| s.1).collect();
        let dist = enumerate_distances(n, &adj, &source_ids);
        // documented order: the parent is the lowest-id optimal predecessor,
        // sources have no parent, and labels follow the parent chain
        let mut parent = vec![None; n];
        let mut label = vec![None; n];
        let mut order: Vec<usize> = (0..n).filter(|&v| dist[v].is_some()).collect();
        order.sort_by_key(|&v| dist[v]);
        for v in order {
            if let Some(&(l, _)) = sources.iter().find(|s| s.1 == v) {
                label[v] = Some(l);
                continue;
            }
            let d = dist[v].unwrap();
            let preds: Vec<usize> = adj[v]
                .iter()
                .filter(|&&(u, w)| dist[u].is_some_and(|du| du + w == d))
                .map(|&(u, _)| u)
                .collect();
            if preds.len() > 1 {
                ties += 1;
            }
            let u = *preds.iter().min().unwrap();
            parent[v] = Some(u);
            label[v] = label[u];
        }
        for v in 0..n {
            let got = &forest.vertices[v];
            ensure(got.dist == dist[v].map(|d| d as f64), || {
                format!("trial {trial}: vertex {v} distance {:?}, oracle {:?}", got.dist, dist[v])
            })?;
            ensure(got.parent == parent[v] && got.label == label[v], || {
                format!(
                    "trial {trial}: vertex {v} parent/label {:?}/{:?}, oracle {:?}/{:?}",
                    got.parent, got.label, parent[v], label[v]
                )
            })?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("200 graphs, {ties} tied vertices"))
}

// ---------------------------------------------------------------- NMS and EDT

fn brute_force_edt(mask: &BinaryMask) -> Vec<f32> {
    let dims = mask.dims();
    let fg: Vec<[usize; 3]> = (0..dims.len()).filter(|&i| mask.data()[i]).map(|i| dims.coords(i)).collect();
    (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            let best = fg
                .iter()
                .map(|f| (0..3).map(|a| (c[a] as i64 - f[a] as i64).pow(2)).sum::<i64>())
                .min()
                .unwrap();
            (best as f64).sqrt() as f32
        })
        .collect()
}

/// Full window scan per voxel, then greedy pairwise suppression.
fn brute_force_nms(score: &ScalarVolume, mask: &LabelVolume, threshold: f64, window: usize) -> Vec<(usize, f32)> {
    let dims = score.dims();
    let h = (window / 2) as i64;
    let n = dims.as_array().map(|v| v as i64);
    let mut cands = Vec::new();
    for i in 0..dims.len() {
        let s = score.data()[i];
        if mask.data()[i] == 0 || (s as f64) >= threshold {
            continue;
        }
        let c = dims.coords(i).map(|v| v as i64);
        let mut is_min = true;
        for dz in -h..=h {
            for dy in -h..=h {
                for dx in -h..=h {
                    let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                    if x >= 0 && y >= 0 && z >= 0 && x < n[0] && y < n[1] && z < n[2]
                        && score.get(x as usize, y as usize, z as usize) < s
                    {
                        is_min = false;
                    }
                }
            }
        }
        if is_min {
            cands.push((i, s));
        }
    }
    cands.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f32)> = Vec::new();
    for (i, s) in cands {
        let c = dims.coords(i).map(|v| v as i64);
        let clash = kept.iter().any(|&(j, _)| {
            let d = dims.coords(j).map(|v| v as i64);
            (0..3).map(|a| (c[a] - d[a]).abs()).max().unwrap() <= h
        });
        if !clash {
            kept.push((i, s));
        }
    }
    kept.sort_by_key(|&(i, _)| i);
    kept
}

fn criterion_nms_edt() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut found = 0;
    for trial in 0..50 {
        let dims = GridDims::new(rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16))
            .map_err(|e| e.to_string())?;
        let density = [0.005, 0.05, 0.3, 0.8][trial % 4];
        let mut bits: Vec<bool> = (0..dims.len()).map(|_| rng.random_bool(density)).collect();
        if !bits.contains(&true) {
            bits[rng.random_range(0..dims.len())] = true;
        }
        let mask = Grid::from_vec(dims, bits).map_err(|e| e.to_string())?;
        let edt = euclidean_distance_transform(&mask).map_err(|e| e.to_string())?;
        ensure(edt.data() == brute_force_edt(&mask).as_slice(), || format!("EDT trial {trial} differs"))?;

        // quantized scores give plateaus; the EDT itself is a realistic score
        let score = if trial % 2 == 0 {
            edt
        } else {
            let levels = [3.0f32, 1000.0][trial % 4 / 2];
            Grid::from_vec(
                dims,
                (0..dims.len()).map(|_| (rng.random_range(0.0..2.0f32) * levels).floor() / levels).collect(),
            )
            .map_err(|e| e.to_string())?
        };
        let vessel = Grid::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(0..3u16)).collect())
            .map_err(|e| e.to_string())?;
        let window = [3, 5, 7][trial % 3];
        let got = extract_centers(&score, &vessel, 1.5, window).map_err(|e| e.to_string())?;
        let got: Vec<(usize, f32)> =
            got.entries.iter().map(|c| (dims.index(c.voxel[0], c.voxel[1], c.voxel[2]), c.score)).collect();
        ensure(got == brute_force_nms(&score, &vessel, 1.5, window), || format!("NMS trial {trial} differs"))?;
        found += got.len();
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("50 volumes, {found} centers"))
}

// ---------------------------------------------------------------- pipeline

fn run(config: &ExperimentConfig, dir: &Path) -> Result<(treemetric::pipeline::RunManifest, EvalReport), String> {
    let options = RunOptions { out_dir: Some(dir.to_path_buf()), record_timings: false };
    let manifest = run_experiment(config, &options).map_err(|e| e.to_string())?;
    let report = read_eval_report(&dir.join(&manifest.eval_report)).map_err(|e| e.to_string())?;
    Ok((manifest, report))
}

fn criterion_end_to_end(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::standard(1, Variant::Topology);
    let (manifest, report) = run(&config, &tmp.join("e2e"))?;
    let loss = manifest.final_loss.unwrap_or(f64::NAN);
    ensure(loss < 0.01, || format!("final loss {loss}"))?;
    ensure(manifest.n_centers >= 500, || format!("only {} centers", manifest.n_centers))?;
    ensure(report.ignored_predictions == 0, || format!("{} ignored", report.ignored_predictions))?;
    let mut parts = Vec::new();
    for (c, m) in &report.classes {
        let (dice, sens) = (m.dice.unwrap_or(0.0), m.sensitivity.unwrap_or(0.0));
        ensure(dice >= 0.99 && sens >= 0.99, || format!("class {c}: dice {dice}, sensitivity {sens}"))?;
        parts.push(format!("class {c} dice {dice:.4} sens {sens:.4}"));
    }
    within(start, Duration::from_secs(300))?;
    Ok(format!("{} centers, loss {loss:.4}, {}", manifest.n_centers, parts.join(", ")))
}

fn crossing_config(variant: Variant) -> ExperimentConfig {
    let mut c = ExperimentConfig::standard(1, variant);
    c.phantom = PhantomConfig::crossing(1, 2.0);
    c
}

fn criterion_crossing(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let (_, topo) = run(&crossing_config(Variant::Topology), &tmp.join("cross_topology"))?;
    let (_, cos) = run(&crossing_config(Variant::Cosine), &tmp.join("cross_cosine"))?;
    for f in ["centers.csv", "pairs.csv"] {
        let a = std::fs::read(tmp.join("cross_topology").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(tmp.join("cross_cosine").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between variants"))?;
    }
    let mut parts = Vec::new();
    for (c, m) in &topo.classes {
        let t = m.dice.unwrap_or(0.0);
        let k = cos.classes.get(c).and_then(|m| m.dice).unwrap_or(0.0);
        ensure(t >= k, || format!("class {c}: topology {t} < cosine {k}"))?;
        parts.push(format!("class {c} topology {t:.4} >= cosine {k:.4}"));
    }
    within(start, Duration::from_secs(600))?;
    Ok(parts.join(", "))
}

fn criterion_drop_sweep(tmp: &Path) -> Outcome {
    let base = ExperimentConfig::standard(1, Variant::Topology);
    let grid: SweepGrid =
        BTreeMap::from([("centers.drop_fraction".to_string(), vec![json!(0.0), json!(0.05), json!(0.10)])]);
    let outcomes = run_sweep(&base, &grid, &tmp.join("sweep"), 3).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for o in outcomes {
        let (_, r) = o.result.map_err(|e| format!("{}: {e}", o.point.run))?;
        reports.push(r);
    }
    let mut parts = Vec::new();
    for c in reports[0].classes.keys() {
        let dice: Vec<f64> =
            reports.iter().map(|r| r.classes.get(c).and_then(|m| m.dice).unwrap_or(0.0)).collect();
        ensure(dice.windows(2).all(|w| w[1] <= w[0]), || format!("class {c} dice not non-increasing: {dice:?}"))?;
        ensure(dice[1] >= 0.90, || format!("class {c} dice at 0.05 is {}", dice[1]))?;
        parts.push(format!("class {c} {:.4}/{:.4}/{:.4}", dice[0], dice[1], dice[2]));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- loss optima

fn criterion_optima() -> Outcome {
    let truth = [1.0, 0.0, 1.0, 1.0, 0.0];
    ensure(dice_loss(&truth, &truth).map_err(|e| e.to_string())?.0 == 0.0, || "dice".into())?;

    let t = [0.0, 0.5, 2.0, 7.25];
    let mask = [true, true, false, true];
    ensure(centerness_loss_values(&t, &t, &mask).map_err(|e| e.to_string())?.0 == 0.0, || "centerness".into())?;

    let p = TopologyLossParams::default();
    let origin = [0.0; EMBED_DIM];
    let at = |d: f64| {
        let mut v = [0.0; EMBED_DIM];
        v[0] = d;
        v
    };
    for geodesic in [0.0, 3.0, 7.5, 15.0] {
        let pair = PairSample::same(0, 1, geodesic);
        let l = topology_pair_loss(&origin, &at(p.alpha * geodesic), &pair, &p).map_err(|e| e.to_string())?;
        ensure(l.value == 0.0, || format!("topology same-tree at D = {geodesic}: {}", l.value))?;
    }
    for d in [p.margin, 4.0, 10.0] {
        let l = topology_pair_loss(&origin, &at(d), &PairSample::different(0, 1), &p).map_err(|e| e.to_string())?;
        ensure(l.value == 0.0, || format!("topology separated by {d}: {}", l.value))?;
    }
    let x = at(0.7);
    let coincident = topology_pair_loss(&x, &x, &PairSample::different(0, 1), &p).map_err(|e| e.to_string())?;
    ensure(coincident.value == 1.0, || format!("coincident different-label loss {}", coincident.value))?;

    let same = cosine_pair_loss(&x, &x, true).map_err(|e| e.to_string())?;
    ensure(same.value == 0.0, || format!("cosine S = 1: {}", same.value))?;
    let opposite = cosine_pair_loss(&x, &at(-0.7), false).map_err(|e| e.to_string())?;
    ensure(opposite.value == 0.0, || format!("cosine different-label S = -1: {}", opposite.value))?;
    Ok("all optima exactly 0, coincident different-label loss exactly 1.0".into())
}

// ---------------------------------------------------------------- determinism

fn criterion_determinism(tmp: &Path) -> Outcome {
    let config_path = tmp.join("det_config.json");
    let config = ExperimentConfig::standard(3, Variant::Topology);
    std::fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).map_err(|e| e.to_string())?;
    let mut listings = Vec::new();
    for name in ["det_a", "det_b"] {
        let out = tmp.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_treemetric"))
            .args(["run", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .stdout(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("run exited with {status}"))?;
        listings.push(read_tree(&out)?);
    }
    ensure(!listings[0].is_empty(), || "run wrote nothing".into())?;
    ensure(listings[0].keys().eq(listings[1].keys()), || "file sets differ".into())?;
    for (name, bytes) in &listings[0] {
        ensure(listings[1][name] == *bytes, || format!("{name} differs"))?;
    }
    for required in ["trees.json", "recon_report.json", "eval.json", "manifest.json"] {
        ensure(listings[0].contains_key(required), || format!("{required} missing"))?;
    }
    Ok(format!("{} files byte-identical across two runs", listings[0].len()))
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- self-eval

fn criterion_self_eval() -> Outcome {
    // every phantom the suite generates, plus a few extra seeds
    let mut configs: Vec<PhantomConfig> = (1..=8).map(PhantomConfig::standard).collect();
    configs.extend((1..=3).map(|s| PhantomConfig::crossing(s, 2.0)));
    configs.push(PhantomConfig::crossing(1, 5.0));
    for config in &configs {
        let phantom = generate_phantom(config).map_err(|e| e.to_string())?;
        let r = evaluate(&phantom.trees, &phantom.trees).map_err(|e| e.to_string())?;
        ensure(r.ignored_predictions == 0, || format!("seed {}: {} ignored", config.seed, r.ignored_predictions))?;
        for (c, m) in &r.classes {
            ensure(m.dice == Some(1.0) && m.sensitivity == Some(1.0) && m.specificity == Some(1.0), || {
                format!("seed {} class {c}: {m:?}", config.seed)
            })?;
        }
    }
    Ok(format!("{} phantoms", configs.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 gradient correctness", Box::new(criterion_gradients)),
        ("2 SPT oracle equivalence", Box::new(criterion_spt)),
        ("3 NMS/EDT oracle equivalence", Box::new(criterion_nms_edt)),
        ("4 end-to-end recovery", Box::new(|| criterion_end_to_end(tmp.path()))),
        ("5 crossing-trees ordering", Box::new(|| criterion_crossing(tmp.path()))),
        ("6 robustness direction", Box::new(|| criterion_drop_sweep(tmp.path()))),
        ("7 loss-optimum identities", Box::new(criterion_optima)),
        ("8 determinism", Box::new(|| criterion_determinism(tmp.path()))),
        ("9 evaluation self-consistency", Box::new(criterion_self_eval)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
