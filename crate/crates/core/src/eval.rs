//! Tolerance-based centerline comparison.
//!
//! Each predicted node is matched to the nearest ground-truth node (of any
//! class) that lies within that node's radius; predictions with no such node
//! are ignored. Per class `c`:
//!
//! * TP: matched predictions labeled `c` whose gt node is `c`
//! * FP: matched predictions labeled `c` whose gt node is not `c`
//! * TN: matched predictions not labeled `c` whose gt node is not `c`
//! * FN: gt nodes of class `c` with no matched `c`-prediction within their radius

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::phantom::{distance, CenterlineTree, TreeNode};
use crate::volume::Label;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// `None` when the denominator is zero.
    pub dice: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        ClassMetrics {
            tp,
            fp,
            fn_,
            tn,
            dice: ratio(2 * tp, 2 * tp + fp + fn_),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: BTreeMap<Label, ClassMetrics>,
    pub ignored_predictions: usize,
    pub total_predictions: usize,
    /// `(prediction id, gt id)` for every matched prediction, by prediction id.
    pub matched_pairs: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn nodes_of(trees: &[CenterlineTree]) -> Vec<&TreeNode> {
    let mut nodes: Vec<&TreeNode> = trees.iter().flat_map(|t| t.nodes.iter()).collect();
    nodes.sort_by_key(|n| n.id);
    nodes
}

/// Buckets gt nodes by a cell at least as large as the largest radius, so
/// every node that can match a point sits in the 27 surrounding cells.
struct RadiusIndex<'a> {
    nodes: Vec<&'a TreeNode>,
    cell: f64,
    buckets: std::collections::HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> RadiusIndex<'a> {
    fn new(nodes: Vec<&'a TreeNode>) -> Self {
        let cell = nodes.iter().map(|n| n.radius).fold(1.0, f64::max);
        let mut buckets: std::collections::HashMap<[i64; 3], Vec<usize>> = Default::default();
        for (k, n) in nodes.iter().enumerate() {
            buckets.entry(Self::key(cell, n.pos)).or_default().push(k);
        }
        RadiusIndex { nodes, cell, buckets }
    }

    fn key(cell: f64, p: [f64; 3]) -> [i64; 3] {
        p.map(|v| (v / cell).floor() as i64)
    }

    /// Nodes whose radius covers `p`, in ascending id order.
    fn covering(&self, p: [f64; 3]) -> Vec<&'a TreeNode> {
        let c = Self::key(self.cell, p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        out.extend(b.iter().map(|&k| self.nodes[k]).filter(|n| distance(p, n.pos) <= n.radius));
                    }
                }
            }
        }
        out.sort_by_key(|n| n.id);
        out
    }
}

pub fn evaluate(gt_trees: &[CenterlineTree], pred_trees: &[CenterlineTree]) -> Result<EvalReport> {
    if gt_trees.iter().all(|t| t.nodes.is_empty()) {
        return Err(Error::invalid("ground truth has no nodes"));
    }
    let gt = nodes_of(gt_trees);
    for n in &gt {
        if !(n.radius > 0.0 && n.radius.is_finite()) {
            return Err(Error::invalid(format!("gt node {} has non-positive radius {}", n.id, n.radius)));
        }
    }
    let pred = nodes_of(pred_trees);
    let classes: BTreeSet<Label> = gt.iter().chain(&pred).map(|n| n.label).collect();
    let index = RadiusIndex::new(gt.clone());

    let mut matched: Vec<(&TreeNode, &TreeNode)> = Vec::new();
    let mut ignored = 0;
    for p in &pred {
        let nearest = index
            .covering(p.pos)
            .into_iter()
            .map(|g| (distance(p.pos, g.pos), g))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        match nearest {
            Some((_, g)) => matched.push((p, g)),
            None => ignored += 1,
        }
    }

    // gt ids covered by a matched prediction of the gt node's own class
    let mut covered = BTreeSet::new();
    for (p, _) in &matched {
        for g in index.covering(p.pos) {
            if g.label == p.label {
                covered.insert(g.id);
            }
        }
    }

    let mut report = EvalReport {
        ignored_predictions: ignored,
        total_predictions: pred.len(),
        matched_pairs: matched.iter().map(|(p, g)| (p.id, g.id)).collect(),
        ..Default::default()
    };
    for &c in &classes {
        let (mut tp, mut fp, mut tn) = (0, 0, 0);
        for (p, g) in &matched {
            match (p.label == c, g.label == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => {}
            }
        }
        let fn_ = gt.iter().filter(|g| g.label == c && !covered.contains(&g.id)).count();
        report.classes.insert(c, ClassMetrics::from_counts(tp, fp, fn_, tn));
    }
    Ok(report)
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<()> {
    io::write_json(path, report)
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport> {
    io::read_json(path)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".to_string())
}

/// Comparison table, one row per (method, vessel class), methods sorted by name.
pub fn compare_runs(reports: &[(String, EvalReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    let mut sorted: Vec<&(String, EvalReport)> = reports.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::from("method,vessel,dice,specificity,sensitivity\n");
    for (name, r) in sorted {
        if name.contains([',', '"', '\n']) {
            return Err(Error::invalid(format!("method name {name:?} cannot appear in a CSV cell")));
        }
        for (label, m) in &r.classes {
            out.push_str(&format!(
                "{name},{label},{},{},{}\n",
                cell(m.dice),
                cell(m.specificity),
                cell(m.sensitivity)
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize, pos: [f64; 3], radius: f64, label: Label, parent: Option<usize>) -> TreeNode {
        TreeNode { id, pos, radius, parent, label }
    }

    fn two_trees() -> Vec<CenterlineTree> {
        let a = (0..10).map(|k| node(k, [k as f64, 0.0, 0.0], 1.5, 1, k.checked_sub(1))).collect();
        let b = (0..10)
            .map(|k| node(10 + k, [k as f64, 8.0, 0.0], 1.5, 2, if k == 0 { None } else { Some(9 + k) }))
            .collect();
        vec![CenterlineTree { nodes: a }, CenterlineTree { nodes: b }]
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let gt = two_trees();
        let r = evaluate(&gt, &gt).unwrap();
        assert_eq!(r.ignored_predictions, 0);
        for m in r.classes.values() {
            assert_eq!((m.dice, m.sensitivity, m.specificity), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn misclassified_prediction() {
        let gt = vec![CenterlineTree { nodes: vec![node(0, [0.0; 3], 2.0, 1, None)] }];
        let pred = vec![CenterlineTree { nodes: vec![node(0, [1.0, 0.0, 0.0], 1.0, 2, None)] }];
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!(r.classes[&1].fn_, 1);
        assert_eq!(r.classes[&1].tp, 0);
        assert_eq!(r.classes[&2].fp, 1);
        assert_eq!(r.classes[&1].dice, Some(0.0));
        assert_eq!(r.classes[&1].specificity, None);
    }

    #[test]
    fn far_predictions_are_ignored() {
        let gt = vec![CenterlineTree { nodes: vec![node(0, [0.0; 3], 2.0, 1, None)] }];
        let pred = vec![CenterlineTree {
            nodes: vec![node(0, [0.0; 3], 1.0, 1, None), node(1, [5.0, 0.0, 0.0], 1.0, 1, Some(0))],
        }];
        let r = evaluate(&gt, &pred).unwrap();
        assert_eq!(r.ignored_predictions, 1);
        assert_eq!(r.classes[&1].tp, 1);
        assert_eq!(r.classes[&1].fp, 0);
        assert_eq!(r.matched_pairs, vec![(0, 0)]);
    }

    #[test]
    fn bad_gt_radius_is_rejected() {
        let gt = vec![CenterlineTree { nodes: vec![node(0, [0.0; 3], 0.0, 1, None)] }];
        assert!(evaluate(&gt, &gt).is_err());
        assert!(evaluate(&[], &gt).is_err());
    }

    #[test]
    fn comparison_table() {
        let gt = two_trees();
        let r = evaluate(&gt, &gt).unwrap();
        let csv = compare_runs(&[("b".into(), r.clone()), ("a".into(), r)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,vessel,dice,specificity,sensitivity");
        assert_eq!(lines[1], "a,1,1.000000,1.000000,1.000000");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("b,1,"));
        assert!(compare_runs(&[]).is_err());
    }
}
