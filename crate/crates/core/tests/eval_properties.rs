use proptest::prelude::*;

use treemetric::eval::evaluate;
use treemetric::phantom::{CenterlineTree, TreeNode};

/// Chains of nodes on integer coordinates, one tree per label.
fn forest(max_nodes: usize) -> impl Strategy<Value = Vec<CenterlineTree>> {
    prop::collection::vec(((0i32..20, 0i32..20, 0i32..20), 1u16..4, 1u32..6), 1..max_nodes).prop_map(|raw| {
        let mut trees: Vec<CenterlineTree> = Vec::new();
        for (id, ((x, y, z), label, r)) in raw.into_iter().enumerate() {
            let pos = [x as f64, y as f64, z as f64];
            let tree = match trees.iter_mut().find(|t| t.label() == Some(label)) {
                Some(t) => t,
                None => {
                    trees.push(CenterlineTree { nodes: Vec::new() });
                    trees.last_mut().unwrap()
                }
            };
            let parent = tree.nodes.last().map(|n| n.id);
            tree.nodes.push(TreeNode { id, pos, radius: r as f64, parent, label });
        }
        trees
    })
}

fn shifted(trees: &[CenterlineTree], by: [f64; 3]) -> Vec<CenterlineTree> {
    let mut out = trees.to_vec();
    for n in out.iter_mut().flat_map(|t| t.nodes.iter_mut()) {
        for a in 0..3 {
            n.pos[a] += by[a];
        }
    }
    out
}

fn with_radius_scale(trees: &[CenterlineTree], k: f64) -> Vec<CenterlineTree> {
    let mut out = trees.to_vec();
    for n in out.iter_mut().flat_map(|t| t.nodes.iter_mut()) {
        n.radius *= k;
    }
    out
}

proptest! {
    #[test]
    fn counts_add_up(gt in forest(40), pred in forest(40)) {
        let r = evaluate(&gt, &pred).unwrap();
        let matched = r.matched_pairs.len();
        prop_assert_eq!(matched + r.ignored_predictions, r.total_predictions);
        let gt_total: usize = gt.iter().map(|t| t.nodes.len()).sum();
        for (&c, m) in &r.classes {
            prop_assert!(m.tp + m.fp + m.tn <= matched);
            let gt_c = gt.iter().flat_map(|t| &t.nodes).filter(|n| n.label == c).count();
            prop_assert!(m.fn_ <= gt_c && gt_c <= gt_total);
            for v in [m.dice, m.sensitivity, m.specificity].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn self_evaluation_is_perfect(gt in forest(60)) {
        // classes far apart: a node of another class within tolerance would
        // legitimately steal the match
        let mut gt = gt;
        for n in gt.iter_mut().flat_map(|t| t.nodes.iter_mut()) {
            n.pos[0] += 100.0 * n.label as f64;
        }
        let r = evaluate(&gt, &gt).unwrap();
        prop_assert_eq!(r.ignored_predictions, 0);
        for m in r.classes.values() {
            prop_assert_eq!(m.dice, Some(1.0));
            prop_assert_eq!(m.sensitivity, Some(1.0));
            prop_assert_eq!((m.fp, m.fn_), (0, 0));
        }
    }

    #[test]
    fn larger_tolerance_never_ignores_more(gt in forest(40), pred in forest(40)) {
        let tight = evaluate(&gt, &pred).unwrap();
        let loose = evaluate(&with_radius_scale(&gt, 2.0), &pred).unwrap();
        prop_assert!(loose.ignored_predictions <= tight.ignored_predictions);
    }

    #[test]
    fn translation_invariant(gt in forest(40), pred in forest(40), dx in -30i32..30, dy in -30i32..30, dz in -30i32..30) {
        let by = [dx as f64, dy as f64, dz as f64];
        let a = evaluate(&gt, &pred).unwrap();
        let b = evaluate(&shifted(&gt, by), &shifted(&pred, by)).unwrap();
        prop_assert_eq!(a, b);
    }
}
