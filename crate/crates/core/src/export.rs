//! Text exports of centerline trees for external viewers: a wavefront-style
//! line mesh (`v` / `l` records) and CSV polylines split at branch points.

use std::collections::HashMap;

use crate::error::Result;
use crate::phantom::CenterlineTree;

/// One `o tree_<label>` group per tree; vertex indices are 1-based and
/// global, as the format requires.
pub fn trees_to_obj(trees: &[CenterlineTree]) -> Result<String> {
    let mut out = String::new();
    let mut offset = 0;
    for t in trees {
        t.validate()?;
        let label = t.label().unwrap_or_default();
        out.push_str(&format!("o tree_{label}\n"));
        let index: HashMap<usize, usize> = t.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        for n in &t.nodes {
            out.push_str(&format!("v {} {} {}\n", n.pos[0], n.pos[1], n.pos[2]));
        }
        for (k, n) in t.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                out.push_str(&format!("l {} {}\n", offset + index[&p] + 1, offset + k + 1));
            }
        }
        offset += t.nodes.len();
    }
    Ok(out)
}

/// Maximal unbranched runs of each tree, each starting at the root or at a
/// branch point and ending at a leaf or the next branch point.
pub fn polylines(tree: &CenterlineTree) -> Vec<Vec<usize>> {
    let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
    for n in &tree.nodes {
        if let Some(p) = n.parent {
            children.entry(p).or_default().push(n.id);
        }
    }
    for c in children.values_mut() {
        c.sort_unstable();
    }
    let Some(root) = tree.root() else { return Vec::new() };
    let mut lines = Vec::new();
    let mut stack = vec![root.id];
    while let Some(start) = stack.pop() {
        for &first in children.get(&start).map(Vec::as_slice).unwrap_or_default() {
            let mut line = vec![start, first];
            let mut cur = first;
            while let Some([only]) = children.get(&cur).map(Vec::as_slice) {
                line.push(*only);
                cur = *only;
            }
            if children.get(&cur).is_some_and(|c| c.len() > 1) {
                stack.push(cur);
            }
            lines.push(line);
        }
    }
    lines
}

pub fn trees_to_polyline_csv(trees: &[CenterlineTree]) -> Result<String> {
    let mut out = String::from("polyline,label,order,node,x,y,z\n");
    let mut line_id = 0;
    for t in trees {
        t.validate()?;
        let label = t.label().unwrap_or_default();
        let pos: HashMap<usize, [f64; 3]> = t.nodes.iter().map(|n| (n.id, n.pos)).collect();
        for line in polylines(t) {
            for (order, id) in line.iter().enumerate() {
                let p = pos[id];
                out.push_str(&format!("{line_id},{label},{order},{id},{},{},{}\n", p[0], p[1], p[2]));
            }
            line_id += 1;
        }
    }
    Ok(out)
}
