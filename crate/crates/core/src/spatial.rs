//! Uniform bucket grid for fixed-radius neighbor queries.

use std::collections::HashMap;

/// All index pairs `(i, j)`, `i < j`, whose points lie within `radius`
/// (closed), in lexicographic order.
pub fn pairs_within(points: &[[f64; 3]], radius: f64) -> Vec<(usize, usize)> {
    if points.len() < 2 || !(radius >= 0.0) {
        return Vec::new();
    }
    let cell = radius.max(1e-9);
    let key = |p: &[f64; 3]| p.map(|v| (v / cell).floor() as i64);
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let c = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && squared_distance(p, &points[j]) <= r2 {
                            out.push((i, j));
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}
