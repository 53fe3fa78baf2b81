//! Level sets of a shuttle-scan map by marching squares.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::shuttle::ShuttleScanMap;
use crate::error::{Error, Result};

/// Default spacing between equipotential lines.
pub const DEFAULT_CONTOUR_SPACING_MEV: f64 = 0.4;

/// Polylines of one level in the `(x, delta)` plane. A map with a single
/// sweep value yields single-point polylines at the level crossings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    pub lines: Vec<Vec<(f64, f64)>>,
}

/// Crossing point identity: a grid edge, horizontal `(row, col)` to
/// `(row, col + 1)` or vertical `(row, col)` to `(row + 1, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Lines at `k * spacing` above the global minimum of the map, for every
/// positive `k` with a level not above the maximum. `spacing` is in the
/// same energy units as the map values.
pub fn equipotential_contours(map: &ShuttleScanMap, spacing: f64) -> Result<Vec<Contour>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid("contour spacing must be positive"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in map.values.iter().flatten().flatten() {
        if !v.is_finite() {
            return Err(Error::NonFinite("shuttle map contains non-finite values".into()));
        }
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        return Ok(vec![]);
    }
    let mut contours = Vec::new();
    let mut k = 1u64;
    loop {
        let level = lo + k as f64 * spacing;
        if level > hi {
            break;
        }
        let lines = if map.deltas.len() == 1 { crossings(map, level) } else { march(map, level) };
        if !lines.is_empty() {
            contours.push(Contour { level, lines });
        }
        k += 1;
    }
    Ok(contours)
}

fn value(map: &ShuttleScanMap, r: usize, c: usize) -> Option<f64> {
    map.values[r][c]
}

fn edge_point(map: &ShuttleScanMap, e: Edge, level: f64) -> (f64, f64) {
    let (r0, c0, r1, c1) = match e {
        Edge::H(r, c) => (r, c, r, c + 1),
        Edge::V(r, c) => (r, c, r + 1, c),
    };
    let v0 = value(map, r0, c0).expect("edge endpoints are present");
    let v1 = value(map, r1, c1).expect("edge endpoints are present");
    let t = if v1 == v0 { 0.5 } else { (level - v0) / (v1 - v0) };
    let x = map.x[c0] + t * (map.x[c1] - map.x[c0]);
    let d = map.deltas[r0] + t * (map.deltas[r1] - map.deltas[r0]);
    (x, d)
}

fn crossings(map: &ShuttleScanMap, level: f64) -> Vec<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for c in 0..map.x.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (value(map, 0, c), value(map, 0, c + 1)) {
            if (a >= level) != (b >= level) {
                out.push(vec![edge_point(map, Edge::H(0, c), level)]);
            }
        }
    }
    out
}

fn march(map: &ShuttleScanMap, level: f64) -> Vec<Vec<(f64, f64)>> {
    let rows = map.deltas.len();
    let cols = map.x.len();
    let mut links: HashMap<Edge, Vec<Edge>> = HashMap::new();
    let mut order: Vec<Edge> = Vec::new();
    let mut link = |a: Edge, b: Edge, links: &mut HashMap<Edge, Vec<Edge>>| {
        for (p, q) in [(a, b), (b, a)] {
            let entry = links.entry(p).or_insert_with(|| {
                order.push(p);
                Vec::new()
            });
            entry.push(q);
        }
    };

    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols.saturating_sub(1) {
            let corners = [value(map, r, c), value(map, r, c + 1), value(map, r + 1, c + 1), value(map, r + 1, c)];
            let Some(v) = corners.iter().copied().collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let above: Vec<bool> = v.iter().map(|&x| x >= level).collect();
            // Edges in corner order: bottom, right, top, left.
            let edges = [Edge::H(r, c), Edge::V(r, c + 1), Edge::H(r + 1, c), Edge::V(r, c)];
            let cut: Vec<usize> = (0..4).filter(|&i| above[i] != above[(i + 1) % 4]).collect();
            match cut.len() {
                2 => link(edges[cut[0]], edges[cut[1]], &mut links),
                4 => {
                    // Saddle: resolve with the cell-centre average.
                    let centre = v.iter().sum::<f64>() / 4.0 >= level;
                    if centre == above[0] {
                        link(edges[0], edges[1], &mut links);
                        link(edges[2], edges[3], &mut links);
                    } else {
                        link(edges[3], edges[0], &mut links);
                        link(edges[1], edges[2], &mut links);
                    }
                }
                _ => {}
            }
        }
    }

    let mut visited: HashMap<Edge, bool> = HashMap::new();
    let mut lines = Vec::new();
    // Open chains start at endpoints; closed loops are picked up after.
    let starts: Vec<Edge> = order
        .iter()
        .filter(|e| links[e].len() == 1)
        .chain(order.iter())
        .copied()
        .collect();
    for start in starts {
        if visited.contains_key(&start) {
            continue;
        }
        let mut line = vec![edge_point(map, start, level)];
        visited.insert(start, true);
        let mut prev: Option<Edge> = None;
        let mut cur = start;
        loop {
            let next = links[&cur].iter().copied().find(|n| Some(*n) != prev && !visited.contains_key(n));
            match next {
                Some(n) => {
                    line.push(edge_point(map, n, level));
                    visited.insert(n, true);
                    prev = Some(cur);
                    cur = n;
                }
                None => {
                    if links[&cur].contains(&start) && line.len() > 2 {
                        line.push(line[0]);
                    }
                    break;
                }
            }
        }
        lines.push(line);
    }
    lines
}
