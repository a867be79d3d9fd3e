//! Graph distances on the 8-neighbour lattice, measured in a grid metric.
//!
//! First-order accurate in the spacing; exact for a flat metric along axes.

use crate::tensor::MetricField2;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const NEIGHBOURS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Length of the lattice edge from node `a` along offset `(di, dj)`, using
/// the average of the endpoint metrics.
fn edge_length(g: &MetricField2, a: usize, b: usize, di: isize, dj: isize) -> f64 {
    let dx = di as f64 * g.chart.h1();
    let dy = dj as f64 * g.chart.h2();
    let g11 = 0.5 * (g.g11[a] + g.g11[b]);
    let g12 = 0.5 * (g.g12[a] + g.g12[b]);
    let g22 = 0.5 * (g.g22[a] + g.g22[b]);
    (g11 * dx * dx + 2.0 * g12 * dx * dy + g22 * dy * dy).sqrt()
}

/// Single-source distances to every node.
pub fn distances_from(g: &MetricField2, source: (usize, usize)) -> Vec<f64> {
    let c = g.chart;
    let src = c.idx(source.0 as isize, source.1 as isize);
    let mut dist = vec![f64::INFINITY; c.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Entry { dist: 0.0, node: src });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        let (i, j) = c.node(node);
        for &(di, dj) in &NEIGHBOURS {
            let nb = c.idx(i as isize + di, j as isize + dj);
            let nd = d + edge_length(g, node, nb, di, dj);
            if nd < dist[nb] {
                dist[nb] = nd;
                heap.push(Entry { dist: nd, node: nb });
            }
        }
    }
    dist
}

/// Shortest-path distance between two nodes.
pub fn grid_distance(g: &MetricField2, p: (usize, usize), q: (usize, usize)) -> f64 {
    distances_from(g, p)[g.chart.idx(q.0 as isize, q.1 as isize)]
}

/// Shortest loop through `(i0, j0)` that wraps once around `axis`, found on
/// the cover unrolled along that axis (periodic along the other).
fn wrap_loop(g: &MetricField2, axis: usize, start: (usize, usize)) -> f64 {
    let c = g.chart;
    let (na, nb) = if axis == 1 { (c.n1, c.n2) } else { (c.n2, c.n1) };
    // Cover coordinates: a in [-na, 2na), b periodic.
    let width = 3 * na;
    let cover = |a: isize, b: isize| -> usize { ((a + na as isize) as usize) * nb + b.rem_euclid(nb as isize) as usize };
    let base = |a: isize, b: isize| -> usize {
        if axis == 1 {
            c.idx(a, b)
        } else {
            c.idx(b, a)
        }
    };
    let (a0, b0) = if axis == 1 { (start.0 as isize, start.1 as isize) } else { (start.1 as isize, start.0 as isize) };
    let target = cover(a0 + na as isize, b0);
    let mut dist = vec![f64::INFINITY; width * nb];
    let mut heap = BinaryHeap::new();
    let s = cover(a0, b0);
    dist[s] = 0.0;
    heap.push(Entry { dist: 0.0, node: s });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if node == target {
            return d;
        }
        if d > dist[node] {
            continue;
        }
        let a = (node / nb) as isize - na as isize;
        let b = (node % nb) as isize;
        for &(da, db) in &NEIGHBOURS {
            let (an, bn) = (a + da, b + db);
            if an < -(na as isize) || an >= 2 * na as isize {
                continue;
            }
            let (di, dj) = if axis == 1 { (da, db) } else { (db, da) };
            let len = edge_length(g, base(a, b), base(an, bn), di, dj);
            let nbr = cover(an, bn);
            let nd = d + len;
            if nd < dist[nbr] {
                dist[nbr] = nd;
                heap.push(Entry { dist: nd, node: nbr });
            }
        }
    }
    f64::INFINITY
}

/// Shortest wrap-around loop length, a stand-in for collapse of the
/// injectivity radius.
///
/// Loops winding once around either axis are searched from a stride of base
/// points on the corresponding cut line.
pub fn systole_proxy(g: &MetricField2) -> f64 {
    systole_proxy_with_stride(g, 0)
}

/// As [`systole_proxy`] with an explicit base-point stride (0 picks ~16 per axis).
pub fn systole_proxy_with_stride(g: &MetricField2, stride: usize) -> f64 {
    let c = g.chart;
    let s2 = if stride == 0 { (c.n2 / 16).max(1) } else { stride };
    let s1 = if stride == 0 { (c.n1 / 16).max(1) } else { stride };
    let along1 = (0..c.n2).step_by(s2).map(|j| wrap_loop(g, 1, (0, j))).fold(f64::INFINITY, f64::min);
    let along2 = (0..c.n1).step_by(s1).map(|i| wrap_loop(g, 2, (i, 0))).fold(f64::INFINITY, f64::min);
    along1.min(along2)
}

/// As [`systole_proxy`] with about `samples` base points per axis.
pub fn systole_proxy_sampled(g: &MetricField2, samples: usize) -> f64 {
    let n = g.chart.n1.min(g.chart.n2);
    systole_proxy_with_stride(g, (n / samples.max(1)).max(1))
}

/// Largest single axis-edge length under `g`, the natural slack unit for
/// distance comparisons.
pub fn max_axis_spacing(g: &MetricField2) -> f64 {
    let c = g.chart;
    (0..c.len())
        .map(|k| (g.g11[k].sqrt() * c.h1()).max(g.g22[k].sqrt() * c.h2()))
        .fold(0.0, f64::max)
}

/// Nodes within distance `r` of `center`.
pub fn ball(dist: &[f64], r: f64) -> Vec<usize> {
    dist.iter().enumerate().filter(|(_, d)| **d <= r).map(|(k, _)| k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2Chart;

    #[test]
    fn flat_neighbour_and_systole() {
        let c = Grid2Chart::new(2.0, 3.0, 16, 24).unwrap();
        let g = MetricField2::flat(c);
        assert!((grid_distance(&g, (3, 4), (4, 4)) - c.h1()).abs() < 1e-15);
        assert!((grid_distance(&g, (3, 4), (3, 5)) - c.h2()).abs() < 1e-15);
        assert!((systole_proxy(&g) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn systole_tracks_anisotropic_scaling() {
        let c = Grid2Chart::square(1.0, 16).unwrap();
        let n = c.len();
        let g = MetricField2::new(c, vec![0.01; n], vec![0.0; n], vec![1.0; n]).unwrap();
        assert!((systole_proxy(&g) - 0.1).abs() < 1e-12);
    }
}
