//! Chart covers, overlap decomposition and nerve statistics.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};
use crate::geometry::PointCloud;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMethod {
    Tetrahedral,
    Slab,
    Landmark,
    Custom,
}

/// Chart domains as sorted index sets into a [`PointCloud`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub charts: Vec<Vec<usize>>,
    pub landmarks: Option<Vec<usize>>,
    pub method: CoverMethod,
}

/// One connected piece of a pairwise overlap `U_i ∩ U_j`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapComponent {
    pub pair: (usize, usize),
    #[serde(rename = "id")]
    pub component_id: usize,
    #[serde(rename = "indices")]
    pub point_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleOverlap {
    pub triple: (usize, usize, usize),
    pub point_indices: Vec<usize>,
}

/// Result of [`decompose_overlaps`]: components plus the pairs whose
/// intersection was entirely classified as noise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapDecomposition {
    pub components: Vec<OverlapComponent>,
    pub degenerate_pairs: Vec<(usize, usize)>,
    pub noise_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerveStats {
    pub n_charts: usize,
    pub n_pairwise: usize,
    pub n_triple: usize,
    /// A single chart can only carry a trivial bundle.
    pub single_chart: bool,
}

impl Cover {
    /// Validates that every chart is nonempty and that the charts cover all
    /// `n_points` indices. Chart index sets are sorted and deduplicated.
    pub fn new(
        mut charts: Vec<Vec<usize>>,
        n_points: usize,
        landmarks: Option<Vec<usize>>,
        method: CoverMethod,
    ) -> Result<Self> {
        if charts.is_empty() {
            return Err(AtlasError::Cover("cover has no charts".into()));
        }
        let mut seen = vec![false; n_points];
        for (c, chart) in charts.iter_mut().enumerate() {
            chart.sort_unstable();
            chart.dedup();
            if chart.is_empty() {
                return Err(AtlasError::Cover(format!("chart {c} is empty")));
            }
            for &p in chart.iter() {
                if p >= n_points {
                    return Err(AtlasError::Cover(format!(
                        "chart {c} references point {p} outside a cloud of {n_points}"
                    )));
                }
                seen[p] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let uncovered = seen.iter().filter(|s| !**s).count();
            return Err(AtlasError::Cover(format!(
                "{uncovered} points are in no chart (first: {missing})"
            )));
        }
        Ok(Self {
            charts,
            landmarks,
            method,
        })
    }

    pub fn n_charts(&self) -> usize {
        self.charts.len()
    }

    /// Points lying in every listed chart.
    pub fn intersection(&self, charts: &[usize]) -> Vec<usize> {
        let Some((&first, rest)) = charts.split_first() else {
            return Vec::new();
        };
        let mut acc = self.charts[first].clone();
        for &c in rest {
            acc = intersect_sorted(&acc, &self.charts[c]);
        }
        acc
    }

    /// Nonempty pairwise intersections, `i < j`.
    pub fn pairwise_overlaps(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let n = self.n_charts();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let shared = intersect_sorted(&self.charts[i], &self.charts[j]);
                if !shared.is_empty() {
                    out.push(((i, j), shared));
                }
            }
        }
        out
    }

    /// Nonempty triple intersections, `i < j < k`.
    pub fn triple_overlaps(&self) -> Vec<TripleOverlap> {
        let n = self.n_charts();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let ij = intersect_sorted(&self.charts[i], &self.charts[j]);
                if ij.is_empty() {
                    continue;
                }
                for k in j + 1..n {
                    let ijk = intersect_sorted(&ij, &self.charts[k]);
                    if !ijk.is_empty() {
                        out.push(TripleOverlap {
                            triple: (i, j, k),
                            point_indices: ijk,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self, components: &[OverlapComponent]) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "charts": self.charts,
            "landmarks": self.landmarks,
            "components": components,
        })
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Vertices of the regular tetrahedron inscribed in the unit sphere.
pub fn tetrahedron_vertices() -> [[f64; 3]; 4] {
    let s = 1.0 / 3f64.sqrt();
    [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]
}

/// Four enlarged hemispheres `U_i = {x : <x, v_i> > -eps}` around the
/// tetrahedron vertices.
pub fn tetrahedral_cover(cloud: &PointCloud, eps: f64) -> Result<Cover> {
    if cloud.ambient_dim != 3 {
        return Err(AtlasError::Dimension {
            expected: 3,
            got: cloud.ambient_dim,
        });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(AtlasError::Parameter(format!("margin {eps} must lie in (0, 1)")));
    }
    let charts = tetrahedron_vertices()
        .iter()
        .map(|v| {
            (0..cloud.len())
                .filter(|&p| {
                    let x = cloud.point(p);
                    x[0] * v[0] + x[1] * v[1] + x[2] * v[2] > -eps
                })
                .collect()
        })
        .collect();
    Cover::new(charts, cloud.len(), None, CoverMethod::Tetrahedral)
}

/// Two charts split along one coordinate: `x[axis] > lo` and `x[axis] < hi`.
pub fn slab_cover(cloud: &PointCloud, axis: usize, lo: f64, hi: f64) -> Result<Cover> {
    if axis >= cloud.ambient_dim {
        return Err(AtlasError::Dimension {
            expected: cloud.ambient_dim,
            got: axis,
        });
    }
    if !(lo < hi) {
        return Err(AtlasError::Parameter(format!(
            "slab bounds need lo < hi, got {lo} >= {hi}"
        )));
    }
    let upper = (0..cloud.len()).filter(|&p| cloud.point(p)[axis] > lo).collect();
    let lower = (0..cloud.len()).filter(|&p| cloud.point(p)[axis] < hi).collect();
    Cover::new(vec![upper, lower], cloud.len(), None, CoverMethod::Slab)
}

/// Weighted adjacency lists.
pub type Graph = Vec<Vec<(usize, f64)>>;

/// Symmetrized k-nearest-neighbour graph with Euclidean edge weights.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<Graph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(AtlasError::Parameter(format!("k = {k} must satisfy 0 < k < n = {n}")));
    }
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for p in 0..n {
        dists.clear();
        let x = cloud.point(p);
        dists.extend((0..n).filter(|&q| q != p).map(|q| (sq_dist(x, cloud.point(q)), q)));
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d2, q) in &dists[..k] {
            let w = d2.sqrt();
            adjacency[p].push((q, w));
            adjacency[q].push((p, w));
        }
    }
    for row in &mut adjacency {
        row.sort_by(|a, b| a.0.cmp(&b.0));
        row.dedup_by_key(|e| e.0);
    }
    Ok(adjacency)
}

/// Number of connected components of an undirected graph.
pub fn count_components(graph: &Graph) -> usize {
    let mut seen = vec![false; graph.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..graph.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &graph[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    count
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact single-source shortest paths (Dijkstra).
pub fn shortest_paths(graph: &Graph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &graph[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Greedy farthest-point landmarks on a graph metric, starting from `first`.
/// Ties go to the lowest index. Returns the landmarks and their geodesic
/// distance rows.
pub fn farthest_point_landmarks(graph: &Graph, count: usize, first: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut landmarks = vec![first];
    let mut rows = vec![shortest_paths(graph, first)];
    let mut nearest = rows[0].clone();
    while landmarks.len() < count {
        let mut best = 0;
        for p in 1..nearest.len() {
            if nearest[p] > nearest[best] {
                best = p;
            }
        }
        let row = shortest_paths(graph, best);
        for (n, d) in nearest.iter_mut().zip(&row) {
            *n = n.min(*d);
        }
        landmarks.push(best);
        rows.push(row);
    }
    (landmarks, rows)
}

/// Linear-interpolated quantile of unsorted values, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Geodesic balls around farthest-point landmarks.
///
/// Chart `i` holds the points whose kNN-graph distance to landmark `i` is
/// below the `percentile` quantile of the whole landmark-to-point distance
/// matrix. Points outside every ball join the chart of their nearest landmark
/// so that the result is a cover.
pub fn landmark_cover(cloud: &PointCloud, n_charts: usize, k: usize, percentile: f64, seed: u64) -> Result<Cover> {
    let n = cloud.len();
    if n_charts == 0 || n_charts > n {
        return Err(AtlasError::Parameter(format!(
            "chart count {n_charts} must lie in 1..={n}"
        )));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(AtlasError::Parameter(format!(
            "percentile {percentile} must lie in (0, 1]"
        )));
    }
    let graph = knn_graph(cloud, k)?;
    let components = count_components(&graph);
    if components > 1 {
        return Err(AtlasError::Disconnected { components });
    }
    let first = rng::seeded(seed).random_range(0..n);
    let (landmarks, rows) = farthest_point_landmarks(&graph, n_charts, first);
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    let threshold = quantile(&all, percentile);

    let mut charts: Vec<Vec<usize>> = rows
        .iter()
        .map(|row| (0..n).filter(|&p| row[p] < threshold).collect())
        .collect();
    let mut covered = vec![false; n];
    charts.iter().flatten().for_each(|&p| covered[p] = true);
    let mut filled = 0;
    for p in (0..n).filter(|&p| !covered[p]) {
        let nearest = (0..n_charts)
            .min_by(|&a, &b| rows[a][p].total_cmp(&rows[b][p]))
            .expect("at least one chart");
        charts[nearest].push(p);
        filled += 1;
    }
    if filled > 0 {
        warn!("{filled} points outside every landmark ball joined their nearest chart");
    }
    Cover::new(charts, n, Some(landmarks), CoverMethod::Landmark)
}

/// DBSCAN labels over the given points; `None` marks noise.
///
/// A point is core when its closed `eps`-ball holds at least `min_pts`
/// points. Clusters are the connected components of core points; each border
/// point joins the cluster of its nearest core neighbour, which keeps the
/// partition independent of input order. Clusters are numbered by their
/// smallest member position.
pub fn dbscan(points: &[&[f64]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|p| (0..n).filter(|&q| sq_dist(points[p], points[q]) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(next);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbours[u] {
                if core[v] && label[v].is_none() {
                    label[v] = Some(next);
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    for p in 0..n {
        if core[p] {
            continue;
        }
        label[p] = neighbours[p]
            .iter()
            .filter(|&&q| core[q])
            .min_by(|&&a, &&b| sq_dist(points[p], points[a]).total_cmp(&sq_dist(points[p], points[b])))
            .and_then(|&q| label[q]);
    }
    label
}

/// Splits every nonempty pairwise overlap into density-connected components.
/// Clusters smaller than `min_size` and DBSCAN noise are dropped.
pub fn decompose_overlaps(
    cloud: &PointCloud,
    cover: &Cover,
    eps_cluster: f64,
    min_size: usize,
) -> Result<OverlapDecomposition> {
    if !(eps_cluster > 0.0) {
        return Err(AtlasError::Parameter(format!(
            "eps_cluster {eps_cluster} must be positive"
        )));
    }
    let mut out = OverlapDecomposition::default();
    for (pair, shared) in cover.pairwise_overlaps() {
        let pts: Vec<&[f64]> = shared.iter().map(|&p| cloud.point(p)).collect();
        let labels = dbscan(&pts, eps_cluster, min_size);
        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
        for (pos, l) in labels.iter().enumerate() {
            match l {
                Some(c) => clusters[*c].push(shared[pos]),
                None => out.noise_points += 1,
            }
        }
        let mut kept = 0;
        for members in clusters {
            if members.len() >= min_size {
                out.components.push(OverlapComponent {
                    pair,
                    component_id: kept,
                    point_indices: members,
                });
                kept += 1;
            } else {
                out.noise_points += members.len();
            }
        }
        if kept == 0 {
            warn!("overlap {pair:?} with {} points is all noise", shared.len());
            out.degenerate_pairs.push(pair);
        }
    }
    Ok(out)
}

pub fn nerve_stats(cover: &Cover) -> NerveStats {
    let n_charts = cover.n_charts();
    NerveStats {
        n_charts,
        n_pairwise: cover.pairwise_overlaps().len(),
        n_triple: cover.triple_overlaps().len(),
        single_chart: n_charts == 1,
    }
}
