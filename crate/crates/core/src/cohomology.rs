//! The Z/2 sign cocycle and the coboundary test that decides orientability.
//!
//! Charts are nodes of the nerve and every overlap component is an edge
//! labelled `ω_ji ∈ {±1}`. The cocycle is a coboundary when there are chart
//! signs `ν_i` with `ω_ji = ν_j ν_i` on every edge, which is a signed
//! two-coloring of the nerve's 1-skeleton.

use std::collections::{BTreeMap, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bundle::{transition_jacobian, AtlasModel, DiagnosticsReport, TransitionSample};
use crate::cover::TripleOverlap;
use crate::error::{AtlasError, Result};
use crate::geometry::PointCloud;
use crate::linalg::det_sign;

pub const DEFAULT_CONSISTENCY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignEdge {
    pub pair: (usize, usize),
    pub component_id: usize,
    pub sign: i8,
    /// Fraction of samples agreeing with `sign`, in `[0.5, 1]`.
    pub agreement_fraction: f64,
    pub n_points: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCocycle {
    pub edges: Vec<SignEdge>,
    pub n_charts: usize,
}

impl SignCocycle {
    /// Builds a cocycle from `(i, j, sign)` triples, one component per edge
    /// and numbered in order of appearance per pair.
    pub fn from_signs(n_charts: usize, signs: &[(usize, usize, i8)]) -> Self {
        let mut next_id: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let edges = signs
            .iter()
            .map(|&(i, j, sign)| {
                let id = next_id.entry((i, j)).or_insert(0);
                let edge = SignEdge {
                    pair: (i, j),
                    component_id: *id,
                    sign,
                    agreement_fraction: 1.0,
                    n_points: 1,
                    degenerate: false,
                };
                *id += 1;
                edge
            })
            .collect();
        Self { edges, n_charts }
    }

    pub fn degenerate_edges(&self) -> Vec<(usize, usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.degenerate)
            .map(|e| (e.pair.0, e.pair.1, e.component_id))
            .collect()
    }

    /// Applies `ω_ji ↦ ν_j ω_ji ν_i`.
    pub fn relabeled(&self, nu: &[i8]) -> Self {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.sign *= nu[e.pair.0] * nu[e.pair.1];
        }
        out
    }

    /// True when `ω_ji = ν_j ν_i` on every edge.
    pub fn is_satisfied_by(&self, nu: &[i8]) -> bool {
        nu.len() == self.n_charts && self.edges.iter().all(|e| e.sign == nu[e.pair.0] * nu[e.pair.1])
    }

    /// CSV rows `i,j,component,sign,agreement,n_points,degenerate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,component,sign,agreement,n_points,degenerate\n");
        for e in &self.edges {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.pair.0, e.pair.1, e.component_id, e.sign, e.agreement_fraction, e.n_points, e.degenerate
            ));
        }
        out
    }
}

/// Majority sign per overlap component. Components whose agreement falls
/// below `consistency` are flagged degenerate. Samples with an exactly zero
/// determinant carry no sign and are skipped.
pub fn compute_sign_cocycle(samples: &[TransitionSample], n_charts: usize, consistency: f64) -> Result<SignCocycle> {
    if !(0.5..=1.0).contains(&consistency) {
        return Err(AtlasError::Parameter(format!(
            "consistency {consistency} outside [0.5, 1]"
        )));
    }
    let mut groups: BTreeMap<((usize, usize), usize), (usize, usize, usize)> = BTreeMap::new();
    for s in samples {
        if s.pair.0 >= n_charts || s.pair.1 >= n_charts {
            return Err(AtlasError::Parameter(format!(
                "pair {:?} outside {n_charts} charts",
                s.pair
            )));
        }
        let counts = groups.entry((s.pair, s.component_id)).or_default();
        match s.sign {
            1 => counts.0 += 1,
            -1 => counts.1 += 1,
            _ => counts.2 += 1,
        }
    }
    let edges = groups
        .into_iter()
        .map(|((pair, component_id), (pos, neg, _zero))| {
            let usable = pos + neg;
            if usable == 0 {
                return Err(AtlasError::EmptyInput(format!(
                    "overlap {pair:?} component {component_id} has no usable samples"
                )));
            }
            let (sign, agree) = if pos >= neg { (1, pos) } else { (-1, neg) };
            let agreement_fraction = agree as f64 / usable as f64;
            Ok(SignEdge {
                pair,
                component_id,
                sign,
                agreement_fraction,
                n_points: usable,
                degenerate: agreement_fraction < consistency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignCocycle { edges, n_charts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleCheck {
    pub fraction: f64,
    pub n_points: usize,
    pub per_triple: Vec<((usize, usize, usize), f64)>,
}

/// Fraction of triple-overlap points with
/// `sign det g_ki(x) = sign det g_kj(x) · sign det g_ji(x)`.
pub fn verify_cocycle_condition(
    atlas: &AtlasModel,
    cloud: &PointCloud,
    triples: &[TripleOverlap],
) -> Result<CocycleCheck> {
    if triples.is_empty() {
        warn!("no triple overlaps; the cocycle condition holds vacuously");
        return Ok(CocycleCheck {
            fraction: 1.0,
            n_points: 0,
            per_triple: Vec::new(),
        });
    }
    let mut total = 0;
    let mut agree_total = 0;
    let mut per_triple = Vec::with_capacity(triples.len());
    for t in triples {
        let (i, j, k) = t.triple;
        let mut agree = 0;
        for &p in &t.point_indices {
            let x = cloud.point(p);
            let s = |a, b| -> Result<i8> { Ok(det_sign(transition_jacobian(atlas, a, b, x)?.determinant())) };
            let direct = s(i, k)?;
            if direct != 0 && direct == s(j, k)? * s(i, j)? {
                agree += 1;
            }
        }
        total += t.point_indices.len();
        agree_total += agree;
        per_triple.push((t.triple, agree as f64 / t.point_indices.len() as f64));
    }
    Ok(CocycleCheck {
        fraction: agree_total as f64 / total as f64,
        n_points: total,
        per_triple,
    })
}

/// Edge of a witness cycle: the chart pair and the overlap component used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessEdge {
    pub pair: (usize, usize),
    pub component_id: usize,
}

/// A closed walk through the nerve. `charts[k]` and `charts[k+1]` (cyclically)
/// are joined by `edges[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessCycle {
    pub charts: Vec<usize>,
    pub edges: Vec<WitnessEdge>,
}

impl WitnessCycle {
    /// Product of the cocycle's signs around the cycle, or `None` if an edge
    /// is not in the cocycle.
    pub fn sign_product(&self, cocycle: &SignCocycle) -> Option<i8> {
        self.edges.iter().try_fold(1i8, |acc, w| {
            cocycle
                .edges
                .iter()
                .find(|e| e.pair == w.pair && e.component_id == w.component_id)
                .map(|e| acc * e.sign)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerveComponentResult {
    pub charts: Vec<usize>,
    pub is_coboundary: bool,
    pub witness: Option<WitnessCycle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoboundaryResult {
    pub is_coboundary: bool,
    pub assignment: Option<Vec<i8>>,
    pub witness: Option<WitnessCycle>,
    pub components: Vec<NerveComponentResult>,
}

/// Breadth-first sign propagation with `ν = +1` at the smallest chart of
/// each nerve component. The first conflicting edge closes a cycle through
/// the BFS tree whose sign product is `−1`.
pub fn coboundary_test(cocycle: &SignCocycle) -> Result<CoboundaryResult> {
    let degenerate = cocycle.degenerate_edges();
    if !degenerate.is_empty() {
        return Err(AtlasError::DegenerateEdges(degenerate));
    }
    let n = cocycle.n_charts;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (idx, e) in cocycle.edges.iter().enumerate() {
        let (i, j) = e.pair;
        if i >= n || j >= n {
            return Err(AtlasError::Parameter(format!("edge {:?} outside {n} charts", e.pair)));
        }
        adj[i].push((j, idx));
        if i != j {
            adj[j].push((i, idx));
        }
    }

    let mut nu = vec![0i8; n];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut components = Vec::new();
    for root in 0..n {
        if nu[root] != 0 {
            continue;
        }
        nu[root] = 1;
        let mut charts = vec![root];
        let mut witness = None;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, idx) in &adj[u] {
                let sign = cocycle.edges[idx].sign;
                if nu[v] == 0 {
                    nu[v] = sign * nu[u];
                    parent[v] = Some((u, idx));
                    depth[v] = depth[u] + 1;
                    charts.push(v);
                    queue.push_back(v);
                } else if nu[v] != sign * nu[u] && witness.is_none() {
                    witness = Some(close_cycle(cocycle, &parent, &depth, u, v, idx));
                }
            }
        }
        charts.sort_unstable();
        components.push(NerveComponentResult {
            charts,
            is_coboundary: witness.is_none(),
            witness,
        });
    }

    let is_coboundary = components.iter().all(|c| c.is_coboundary);
    let witness = components.iter().find_map(|c| c.witness.clone());
    Ok(CoboundaryResult {
        is_coboundary,
        assignment: is_coboundary.then_some(nu),
        witness,
        components,
    })
}

/// Tree path `u → lca → v` followed by the conflicting edge `v → u`.
fn close_cycle(
    cocycle: &SignCocycle,
    parent: &[Option<(usize, usize)>],
    depth: &[usize],
    u: usize,
    v: usize,
    closing: usize,
) -> WitnessCycle {
    let witness_edge = |idx: usize| WitnessEdge {
        pair: cocycle.edges[idx].pair,
        component_id: cocycle.edges[idx].component_id,
    };
    let (mut a, mut b) = (u, v);
    let mut up_a = Vec::new(); // (node, edge to its parent)
    let mut up_b = Vec::new();
    while depth[a] > depth[b] {
        let (p, e) = parent[a].expect("non-root has a parent");
        up_a.push((a, e));
        a = p;
    }
    while depth[b] > depth[a] {
        let (p, e) = parent[b].expect("non-root has a parent");
        up_b.push((b, e));
        b = p;
    }
    while a != b {
        let (pa, ea) = parent[a].expect("non-root has a parent");
        let (pb, eb) = parent[b].expect("non-root has a parent");
        up_a.push((a, ea));
        up_b.push((b, eb));
        a = pa;
        b = pb;
    }
    let lca = a;

    let mut charts = Vec::new();
    let mut edges = Vec::new();
    for &(node, e) in &up_a {
        charts.push(node);
        edges.push(witness_edge(e));
    }
    charts.push(lca);
    for &(node, e) in up_b.iter().rev() {
        edges.push(witness_edge(e));
        charts.push(node);
    }
    edges.push(witness_edge(closing));
    // for a self-loop or a parallel edge the walk repeats its start; drop it
    if charts.len() > 1 && charts.first() == charts.last() {
        charts.pop();
    }
    WitnessCycle { charts, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Orientable,
    NonOrientable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Orientable => "orientable",
            Verdict::NonOrientable => "non-orientable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gates {
    /// `δ` must exceed this strictly.
    pub delta_min: f64,
    pub eps_sup_max: f64,
    /// Outlier gate on every per-chart `η_lat`.
    pub eta_lat_max: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Self {
            delta_min: 0.0,
            eps_sup_max: 0.15,
            eta_lat_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientabilityReport {
    pub verdict: Verdict,
    pub gate_failures: Vec<String>,
    pub cocycle_check: f64,
    pub coboundary: Option<CoboundaryResult>,
}

pub fn orientability_report(
    diag: &DiagnosticsReport,
    cocycle: &SignCocycle,
    cocycle_check: f64,
    gates: &Gates,
) -> OrientabilityReport {
    let mut gate_failures = Vec::new();
    if cocycle.n_charts < 2 {
        gate_failures.push("single chart: a one-chart atlas cannot carry a closed manifold".to_string());
    }
    if diag.delta.is_nan() || diag.delta <= gates.delta_min {
        gate_failures.push(format!("delta {} <= {}", diag.delta, gates.delta_min));
    }
    if diag.eps_sup.is_nan() || diag.eps_sup > gates.eps_sup_max {
        gate_failures.push(format!("eps_sup {} > {}", diag.eps_sup, gates.eps_sup_max));
    }
    for (c, &eta) in diag.eta_lat_per_chart.iter().enumerate() {
        if eta.is_nan() || eta > gates.eta_lat_max {
            gate_failures.push(format!("chart {c} eta_lat {eta} > {}", gates.eta_lat_max));
        }
    }
    let degenerate = cocycle.degenerate_edges();
    if !degenerate.is_empty() {
        gate_failures.push(format!("degenerate edges {degenerate:?}"));
    }

    let coboundary = if degenerate.is_empty() {
        coboundary_test(cocycle).ok()
    } else {
        None
    };
    let verdict = match (&coboundary, gate_failures.is_empty()) {
        (Some(c), true) if c.is_coboundary => Verdict::Orientable,
        (Some(_), true) => Verdict::NonOrientable,
        _ => Verdict::Inconclusive,
    };
    OrientabilityReport {
        verdict,
        gate_failures,
        cocycle_check,
        coboundary,
    }
}
