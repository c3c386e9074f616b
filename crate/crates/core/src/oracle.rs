//! Independent reference computations used to cross-check the fast paths.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::cohomology::{coboundary_test, SignCocycle};
use crate::error::Result;
use crate::net::{ChartAutoencoder, Mlp};
use crate::rng;

/// Exhaustive search over all `2ⁿ` chart sign assignments.
pub fn brute_force_coboundary(n_charts: usize, edges: &[(usize, usize, i8)]) -> Option<Vec<i8>> {
    (0u64..1 << n_charts).find_map(|mask| {
        let nu: Vec<i8> = (0..n_charts).map(|c| if mask >> c & 1 == 1 { -1 } else { 1 }).collect();
        edges.iter().all(|&(i, j, s)| s == nu[i] * nu[j]).then_some(nu)
    })
}

/// Random signed multigraph with `2..=max_nodes` nodes and `0..=max_edges`
/// edges between distinct charts.
pub fn random_multigraph(rng: &mut impl Rng, max_nodes: usize, max_edges: usize) -> (usize, Vec<(usize, usize, i8)>) {
    let n = rng.random_range(2..=max_nodes);
    let m = rng.random_range(0..=max_edges);
    let edges = (0..m)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            (i.min(j), i.max(j), sign)
        })
        .collect();
    (n, edges)
}

/// Central finite-difference Jacobian.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let m = f(x)?.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        xp[c] = x[c] + h;
        let plus = f(&xp)?;
        xp[c] = x[c] - h;
        let minus = f(&xp)?;
        xp[c] = x[c];
        for r in 0..m {
            jac[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `max |a − b| / max(|b|, floor)` over entries.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub coboundary_cases: usize,
    pub coboundary_agreements: usize,
    pub jacobian_cases: usize,
    pub jacobian_max_rel_error: f64,
    pub transition_cases: usize,
    pub transition_max_rel_error: f64,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.coboundary_agreements == self.coboundary_cases
            && self.jacobian_max_rel_error < 1e-4
            && self.transition_max_rel_error < 1e-4
    }
}

/// BFS coboundary test against exhaustive enumeration on `cases` random
/// multigraphs. Returns the number of agreements.
pub fn coboundary_self_test(cases: usize, seed: u64) -> Result<usize> {
    let mut rng = rng::seeded(seed);
    let mut agree = 0;
    for _ in 0..cases {
        let (n, edges) = random_multigraph(&mut rng, 8, 16);
        let fast = coboundary_test(&SignCocycle::from_signs(n, &edges))?;
        let slow = brute_force_coboundary(n, &edges);
        let witness_ok = match &fast.witness {
            Some(w) => w.sign_product(&SignCocycle::from_signs(n, &edges)) == Some(-1),
            None => true,
        };
        let assignment_ok = fast
            .assignment
            .as_ref()
            .is_none_or(|nu| edges.iter().all(|&(i, j, s)| s == nu[i] * nu[j]));
        if fast.is_coboundary == slow.is_some() && witness_ok && assignment_ok {
            agree += 1;
        }
    }
    Ok(agree)
}

/// Analytic MLP Jacobians against central differences with step `1e-5` on
/// `cases` random networks and points. Returns the worst relative error.
pub fn jacobian_self_test(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let n_in = rng.random_range(1..=5);
        let n_hidden = rng.random_range(1..=3);
        let mut dims = vec![n_in];
        dims.extend((0..n_hidden).map(|_| rng.random_range(2..=12)));
        dims.push(rng.random_range(1..=4));
        let net = Mlp::new(&dims, rng::derive_seed(seed, &[c as u64]))?;
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.5..1.5)).collect();
        let analytic = net.jacobian(&x)?;
        let numeric = fd_jacobian(|p| Ok(net.forward(p)?.as_slice().to_vec()), &x, 1e-5)?;
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-2));
    }
    Ok(worst)
}

/// Factored transition Jacobians `J_E J_D` against differences of the
/// composed map `z ↦ E_j(D_i(z))`.
pub fn transition_self_test(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let s = rng::derive_seed(seed, &[c as u64]);
        let ci = ChartAutoencoder::new(3, 2, &[8, 6], 0, s)?;
        let cj = ChartAutoencoder::new(3, 2, &[8, 6], 1, s.wrapping_add(1))?;
        let z: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = ci.decode(&z)?;
        let analytic = cj.encoder.jacobian(y.as_slice())? * ci.decoder.jacobian(&z)?;
        let numeric = fd_jacobian(
            |p| Ok(cj.encode(ci.decode(p)?.as_slice())?.as_slice().to_vec()),
            &z,
            1e-5,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-2));
    }
    Ok(worst)
}

pub fn run_all(seed: u64) -> Result<OracleSummary> {
    let coboundary_cases = 1000;
    let jacobian_cases = 100;
    Ok(OracleSummary {
        coboundary_cases,
        coboundary_agreements: coboundary_self_test(coboundary_cases, seed)?,
        jacobian_cases,
        jacobian_max_rel_error: jacobian_self_test(jacobian_cases, seed)?,
        transition_cases: jacobian_cases,
        transition_max_rel_error: transition_self_test(jacobian_cases, seed)?,
    })
}
