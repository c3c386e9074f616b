//! Transition maps, their Jacobians, and the atlas diagnostics.
//!
//! For charts `i` and `j` the transition map is `T_ji = E_j ∘ D_i` and its
//! linearization at `x ∈ U_i ∩ U_j` is
//! `g_ji(x) = J_{E_j}(D_i(E_i(x))) · J_{D_i}(E_i(x))`, a `d × d` matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{Cover, OverlapComponent, TripleOverlap};
use crate::error::{AtlasError, Result};
use crate::geometry::PointCloud;
use crate::linalg::{det_sign, min_singular_value, operator_norm};
use crate::net::ChartAutoencoder;

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasModel {
    pub charts: Vec<ChartAutoencoder>,
    pub cover: Cover,
    pub latent_dim: usize,
}

impl AtlasModel {
    pub fn new(charts: Vec<ChartAutoencoder>, cover: Cover) -> Result<Self> {
        if charts.len() != cover.n_charts() {
            return Err(AtlasError::Dimension {
                expected: cover.n_charts(),
                got: charts.len(),
            });
        }
        let latent_dim = charts
            .first()
            .map(ChartAutoencoder::latent_dim)
            .ok_or_else(|| AtlasError::EmptyInput("atlas has no charts".into()))?;
        if let Some(c) = charts.iter().find(|c| c.latent_dim() != latent_dim) {
            return Err(AtlasError::Dimension {
                expected: latent_dim,
                got: c.latent_dim(),
            });
        }
        Ok(Self {
            charts,
            cover,
            latent_dim,
        })
    }

    pub fn n_charts(&self) -> usize {
        self.charts.len()
    }

    /// `T_ji(z) = E_j(D_i(z))`.
    pub fn transition(&self, from: usize, to: usize, z: &[f64]) -> Result<DVector<f64>> {
        let y = self.charts[from].decode(z)?;
        self.charts[to].encode(y.as_slice())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "latent_dim": self.latent_dim,
            "charts": self.charts.iter().map(ChartAutoencoder::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Linearized transition `g_ji(x)` from chart `i` to chart `j`, as the exact
/// product of the two network Jacobians.
pub fn transition_jacobian(atlas: &AtlasModel, i: usize, j: usize, x: &[f64]) -> Result<DMatrix<f64>> {
    let z = atlas.charts[i].encode(x)?;
    let y = atlas.charts[i].decode(z.as_slice())?;
    let jd = atlas.charts[i].decoder.jacobian(z.as_slice())?;
    let je = atlas.charts[j].encoder.jacobian(y.as_slice())?;
    Ok(je * jd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub point_index: usize,
    pub pair: (usize, usize),
    pub component_id: usize,
    /// `g_ji` for `pair = (i, j)`.
    pub g: DMatrix<f64>,
    pub det: f64,
    /// `sign(det)`, `0` if the determinant vanishes exactly.
    pub sign: i8,
}

/// Evaluates `g_ji` at every point of every overlap component.
pub fn transition_samples(
    atlas: &AtlasModel,
    cloud: &PointCloud,
    components: &[OverlapComponent],
) -> Result<Vec<TransitionSample>> {
    let per_component = components
        .par_iter()
        .map(|comp| {
            let (i, j) = comp.pair;
            comp.point_indices
                .iter()
                .map(|&p| {
                    let g = transition_jacobian(atlas, i, j, cloud.point(p))?;
                    let det = g.determinant();
                    Ok(TransitionSample {
                        point_index: p,
                        pair: comp.pair,
                        component_id: comp.component_id,
                        g,
                        det,
                        sign: det_sign(det),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_component.into_iter().flatten().collect())
}

/// CSV rows `point,i,j,component,det,sign`.
pub fn transition_samples_csv(samples: &[TransitionSample]) -> String {
    let mut out = String::from("point,i,j,component,det,sign\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.point_index, s.pair.0, s.pair.1, s.component_id, s.det, s.sign
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartError {
    pub sup: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    /// Worst chart sup error.
    pub sup: f64,
    /// Mean of the per-chart mean errors.
    pub mean: f64,
    pub per_chart: Vec<ChartError>,
}

/// Sup and mean of `‖D_i(E_i(x)) − x‖` over each chart's own points.
pub fn reconstruction_error(atlas: &AtlasModel, cloud: &PointCloud) -> Result<ReconstructionStats> {
    let per_chart = atlas
        .charts
        .par_iter()
        .zip(&atlas.cover.charts)
        .map(|(chart, members)| {
            let mut sup: f64 = 0.0;
            let mut total = 0.0;
            for &p in members {
                let x = cloud.point(p);
                let r = chart.reconstruct(x)?;
                let err = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sup = sup.max(err);
                total += err;
            }
            Ok(ChartError {
                sup,
                mean: total / members.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sup = per_chart.iter().map(|c| c.sup).fold(0.0, f64::max);
    let mean = per_chart.iter().map(|c| c.mean).sum::<f64>() / per_chart.len() as f64;
    Ok(ReconstructionStats { sup, mean, per_chart })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDifferentialError {
    pub per_chart: Vec<f64>,
    pub max: f64,
}

/// `η_lat,i = sup_x ‖J_{E_i}(D_i(z)) J_{D_i}(z) − I_d‖_op` with `z = E_i(x)`.
pub fn differential_error_latent(atlas: &AtlasModel, cloud: &PointCloud) -> Result<LatentDifferentialError> {
    let d = atlas.latent_dim;
    let per_chart = atlas
        .charts
        .par_iter()
        .zip(&atlas.cover.charts)
        .map(|(chart, members)| {
            let mut worst: f64 = 0.0;
            for &p in members {
                let z = chart.encode(cloud.point(p))?;
                let y = chart.decode(z.as_slice())?;
                let round_trip = chart.encoder.jacobian(y.as_slice())? * chart.decoder.jacobian(z.as_slice())?;
                worst = worst.max(operator_norm(&(round_trip - DMatrix::identity(d, d))));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = per_chart.iter().copied().fold(0.0, f64::max);
    Ok(LatentDifferentialError { per_chart, max })
}

/// `δ = min |det g|` over the samples.
pub fn nondegeneracy_gap(samples: &[TransitionSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(AtlasError::EmptyInput("no transition samples".into()));
    }
    Ok(samples.iter().map(|s| s.det.abs()).fold(f64::INFINITY, f64::min))
}

/// `T_ki(E_i(x)) − T_kj(T_ji(E_i(x)))`, evaluated through the transition maps.
pub fn cocycle_defect(atlas: &AtlasModel, (i, j, k): (usize, usize, usize), x: &[f64]) -> Result<DVector<f64>> {
    let z = atlas.charts[i].encode(x)?;
    let direct = atlas.transition(i, k, z.as_slice())?;
    let via_j = atlas.transition(i, j, z.as_slice())?;
    let composed = atlas.transition(j, k, via_j.as_slice())?;
    Ok(direct - composed)
}

/// `E_k(y) − E_k(D_j(E_j(y)))` with `y = D_i(E_i(x))`: the same defect written
/// through the reconstruction of the middle chart only.
pub fn middle_chart_defect(atlas: &AtlasModel, (i, j, k): (usize, usize, usize), x: &[f64]) -> Result<DVector<f64>> {
    let y = atlas.charts[i].reconstruct(x)?;
    let y_again = atlas.charts[j].reconstruct(y.as_slice())?;
    Ok(atlas.charts[k].encode(y.as_slice())? - atlas.charts[k].encode(y_again.as_slice())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleCocycleError {
    pub triple: (usize, usize, usize),
    pub mean: f64,
    pub max: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleErrorStats {
    pub mean: f64,
    pub max: f64,
    pub n_points: usize,
    pub per_triple: Vec<TripleCocycleError>,
}

/// Norm of the cocycle defect at every triple-overlap point. With no triples
/// the statistics are zero.
pub fn cocycle_error(atlas: &AtlasModel, cloud: &PointCloud, triples: &[TripleOverlap]) -> Result<CocycleErrorStats> {
    let per_triple = triples
        .par_iter()
        .map(|t| {
            let mut total = 0.0;
            let mut max: f64 = 0.0;
            for &p in &t.point_indices {
                let e = cocycle_defect(atlas, t.triple, cloud.point(p))?.norm();
                total += e;
                max = max.max(e);
            }
            Ok(TripleCocycleError {
                triple: t.triple,
                mean: total / t.point_indices.len() as f64,
                max,
                n_points: t.point_indices.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_points: usize = per_triple.iter().map(|t| t.n_points).sum();
    let mean = if n_points == 0 {
        0.0
    } else {
        per_triple.iter().map(|t| t.mean * t.n_points as f64).sum::<f64>() / n_points as f64
    };
    let max = per_triple.iter().map(|t| t.max).fold(0.0, f64::max);
    Ok(CocycleErrorStats {
        mean,
        max,
        n_points,
        per_triple,
    })
}

/// `min_i min_{x ∈ U_i} σ_min(J_{E_i}(x))`.
pub fn encoder_min_singular(atlas: &AtlasModel, cloud: &PointCloud) -> Result<f64> {
    let per_chart = atlas
        .charts
        .par_iter()
        .zip(&atlas.cover.charts)
        .map(|(chart, members)| {
            members.iter().try_fold(f64::INFINITY, |acc, &p| {
                Ok(acc.min(min_singular_value(&chart.encoder.jacobian(cloud.point(p))?)))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_chart.into_iter().fold(f64::INFINITY, f64::min))
}

/// The per-run metrics: reconstruction `ε`, latent differential error,
/// non-degeneracy gap, cocycle error and encoder immersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub eps_sup: f64,
    pub eps_mean: f64,
    pub eps_per_chart: Vec<f64>,
    pub eta_lat: f64,
    pub eta_lat_per_chart: Vec<f64>,
    pub delta: f64,
    pub cocycle_error_mean: f64,
    pub cocycle_error_max: f64,
    pub sigma_min_e: f64,
}

pub fn diagnostics(
    atlas: &AtlasModel,
    cloud: &PointCloud,
    samples: &[TransitionSample],
    triples: &[TripleOverlap],
) -> Result<DiagnosticsReport> {
    let recon = reconstruction_error(atlas, cloud)?;
    let eta = differential_error_latent(atlas, cloud)?;
    let cocycle = cocycle_error(atlas, cloud, triples)?;
    Ok(DiagnosticsReport {
        eps_sup: recon.sup,
        eps_mean: recon.mean,
        eps_per_chart: recon.per_chart.iter().map(|c| c.sup).collect(),
        eta_lat: eta.max,
        eta_lat_per_chart: eta.per_chart,
        delta: nondegeneracy_gap(samples).unwrap_or(0.0),
        cocycle_error_mean: cocycle.mean,
        cocycle_error_max: cocycle.max,
        sigma_min_e: encoder_min_singular(atlas, cloud)?,
    })
}

/// Latent codes `E_i(x)` of one chart's points, as CSV `point,z0,z1,…`.
pub fn latent_embedding_csv(atlas: &AtlasModel, cloud: &PointCloud, chart: usize) -> Result<String> {
    let d = atlas.latent_dim;
    let mut out = String::from("point");
    (0..d).for_each(|c| out.push_str(&format!(",z{c}")));
    out.push('\n');
    for &p in &atlas.cover.charts[chart] {
        let z = atlas.charts[chart].encode(cloud.point(p))?;
        let fields: Vec<String> = z.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{p},{}\n", fields.join(",")));
    }
    Ok(out)
}

/// Source codes `z = E_i(x)` and images `T_ji(z)` on an overlap component,
/// as CSV `point,component,src0,…,img0,…,sign`.
pub fn transition_map_csv(atlas: &AtlasModel, cloud: &PointCloud, components: &[&OverlapComponent]) -> Result<String> {
    let d = atlas.latent_dim;
    let mut out = String::from("point,component");
    (0..d).for_each(|c| out.push_str(&format!(",src{c}")));
    (0..d).for_each(|c| out.push_str(&format!(",img{c}")));
    out.push_str(",sign\n");
    for comp in components {
        let (i, j) = comp.pair;
        for &p in &comp.point_indices {
            let x = cloud.point(p);
            let z = atlas.charts[i].encode(x)?;
            let img = atlas.transition(i, j, z.as_slice())?;
            let sign = det_sign(transition_jacobian(atlas, i, j, x)?.determinant());
            let src: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            let dst: Vec<String> = img.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{p},{},{},{},{sign}\n",
                comp.component_id,
                src.join(","),
                dst.join(",")
            ));
        }
    }
    Ok(out)
}
