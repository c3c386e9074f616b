//! Losses, Adam and the per-chart training loop with its retry protocol.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{reconstruction_error, AtlasModel};
use crate::cover::Cover;
use crate::error::{AtlasError, Result};
use crate::geometry::PointCloud;
use crate::linalg::min_singular_triplet;
use crate::net::{ChartAutoencoder, ChartGrad};
use crate::rng::{self, AtlasRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_jac: f64,
    /// Hinge threshold on the smallest encoder singular value.
    pub eps_sv: f64,
    /// Maximum per-chart sup reconstruction error accepted as converged.
    pub eps_thresh: f64,
    pub max_retries: usize,
    pub retry_extra_epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Start every chart centred on the centroid of its points.
    pub center_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 2000,
            batch_size: 64,
            lambda_jac: 0.0,
            eps_sv: 0.1,
            eps_thresh: 0.15,
            max_retries: 3,
            retry_extra_epochs: 2000,
            seed: 42,
            hidden: vec![32, 16],
            latent_dim: 2,
            center_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(AtlasError::Parameter(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(AtlasError::Parameter("batch size must be at least 1".into()));
        }
        if !(self.lambda_jac >= 0.0) {
            return Err(AtlasError::Parameter(format!(
                "lambda_jac {} must be >= 0",
                self.lambda_jac
            )));
        }
        if !(self.eps_sv > 0.0) {
            return Err(AtlasError::Parameter(format!(
                "eps_sv {} must be positive",
                self.eps_sv
            )));
        }
        if self.latent_dim == 0 {
            return Err(AtlasError::Parameter("latent dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryAction {
    Extend,
    Restart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryEvent {
    pub round: usize,
    pub action: RetryAction,
    pub charts: Vec<usize>,
    pub worst_error_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training loss per epoch, per chart. Retries append to the curve.
    pub loss_curves: Vec<Vec<f64>>,
    pub retry_count: usize,
    pub retries: Vec<RetryEvent>,
    pub converged: bool,
    pub sup_errors: Vec<f64>,
    pub mean_errors: Vec<f64>,
}

impl TrainingLog {
    pub fn max_sup_error(&self) -> f64 {
        self.sup_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Rows `epoch,chart,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,chart,loss\n");
        for (chart, curve) in self.loss_curves.iter().enumerate() {
            for (epoch, loss) in curve.iter().enumerate() {
                out.push_str(&format!("{epoch},{chart},{loss}\n"));
            }
        }
        out
    }
}

/// Stacks points as the columns of a matrix.
pub fn batch_matrix(points: &[&[f64]]) -> DMatrix<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    DMatrix::from_fn(dim, points.len(), |r, c| points[c][r])
}

fn check_batch(chart: &ChartAutoencoder, batch: &DMatrix<f64>) -> Result<()> {
    if batch.ncols() == 0 {
        return Err(AtlasError::EmptyInput("batch has no points".into()));
    }
    if batch.nrows() != chart.ambient_dim() {
        return Err(AtlasError::Dimension {
            expected: chart.ambient_dim(),
            got: batch.nrows(),
        });
    }
    Ok(())
}

/// Mean squared reconstruction error `‖x − D(E(x))‖²` over the batch columns
/// and its gradient with respect to both networks.
pub fn recon_loss(chart: &ChartAutoencoder, batch: &DMatrix<f64>) -> Result<(f64, ChartGrad)> {
    check_batch(chart, batch)?;
    let scale = 1.0 / batch.ncols() as f64;
    let enc = chart.encoder.forward_batch(batch);
    let dec = chart.decoder.forward_batch(enc.output());
    let residual = dec.output() - batch;
    let loss = residual.norm_squared() * scale;
    let upstream = residual * (2.0 * scale);
    let (decoder, latent_grad) = chart.decoder.backward_batch(&dec, &upstream);
    let (encoder, _) = chart.encoder.backward_batch(&enc, &latent_grad);
    Ok((loss, ChartGrad { encoder, decoder }))
}

/// Mean hinge `max(0, eps_sv − σ_min(J_E(x)))` over the batch. Where the
/// hinge is active the gradient of `σ_min` is `u^T (∂J) v` for the singular
/// pair `(u, v)` of `σ_min`. The decoder gradient is zero.
pub fn jac_reg_loss(chart: &ChartAutoencoder, batch: &DMatrix<f64>, eps_sv: f64) -> Result<(f64, ChartGrad)> {
    check_batch(chart, batch)?;
    let scale = 1.0 / batch.ncols() as f64;
    let mut grad = ChartGrad::zeros_like(chart);
    let mut loss = 0.0;
    for (index, col) in batch.column_iter().enumerate() {
        let x = col.as_slice();
        let jac = chart.encoder.jacobian(x)?;
        let (sigma, u, v) = min_singular_triplet(&jac).ok_or_else(|| AtlasError::Numerical {
            index,
            message: "SVD of the encoder Jacobian failed".into(),
        })?;
        if sigma >= eps_sv {
            continue;
        }
        loss += (eps_sv - sigma) * scale;
        let (_, g) = chart.encoder.jacobian_bilinear_grad(x, u.as_slice(), v.as_slice())?;
        grad.encoder.add_scaled(&g, -scale);
    }
    Ok((loss, grad))
}

/// Per-parameter Adam moments for one list of parameter buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`).
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient buffer count");
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len(), "buffer {b} shape");
        let (m, v) = (&mut state.first[b], &mut state.second[b]);
        for k in 0..p.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Total objective `recon + λ_jac · jac_reg` on one batch.
pub fn total_loss(chart: &ChartAutoencoder, batch: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(f64, ChartGrad)> {
    let (mut loss, mut grad) = recon_loss(chart, batch)?;
    if cfg.lambda_jac > 0.0 {
        let (jl, jg) = jac_reg_loss(chart, batch, cfg.eps_sv)?;
        loss += cfg.lambda_jac * jl;
        grad.add_scaled(&jg, cfg.lambda_jac);
    }
    Ok((loss, grad))
}

/// Training state of one chart, kept across retry rounds.
/// Shifts the first encoder bias and the last decoder bias so that the
/// centroid enters the encoder at the origin and the decoder starts out
/// predicting the centroid. Weights are left untouched.
pub fn center_on(chart: &mut ChartAutoencoder, centroid: &DVector<f64>) {
    let shift = -(&chart.encoder.weights()[0] * centroid);
    let mut enc = chart.encoder.param_slices_mut();
    enc[1].iter_mut().zip(shift.iter()).for_each(|(b, s)| *b += s);
    let mut dec = chart.decoder.param_slices_mut();
    let last = dec.len() - 1;
    dec[last].iter_mut().zip(centroid.iter()).for_each(|(b, c)| *b += c);
}

struct ChartTrainer {
    chart: ChartAutoencoder,
    adam: AdamState,
    rng: AtlasRng,
    data: DMatrix<f64>,
    curve: Vec<f64>,
}

impl ChartTrainer {
    fn fresh(cloud: &PointCloud, members: &[usize], index: usize, cfg: &TrainConfig, attempt: u64) -> Result<Self> {
        let init_seed = rng::derive_seed(cfg.seed, &[index as u64, attempt]);
        let mut chart = ChartAutoencoder::new(cloud.ambient_dim, cfg.latent_dim, &cfg.hidden, index, init_seed)?;
        let pts: Vec<&[f64]> = members.iter().map(|&p| cloud.point(p)).collect();
        let data = batch_matrix(&pts);
        if cfg.center_init {
            center_on(&mut chart, &data.column_mean());
        }
        Ok(Self {
            chart,
            adam: AdamState::new(),
            rng: rng::stream(rng::derive_seed(cfg.seed, &[attempt]), index as u64),
            data,
            curve: Vec::new(),
        })
    }

    fn run(&mut self, epochs: usize, cfg: &TrainConfig) -> Result<()> {
        let n = self.data.ncols();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch = self.data.select_columns(chunk);
                let (loss, grad) = total_loss(&self.chart, &batch, cfg)?;
                if !loss.is_finite() {
                    return Err(AtlasError::Divergence {
                        chart: self.chart.chart_index,
                        epoch: self.curve.len(),
                    });
                }
                epoch_loss += loss * chunk.len() as f64;
                let grads = grad.slices();
                adam_step(&mut self.chart.param_slices_mut(), &grads, &mut self.adam, cfg.lr);
            }
            self.curve.push(epoch_loss / n as f64);
        }
        Ok(())
    }
}

fn train_all(trainers: &mut [ChartTrainer], which: &[usize], epochs: usize, cfg: &TrainConfig) -> Result<()> {
    trainers
        .par_iter_mut()
        .enumerate()
        .filter(|(i, _)| which.contains(i))
        .map(|(_, t)| t.run(epochs, cfg))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

/// Trains one autoencoder per chart on that chart's points only.
///
/// When the worst per-chart sup reconstruction error exceeds
/// `cfg.eps_thresh`, the failing charts are retried: the first retry extends
/// them by `retry_extra_epochs`, later retries restart them from a fresh
/// initialization for `cfg.epochs`.
pub fn train_atlas(cloud: &PointCloud, cover: &Cover, cfg: &TrainConfig) -> Result<(AtlasModel, TrainingLog)> {
    cfg.validate()?;
    let mut trainers = cover
        .charts
        .iter()
        .enumerate()
        .map(|(i, members)| ChartTrainer::fresh(cloud, members, i, cfg, 0))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..trainers.len()).collect();
    train_all(&mut trainers, &all, cfg.epochs, cfg)?;

    let assemble = |trainers: &[ChartTrainer]| -> Result<AtlasModel> {
        AtlasModel::new(trainers.iter().map(|t| t.chart.clone()).collect(), cover.clone())
    };
    let mut atlas = assemble(&trainers)?;
    let mut errors = reconstruction_error(&atlas, cloud)?;
    let mut retries = Vec::new();
    for round in 1..=cfg.max_retries {
        let failing: Vec<usize> = errors
            .per_chart
            .iter()
            .enumerate()
            .filter(|(_, e)| e.sup > cfg.eps_thresh)
            .map(|(i, _)| i)
            .collect();
        if failing.is_empty() {
            break;
        }
        let action = if round == 1 {
            RetryAction::Extend
        } else {
            RetryAction::Restart
        };
        info!(
            "retry {round}: {action:?} charts {failing:?} (worst sup error {:.4})",
            errors.sup
        );
        retries.push(RetryEvent {
            round,
            action,
            charts: failing.clone(),
            worst_error_before: errors.sup,
        });
        let epochs = match action {
            RetryAction::Extend => cfg.retry_extra_epochs,
            RetryAction::Restart => {
                for &i in &failing {
                    let curve = std::mem::take(&mut trainers[i].curve);
                    trainers[i] = ChartTrainer::fresh(cloud, &cover.charts[i], i, cfg, round as u64)?;
                    trainers[i].curve = curve;
                }
                cfg.epochs
            }
        };
        train_all(&mut trainers, &failing, epochs, cfg)?;
        atlas = assemble(&trainers)?;
        errors = reconstruction_error(&atlas, cloud)?;
    }
    let log = TrainingLog {
        loss_curves: trainers.iter().map(|t| t.curve.clone()).collect(),
        retry_count: retries.len(),
        retries,
        converged: errors.sup <= cfg.eps_thresh,
        sup_errors: errors.per_chart.iter().map(|e| e.sup).collect(),
        mean_errors: errors.per_chart.iter().map(|e| e.mean).collect(),
    };
    debug!(
        "training finished: sup error {:.4}, converged {}",
        errors.sup, log.converged
    );
    Ok((atlas, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{tetrahedral_cover, CoverMethod};
    use crate::geometry::sample_sphere;
    use crate::net::Mlp;
    use rand::Rng;

    fn random_batch(seed: u64, dim: usize, n: usize) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        DMatrix::from_fn(dim, n, |_, _| r.random_range(-1.0..1.0))
    }

    fn identity_chart(dim: usize) -> ChartAutoencoder {
        let id = || Mlp::from_parts(vec![DMatrix::identity(dim, dim)], vec![DVector::zeros(dim)]).unwrap();
        ChartAutoencoder::from_networks(id(), id(), 0).unwrap()
    }

    fn perturb(chart: &mut ChartAutoencoder, seed: u64) {
        let mut r = rng::seeded(seed);
        for s in chart.param_slices_mut() {
            s.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
        }
    }

    #[test]
    fn perfect_autoencoder_has_zero_loss() {
        let (loss, grad) = recon_loss(&identity_chart(3), &random_batch(1, 3, 10)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_decoder_on_unit_inputs_has_unit_loss() {
        let encoder = Mlp::new(&[3, 4, 2], 1).unwrap();
        let decoder = Mlp::zeros(&[2, 4, 3]).unwrap();
        let chart = ChartAutoencoder::from_networks(encoder, decoder, 0).unwrap();
        let cloud = sample_sphere(16, 2).unwrap();
        let pts: Vec<&[f64]> = cloud.points.iter().map(Vec::as_slice).collect();
        let (loss, _) = recon_loss(&chart, &batch_matrix(&pts)).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let chart = identity_chart(3);
        assert!(matches!(
            recon_loss(&chart, &DMatrix::zeros(3, 0)),
            Err(AtlasError::EmptyInput(_))
        ));
    }

    fn loss_fd_check(chart: &ChartAutoencoder, grad: &ChartGrad, f: impl Fn(&ChartAutoencoder) -> f64) {
        let h = 1e-6;
        let mut probe = chart.clone();
        let analytic = grad.slices();
        let n_slices = analytic.len();
        for s in 0..n_slices {
            let len = analytic[s].len();
            for k in (0..len).step_by(2) {
                let orig = probe.param_slices_mut()[s][k];
                probe.param_slices_mut()[s][k] = orig + h;
                let fp = f(&probe);
                probe.param_slices_mut()[s][k] = orig - h;
                let fm = f(&probe);
                probe.param_slices_mut()[s][k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let a = analytic[s][k];
                let rel = (fd - a).abs() / a.abs().max(1e-4);
                assert!(rel < 1e-4, "slice {s} entry {k}: fd {fd} analytic {a}");
            }
        }
    }

    #[test]
    fn recon_gradient_matches_finite_differences() {
        let chart = ChartAutoencoder::new(3, 2, &[6, 5], 0, 11).unwrap();
        let batch = random_batch(2, 3, 7);
        let (_, grad) = recon_loss(&chart, &batch).unwrap();
        loss_fd_check(&chart, &grad, |c| recon_loss(c, &batch).unwrap().0);
    }

    #[test]
    fn jac_reg_gradient_matches_finite_differences() {
        let mut chart = ChartAutoencoder::new(4, 2, &[6, 5], 0, 12).unwrap();
        perturb(&mut chart, 3);
        let batch = random_batch(4, 4, 6);
        // large threshold keeps every hinge active
        let (loss, grad) = jac_reg_loss(&chart, &batch, 10.0).unwrap();
        assert!(loss > 0.0);
        assert!(grad.decoder.max_abs() == 0.0);
        loss_fd_check(&chart, &grad, |c| jac_reg_loss(c, &batch, 10.0).unwrap().0);
    }

    #[test]
    fn inactive_hinge_is_zero() {
        // encoder = first two coordinates, σ_min = 1
        let proj = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let encoder = Mlp::from_parts(vec![proj.clone()], vec![DVector::zeros(2)]).unwrap();
        let decoder = Mlp::from_parts(vec![proj.transpose()], vec![DVector::zeros(3)]).unwrap();
        let chart = ChartAutoencoder::from_networks(encoder, decoder, 0).unwrap();
        let (loss, grad) = jac_reg_loss(&chart, &random_batch(5, 3, 8), 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.encoder.max_abs(), 0.0);
        let (loss, _) = jac_reg_loss(&chart, &random_batch(5, 3, 8), 0.5).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn hinge_value_for_thin_direction() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.05, 0.0]);
        let encoder = Mlp::from_parts(vec![w.clone()], vec![DVector::zeros(2)]).unwrap();
        let decoder = Mlp::from_parts(vec![w.transpose()], vec![DVector::zeros(3)]).unwrap();
        let chart = ChartAutoencoder::from_networks(encoder, decoder, 0).unwrap();
        let (loss, _) = jac_reg_loss(&chart, &random_batch(6, 3, 4), 0.1).unwrap();
        assert!((loss - 0.05).abs() < 1e-14);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        let mut state = AdamState::new();
        for _ in 0..50 {
            adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state, 1e-3);
        }
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for &g in &[0.5, -3.0, 1e-3] {
            let mut p = vec![0.0];
            let mut state = AdamState::new();
            adam_step(&mut [p.as_mut_slice()], &[[g].as_slice()], &mut state, 1e-3);
            // m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
            let expected = -1e-3 * g / (g.abs() + ADAM_EPS);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_three_step_trace() {
        // Reference trace for lr = 0.1 and gradients 1, -2, 0.5, computed
        // independently from the closed-form recursion.
        let grads = [1.0, -2.0, 0.5];
        let trace = [-0.09999999900000009, -0.06338964652792523, -0.049720580326178584];
        let mut p = vec![0.0];
        let mut state = AdamState::new();
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut [p.as_mut_slice()], &[[*g].as_slice()], &mut state, 0.1);
            assert!((p[0] - trace[t]).abs() < 1e-14);
        }
        assert_eq!(state.steps(), 3);
    }

    #[test]
    fn zero_jacobian_weight_gives_pure_reconstruction_gradient() {
        let chart = ChartAutoencoder::new(3, 2, &[5, 4], 0, 3).unwrap();
        let batch = random_batch(7, 3, 9);
        let cfg = TrainConfig {
            lambda_jac: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(
            total_loss(&chart, &batch, &cfg).unwrap(),
            recon_loss(&chart, &batch).unwrap()
        );
    }

    #[test]
    fn zero_epochs_returns_untrained_model() {
        let cloud = sample_sphere(200, 1).unwrap();
        let cover = tetrahedral_cover(&cloud, 0.3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            max_retries: 0,
            ..TrainConfig::default()
        };
        let (atlas, log) = train_atlas(&cloud, &cover, &cfg).unwrap();
        assert_eq!(atlas.charts.len(), 4);
        assert!(!log.converged);
        assert!(log.max_sup_error() > cfg.eps_thresh);
        assert!(log.loss_curves.iter().all(Vec::is_empty));
    }

    #[test]
    fn short_training_reduces_loss_and_is_deterministic() {
        let cloud = sample_sphere(300, 3).unwrap();
        let cover = tetrahedral_cover(&cloud, 0.3).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            max_retries: 0,
            ..TrainConfig::default()
        };
        let (a1, l1) = train_atlas(&cloud, &cover, &cfg).unwrap();
        let (a2, l2) = train_atlas(&cloud, &cover, &cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(a1.charts, a2.charts);
        for curve in &l1.loss_curves {
            assert_eq!(curve.len(), 40);
            assert!(curve[39] < curve[0]);
        }
    }

    #[test]
    fn retry_bookkeeping() {
        let cloud = sample_sphere(120, 4).unwrap();
        let cover = Cover::new(vec![(0..120).collect()], 120, None, CoverMethod::Custom).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            retry_extra_epochs: 2,
            max_retries: 2,
            eps_thresh: 1e-9,
            ..TrainConfig::default()
        };
        let (_, log) = train_atlas(&cloud, &cover, &cfg).unwrap();
        assert_eq!(log.retry_count, 2);
        assert_eq!(log.retries[0].action, RetryAction::Extend);
        assert_eq!(log.retries[1].action, RetryAction::Restart);
        assert!(!log.converged);
        assert_eq!(log.converged, log.max_sup_error() <= cfg.eps_thresh);
        assert_eq!(log.loss_curves[0].len(), 6);
    }

    #[test]
    fn centering_moves_only_the_outer_biases() {
        let mut chart = ChartAutoencoder::new(3, 2, &[5, 4], 0, 9).unwrap();
        let before = chart.clone();
        let c = DVector::from_vec(vec![4.0, -1.0, 2.0]);
        center_on(&mut chart, &c);
        // the centroid enters the first hidden layer at zero preactivation
        let pre = &chart.encoder.weights()[0] * &c + &chart.encoder.biases()[0];
        assert!(pre.amax() < 1e-12);
        assert_eq!(chart.encoder.weights(), before.encoder.weights());
        assert_eq!(chart.decoder.weights(), before.decoder.weights());
        let last = chart.decoder.biases().len() - 1;
        assert_eq!(chart.decoder.biases()[last], &before.decoder.biases()[last] + &c);
    }
}
