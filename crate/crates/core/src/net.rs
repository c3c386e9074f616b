//! Small tanh multilayer perceptrons with exact Jacobians and backprop.
//!
//! Hidden layers use `tanh`, the output layer is affine. Batches are stored
//! column-wise: a `dim × batch` matrix holds one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Gradients with the same layout as an [`Mlp`], plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input: DVector<f64>,
}

/// Activations kept from a batched forward pass. `layers[0]` is the input,
/// the last entry the network output.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub layers: Vec<DMatrix<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.layers.last().expect("trace holds at least the input")
    }
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(AtlasError::Parameter("an MLP needs at least two layers".into()));
    }
    if layer_dims.contains(&0) {
        return Err(AtlasError::Parameter(format!("zero-width layer in {layer_dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = rng::seeded(seed);
        let weights = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound))
            })
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: layer_dims[1..].iter().map(|&n| DVector::zeros(n)).collect(),
        })
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| AtlasError::Parameter("an MLP needs at least one layer".into()))?;
        let mut layer_dims = vec![first.ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            let prev = *layer_dims.last().unwrap();
            if w.ncols() != prev {
                return Err(AtlasError::Dimension {
                    expected: prev,
                    got: w.ncols(),
                });
            }
            if b.len() != w.nrows() {
                return Err(AtlasError::Dimension {
                    expected: w.nrows(),
                    got: b.len(),
                });
            }
            layer_dims.push(w.nrows());
        }
        if biases.len() != weights.len() {
            return Err(AtlasError::Dimension {
                expected: weights.len(),
                got: biases.len(),
            });
        }
        check_dims(&layer_dims)?;
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(AtlasError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations `h_0 = x, h_1, …, h_{L-1}` (output excluded).
    fn hidden(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let mut hs = Vec::with_capacity(self.n_layers());
        hs.push(DVector::from_column_slice(x));
        for l in 0..self.n_layers() - 1 {
            let mut a = &self.weights[l] * &hs[l];
            a += &self.biases[l];
            a.apply(|v| *v = v.tanh());
            hs.push(a);
        }
        hs
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let last = self.n_layers() - 1;
        let hs = self.hidden(x);
        Ok(&self.weights[last] * &hs[last] + &self.biases[last])
    }

    /// Exact Jacobian `W_L diag(tanh'(a_{L-1})) W_{L-1} … diag(tanh'(a_1)) W_1`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let hs = self.hidden(x);
        let mut jac = self.weights[0].clone();
        for l in 1..self.n_layers() {
            for (r, mut row) in jac.row_iter_mut().enumerate() {
                let h = hs[l][r];
                row *= 1.0 - h * h;
            }
            jac = &self.weights[l] * jac;
        }
        Ok(jac)
    }

    /// Gradient of `<upstream, forward(x)>` with respect to every parameter
    /// and to `x`.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGrad> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(AtlasError::Dimension {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let xs = DMatrix::from_column_slice(x.len(), 1, x);
        let trace = self.forward_batch(&xs);
        let up = DMatrix::from_column_slice(upstream.len(), 1, upstream);
        let (mut g, input) = self.backward_batch(&trace, &up);
        g.input = input.column(0).into_owned();
        Ok(g)
    }

    /// Forward pass over a `input_dim × batch` matrix.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> BatchTrace {
        debug_assert_eq!(x.nrows(), self.input_dim());
        let mut layers = Vec::with_capacity(self.n_layers() + 1);
        layers.push(x.clone());
        for l in 0..self.n_layers() {
            let mut a = &self.weights[l] * &layers[l];
            for mut col in a.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < self.n_layers() {
                a.apply(|v| *v = v.tanh());
            }
            layers.push(a);
        }
        BatchTrace { layers }
    }

    /// Backpropagates `upstream` (`output_dim × batch`, the gradient of a
    /// scalar with respect to each output column) through a recorded pass.
    /// Parameter gradients are summed over the batch; the second value holds
    /// the per-sample input gradients. `MlpGrad::input` is left empty.
    pub fn backward_batch(&self, trace: &BatchTrace, upstream: &DMatrix<f64>) -> (MlpGrad, DMatrix<f64>) {
        let n = self.n_layers();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.clone();
        for l in (0..n).rev() {
            let h_prev = &trace.layers[l];
            weights.push(&delta * h_prev.transpose());
            biases.push(delta.column_sum());
            let mut back = self.weights[l].tr_mul(&delta);
            if l > 0 {
                back.zip_apply(h_prev, |g, h| *g *= 1.0 - h * h);
            }
            delta = back;
        }
        weights.reverse();
        biases.reverse();
        (
            MlpGrad {
                weights,
                biases,
                input: DVector::zeros(0),
            },
            delta,
        )
    }

    /// Value and parameter gradient of `u^T J(x) v`, where `J` is the input
    /// Jacobian. Uses a tangent pass followed by reverse-mode through both
    /// the primal and tangent recursions. `MlpGrad::input` is `d/dx`.
    pub fn jacobian_bilinear_grad(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<(f64, MlpGrad)> {
        self.check_input(x)?;
        self.check_input(v)?;
        if u.len() != self.output_dim() {
            return Err(AtlasError::Dimension {
                expected: self.output_dim(),
                got: u.len(),
            });
        }
        let n = self.n_layers();
        let hs = self.hidden(x);
        let mut ts = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n - 1);
        ts.push(DVector::from_column_slice(v));
        for l in 0..n - 1 {
            let alpha = &self.weights[l] * &ts[l];
            let t = alpha.zip_map(&hs[l + 1], |a, h| a * (1.0 - h * h));
            alphas.push(alpha);
            ts.push(t);
        }
        let u = DVector::from_column_slice(u);
        let value = u.dot(&(&self.weights[n - 1] * &ts[n - 1]));

        let mut weights = vec![DMatrix::zeros(0, 0); n];
        let mut biases = vec![DVector::zeros(0); n];
        weights[n - 1] = &u * ts[n - 1].transpose();
        biases[n - 1] = DVector::zeros(self.output_dim());
        let mut t_bar = self.weights[n - 1].tr_mul(&u);
        let mut h_bar = DVector::zeros(self.layer_dims[n - 1]);
        for l in (0..n - 1).rev() {
            let h = &hs[l + 1];
            let slope = h.map(|h| 1.0 - h * h);
            let alpha_bar = t_bar.component_mul(&slope);
            let slope_bar = t_bar.component_mul(&alphas[l]);
            h_bar += slope_bar.zip_map(h, |s, h| -2.0 * h * s);
            let a_bar = h_bar.component_mul(&slope);
            weights[l] = &alpha_bar * ts[l].transpose() + &a_bar * hs[l].transpose();
            t_bar = self.weights[l].tr_mul(&alpha_bar);
            h_bar = self.weights[l].tr_mul(&a_bar);
            biases[l] = a_bar;
        }
        Ok((
            value,
            MlpGrad {
                weights,
                biases,
                input: h_bar,
            },
        ))
    }

    /// Parameter buffers in the order `W_1, b_1, W_2, b_2, …`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let record = MlpRecord {
            layer_dims: self.layer_dims.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        };
        serde_json::to_value(record).expect("plain numeric record")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let record: MlpRecord = serde_json::from_value(value.clone())?;
        let weights = record
            .weights
            .iter()
            .map(|rows| {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                if flat.len() != nrows * ncols {
                    return Err(AtlasError::Parameter("ragged weight matrix".into()));
                }
                Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = record.biases.iter().map(|b| DVector::from_column_slice(b)).collect();
        let mlp = Mlp::from_parts(weights, biases)?;
        if mlp.layer_dims != record.layer_dims {
            return Err(AtlasError::Parameter(format!(
                "layer_dims {:?} disagree with weight shapes {:?}",
                record.layer_dims, mlp.layer_dims
            )));
        }
        Ok(mlp)
    }
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            input: DVector::zeros(mlp.input_dim()),
        }
    }

    /// `self += scale * other` over the parameter entries.
    pub fn add_scaled(&mut self, other: &MlpGrad, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_apply(b, |x, y| *x += scale * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.zip_apply(b, |x, y| *x += scale * y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    /// Buffers in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Encoder/decoder pair for one chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartAutoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub chart_index: usize,
}

/// Gradients of a scalar loss with respect to both networks of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartGrad {
    pub encoder: MlpGrad,
    pub decoder: MlpGrad,
}

impl ChartGrad {
    pub fn zeros_like(chart: &ChartAutoencoder) -> Self {
        Self {
            encoder: MlpGrad::zeros_like(&chart.encoder),
            decoder: MlpGrad::zeros_like(&chart.decoder),
        }
    }

    pub fn add_scaled(&mut self, other: &ChartGrad, scale: f64) {
        self.encoder.add_scaled(&other.encoder, scale);
        self.decoder.add_scaled(&other.decoder, scale);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        out.extend(self.decoder.slices());
        out
    }
}

impl ChartAutoencoder {
    /// Encoder `N → hidden… → d`, decoder `d → reversed hidden… → N`.
    pub fn new(ambient_dim: usize, latent_dim: usize, hidden: &[usize], chart_index: usize, seed: u64) -> Result<Self> {
        let mut enc_dims = vec![ambient_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(latent_dim);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = Mlp::new(&enc_dims, seed)?;
        let decoder = Mlp::new(&dec_dims, seed ^ 0x9E37_79B9_7F4A_7C15)?;
        Self::from_networks(encoder, decoder, chart_index)
    }

    pub fn from_networks(encoder: Mlp, decoder: Mlp, chart_index: usize) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(AtlasError::Dimension {
                expected: encoder.output_dim(),
                got: decoder.input_dim(),
            });
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(AtlasError::Dimension {
                expected: encoder.input_dim(),
                got: decoder.output_dim(),
            });
        }
        Ok(Self {
            encoder,
            decoder,
            chart_index,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<DVector<f64>> {
        let z = self.encode(x)?;
        self.decode(z.as_slice())
    }

    /// Encoder buffers followed by decoder buffers.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        out.extend(self.decoder.param_slices_mut());
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "chart_index": self.chart_index,
            "encoder": self.encoder.to_json(),
            "decoder": self.decoder.to_json(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let chart_index = value["chart_index"]
            .as_u64()
            .ok_or_else(|| AtlasError::Parameter("missing chart_index".into()))? as usize;
        Self::from_networks(
            Mlp::from_json(&value["encoder"])?,
            Mlp::from_json(&value["decoder"])?,
            chart_index,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn randomize_biases(mlp: &mut Mlp, rng: &mut impl Rng) {
        for b in mlp.biases.iter_mut() {
            b.apply(|v| *v = rng.random_range(-0.5..0.5));
        }
    }

    #[test]
    fn init_shapes_and_bounds() {
        let mlp = Mlp::new(&[3, 32, 16, 2], 1).unwrap();
        let shapes: Vec<(usize, usize)> = mlp.weights().iter().map(|w| w.shape()).collect();
        assert_eq!(shapes, vec![(32, 3), (16, 32), (2, 16)]);
        assert!(mlp.biases().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        assert_eq!(mlp, Mlp::new(&[3, 32, 16, 2], 1).unwrap());
        assert_ne!(mlp, Mlp::new(&[3, 32, 16, 2], 2).unwrap());
        for seed in 0..20 {
            let small = Mlp::new(&[2, 2], seed).unwrap();
            assert!(small.weights()[0].iter().all(|w| w.abs() <= (6.0f64 / 4.0).sqrt()));
        }
    }

    #[test]
    fn invalid_layer_dims() {
        assert!(matches!(Mlp::new(&[3], 0), Err(AtlasError::Parameter(_))));
        assert!(matches!(Mlp::new(&[3, 0, 2], 0), Err(AtlasError::Parameter(_))));
    }

    #[test]
    fn zero_network_outputs_last_bias() {
        let mut mlp = Mlp::zeros(&[3, 4, 2]).unwrap();
        mlp.biases[1] = DVector::from_vec(vec![0.5, -1.5]);
        let y = mlp.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn single_layer_is_affine() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let b = DVector::from_vec(vec![0.1, -0.2]);
        let mlp = Mlp::from_parts(vec![w.clone()], vec![b.clone()]).unwrap();
        let x = [0.3, -0.7, 2.0];
        let y = mlp.forward(&x).unwrap();
        let expected = &w * DVector::from_column_slice(&x) + &b;
        assert_eq!(y, expected);
        assert_eq!(mlp.jacobian(&x).unwrap(), w);
        let g = mlp.grad(&x, &[2.0, -1.0]).unwrap();
        let expected_dw = DVector::from_vec(vec![2.0, -1.0]) * DVector::from_column_slice(&x).transpose();
        assert_eq!(g.weights[0], expected_dw);
        assert_eq!(g.biases[0].as_slice(), &[2.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mlp = Mlp::new(&[3, 4, 2], 0).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0]),
            Err(AtlasError::Dimension { expected: 3, got: 1 })
        ));
        assert!(mlp.jacobian(&[1.0, 2.0]).is_err());
        assert!(mlp.grad(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    /// Straight-line re-implementation with explicit loops.
    fn reference_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = mlp.weights().len();
        for (l, (w, b)) in mlp.weights().iter().zip(mlp.biases()).enumerate() {
            let mut next = vec![0.0; w.nrows()];
            for r in 0..w.nrows() {
                let mut acc = b[r];
                for c in 0..w.ncols() {
                    acc += w[(r, c)] * h[c];
                }
                next[r] = if l + 1 < n { acc.tanh() } else { acc };
            }
            h = next;
        }
        h
    }

    #[test]
    fn forward_matches_reference_loops() {
        let mut rng = rng::seeded(3);
        for seed in 0..10 {
            let mut mlp = Mlp::new(&[3, 32, 16, 2], seed).unwrap();
            randomize_biases(&mut mlp, &mut rng);
            let x = random_vec(&mut rng, 3);
            let y = mlp.forward(&x).unwrap();
            for (a, b) in y.iter().zip(reference_forward(&mlp, &x)) {
                assert!((a - b).abs() < 1e-14);
            }
            let batch = DMatrix::from_column_slice(3, 1, &x);
            let trace = mlp.forward_batch(&batch);
            assert!((trace.output().column(0) - &y).amax() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = rng::seeded(4);
        let h = 1e-5;
        for seed in 0..20 {
            let mut mlp = Mlp::new(&[3, 32, 16, 2], seed).unwrap();
            randomize_biases(&mut mlp, &mut rng);
            let x = random_vec(&mut rng, 3);
            let jac = mlp.jacobian(&x).unwrap();
            for c in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (mlp.forward(&xp).unwrap() - mlp.forward(&xm).unwrap()) / (2.0 * h);
                for r in 0..2 {
                    let rel = (fd[r] - jac[(r, c)]).abs() / jac[(r, c)].abs().max(1e-3);
                    assert!(rel < 1e-4, "rel error {rel}");
                }
            }
        }
    }

    #[test]
    fn jacobian_rows_equal_input_gradients() {
        let mut rng = rng::seeded(5);
        let mut mlp = Mlp::new(&[4, 8, 6, 3], 9).unwrap();
        randomize_biases(&mut mlp, &mut rng);
        let x = random_vec(&mut rng, 4);
        let jac = mlp.jacobian(&x).unwrap();
        for r in 0..3 {
            let mut e = vec![0.0; 3];
            e[r] = 1.0;
            let g = mlp.grad(&x, &e).unwrap();
            for c in 0..4 {
                assert!((g.input[c] - jac[(r, c)]).abs() < 1e-12);
            }
        }
    }

    /// Fuses `outer ∘ inner` into one network: the affine output layer of
    /// `inner` and the first affine map of `outer` merge into a single layer.
    fn compose(outer: &Mlp, inner: &Mlp) -> Mlp {
        let li = inner.weights().len() - 1;
        let merged_w = &outer.weights()[0] * &inner.weights()[li];
        let merged_b = &outer.weights()[0] * &inner.biases()[li] + &outer.biases()[0];
        let mut weights = inner.weights()[..li].to_vec();
        let mut biases = inner.biases()[..li].to_vec();
        weights.push(merged_w);
        biases.push(merged_b);
        weights.extend_from_slice(&outer.weights()[1..]);
        biases.extend_from_slice(&outer.biases()[1..]);
        Mlp::from_parts(weights, biases).unwrap()
    }

    #[test]
    fn chain_rule_composition() {
        let mut rng = rng::seeded(6);
        for seed in 0..10 {
            let inner = Mlp::new(&[3, 16, 2], seed).unwrap();
            let outer = Mlp::new(&[2, 16, 3], seed + 100).unwrap();
            let fused = compose(&outer, &inner);
            let x = random_vec(&mut rng, 3);
            let mid = inner.forward(&x).unwrap();
            let product = outer.jacobian(mid.as_slice()).unwrap() * inner.jacobian(&x).unwrap();
            assert!((fused.jacobian(&x).unwrap() - product).amax() < 1e-12);
            let direct = outer.forward(mid.as_slice()).unwrap();
            assert!((fused.forward(&x).unwrap() - direct).amax() < 1e-12);
        }
    }

    fn param_fd_check(mlp: &Mlp, analytic: &MlpGrad, f: impl Fn(&Mlp) -> f64) {
        let h = 1e-6;
        let mut probe = mlp.clone();
        let n_slices = probe.param_slices_mut().len();
        let grads = analytic.slices();
        for s in 0..n_slices {
            let len = probe.param_slices_mut()[s].len();
            for k in (0..len).step_by(3) {
                let orig = probe.param_slices_mut()[s][k];
                probe.param_slices_mut()[s][k] = orig + h;
                let fp = f(&probe);
                probe.param_slices_mut()[s][k] = orig - h;
                let fm = f(&probe);
                probe.param_slices_mut()[s][k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let a = grads[s][k];
                let rel = (fd - a).abs() / a.abs().max(1e-4);
                assert!(rel < 1e-4, "slice {s} entry {k}: fd {fd} analytic {a}");
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = rng::seeded(7);
        for seed in 0..5 {
            let mut mlp = Mlp::new(&[3, 8, 5, 2], seed).unwrap();
            randomize_biases(&mut mlp, &mut rng);
            let x = random_vec(&mut rng, 3);
            let up = random_vec(&mut rng, 2);
            let g = mlp.grad(&x, &up).unwrap();
            param_fd_check(&mlp, &g, |m| {
                m.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            });
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = Mlp::new(&[3, 8, 2], 1).unwrap();
        let g = mlp.grad(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bilinear_jacobian_gradient_matches_finite_differences() {
        let mut rng = rng::seeded(8);
        for seed in 0..5 {
            let mut mlp = Mlp::new(&[4, 7, 5, 2], seed).unwrap();
            randomize_biases(&mut mlp, &mut rng);
            let x = random_vec(&mut rng, 4);
            let u = random_vec(&mut rng, 2);
            let v = random_vec(&mut rng, 4);
            let (value, g) = mlp.jacobian_bilinear_grad(&x, &u, &v).unwrap();
            let bilinear = |m: &Mlp, x: &[f64]| {
                let j = m.jacobian(x).unwrap();
                (DVector::from_column_slice(&u).transpose() * j * DVector::from_column_slice(&v))[0]
            };
            assert!((value - bilinear(&mlp, &x)).abs() < 1e-12);
            param_fd_check(&mlp, &g, |m| bilinear(m, &x));
            let h = 1e-6;
            for c in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (bilinear(&mlp, &xp) - bilinear(&mlp, &xm)) / (2.0 * h);
                assert!((fd - g.input[c]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batched_backward_sums_single_sample_gradients() {
        let mut rng = rng::seeded(9);
        let mlp = Mlp::new(&[3, 6, 2], 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 3)).collect();
        let ups: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 2)).collect();
        let xb = DMatrix::from_fn(3, 5, |r, c| xs[c][r]);
        let ub = DMatrix::from_fn(2, 5, |r, c| ups[c][r]);
        let (gb, inputs) = mlp.backward_batch(&mlp.forward_batch(&xb), &ub);
        let mut total = MlpGrad::zeros_like(&mlp);
        for c in 0..5 {
            let g = mlp.grad(&xs[c], &ups[c]).unwrap();
            total.add_scaled(&g, 1.0);
            assert!((inputs.column(c) - &g.input).amax() < 1e-14);
        }
        for (a, b) in gb.slices().iter().zip(total.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let chart = ChartAutoencoder::new(3, 2, &[32, 16], 1, 5).unwrap();
        let back = ChartAutoencoder::from_json(&chart.to_json()).unwrap();
        assert_eq!(back, chart);
        assert_eq!(chart.decoder.layer_dims(), &[2, 16, 32, 3]);
    }
}
