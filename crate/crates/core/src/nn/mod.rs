//! Multilayer perceptron with batch normalization, written directly on
//! `ndarray`.
//!
//! Hidden layers are `Linear → BatchNorm → ReLU`; the output layer is a
//! plain affine map to two standardized coordinates. Inputs are expected to
//! be standardized by [`MlpModel::input_norm`] and outputs are mapped back
//! to meters by [`MlpModel::output_norm`].

mod io;
mod loss;
mod train;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{DelayWindow, Standardizer};
use crate::{Error, Result};

pub use loss::{charting_loss, cosine_dissimilarity, dissimilarity_matrix, loss_charting, loss_mse, mse_loss};
pub use train::{train, Adam, ChartingTargets, Targets, TrainConfig, TrainRegime, TrainReport};

/// Hidden widths of the reference architecture.
pub const DEFAULT_HIDDEN: [usize; 5] = [1024, 512, 256, 128, 64];

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub widths: Vec<usize>,
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    /// Learned distance scale of the channel-charting loss.
    pub eps_cc: Option<f64>,
    /// Delay bins the features were cut to, if known.
    pub window: Option<DelayWindow>,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
    pub norms: Vec<(Array1<f64>, Array1<f64>)>,
    pub eps_cc: f64,
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    batch_mean: Vec<Array1<f64>>,
    batch_var: Vec<Array1<f64>>,
    activated: Vec<Array2<f64>>,
}

impl MlpModel {
    /// He-uniform weights, zero biases, final layer scaled by 0.1.
    pub fn new(widths: &[usize], input_norm: Standardizer, output_norm: Standardizer, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        if input_norm.dim() != widths[0] {
            return Err(Error::dims(widths[0], input_norm.dim()));
        }
        if output_norm.dim() != widths[widths.len() - 1] {
            return Err(Error::dims(widths[widths.len() - 1], output_norm.dim()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == n_layers {
                bound *= 0.1;
            }
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..=bound));
            layers.push(Linear { weight, bias: Array1::zeros(fan_out) });
        }
        let norms = widths[1..n_layers].iter().map(|&n| BatchNorm::new(n)).collect();
        Ok(MlpModel {
            widths: widths.to_vec(),
            layers,
            norms,
            input_norm,
            output_norm,
            eps_cc: None,
            window: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Forward pass on standardized inputs, one row per sample.
    ///
    /// `Mode::Train` normalizes with batch statistics and folds them into
    /// the running averages; `Mode::Eval` uses the running averages and
    /// leaves the model untouched.
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let (out, cache) = self.forward_train(x)?;
                self.update_running_stats(&cache);
                Ok(out)
            }
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight) + &layer.bias;
            if let Some(bn) = self.norms.get(l) {
                let inv = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let scale = &bn.gamma * &inv;
                let shift = &bn.beta - &(&bn.running_mean * &scale);
                z = z * &scale + &shift;
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok(h)
    }

    /// Training-mode forward pass that leaves running statistics alone.
    pub fn forward_train(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        if x.nrows() < 2 {
            return Err(Error::domain("batch normalization needs at least two samples per batch"));
        }
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            activated: Vec::new(),
        };
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            cache.inputs.push(h);
            match self.norms.get(l) {
                Some(bn) => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = &centered * &inv;
                    let mut a = &xhat * &bn.gamma + &bn.beta;
                    a.mapv_inplace(|v| v.max(0.0));
                    cache.xhat.push(xhat);
                    cache.inv_std.push(inv);
                    cache.batch_mean.push(mean);
                    cache.batch_var.push(var);
                    cache.activated.push(a.clone());
                    h = a;
                }
                None => h = z,
            }
        }
        Ok((h, cache))
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let b = cache.inputs[0].nrows() as f64;
        let unbias = b / (b - 1.0);
        for ((bn, mean), var) in self.norms.iter_mut().zip(&cache.batch_mean).zip(&cache.batch_var) {
            bn.running_mean.zip_mut_with(mean, |r, m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            bn.running_var
                .zip_mut_with(var, |r, v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias);
        }
    }

    /// Backpropagate the gradient of a loss with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Gradients {
        let n_layers = self.layers.len();
        let b = d_out.nrows() as f64;
        let mut layer_grads = Vec::with_capacity(n_layers);
        let mut norm_grads = Vec::with_capacity(self.norms.len());
        let mut delta = d_out.to_owned();
        for l in (0..n_layers).rev() {
            if l < self.norms.len() {
                // through ReLU and batch norm back to the affine output
                let bn = &self.norms[l];
                let xhat = &cache.xhat[l];
                let mask = cache.activated[l].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
                let dy = &delta * &mask;
                let dgamma = (&dy * xhat).sum_axis(Axis(0));
                let dbeta = dy.sum_axis(Axis(0));
                let dxhat = &dy * &bn.gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                let dz = (&(&dxhat * b) - &sum_dxhat - &(xhat * &sum_dxhat_xhat)) * &(&cache.inv_std[l] / b);
                norm_grads.push((dgamma, dbeta));
                delta = dz;
            }
            let layer = &self.layers[l];
            let dw = cache.inputs[l].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weight.t());
            }
            layer_grads.push(Linear { weight: dw, bias: db });
        }
        layer_grads.reverse();
        norm_grads.reverse();
        Gradients { layers: layer_grads, norms: norm_grads, eps_cc: 0.0 }
    }

    /// Positions in meters for raw (unstandardized) feature rows.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(features)?;
        let z = self.forward_eval(&self.input_norm.apply(features))?;
        Ok(self.output_norm.invert(&z))
    }

    /// Mutable views of every trainable scalar, in a fixed order shared with
    /// [`Gradients::slices`]. `ε_cc` comes last when present.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        for bn in &mut self.norms {
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
        }
        if let Some(e) = self.eps_cc.as_mut() {
            out.push(std::slice::from_mut(e));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        let lin: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        let bn: usize = self.norms.iter().map(|n| 2 * n.gamma.len()).sum();
        lin + bn + self.eps_cc.is_some() as usize
    }
}

impl Gradients {
    pub fn slices(&self, with_eps: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        for (g, b) in &self.norms {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        if with_eps {
            out.push(std::slice::from_ref(&self.eps_cc));
        }
        out
    }
}

/// Multiply-accumulate count of one epoch, `N_u · Σ n_{l−1} n_l`.
pub fn complexity_estimate(widths: &[usize], num_users: usize) -> u64 {
    let per_sample: u64 = widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum();
    per_sample * num_users as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64) -> MlpModel {
        MlpModel::new(&[4, 8, 4, 2], Standardizer::identity(4), Standardizer::identity(2), seed).unwrap()
    }

    fn batch() -> Array2<f64> {
        Array2::from_shape_fn((6, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin())
    }

    #[test]
    fn zero_final_layer_outputs_zero() {
        let mut m = toy(1);
        m.layers.last_mut().unwrap().weight.fill(0.0);
        let out = m.forward_eval(&batch()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_is_repeatable_and_row_wise() {
        let m = toy(2);
        let x = batch();
        assert_eq!(m.forward_eval(&x).unwrap(), m.forward_eval(&x).unwrap());
        let same = Array2::from_shape_fn((3, 4), |(_, j)| j as f64 - 1.5);
        let out = m.forward_eval(&same).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = toy(3);
        assert!(m.forward_eval(&Array2::zeros((2, 5))).is_err());
    }

    #[test]
    fn train_mode_updates_running_stats_only_in_train() {
        let mut m = toy(4);
        let before = m.norms[0].running_mean.clone();
        m.forward(&batch(), Mode::Eval).unwrap();
        assert_eq!(m.norms[0].running_mean, before);
        m.forward(&batch(), Mode::Train).unwrap();
        assert_ne!(m.norms[0].running_mean, before);
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(complexity_estimate(&[2, 3, 2], 10), 120);
        assert_eq!(complexity_estimate(&[2, 3, 2], 20), 240);
        let n0 = 2 * 256 * 57;
        let w = [n0, 1024, 512, 256, 128, 64, 2];
        let hand = n0 * 1024 + 1024 * 512 + 512 * 256 + 256 * 128 + 128 * 64 + 64 * 2;
        assert_eq!(complexity_estimate(&w, 1800), 1800 * hand as u64);
    }
}
