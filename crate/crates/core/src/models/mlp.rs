//! Fully connected tanh network with exact reverse-mode gradients.
//!
//! Parameters are one flat vector. Each layer stores its weight matrix
//! row-major (`out x in`) followed by its bias.

use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use crate::error::{dim_err, param_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations kept from a forward pass: `acts[0]` is the input, `acts[l]`
/// the post-activation output of layer `l`.
struct Trace {
    acts: Vec<Vec<f64>>,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    pub fn from_params(layer_sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Structure(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let expected = param_count(&layer_sizes);
        if params.len() != expected {
            return dim_err(format!("{} params for layers {layer_sizes:?}, need {expected}", params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return param_err("non-finite parameter");
        }
        Ok(Self { layer_sizes, activation: Activation::Tanh, params })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(layer_sizes: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        let mut params = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.uniform_range(-bound, bound));
            }
        }
        Self::from_params(layer_sizes, params)
    }

    pub fn zeros(layer_sizes: Vec<usize>) -> Result<Self> {
        let n = param_count(&layer_sizes);
        Self::from_params(layer_sizes, vec![0.0; n])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn layer_offsets(&self, layer: usize) -> (usize, usize, usize, usize) {
        let offset: usize = self.layer_sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let n_in = self.layer_sizes[layer];
        let n_out = self.layer_sizes[layer + 1];
        (offset, offset + n_in * n_out, n_in, n_out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return dim_err(format!("input has {} values, model expects {}", x.len(), self.input_dim()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(x.to_vec());
        let last = self.num_layers() - 1;
        for layer in 0..self.num_layers() {
            let (w_off, b_off, n_in, n_out) = self.layer_offsets(layer);
            let input = &acts[layer];
            let mut out = self.params[b_off..b_off + n_out].to_vec();
            for (o, row) in out.iter_mut().zip(self.params[w_off..b_off].chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
            }
            if layer != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).acts.pop().unwrap()
    }

    /// Penultimate-layer activations.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.num_layers() < 2 {
            return Err(Error::Structure("embedding needs at least two layers".into()));
        }
        self.check_input(x)?;
        let mut t = self.trace(x);
        t.acts.pop();
        Ok(t.acts.pop().unwrap())
    }

    /// Back-propagates `out_grad` (dL/d output). Accumulates `scale * dL/dθ`
    /// into `param_acc` when given and returns dL/dx.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        out_grad: &[f64],
        param_acc: Option<&mut [f64]>,
        scale: f64,
    ) -> Vec<f64> {
        self.backward_trace(&self.trace(x), out_grad, param_acc, scale)
    }

    /// One forward pass; `loss_fn` maps the output to `(loss, dL/d output)`.
    /// Accumulates `scale * dL/dθ` into `acc` and returns the loss.
    pub(crate) fn accumulate_with<F>(&self, x: &[f64], loss_fn: F, acc: &mut [f64], scale: f64) -> f64
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let trace = self.trace(x);
        let (value, g_out) = loss_fn(trace.acts.last().unwrap());
        self.backward_trace(&trace, &g_out, Some(acc), scale);
        value
    }

    fn backward_trace(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        mut param_acc: Option<&mut [f64]>,
        scale: f64,
    ) -> Vec<f64> {
        let last = self.num_layers() - 1;
        let mut delta = out_grad.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (w_off, b_off, n_in, n_out) = self.layer_offsets(layer);
            if layer != last {
                // d tanh = 1 - tanh^2
                for (d, a) in delta.iter_mut().zip(&trace.acts[layer + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.acts[layer];
            if let Some(acc) = param_acc.as_deref_mut() {
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = scale * d;
                    let row = &mut acc[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += sd * a;
                    }
                    acc[b_off + o] += sd;
                }
            }
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate().take(n_out) {
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn loss(&self, x: &[f64], spec: &LossSpec) -> Result<f64> {
        self.check_input(x)?;
        spec.check(self.output_dim())?;
        Ok(spec.value(&self.forward_unchecked(x)))
    }

    /// dL/dθ.
    pub fn grad_params(&self, x: &[f64], spec: &LossSpec) -> Result<Vec<f64>> {
        self.check_input(x)?;
        spec.check(self.output_dim())?;
        let (_, g_out) = spec.value_and_grad(&self.forward_unchecked(x));
        let mut acc = vec![0.0; self.params.len()];
        self.backward(x, &g_out, Some(&mut acc), 1.0);
        Ok(acc)
    }

    /// dL/dx.
    pub fn grad_input(&self, x: &[f64], spec: &LossSpec) -> Result<Vec<f64>> {
        self.check_input(x)?;
        spec.check(self.output_dim())?;
        Ok(self.loss_and_grad_input_unchecked(x, spec).1)
    }

    pub(crate) fn loss_and_grad_input_unchecked(&self, x: &[f64], spec: &LossSpec) -> (f64, Vec<f64>) {
        let (value, g_out) = spec.value_and_grad(&self.forward_unchecked(x));
        (value, self.backward(x, &g_out, None, 1.0))
    }

    /// Accumulates `scale * dL/dθ` into `acc` and returns the loss.
    pub(crate) fn accumulate_grad(&self, x: &[f64], spec: &LossSpec, acc: &mut [f64], scale: f64) -> f64 {
        self.accumulate_with(x, |out| spec.value_and_grad(out), acc, scale)
    }

    /// Rows of the output Jacobian `d f_k / d x`.
    pub fn jacobian_input(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok((0..self.output_dim())
            .map(|k| {
                let mut e = vec![0.0; self.output_dim()];
                e[k] = 1.0;
                self.backward(x, &e, None, 1.0)
            })
            .collect())
    }

    /// Zeroes the last layer's weights and biases, so the model outputs zero.
    pub fn zero_output_layer(&mut self) {
        let (w, _, n_in, n_out) = self.layer_offsets(self.num_layers() - 1);
        self.params[w..w + n_in * n_out + n_out].iter_mut().for_each(|p| *p = 0.0);
    }

    /// `params -= lr * grad`
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

/// JSON checkpoint document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub training_meta: serde_json::Value,
}

impl MlpCheckpoint {
    pub fn new(model: &MlpModel, seed: u64, training_meta: serde_json::Value) -> Self {
        Self {
            layer_sizes: model.layer_sizes.clone(),
            activation: model.activation,
            params: model.params.clone(),
            seed,
            training_meta,
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        MlpModel::from_params(self.layer_sizes, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(vec![3, 4, 2]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zeroed_output_layer_outputs_zero() {
        let mut m = MlpModel::init(vec![3, 5, 2], &mut Rng::new(2)).unwrap();
        let first = m.params()[..20].to_vec();
        m.zero_output_layer();
        assert_eq!(m.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(&m.params()[..20], &first[..]);
    }

    #[test]
    fn single_affine_layer() {
        let m = MlpModel::from_params(vec![1, 1], vec![2.0, 1.0]).unwrap();
        assert_eq!(m.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn input_length_checked() {
        let m = MlpModel::zeros(vec![3, 2]).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn param_count_matches_layout() {
        let m = MlpModel::init(vec![5, 7, 3], &mut Rng::new(0)).unwrap();
        assert_eq!(m.params().len(), 5 * 7 + 7 + 7 * 3 + 3);
        let bound = 1.0 / 5f64.sqrt();
        assert!(m.params()[..42].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn own_output_target_gives_zero_gradient() {
        let m = MlpModel::init(vec![4, 6, 3], &mut Rng::new(1)).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let spec = LossSpec::mse(m.forward(&x).unwrap());
        assert!(m.grad_params(&x, &spec).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        // L = 0.5 (w x + b - y)^2 ; dL/dw = (w x + b - y) x
        let (w, b, x, y) = (1.5, -0.5, 2.0, 0.25);
        let m = MlpModel::from_params(vec![1, 1], vec![w, b]).unwrap();
        let g = m.grad_params(&[x], &LossSpec::mse(vec![y])).unwrap();
        let r = w * x + b - y;
        assert_eq!(g, vec![r * x, r]);
    }

    #[test]
    fn linear_score_input_gradient_is_weights() {
        let w = vec![0.5, -1.0, 2.0];
        let mut params = w.clone();
        params.push(0.3);
        let m = MlpModel::from_params(vec![3, 1], params).unwrap();
        assert_eq!(m.grad_input(&[1.0, 2.0, 3.0], &LossSpec::Score { weights: vec![1.0] }).unwrap(), w);
    }

    #[test]
    fn constant_model_has_zero_input_gradient() {
        let mut params = vec![0.0; param_count(&[3, 4, 2])];
        let n = params.len();
        params[n - 1] = 1.0;
        params[n - 2] = -1.0;
        let m = MlpModel::from_params(vec![3, 4, 2], params).unwrap();
        let g = m.grad_input(&[0.2, 0.4, 0.6], &LossSpec::cross_entropy(1)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_requires_hidden_layer() {
        let m = MlpModel::zeros(vec![3, 2]).unwrap();
        assert!(matches!(m.embed(&[0.0; 3]), Err(Error::Structure(_))));
        let m = MlpModel::init(vec![3, 5, 2], &mut Rng::new(2)).unwrap();
        let e = m.embed(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(e.len(), 5);
        assert_eq!(e, m.embed(&[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn unknown_class_rejected() {
        let m = MlpModel::zeros(vec![2, 2]).unwrap();
        assert!(matches!(m.grad_params(&[0.0, 0.0], &LossSpec::cross_entropy(5)), Err(Error::Parameter(_))));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = MlpModel::init(vec![6, 5, 4], &mut Rng::new(11)).unwrap();
        let ckpt = MlpCheckpoint::new(&m, 11, serde_json::json!({"epochs": 3}));
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: MlpCheckpoint = serde_json::from_str(&text).unwrap();
        let m2 = back.into_model().unwrap();
        for (a, b) in m.params().iter().zip(m2.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
