//! Dense layers, activations and multilayer perceptrons with manual backprop.

use serde::{Deserialize, Serialize};

use crate::ansatz::{Init, ParameterLayout};
use crate::error::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LogCosh,
    /// Sigmoid-weighted linear unit, `x σ(x)`.
    Silu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LogCosh => log_cosh(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LogCosh => x.tanh(),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `log cosh x` without overflow for large `|x|`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W x + b` with `W` row-major `(out.len(), x.len())`.
#[inline]
pub fn affine(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, b)) in out.iter_mut().zip(weights.chunks_exact(n_in).zip(bias)) {
        let mut acc = *b;
        for (w, xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        *o = acc;
    }
}

/// Accumulates `∂/∂W += g xᵀ`, `∂/∂b += g`, and writes `Wᵀ g` into `grad_x`
/// when given.
#[inline]
pub fn affine_backward(
    weights: &[f64],
    x: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (k, &g) in grad_out.iter().enumerate() {
        grad_bias[k] += g;
        if g != 0.0 {
            for (gw, xi) in grad_weights[k * n_in..(k + 1) * n_in].iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }
    if let Some(grad_x) = grad_x {
        grad_x.fill(0.0);
        for (k, &g) in grad_out.iter().enumerate() {
            for (gx, w) in grad_x.iter_mut().zip(&weights[k * n_in..(k + 1) * n_in]) {
                *gx += g * w;
            }
        }
    }
}

/// Evaluate a plain MLP from explicit per-layer weights and biases.
///
/// `weights[k]` is row-major with shape `(biases[k].len(), previous width)`.
pub fn mlp_forward(weights: &[Vec<f64>], biases: &[Vec<f64>], activation: Activation, x: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != biases.len() {
        return Err(Error::Dimension {
            context: "mlp layer count",
            expected: weights.len(),
            actual: biases.len(),
        });
    }
    let mut current = x.to_vec();
    for (w, b) in weights.iter().zip(biases) {
        if w.len() != b.len() * current.len() {
            return Err(Error::Dimension {
                context: "mlp weight matrix",
                expected: b.len() * current.len(),
                actual: w.len(),
            });
        }
        let mut next = vec![0.0; b.len()];
        affine(w, b, &current, &mut next);
        next.iter_mut().for_each(|v| *v = activation.apply(*v));
        current = next;
    }
    Ok(current)
}

/// Multilayer perceptron over a contiguous block of the parameter vector.
///
/// Layer `k` stores its weight matrix `(dims[k+1], dims[k])` followed by its
/// bias `dims[k+1]`. The activation is applied after every layer, or after
/// every layer but the last when `activate_output` is false.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    activate_output: bool,
}

impl Mlp {
    pub fn new(dims: Vec<usize>, activation: Activation, activate_output: bool) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid mlp dimensions {dims:?}")));
        }
        Ok(Self {
            dims,
            activation,
            activate_output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Add this MLP's blocks to `layout` under `prefix`; returns the offset.
    pub fn register(&self, layout: &mut ParameterLayout, prefix: &str) -> usize {
        let offset = layout.parameter_count();
        for (k, w) in self.dims.windows(2).enumerate() {
            layout.push(format!("{prefix}.layer{k}.weight"), &[w[1], w[0]], Init::Normal { fan_in: w[0] });
            layout.push(format!("{prefix}.layer{k}.bias"), &[w[1]], Init::Zeros);
        }
        offset
    }

    fn activates(&self, layer: usize) -> bool {
        self.activate_output || layer + 1 < self.layer_count()
    }

    /// Scratch length needed by [`forward`](Self::forward).
    pub fn cache_len(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] + w[1]).sum::<usize>() + self.output_dim()
    }

    /// Forward pass; the output occupies the last `output_dim` entries of `cache`.
    pub fn forward(&self, params: &[f64], x: &[f64], cache: &mut [f64]) {
        debug_assert_eq!(params.len(), self.parameter_count());
        debug_assert_eq!(cache.len(), self.cache_len());
        let mut p = 0;
        let mut c = 0;
        cache[..x.len()].copy_from_slice(x);
        for (k, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[p..p + n_in * n_out];
            let bias = &params[p + n_in * n_out..p + n_in * n_out + n_out];
            p += n_in * n_out + n_out;
            let (input, rest) = cache[c..].split_at_mut(n_in);
            let (pre, next) = rest.split_at_mut(n_out);
            affine(weights, bias, input, pre);
            let act = self.activates(k);
            for (dst, &z) in next[..n_out].iter_mut().zip(pre.iter()) {
                *dst = if act { self.activation.apply(z) } else { z };
            }
            c += n_in + n_out;
        }
    }

    pub fn output<'a>(&self, cache: &'a [f64]) -> &'a [f64] {
        &cache[cache.len() - self.output_dim()..]
    }

    /// Backward pass from a cache filled by [`forward`](Self::forward).
    /// Parameter gradients are accumulated; `grad_input` is overwritten.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &[f64],
        grad_output: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let widest = *self.dims.iter().max().unwrap();
        let mut upstream = vec![0.0; widest];
        let mut next = vec![0.0; widest];
        upstream[..grad_output.len()].copy_from_slice(grad_output);

        let mut offsets = Vec::with_capacity(self.layer_count());
        let (mut p, mut c) = (0, 0);
        for w in self.dims.windows(2) {
            offsets.push((p, c));
            p += w[0] * w[1] + w[1];
            c += w[0] + w[1];
        }
        let mut grad_input = grad_input;
        for k in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
            let (p, c) = offsets[k];
            let input = &cache[c..c + n_in];
            let pre = &cache[c + n_in..c + n_in + n_out];
            if self.activates(k) {
                for (g, &z) in upstream[..n_out].iter_mut().zip(pre) {
                    *g *= self.activation.derivative(z);
                }
            }
            let weights = &params[p..p + n_in * n_out];
            let (gw, gb) = grad_params[p..p + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            if k == 0 {
                affine_backward(weights, input, &upstream[..n_out], gw, gb, grad_input.as_deref_mut());
            } else {
                affine_backward(weights, input, &upstream[..n_out], gw, gb, Some(&mut next[..n_in]));
                std::mem::swap(&mut upstream, &mut next);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_cosh_is_stable() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert_relative_eq!(log_cosh(0.7), 0.7f64.cosh().ln(), epsilon = 1e-15);
        assert_relative_eq!(log_cosh(800.0), 800.0 - std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(log_cosh(-3.0), log_cosh(3.0));
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::Identity, Activation::LogCosh, Activation::Silu, Activation::Tanh] {
            for &x in &[-3.0, -0.4, 0.0, 0.9, 5.0] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn identity_layer_passes_input() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let out = mlp_forward(&[w], &[vec![0.0; 3]], Activation::Identity, &[0.5, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn log_cosh_layer_of_zero_input() {
        let w = vec![0.3, -1.2, 0.8, 2.0];
        let out = mlp_forward(&[w], &[vec![0.0; 2]], Activation::LogCosh, &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = mlp_forward(&[vec![1.0; 5]], &[vec![0.0; 2]], Activation::Tanh, &[1.0, 2.0]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn two_layer_matches_hand_composition() {
        let w1: Vec<f64> = vec![0.2, -0.5, 1.1, 0.3, 0.7, -0.9];
        let b1: Vec<f64> = vec![0.1, -0.2, 0.05];
        let w2: Vec<f64> = vec![0.4, -1.3, 0.6];
        let b2: Vec<f64> = vec![0.25];
        let x: [f64; 2] = [0.8, -1.0];
        let h: Vec<f64> = (0..3)
            .map(|k| (b1[k] + w1[2 * k] * x[0] + w1[2 * k + 1] * x[1]).tanh())
            .collect();
        let expected = (b2[0] + w2[0] * h[0] + w2[1] * h[1] + w2[2] * h[2]).tanh();
        let out = mlp_forward(&[w1.clone(), w2.clone()], &[b1.clone(), b2.clone()], Activation::Tanh, &x).unwrap();
        assert_relative_eq!(out[0], expected, epsilon = 1e-15);

        let mlp = Mlp::new(vec![2, 3, 1], Activation::Tanh, true).unwrap();
        let params: Vec<f64> = [w1, b1, w2, b2].concat();
        let mut cache = vec![0.0; mlp.cache_len()];
        mlp.forward(&params, &x, &mut cache);
        assert_relative_eq!(mlp.output(&cache)[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mlp = Mlp::new(vec![3, 4, 2], Activation::Silu, false).unwrap();
        let mut layout = ParameterLayout::new();
        mlp.register(&mut layout, "m");
        let params = layout.initialize(11);
        let x = [0.3, -0.8, 1.5];
        let upstream = [0.7, -1.1];
        let objective = |p: &[f64], x: &[f64]| {
            let mut cache = vec![0.0; mlp.cache_len()];
            mlp.forward(p, x, &mut cache);
            mlp.output(&cache).iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut cache = vec![0.0; mlp.cache_len()];
        mlp.forward(&params, &x, &mut cache);
        let mut grad = vec![0.0; params.len()];
        let mut grad_x = vec![0.0; 3];
        mlp.backward(&params, &cache, &upstream, &mut grad, Some(&mut grad_x));
        let h = 1e-6;
        for k in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-8, "param {k}: {fd} vs {}", grad[k]);
        }
        for i in 0..3 {
            let mut plus = x;
            let mut minus = x;
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * h);
            assert!((fd - grad_x[i]).abs() < 1e-8);
        }
    }
}
