//! Flat-buffer forward and reverse passes for a single symmetrisation branch.

use crate::ansatz::dense::{affine, affine_backward, log_cosh};
use crate::error::{format_spins, Error, Result};
use crate::vit::Vit;

/// Added to the population standard deviation inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Activations of one branch, token-major (`token * width + channel`).
pub(crate) struct Branch {
    tokens: Vec<f64>,
    pub embedded: Vec<f64>,
    ln1_hat: Vec<f64>,
    ln1_std: Vec<f64>,
    ln1_out: Vec<f64>,
    values: Vec<f64>,
    attn: Vec<f64>,
    resid: Vec<f64>,
    ln2_hat: Vec<f64>,
    ln2_std: Vec<f64>,
    ln2_out: Vec<f64>,
    mlp_cache: Vec<f64>,
    core_pre: Vec<f64>,
    pub core_out: Vec<f64>,
    pooled: Vec<f64>,
    post_cache: Vec<f64>,
    sum: f64,
    output: f64,
}

impl Branch {
    pub fn new(vit: &Vit) -> Self {
        let h = &vit.hyper;
        let n = h.n_tokens();
        let ne = n * h.embed_dim;
        Self {
            tokens: vec![0.0; h.size],
            embedded: vec![0.0; ne],
            ln1_hat: vec![0.0; ne],
            ln1_std: vec![0.0; n],
            ln1_out: vec![0.0; ne],
            values: vec![0.0; ne],
            attn: vec![0.0; ne],
            resid: vec![0.0; ne],
            ln2_hat: vec![0.0; ne],
            ln2_std: vec![0.0; n],
            ln2_out: vec![0.0; ne],
            mlp_cache: vec![0.0; n * vit.core_mlp.cache_len()],
            core_pre: vec![0.0; ne],
            core_out: vec![0.0; ne],
            pooled: vec![0.0; h.embed_dim],
            post_cache: vec![0.0; vit.post_mlp.cache_len()],
            sum: 0.0,
            output: 0.0,
        }
    }

    /// Name of the earliest stage holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let stages: [(&'static str, &[f64]); 11] = [
            ("embedding", &self.embedded),
            ("first layer norm", &self.ln1_out),
            ("attention values", &self.values),
            ("attention", &self.attn),
            ("attention residual", &self.resid),
            ("second layer norm", &self.ln2_out),
            ("core mlp", &self.mlp_cache),
            ("core residual", &self.core_pre),
            ("log cosh", &self.core_out),
            ("pooling", &self.pooled),
            ("post-processor", &self.post_cache),
        ];
        stages
            .iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| *name)
            .or_else(|| (!self.sum.is_finite() || !self.output.is_finite()).then_some("output"))
    }
}

/// Returns the population standard deviation `σ`; `normalized` receives
/// `(x - μ) / (σ + ε)` and `out` the gained and offset version.
pub(crate) fn layer_norm_forward(x: &[f64], gain: &[f64], offset: &[f64], normalized: &mut [f64], out: &mut [f64]) -> f64 {
    let dim = x.len() as f64;
    let mean = x.iter().sum::<f64>() / dim;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim;
    let std = var.sqrt();
    let scale = 1.0 / (std + LAYER_NORM_EPS);
    for k in 0..x.len() {
        normalized[k] = (x[k] - mean) * scale;
        out[k] = gain[k] * normalized[k] + offset[k];
    }
    std
}

/// Accumulates gain/offset gradients and overwrites `grad_x`.
pub(crate) fn layer_norm_backward(
    normalized: &[f64],
    std: f64,
    gain: &[f64],
    grad_out: &[f64],
    grad_gain: &mut [f64],
    grad_offset: &mut [f64],
    grad_x: &mut [f64],
) {
    let dim = normalized.len() as f64;
    let s = std + LAYER_NORM_EPS;
    let mut mean_g = 0.0;
    let mut mean_gx = 0.0;
    for k in 0..normalized.len() {
        grad_gain[k] += grad_out[k] * normalized[k];
        grad_offset[k] += grad_out[k];
        let g = grad_out[k] * gain[k];
        grad_x[k] = g;
        mean_g += g;
        mean_gx += g * normalized[k];
    }
    mean_g /= dim;
    mean_gx /= dim;
    // The σ-dependence vanishes when all inputs coincide.
    let ratio = if std > 0.0 { s / std } else { 0.0 };
    for k in 0..normalized.len() {
        grad_x[k] = (grad_x[k] - mean_g - normalized[k] * ratio * mean_gx) / s;
    }
}

/// Everything from the embedded tokens to `log cosh(z)`.
pub(crate) fn core_forward(vit: &Vit, params: &[f64], b: &mut Branch) {
    let h = &vit.hyper;
    let o = &vit.offsets;
    let n = h.n_tokens();
    let e = h.embed_dim;
    let p = h.head_dim();
    let cl = vit.core_mlp.cache_len();

    let ln1_gain = &params[o.ln1_gain..o.ln1_gain + e];
    let ln1_offset = &params[o.ln1_offset..o.ln1_offset + e];
    for i in 0..n {
        let r = i * e..(i + 1) * e;
        b.ln1_std[i] = layer_norm_forward(
            &b.embedded[r.clone()],
            ln1_gain,
            ln1_offset,
            &mut b.ln1_hat[r.clone()],
            &mut b.ln1_out[r],
        );
    }

    b.attn.fill(0.0);
    for mu in 0..h.heads {
        let value = &params[o.value[mu]..o.value[mu] + p * p];
        let circ = &params[o.circulant[mu]..o.circulant[mu] + n];
        let ch = mu * p..(mu + 1) * p;
        for j in 0..n {
            let input = &b.ln1_out[j * e + ch.start..j * e + ch.end];
            let dst = &mut b.values[j * e + ch.start..j * e + ch.end];
            for (r, d) in dst.iter_mut().enumerate() {
                *d = value[r * p..(r + 1) * p].iter().zip(input).map(|(w, x)| w * x).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                let a = circ[(j + n - i) % n];
                for c in ch.clone() {
                    b.attn[i * e + c] += a * b.values[j * e + c];
                }
            }
        }
    }
    for (y, (x, a)) in b.resid.iter_mut().zip(b.embedded.iter().zip(&b.attn)) {
        *y = x + a;
    }

    let ln2_gain = &params[o.ln2_gain..o.ln2_gain + e];
    let ln2_offset = &params[o.ln2_offset..o.ln2_offset + e];
    let mlp_params = &params[o.core_mlp..o.core_mlp + vit.core_mlp.parameter_count()];
    for i in 0..n {
        let r = i * e..(i + 1) * e;
        b.ln2_std[i] = layer_norm_forward(
            &b.resid[r.clone()],
            ln2_gain,
            ln2_offset,
            &mut b.ln2_hat[r.clone()],
            &mut b.ln2_out[r.clone()],
        );
        let cache = &mut b.mlp_cache[i * cl..(i + 1) * cl];
        vit.core_mlp.forward(mlp_params, &b.ln2_out[r.clone()], cache);
        let out = vit.core_mlp.output(cache);
        for (k, c) in r.enumerate() {
            b.core_pre[c] = b.resid[c] + out[k];
            b.core_out[c] = log_cosh(b.core_pre[c]);
        }
    }
}

/// Forward pass of the branch whose tokens are cyclically shifted by `shift`.
pub(crate) fn forward(vit: &Vit, params: &[f64], spins: &[i8], shift: usize, b: &mut Branch) -> Result<f64> {
    let h = &vit.hyper;
    let o = &vit.offsets;
    let n = h.n_tokens();
    let d = h.token_dim;
    let e = h.embed_dim;

    for i in 0..n {
        let src = ((i + shift) % n) * d;
        for k in 0..d {
            b.tokens[i * d + k] = spins[src + k] as f64;
        }
    }
    let w = &params[o.embed_weight..o.embed_weight + e * d];
    let bias = &params[o.embed_bias..o.embed_bias + e];
    for i in 0..n {
        affine(w, bias, &b.tokens[i * d..(i + 1) * d], &mut b.embedded[i * e..(i + 1) * e]);
    }

    core_forward(vit, params, b);

    b.pooled.fill(0.0);
    for token in b.core_out.chunks_exact(e) {
        for (p, v) in b.pooled.iter_mut().zip(token) {
            *p += v;
        }
    }
    b.pooled.iter_mut().for_each(|p| *p /= n as f64);

    let post_params = &params[o.post_mlp..o.post_mlp + vit.post_mlp.parameter_count()];
    vit.post_mlp.forward(post_params, &b.pooled, &mut b.post_cache);
    b.sum = vit.post_mlp.output(&b.post_cache).iter().sum();
    b.output = params[o.out_scale] * b.sum + params[o.out_offset];

    if !b.output.is_finite() {
        return Err(Error::NonFinite {
            stage: format!("vit {}", b.first_non_finite().unwrap_or("output")),
            config: format_spins(spins),
        });
    }
    Ok(b.output)
}

/// Accumulate `weight · ∂o/∂θ` for a branch filled by [`forward`].
pub(crate) fn backward(vit: &Vit, params: &[f64], b: &Branch, weight: f64, grad: &mut [f64]) {
    let h = &vit.hyper;
    let o = &vit.offsets;
    let n = h.n_tokens();
    let d = h.token_dim;
    let e = h.embed_dim;
    let p = h.head_dim();
    let cl = vit.core_mlp.cache_len();

    grad[o.out_scale] += weight * b.sum;
    grad[o.out_offset] += weight;
    let g_sum = weight * params[o.out_scale];

    let post_count = vit.post_mlp.parameter_count();
    let g_post_out = vec![g_sum; vit.post_mlp.output_dim()];
    let mut g_pooled = vec![0.0; e];
    vit.post_mlp.backward(
        &params[o.post_mlp..o.post_mlp + post_count],
        &b.post_cache,
        &g_post_out,
        &mut grad[o.post_mlp..o.post_mlp + post_count],
        Some(&mut g_pooled),
    );

    // z = y + MLP(LN2(y)); out = log cosh z; pooled = mean over tokens.
    let mut g_resid = vec![0.0; n * e];
    let mut g_z = vec![0.0; e];
    let mut g_ln2 = vec![0.0; e];
    let mut g_x = vec![0.0; e];
    let mlp_count = vit.core_mlp.parameter_count();
    for i in 0..n {
        let r = i * e..(i + 1) * e;
        for (k, c) in r.clone().enumerate() {
            g_z[k] = g_pooled[k] / n as f64 * b.core_pre[c].tanh();
        }
        vit.core_mlp.backward(
            &params[o.core_mlp..o.core_mlp + mlp_count],
            &b.mlp_cache[i * cl..(i + 1) * cl],
            &g_z,
            &mut grad[o.core_mlp..o.core_mlp + mlp_count],
            Some(&mut g_ln2),
        );
        let (before, after) = grad.split_at_mut(o.ln2_offset);
        layer_norm_backward(
            &b.ln2_hat[r.clone()],
            b.ln2_std[i],
            &params[o.ln2_gain..o.ln2_gain + e],
            &g_ln2,
            &mut before[o.ln2_gain..o.ln2_gain + e],
            &mut after[..e],
            &mut g_x,
        );
        for (k, c) in r.enumerate() {
            g_resid[c] = g_z[k] + g_x[k];
        }
    }

    // y = x + attention(LN1(x)).
    let mut g_embedded = g_resid.clone();
    let mut g_ln1 = vec![0.0; n * e];
    let mut g_values = vec![0.0; p];
    for mu in 0..h.heads {
        let ch = mu * p..(mu + 1) * p;
        let circ = &params[o.circulant[mu]..o.circulant[mu] + n];
        let value = &params[o.value[mu]..o.value[mu] + p * p];
        for j in 0..n {
            g_values.fill(0.0);
            for i in 0..n {
                let offset = (j + n - i) % n;
                let mut dot = 0.0;
                for (k, c) in ch.clone().enumerate() {
                    dot += g_resid[i * e + c] * b.values[j * e + c];
                    g_values[k] += circ[offset] * g_resid[i * e + c];
                }
                grad[o.circulant[mu] + offset] += dot;
            }
            let input = &b.ln1_out[j * e + ch.start..j * e + ch.end];
            for (r, &gv) in g_values.iter().enumerate() {
                for (c, &x) in input.iter().enumerate() {
                    grad[o.value[mu] + r * p + c] += gv * x;
                    g_ln1[j * e + ch.start + c] += gv * value[r * p + c];
                }
            }
        }
    }
    for i in 0..n {
        let r = i * e..(i + 1) * e;
        let (before, after) = grad.split_at_mut(o.ln1_offset);
        layer_norm_backward(
            &b.ln1_hat[r.clone()],
            b.ln1_std[i],
            &params[o.ln1_gain..o.ln1_gain + e],
            &g_ln1[r.clone()],
            &mut before[o.ln1_gain..o.ln1_gain + e],
            &mut after[..e],
            &mut g_x,
        );
        for (k, c) in r.enumerate() {
            g_embedded[c] += g_x[k];
        }
    }

    let (gw, gb) = grad[o.embed_weight..o.embed_bias + e].split_at_mut(e * d);
    let w = &params[o.embed_weight..o.embed_weight + e * d];
    for i in 0..n {
        affine_backward(w, &b.tokens[i * d..(i + 1) * d], &g_embedded[i * e..(i + 1) * e], gw, gb, None);
    }
}

/// `log((1/n) Σ_t exp(o_t))` and the normalised weights `∂/∂o_t`.
///
/// The sum runs over the outputs in sorted order so that a permutation of
/// the branches gives a bit-identical result.
pub(crate) fn log_mean_exp(outputs: &[f64]) -> (f64, Vec<f64>) {
    let mut sorted = outputs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted[0];
    let total: f64 = sorted.iter().map(|o| (o - max).exp()).sum();
    let value = max + total.ln() - (outputs.len() as f64).ln();
    let weights = outputs.iter().map(|o| (o - max).exp() / total).collect();
    (value, weights)
}
