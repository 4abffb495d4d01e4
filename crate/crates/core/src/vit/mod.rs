//! Vision-transformer wave function.
//!
//! Pipeline for one configuration `s` of `N = n·d` spins:
//!
//! 1. split `s` into `n` tokens of `d` spins and embed each with a shared
//!    affine map into `d_emb` channels;
//! 2. core block: `y = x + MHA(LN(x))`, `z = y + MLP(LN(y))`, output
//!    `log cosh(z)`, where each attention head mixes tokens through a
//!    circulant matrix `a_ij = c_{(j-i) mod n}` and a `p × p` value map;
//! 3. mean-pool the tokens, run the post-processor MLP, sum its outputs and
//!    apply a final scale-and-offset to get one real number `o`;
//! 4. repeat for every cyclic shift of the tokens and combine the branch
//!    amplitudes: `log ψ = log((1/n) Σ_t exp(o_t))`.
//!
//! Derivatives are obtained by hand-written reverse accumulation through all
//! of the above.

mod network;

use serde::{Deserialize, Serialize};

use crate::ansatz::dense::{affine, Activation, Mlp};
use crate::ansatz::{check_lengths, Ansatz, Init, ParameterLayout};
use crate::error::{Error, Result};

pub use network::LAYER_NORM_EPS;

/// Architecture hyperparameters; defaults follow the reference ViT setup
/// (10 tokens, `d_emb = 14`, 2 heads, 3 core MLP layers, post-processor `(5,)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitHyperparameters {
    pub size: usize,
    pub token_dim: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_core_mlp_layers")]
    pub core_mlp_layers: usize,
    #[serde(default = "default_postprocessor")]
    pub postprocessor_dims: Vec<usize>,
    /// Average amplitudes over all cyclic token shifts.
    #[serde(default = "default_true")]
    pub symmetrize: bool,
}

fn default_embed_dim() -> usize {
    14
}
fn default_heads() -> usize {
    2
}
fn default_core_mlp_layers() -> usize {
    3
}
fn default_postprocessor() -> Vec<usize> {
    vec![5]
}
fn default_true() -> bool {
    true
}

impl VitHyperparameters {
    /// Reference hyperparameters for a chain of `size` spins: `d = N/10` when
    /// `N` is a multiple of 10, single-spin tokens otherwise.
    pub fn table_one(size: usize) -> Result<Self> {
        let token_dim = if size >= 10 && size % 10 == 0 { size / 10 } else { 1 };
        let h = Self {
            size,
            token_dim,
            embed_dim: default_embed_dim(),
            heads: default_heads(),
            core_mlp_layers: default_core_mlp_layers(),
            postprocessor_dims: default_postprocessor(),
            symmetrize: true,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn n_tokens(&self) -> usize {
        self.size / self.token_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.size >= 1
            && self.token_dim >= 1
            && self.embed_dim >= 1
            && self.heads >= 1
            && self.core_mlp_layers >= 1
            && !self.postprocessor_dims.is_empty()
            && self.postprocessor_dims.iter().all(|&d| d >= 1);
        if !all_positive {
            return Err(Error::Config(format!("vit dimensions must all be >= 1: {self:?}")));
        }
        if self.size % self.token_dim != 0 {
            return Err(Error::Config(format!(
                "chain size {} is not divisible by token dimension {}",
                self.size, self.token_dim
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding dimension {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("layer normalisation needs an embedding dimension >= 2".into()));
        }
        Ok(())
    }
}

/// Offsets of every parameter block in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Offsets {
    pub embed_weight: usize,
    pub embed_bias: usize,
    pub ln1_gain: usize,
    pub ln1_offset: usize,
    pub circulant: Vec<usize>,
    pub value: Vec<usize>,
    pub ln2_gain: usize,
    pub ln2_offset: usize,
    pub core_mlp: usize,
    pub post_mlp: usize,
    pub out_scale: usize,
    pub out_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vit {
    hyper: VitHyperparameters,
    layout: ParameterLayout,
    offsets: Offsets,
    core_mlp: Mlp,
    post_mlp: Mlp,
}

/// Weights of one attention head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    /// Circulant generator `c`, one entry per relative token offset.
    pub circulant: Vec<f64>,
    /// Row-major `p × p` value matrix.
    pub value: Vec<f64>,
}

impl AttentionWeights {
    /// Dense `n × n` attention matrix `a_ij = c_{(j-i) mod n}`.
    pub fn attention_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.circulant.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.circulant[(j + n - i) % n]).collect())
            .collect()
    }
}

impl Vit {
    pub fn new(hyper: VitHyperparameters) -> Result<Self> {
        hyper.validate()?;
        let n = hyper.n_tokens();
        let d = hyper.token_dim;
        let e = hyper.embed_dim;
        let p = hyper.head_dim();
        let mut layout = ParameterLayout::new();
        let embed_weight = layout.push("embed.weight", &[e, d], Init::Normal { fan_in: d });
        let embed_bias = layout.push("embed.bias", &[e], Init::Zeros);
        let ln1_gain = layout.push("ln1.gain", &[e], Init::Ones);
        let ln1_offset = layout.push("ln1.offset", &[e], Init::Zeros);
        let mut circulant = Vec::new();
        let mut value = Vec::new();
        for mu in 0..hyper.heads {
            circulant.push(layout.push(format!("attn.head{mu}.circulant"), &[n], Init::Normal { fan_in: n }));
            value.push(layout.push(format!("attn.head{mu}.value"), &[p, p], Init::Normal { fan_in: p }));
        }
        let ln2_gain = layout.push("ln2.gain", &[e], Init::Ones);
        let ln2_offset = layout.push("ln2.offset", &[e], Init::Zeros);
        let core_mlp = Mlp::new(vec![e; hyper.core_mlp_layers + 1], Activation::Silu, false)?;
        let core_offset = core_mlp.register(&mut layout, "core_mlp");
        let mut post_dims = vec![e];
        post_dims.extend_from_slice(&hyper.postprocessor_dims);
        let post_mlp = Mlp::new(post_dims, Activation::Silu, true)?;
        let post_offset = post_mlp.register(&mut layout, "post");
        let out_scale = layout.push("out.scale", &[1], Init::Ones);
        let out_offset = layout.push("out.offset", &[1], Init::Zeros);
        layout.validate()?;
        Ok(Self {
            offsets: Offsets {
                embed_weight,
                embed_bias,
                ln1_gain,
                ln1_offset,
                circulant,
                value,
                ln2_gain,
                ln2_offset,
                core_mlp: core_offset,
                post_mlp: post_offset,
                out_scale,
                out_offset,
            },
            hyper,
            layout,
            core_mlp,
            post_mlp,
        })
    }

    pub fn hyperparameters(&self) -> &VitHyperparameters {
        &self.hyper
    }

    /// Parameter count per stage (`embed`, `ln1`, `attn`, `ln2`, `core_mlp`, `post`, `out`).
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        self.layout.breakdown()
    }

    pub fn attention_weights(&self, params: &[f64]) -> Vec<AttentionWeights> {
        let n = self.hyper.n_tokens();
        let p = self.hyper.head_dim();
        (0..self.hyper.heads)
            .map(|mu| AttentionWeights {
                circulant: params[self.offsets.circulant[mu]..self.offsets.circulant[mu] + n].to_vec(),
                value: params[self.offsets.value[mu]..self.offsets.value[mu] + p * p].to_vec(),
            })
            .collect()
    }

    /// Run the core block on already-embedded tokens.
    pub fn core_block(&self, params: &[f64], embedded: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let e = self.hyper.embed_dim;
        if embedded.len() != self.hyper.n_tokens() || embedded.iter().any(|t| t.len() != e) {
            return Err(Error::Dimension {
                context: "core block input",
                expected: self.hyper.n_tokens() * e,
                actual: embedded.iter().map(Vec::len).sum(),
            });
        }
        let flat: Vec<f64> = embedded.concat();
        let mut branch = network::Branch::new(self);
        branch.embedded.copy_from_slice(&flat);
        network::core_forward(self, params, &mut branch);
        if let Some(stage) = branch.first_non_finite() {
            return Err(Error::NonFinite {
                stage: format!("vit core block ({stage})"),
                config: "<embedded input>".into(),
            });
        }
        Ok(branch.core_out.chunks(e).map(<[f64]>::to_vec).collect())
    }

    /// Scalar output `o_t` of every symmetrisation branch (a single entry
    /// when symmetrisation is off).
    pub fn branch_outputs(&self, params: &[f64], spins: &[i8]) -> Result<Vec<f64>> {
        check_lengths(self, params, spins)?;
        let mut outputs = Vec::new();
        for shift in 0..self.branch_count() {
            let mut branch = network::Branch::new(self);
            outputs.push(network::forward(self, params, spins, shift, &mut branch)?);
        }
        Ok(outputs)
    }

    pub fn branch_count(&self) -> usize {
        if self.hyper.symmetrize {
            self.hyper.n_tokens()
        } else {
            1
        }
    }

    /// Shift-averaged log-amplitude; same as [`Ansatz::log_psi`].
    pub fn symmetrize_and_reduce(&self, params: &[f64], spins: &[i8]) -> Result<f64> {
        let outputs = self.branch_outputs(params, spins)?;
        Ok(network::log_mean_exp(&outputs).0)
    }
}

impl Ansatz for Vit {
    fn name(&self) -> &'static str {
        "vit"
    }

    fn input_size(&self) -> usize {
        self.hyper.size
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn log_psi(&self, params: &[f64], spins: &[i8]) -> Result<f64> {
        self.symmetrize_and_reduce(params, spins)
    }

    fn log_psi_with_gradient(&self, params: &[f64], spins: &[i8], gradient: &mut [f64]) -> Result<f64> {
        check_lengths(self, params, spins)?;
        if gradient.len() != params.len() {
            return Err(Error::Dimension {
                context: "gradient buffer",
                expected: params.len(),
                actual: gradient.len(),
            });
        }
        let mut branches: Vec<network::Branch> = (0..self.branch_count()).map(|_| network::Branch::new(self)).collect();
        let mut outputs = Vec::with_capacity(branches.len());
        for (shift, branch) in branches.iter_mut().enumerate() {
            outputs.push(network::forward(self, params, spins, shift, branch)?);
        }
        let (log_psi, weights) = network::log_mean_exp(&outputs);
        gradient.fill(0.0);
        for (branch, &w) in branches.iter().zip(&weights) {
            network::backward(self, params, branch, w, gradient);
        }
        Ok(log_psi)
    }
}

/// Split `spins` into consecutive tokens of `token_dim` spins.
pub fn tokenize(spins: &[i8], token_dim: usize) -> Result<Vec<Vec<i8>>> {
    if token_dim == 0 || spins.len() % token_dim != 0 {
        return Err(Error::Config(format!(
            "chain of {} spins cannot be split into tokens of {}",
            spins.len(),
            token_dim
        )));
    }
    Ok(spins.chunks(token_dim).map(<[i8]>::to_vec).collect())
}

/// Shared affine embedding of every token; `weight` is row-major `(d_emb, d)`.
pub fn embed(tokens: &[Vec<f64>], weight: &[f64], bias: &[f64]) -> Result<Vec<Vec<f64>>> {
    let e = bias.len();
    tokens
        .iter()
        .map(|t| {
            if weight.len() != e * t.len() {
                return Err(Error::Dimension {
                    context: "embedding weight",
                    expected: e * t.len(),
                    actual: weight.len(),
                });
            }
            let mut out = vec![0.0; e];
            affine(weight, bias, t, &mut out);
            Ok(out)
        })
        .collect()
}

/// Normalise to zero mean and unit population deviation (`σ + ε`), then
/// apply the elementwise gain and offset.
pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Config("layer normalisation needs at least two components".into()));
    }
    if gain.len() != x.len() || offset.len() != x.len() {
        return Err(Error::Dimension {
            context: "layer norm affine",
            expected: x.len(),
            actual: gain.len().min(offset.len()),
        });
    }
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    network::layer_norm_forward(x, gain, offset, &mut normalized, &mut out);
    Ok(out)
}

/// `A_i^μ = Σ_j a^μ_ij V^μ x^μ_j` for every head, concatenated per token.
///
/// `head_inputs[μ][j]` is the `p`-dimensional slice of token `j` seen by head `μ`.
pub fn factored_attention(head_inputs: &[Vec<Vec<f64>>], heads: &[AttentionWeights]) -> Result<Vec<Vec<f64>>> {
    if head_inputs.len() != heads.len() || heads.is_empty() {
        return Err(Error::Dimension {
            context: "attention heads",
            expected: heads.len(),
            actual: head_inputs.len(),
        });
    }
    let n = head_inputs[0].len();
    let p = head_inputs[0].first().map_or(0, Vec::len);
    let mut out = vec![Vec::with_capacity(p * heads.len()); n];
    for (inputs, w) in head_inputs.iter().zip(heads) {
        if inputs.len() != n || w.circulant.len() != n || w.value.len() != p * p || inputs.iter().any(|x| x.len() != p) {
            return Err(Error::Dimension {
                context: "attention head shape",
                expected: n * p,
                actual: inputs.iter().map(Vec::len).sum(),
            });
        }
        let transformed: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| {
                let mut v = vec![0.0; p];
                affine(&w.value, &vec![0.0; p], x, &mut v);
                v
            })
            .collect();
        for (i, token) in out.iter_mut().enumerate() {
            let mut acc = vec![0.0; p];
            for (j, v) in transformed.iter().enumerate() {
                let a = w.circulant[(j + n - i) % n];
                for (dst, x) in acc.iter_mut().zip(v) {
                    *dst += a * x;
                }
            }
            token.extend_from_slice(&acc);
        }
    }
    Ok(out)
}
