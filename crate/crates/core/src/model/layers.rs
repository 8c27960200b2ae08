//! Transformer building blocks composed only from differentiable tensor ops.

use candle_core::{Module, Tensor, D};
use candle_nn::{Init, Linear, VarBuilder};

use crate::error::Result;

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints(dim, "weight", Init::Const(1.0))?;
        let bias = vb.get_with_hints(dim, "bias", Init::Const(0.0))?;
        Ok(Self { weight, bias, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

pub fn linear(input: usize, output: usize, vb: VarBuilder) -> Result<Linear> {
    Ok(candle_nn::linear(input, output, vb)?)
}

/// Linear layer initialised to zero weights and a constant bias.
pub fn linear_const(input: usize, output: usize, bias: f64, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((output, input), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(output, "bias", Init::Const(bias))?;
    Ok(Linear::new(w, Some(b)))
}

/// Multi-layer perceptron with ReLU between layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(dims: &[usize], vb: VarBuilder) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| linear(w[0], w[1], vb.pp(i.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Same as [`Mlp::new`] but the last layer starts at zero output.
    pub fn new_zero_last(dims: &[usize], vb: VarBuilder) -> Result<Self> {
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i + 1 == n {
                    linear_const(w[0], w[1], 0.0, vb.pp(i.to_string()))
                } else {
                    linear(w[0], w[1], vb.pp(i.to_string()))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(&x)?;
            if i + 1 < self.layers.len() {
                x = x.relu()?;
            }
        }
        Ok(x)
    }
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, c) = x.dims3()?;
    Ok(x.reshape((b, n, heads, c / heads))?.transpose(1, 2)?.contiguous()?)
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, n, c) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, n, h * c))?)
}

/// Scaled dot-product attention on `[B, h, N, c]` tensors.
fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let scale = (q.dim(D::Minus1)? as f64).sqrt();
    let logits = (q.matmul(&k.t()?.contiguous()?)? / scale)?;
    let weights = candle_nn::ops::softmax(&logits, D::Minus1)?;
    Ok(weights.matmul(v)?)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(d: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            q: linear(d, d, vb.pp("q"))?,
            k: linear(d, d, vb.pp("k"))?,
            v: linear(d, d, vb.pp("v"))?,
            out: linear(d, d, vb.pp("out"))?,
            heads,
        })
    }

    /// `query` is `[B, Nq, d]`; `key` and `value` are `[B, Nk, d]`.
    pub fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<Tensor> {
        let q = split_heads(&self.q.forward(query)?, self.heads)?;
        let k = split_heads(&self.k.forward(key)?, self.heads)?;
        let v = split_heads(&self.v.forward(value)?, self.heads)?;
        Ok(self.out.forward(&merge_heads(&attend(&q, &k, &v)?)?)?)
    }
}

/// Cross-attention with separate content and spatial parts whose per-head
/// products are summed (equivalently, per-head concatenation of the two
/// query/key halves).
#[derive(Debug, Clone)]
pub struct ConditionalCrossAttention {
    q_content: Linear,
    q_spatial: Linear,
    k_content: Linear,
    k_spatial: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl ConditionalCrossAttention {
    pub fn new(d: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            q_content: linear(d, d, vb.pp("q_content"))?,
            q_spatial: linear(d, d, vb.pp("q_spatial"))?,
            k_content: linear(d, d, vb.pp("k_content"))?,
            k_spatial: linear(d, d, vb.pp("k_spatial"))?,
            v: linear(d, d, vb.pp("v"))?,
            out: linear(d, d, vb.pp("out"))?,
            heads,
        })
    }

    /// `content` and `spatial` are `[B, Nq, d]`; `memory` is `[B, Nk, d]` and
    /// `memory_pos` is `[Nk, d]` (broadcast over the batch).
    pub fn forward(&self, content: &Tensor, spatial: &Tensor, memory: &Tensor, memory_pos: &Tensor) -> Result<Tensor> {
        let b = memory.dim(0)?;
        let pos = memory_pos.unsqueeze(0)?.broadcast_as((b, memory_pos.dim(0)?, memory_pos.dim(1)?))?;
        let q = Tensor::cat(
            &[
                split_heads(&self.q_content.forward(content)?, self.heads)?,
                split_heads(&self.q_spatial.forward(spatial)?, self.heads)?,
            ],
            D::Minus1,
        )?;
        let k = Tensor::cat(
            &[
                split_heads(&self.k_content.forward(memory)?, self.heads)?,
                split_heads(&self.k_spatial.forward(&pos.contiguous()?)?, self.heads)?,
            ],
            D::Minus1,
        )?;
        let v = split_heads(&self.v.forward(memory)?, self.heads)?;
        Ok(self.out.forward(&merge_heads(&attend(&q, &k, &v)?)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(d: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self { up: linear(d, hidden, vb.pp("up"))?, down: linear(hidden, d, vb.pp("down"))? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.down.forward(&self.up.forward(x)?.relu()?)?)
    }
}
