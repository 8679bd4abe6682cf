//! Parameterized layers. Each layer registers its parameters once, at build
//! time, and looks them up by name on every forward pass.

use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, Params, Registry};
use crate::tensor::Tensor;

/// Init std for dense projections.
pub const PROJ_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(reg: &mut Registry, name: &str, d_in: usize, d_out: usize) -> Self {
        Self::with_init(reg, name, d_in, d_out, Init::TruncNormal(PROJ_STD))
    }

    pub fn zeroed(reg: &mut Registry, name: &str, d_in: usize, d_out: usize) -> Self {
        Self::with_init(reg, name, d_in, d_out, Init::Zeros)
    }

    pub fn with_init(reg: &mut Registry, name: &str, d_in: usize, d_out: usize, init: Init) -> Self {
        Self {
            w: reg.add(format!("{name}.weight"), &[d_in, d_out], init),
            b: reg.add(format!("{name}.bias"), &[d_out], Init::Zeros),
            d_in,
            d_out,
        }
    }

    /// `[..., d_in] -> [..., d_out]`.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let w = g.param(p, &self.w)?;
        let b = g.param(p, &self.b)?;
        let h = g.matmul(x, w)?;
        g.add(h, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: String,
    bias: String,
}

impl LayerNorm {
    pub fn new(reg: &mut Registry, name: &str, dim: usize) -> Self {
        Self {
            gain: reg.add(format!("{name}.gain"), &[dim], Init::Ones),
            bias: reg.add(format!("{name}.bias"), &[dim], Init::Zeros),
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let gain = g.param(p, &self.gain)?;
        let bias = g.param(p, &self.bias)?;
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(reg: &mut Registry, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "embedding dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(reg, &format!("{name}.q"), dim, dim),
            k: Linear::new(reg, &format!("{name}.k"), dim, dim),
            v: Linear::new(reg, &format!("{name}.v"), dim, dim),
            out: Linear::new(reg, &format!("{name}.out"), dim, dim),
            heads,
            dim,
        }
    }

    fn split_heads<T: Elem>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let x = g.reshape(x, &[s[0], s[1], self.heads, self.dim / self.heads])?;
        g.swap_axes(x, 1, 2)
    }

    /// `q_src: [b, lq, dim]`, `kv_src: [b, lk, dim]` -> `[b, lq, dim]`. With
    /// `causal`, query `i` only sees keys `0..=i` (requires `lq == lk`).
    pub fn forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        p: &Params<T>,
        q_src: Var,
        kv_src: Var,
        causal: bool,
    ) -> Result<Var> {
        let (qs, ks) = (g.shape(q_src).to_vec(), g.shape(kv_src).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return shape_err("multi_head_attention", format!("q {qs:?}, kv {ks:?}, dim {}", self.dim));
        }
        let q = self.q.forward(g, p, q_src)?;
        let k = self.k.forward(g, p, kv_src)?;
        let v = self.v.forward(g, p, kv_src)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;
        let kt = g.swap_axes(k, 2, 3)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt())?;
        let att = g.softmax(scores, causal)?;
        let ctx = g.matmul(att, v)?;
        let ctx = g.swap_axes(ctx, 1, 2)?;
        let ctx = g.reshape(ctx, &[qs[0], qs[1], self.dim])?;
        self.out.forward(g, p, ctx)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(reg: &mut Registry, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(reg, &format!("{name}.up"), dim, hidden),
            down: Linear::new(reg, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}

/// Pre-norm self-attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl EncoderBlock {
    pub fn new(reg: &mut Registry, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(reg, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(reg, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(reg, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(reg, &format!("{name}.ff"), dim, 4 * dim),
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h, h, false)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.ff.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Pre-norm self-attention, cross-attention to a memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
    causal: bool,
}

impl DecoderBlock {
    pub fn new(reg: &mut Registry, name: &str, dim: usize, heads: usize, causal: bool) -> Self {
        Self {
            ln1: LayerNorm::new(reg, &format!("{name}.ln1"), dim),
            self_attn: MultiHeadAttention::new(reg, &format!("{name}.self_attn"), dim, heads),
            ln2: LayerNorm::new(reg, &format!("{name}.ln2"), dim),
            cross_attn: MultiHeadAttention::new(reg, &format!("{name}.cross_attn"), dim, heads),
            ln3: LayerNorm::new(reg, &format!("{name}.ln3"), dim),
            ff: FeedForward::new(reg, &format!("{name}.ff"), dim, 4 * dim),
            causal,
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var, memory: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let h = self.self_attn.forward(g, p, h, h, self.causal)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.cross_attn.forward(g, p, h, memory, false)?;
        let x = g.add(x, h)?;
        let h = self.ln3.forward(g, p, x)?;
        let h = self.ff.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Convolution over `[batch, channels, length]` with bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: String,
    b: String,
    stride: usize,
    pad: usize,
}

impl Conv1d {
    /// Stride-1 convolution that preserves length (odd `kernel`).
    pub fn same(reg: &mut Registry, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same-padding needs an odd kernel");
        Self::new(reg, name, c_in, c_out, kernel, 1, kernel / 2, Init::TruncNormal(fan_in_std(c_in * kernel)))
    }

    pub fn zeroed(reg: &mut Registry, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self::new(reg, name, c_in, c_out, kernel, 1, kernel / 2, Init::Zeros)
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        reg: &mut Registry,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        Self {
            w: reg.add(format!("{name}.weight"), &[c_out, c_in, kernel], init),
            b: reg.add(format!("{name}.bias"), &[c_out], Init::Zeros),
            stride,
            pad,
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let w = g.param(p, &self.w)?;
        let b = g.param(p, &self.b)?;
        g.conv1d(x, w, Some(b), self.stride, self.pad)
    }
}

fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Halves the length: kernel 3, stride 2, pad 1.
#[derive(Clone, Debug)]
pub struct Downsample1d(Conv1d);

impl Downsample1d {
    pub fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        let init = Init::TruncNormal(fan_in_std(channels * 3));
        Self(Conv1d::new(reg, name, channels, channels, 3, 2, 1, init))
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        self.0.forward(g, p, x)
    }
}

/// Doubles the length: transposed conv, kernel 4, stride 2, pad 1.
#[derive(Clone, Debug)]
pub struct Upsample1d {
    w: String,
    b: String,
}

impl Upsample1d {
    pub fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        Self {
            w: reg.add(format!("{name}.weight"), &[channels, channels, 4], Init::TruncNormal(fan_in_std(channels * 2))),
            b: reg.add(format!("{name}.bias"), &[channels], Init::Zeros),
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let w = g.param(p, &self.w)?;
        let b = g.param(p, &self.b)?;
        g.conv_transpose1d(x, w, Some(b), 2, 1)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gain: String,
    bias: String,
    groups: usize,
}

impl GroupNorm {
    pub fn new(reg: &mut Registry, name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "{channels} channels not divisible into {groups} groups");
        Self {
            gain: reg.add(format!("{name}.gain"), &[channels], Init::Ones),
            bias: reg.add(format!("{name}.bias"), &[channels], Init::Zeros),
            groups,
        }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let gain = g.param(p, &self.gain)?;
        let bias = g.param(p, &self.bias)?;
        g.group_norm(x, gain, bias, self.groups)
    }
}

/// Learned lookup table, `[rows, dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: String,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(reg: &mut Registry, name: &str, rows: usize, dim: usize) -> Self {
        Self { table: reg.add(format!("{name}.table"), &[rows, dim], Init::TruncNormal(PROJ_STD)), rows, dim }
    }

    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, ids: &[usize]) -> Result<Var> {
        let t = g.param(p, &self.table)?;
        g.embedding(t, ids)
    }
}

/// Transformer-style sinusoidal embedding of (possibly fractional) steps:
/// `[sin(t·f_0), .., sin(t·f_{h-1}), cos(t·f_0), .., cos(t·f_{h-1})]` with
/// `f_i = 10000^(-i/(h-1))`, `h = dim / 2`. Returns `[ts.len(), dim]`.
pub fn sinusoidal_embedding<T: Elem>(ts: &[f64], dim: usize) -> Tensor<T> {
    assert!(dim >= 2 && dim % 2 == 0, "sinusoidal embedding needs an even dim >= 2");
    let half = dim / 2;
    let denom = (half.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / denom).exp());
        data.extend(freqs.clone().map(|f| T::lit((t * f).sin())));
        data.extend(freqs.map(|f| T::lit((t * f).cos())));
    }
    Tensor::new(vec![ts.len(), dim], data).expect("shape")
}
