use icl_tensor::nn::{Embedding, Linear};
use icl_tensor::{Elem, Graph, Params, Registry, Tensor, Var};

use crate::error::{Error, Result};

/// Conditioning derived from `(u_{1:N}, y_{1:m})`, all in one graph.
#[derive(Clone, Copy, Debug)]
pub struct ContextEncoding {
    /// `[B, E]`, pooled summary used for FiLM.
    pub cond_vector: Var,
    /// `[B, N, E]`, per-step tokens used as cross-attention memory.
    pub cond_tokens: Var,
    /// `[B, N - m, d_u]`, the inputs over the horizon.
    pub horizon_u: Var,
}

#[derive(Clone, Debug)]
pub struct ContextEncoder {
    tok: Linear,
    pos: Embedding,
    mlp1: Linear,
    mlp2: Linear,
    n: usize,
    m: usize,
    d_u: usize,
    d_y: usize,
}

impl ContextEncoder {
    pub fn new(reg: &mut Registry, name: &str, n: usize, m: usize, d_u: usize, d_y: usize, dim: usize) -> Self {
        Self {
            tok: Linear::new(reg, &format!("{name}.tok"), d_u + d_y + 1, dim),
            pos: Embedding::new(reg, &format!("{name}.pos"), n, dim),
            mlp1: Linear::new(reg, &format!("{name}.mlp1"), dim, dim),
            mlp2: Linear::new(reg, &format!("{name}.mlp2"), dim, dim),
            n,
            m,
            d_u,
            d_y,
        }
    }

    /// Tokens embed `[u_t, y_t (zero for t >= m), 1(t < m)]` plus a learned
    /// position; the vector is a 2-layer MLP of their mean.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, u: Var, y_ctx: Var) -> Result<ContextEncoding> {
        let (us, ys) = (g.shape(u).to_vec(), g.shape(y_ctx).to_vec());
        if us.len() != 3 || ys.len() != 3 || us[0] != ys[0] || us[1..] != [self.n, self.d_u] || ys[1..] != [self.m, self.d_y] {
            return Err(Error::ShapeMismatch(format!(
                "context encoder wants u [B, {}, {}] and y [B, {}, {}], got {us:?} and {ys:?}",
                self.n, self.d_u, self.m, self.d_y
            )));
        }
        let b = us[0];
        let h = self.n - self.m;
        let pad = g.constant(Tensor::zeros(&[b, h, self.d_y]));
        let y_full = g.concat(&[y_ctx, pad], 1)?;
        let mut flag = vec![T::zero(); b * self.n];
        for row in flag.chunks_mut(self.n) {
            row[..self.m].iter_mut().for_each(|v| *v = T::one());
        }
        let flag = g.constant(Tensor::new(vec![b, self.n, 1], flag)?);
        let feats = g.concat(&[u, y_full, flag], 2)?;
        let tokens = self.tok.forward(g, p, feats)?;
        let ids: Vec<usize> = (0..self.n).collect();
        let pos = self.pos.forward(g, p, &ids)?;
        let cond_tokens = g.add(tokens, pos)?;
        let pooled = g.mean_dim(cond_tokens, 1)?;
        let v = self.mlp1.forward(g, p, pooled)?;
        let v = g.mish(v)?;
        let cond_vector = self.mlp2.forward(g, p, v)?;
        let horizon_u = g.slice(u, 1, self.m, self.n)?;
        Ok(ContextEncoding { cond_vector, cond_tokens, horizon_u })
    }
}
