use icl_tensor::nn::{DecoderBlock, Embedding, LayerNorm, Linear};
use icl_tensor::{Elem, Graph, Params, Registry, Var};

use super::context::ContextEncoding;
use super::unet::TimeMlp;
use super::ModelConfig;
use crate::error::{Error, Result};

/// Transformer denoiser over horizon tokens with cross-attention to the
/// context tokens.
#[derive(Clone, Debug)]
pub struct Cdt {
    tok: Linear,
    pos: Embedding,
    time: TimeMlp,
    blocks: Vec<DecoderBlock>,
    ln: LayerNorm,
    head: Linear,
    horizon: usize,
    d_y: usize,
}

impl Cdt {
    pub fn new(reg: &mut Registry, c: &ModelConfig, zero_final: bool) -> Self {
        let (e, h) = (c.transformer.embed_dim, c.transformer.heads);
        let horizon = c.horizon();
        Self {
            tok: Linear::new(reg, "tok", c.d_y + c.d_u, e),
            pos: Embedding::new(reg, "pos", horizon, e),
            time: TimeMlp::new(reg, "time", e),
            blocks: (0..c.transformer.blocks).map(|i| DecoderBlock::new(reg, &format!("blk.{i}"), e, h, false)).collect(),
            ln: LayerNorm::new(reg, "ln", e),
            head: if zero_final { Linear::zeroed(reg, "head", e, c.d_y) } else { Linear::new(reg, "head", e, c.d_y) },
            horizon,
            d_y: c.d_y,
        }
    }

    /// `y_t [B, N - m, d_y]` -> `[B, N - m, d_y]`.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, y_t: Var, ts: &[usize], ctx: &ContextEncoding) -> Result<Var> {
        let s = g.shape(y_t).to_vec();
        if s.len() != 3 || s[1..] != [self.horizon, self.d_y] {
            return Err(Error::ShapeMismatch(format!("cdt wants [B, {}, {}], got {s:?}", self.horizon, self.d_y)));
        }
        let b = s[0];
        let x = g.concat(&[y_t, ctx.horizon_u], 2)?;
        let h = self.tok.forward(g, p, x)?;
        let ids: Vec<usize> = (0..self.horizon).collect();
        let pe = self.pos.forward(g, p, &ids)?;
        let h = g.add(h, pe)?;
        let temb = self.time.forward(g, p, ts)?;
        let c = g.add(temb, ctx.cond_vector)?;
        let e = g.shape(c)[1];
        let c = g.reshape(c, &[b, 1, e])?;
        let mut h = g.add(h, c)?;
        for blk in &self.blocks {
            h = blk.forward(g, p, h, ctx.cond_tokens)?;
        }
        let h = self.ln.forward(g, p, h)?;
        Ok(self.head.forward(g, p, h)?)
    }
}
