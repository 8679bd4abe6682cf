use icl_tensor::nn::{DecoderBlock, Embedding, EncoderBlock, LayerNorm, Linear};
use icl_tensor::{Elem, Graph, Params, Registry, Var};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Deterministic encoder-decoder transformer: the encoder reads context
/// `(u_t, y_t)` pairs, the decoder reads future inputs causally and
/// cross-attends to the encoder memory.
#[derive(Clone, Debug)]
pub struct RoboMorph {
    enc_in: Linear,
    dec_in: Linear,
    pos: Embedding,
    enc: Vec<EncoderBlock>,
    enc_ln: LayerNorm,
    dec: Vec<DecoderBlock>,
    dec_ln: LayerNorm,
    head: Linear,
    n: usize,
    m: usize,
}

impl RoboMorph {
    pub fn new(reg: &mut Registry, c: &ModelConfig) -> Self {
        let (e, h) = (c.transformer.embed_dim, c.transformer.heads);
        let n_enc = c.transformer.blocks / 2;
        let n_dec = c.transformer.blocks - n_enc;
        Self {
            enc_in: Linear::new(reg, "enc_in", c.d_u + c.d_y, e),
            dec_in: Linear::new(reg, "dec_in", c.d_u, e),
            pos: Embedding::new(reg, "pos", c.n_steps, e),
            enc: (0..n_enc).map(|i| EncoderBlock::new(reg, &format!("enc.{i}"), e, h)).collect(),
            enc_ln: LayerNorm::new(reg, "enc_ln", e),
            dec: (0..n_dec).map(|i| DecoderBlock::new(reg, &format!("dec.{i}"), e, h, true)).collect(),
            dec_ln: LayerNorm::new(reg, "dec_ln", e),
            head: Linear::new(reg, "head", e, c.d_y),
            n: c.n_steps,
            m: c.context,
        }
    }

    /// `ctx_u [B, m, d_u]`, `ctx_y [B, m, d_y]`, `fut_u [B, N - m, d_u]` ->
    /// `[B, N - m, d_y]`.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, ctx_u: Var, ctx_y: Var, fut_u: Var) -> Result<Var> {
        let (a, b, f) = (g.shape(ctx_u).to_vec(), g.shape(ctx_y).to_vec(), g.shape(fut_u).to_vec());
        if a.len() != 3 || b.len() != 3 || f.len() != 3 || a[1] != self.m || b[1] != self.m || f[1] != self.n - self.m {
            return Err(Error::ShapeMismatch(format!("robomorph inputs {a:?}, {b:?}, {f:?} (m = {}, N = {})", self.m, self.n)));
        }
        let ctx = g.concat(&[ctx_u, ctx_y], 2)?;
        let x = self.enc_in.forward(g, p, ctx)?;
        let ids: Vec<usize> = (0..self.m).collect();
        let pe = self.pos.forward(g, p, &ids)?;
        let mut x = g.add(x, pe)?;
        for blk in &self.enc {
            x = blk.forward(g, p, x)?;
        }
        let memory = self.enc_ln.forward(g, p, x)?;

        let h = self.dec_in.forward(g, p, fut_u)?;
        let ids: Vec<usize> = (self.m..self.n).collect();
        let pe = self.pos.forward(g, p, &ids)?;
        let mut h = g.add(h, pe)?;
        for blk in &self.dec {
            h = blk.forward(g, p, h, memory)?;
        }
        let h = self.dec_ln.forward(g, p, h)?;
        Ok(self.head.forward(g, p, h)?)
    }
}
