//! 1-D temporal U-Net with FiLM-conditioned residual blocks.

use icl_tensor::nn::{sinusoidal_embedding, Conv1d, Downsample1d, GroupNorm, Linear, Upsample1d};
use icl_tensor::{Elem, Graph, Params, Registry, Var};

use crate::error::Result;

const KERNEL: usize = 5;

fn groups(channels: usize) -> usize {
    let (mut a, mut b) = (8usize, channels);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// conv -> group norm -> Mish
#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv1d,
    gn: GroupNorm,
}

impl ConvBlock {
    fn new(reg: &mut Registry, name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            conv: Conv1d::same(reg, &format!("{name}.conv"), c_in, c_out, KERNEL),
            gn: GroupNorm::new(reg, &format!("{name}.gn"), c_out, groups(c_out)),
        }
    }

    fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        let h = self.gn.forward(g, p, h)?;
        Ok(g.mish(h)?)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: ConvBlock,
    c2: ConvBlock,
    film: Linear,
    res: Option<Conv1d>,
    c_out: usize,
}

impl ResBlock {
    fn new(reg: &mut Registry, name: &str, c_in: usize, c_out: usize, cond_dim: usize) -> Self {
        Self {
            c1: ConvBlock::new(reg, &format!("{name}.block1"), c_in, c_out),
            c2: ConvBlock::new(reg, &format!("{name}.block2"), c_out, c_out),
            film: Linear::new(reg, &format!("{name}.film"), cond_dim, 2 * c_out),
            res: (c_in != c_out).then(|| Conv1d::same(reg, &format!("{name}.res"), c_in, c_out, 1)),
            c_out,
        }
    }

    /// `cond` is the already-activated conditioning vector `[B, cond_dim]`.
    fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var, cond: Var) -> Result<Var> {
        let h = self.c1.forward(g, p, x)?;
        let ss = self.film.forward(g, p, cond)?;
        let scale = g.slice(ss, 1, 0, self.c_out)?;
        let scale = g.add_scalar(scale, 1.0)?;
        let shift = g.slice(ss, 1, self.c_out, 2 * self.c_out)?;
        let h = g.film(h, scale, shift)?;
        let h = self.c2.forward(g, p, h)?;
        let skip = match &self.res {
            Some(r) => r.forward(g, p, x)?,
            None => x,
        };
        Ok(g.add(h, skip)?)
    }
}

/// Sinusoidal step embedding followed by a Mish MLP.
#[derive(Clone, Debug)]
pub struct TimeMlp {
    l1: Linear,
    l2: Linear,
    dim: usize,
}

impl TimeMlp {
    pub fn new(reg: &mut Registry, name: &str, dim: usize) -> Self {
        Self {
            l1: Linear::new(reg, &format!("{name}.l1"), dim, 4 * dim),
            l2: Linear::new(reg, &format!("{name}.l2"), 4 * dim, dim),
            dim,
        }
    }

    /// `[ts.len(), dim]`
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, ts: &[usize]) -> Result<Var> {
        let steps: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
        let e = g.constant(sinusoidal_embedding(&steps, self.dim));
        let h = self.l1.forward(g, p, e)?;
        let h = g.mish(h)?;
        Ok(self.l2.forward(g, p, h)?)
    }
}

struct DownLevel {
    r1: ResBlock,
    r2: ResBlock,
    down: Option<Downsample1d>,
}

struct UpLevel {
    r1: ResBlock,
    r2: ResBlock,
    up: Upsample1d,
}

/// Channels `base * 2^i` at level `i = 0..=down_steps`; sequence lengths must
/// be divisible by `2^down_steps`.
pub struct UNet {
    time: TimeMlp,
    downs: Vec<DownLevel>,
    mid: (ResBlock, ResBlock),
    ups: Vec<UpLevel>,
    last: ConvBlock,
    out: Conv1d,
}

impl std::fmt::Debug for UNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "UNet({} levels)", self.downs.len())
    }
}

impl UNet {
    pub fn new(
        reg: &mut Registry,
        name: &str,
        c_in: usize,
        c_out: usize,
        base: usize,
        down_steps: usize,
        extra_cond: usize,
        zero_final: bool,
    ) -> Self {
        let time = TimeMlp::new(reg, &format!("{name}.time"), base);
        let cond = base + extra_cond;
        let ch: Vec<usize> = (0..=down_steps).map(|i| base << i).collect();
        let mut prev = c_in;
        let mut downs = Vec::new();
        for (i, &c) in ch.iter().enumerate() {
            downs.push(DownLevel {
                r1: ResBlock::new(reg, &format!("{name}.down.{i}.res1"), prev, c, cond),
                r2: ResBlock::new(reg, &format!("{name}.down.{i}.res2"), c, c, cond),
                down: (i < down_steps).then(|| Downsample1d::new(reg, &format!("{name}.down.{i}.down"), c)),
            });
            prev = c;
        }
        let top = ch[down_steps];
        let mid = (
            ResBlock::new(reg, &format!("{name}.mid.res1"), top, top, cond),
            ResBlock::new(reg, &format!("{name}.mid.res2"), top, top, cond),
        );
        let ups = (1..=down_steps)
            .rev()
            .map(|i| UpLevel {
                r1: ResBlock::new(reg, &format!("{name}.up.{i}.res1"), 2 * ch[i], ch[i - 1], cond),
                r2: ResBlock::new(reg, &format!("{name}.up.{i}.res2"), ch[i - 1], ch[i - 1], cond),
                up: Upsample1d::new(reg, &format!("{name}.up.{i}.up"), ch[i - 1]),
            })
            .collect();
        let last = ConvBlock::new(reg, &format!("{name}.final"), base, base);
        let out = if zero_final {
            Conv1d::zeroed(reg, &format!("{name}.out"), base, c_out, 1)
        } else {
            Conv1d::same(reg, &format!("{name}.out"), base, c_out, 1)
        };
        Self { time, downs, mid, ups, last, out }
    }

    pub fn factor(&self) -> usize {
        1 << self.ups.len()
    }

    /// `x [B, c_in, L]` -> `[B, c_out, L]`; `extra` is `[B, extra_cond]`.
    pub fn forward<T: Elem>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var, ts: &[usize], extra: Option<Var>) -> Result<Var> {
        let temb = self.time.forward(g, p, ts)?;
        let cond = match extra {
            Some(e) => g.concat(&[temb, e], 1)?,
            None => temb,
        };
        let cond = g.mish(cond)?;
        let mut h = x;
        let mut skips = Vec::new();
        for lvl in &self.downs {
            h = lvl.r1.forward(g, p, h, cond)?;
            h = lvl.r2.forward(g, p, h, cond)?;
            skips.push(h);
            if let Some(d) = &lvl.down {
                h = d.forward(g, p, h)?;
            }
        }
        h = self.mid.0.forward(g, p, h, cond)?;
        h = self.mid.1.forward(g, p, h, cond)?;
        for lvl in &self.ups {
            let skip = skips.pop().expect("one skip per level");
            h = g.concat(&[h, skip], 1)?;
            h = lvl.r1.forward(g, p, h, cond)?;
            h = lvl.r2.forward(g, p, h, cond)?;
            h = lvl.up.forward(g, p, h)?;
        }
        let h = self.last.forward(g, p, h)?;
        Ok(self.out.forward(g, p, h)?)
    }
}
