//! Finite-difference checks of every differentiable op and layer on small
//! random instances.

use super::{check, GradReport};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nn::{DecoderBlock, EncoderBlock, GroupNorm, Linear, MultiHeadAttention};
use crate::params::{Init, Params, Registry};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: &'static str,
    pub trials: u64,
    /// Largest per-tensor relative error over all trials.
    pub worst: f64,
    pub worst_tensor: String,
}

fn random_params(seed: u64, specs: &[(&str, &[usize])]) -> Params<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    for (name, shape) in specs {
        p.insert(*name, Tensor::randn(shape, &mut rng));
    }
    p
}

/// Every registered parameter redrawn from N(0, 0.5^2).
pub(crate) fn randomized(reg: &Registry, seed: u64) -> Params<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = reg.init::<f64>(seed);
    for (_, t) in p.iter_mut() {
        *t = Tensor::<f64>::randn(t.shape(), &mut rng).map(|v| 0.5 * v);
    }
    p
}

/// Contracts `out` with a fixed random tensor so each output element gets a
/// different weight in the scalar loss.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919) + 1);
    let r = g.constant(Tensor::randn(g.shape(out), &mut rng));
    let m = g.mul(out, r)?;
    g.sum(m)
}

struct Acc {
    name: &'static str,
    trials: u64,
    worst: f64,
    worst_tensor: String,
}

impl Acc {
    fn new(name: &'static str) -> Self {
        Self { name, trials: 0, worst: 0.0, worst_tensor: String::new() }
    }

    fn add(&mut self, rep: GradReport) {
        self.trials += 1;
        if let Some((t, e)) = rep.worst() {
            if e > self.worst || self.worst_tensor.is_empty() {
                self.worst = e;
                self.worst_tensor = t.to_string();
            }
        }
    }

    fn done(self) -> OpCheck {
        OpCheck { name: self.name, trials: self.trials, worst: self.worst, worst_tensor: self.worst_tensor }
    }
}

fn op<F>(name: &'static str, trials: u64, specs: &[(&str, &[usize])], f: F) -> Result<OpCheck>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let mut acc = Acc::new(name);
    for seed in 0..trials {
        let p = random_params(seed, specs);
        acc.add(check(&p, |g, p| {
            let out = f(g, p)?;
            project(g, out, seed)
        })?);
    }
    Ok(acc.done())
}

fn module<B, F>(name: &'static str, trials: u64, build: B, f: F) -> Result<OpCheck>
where
    B: Fn(&mut Registry, u64) -> Box<dyn Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>>,
    F: Fn(&mut Graph<f64>, &Params<f64>, &dyn Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>) -> Result<Var>,
{
    let mut acc = Acc::new(name);
    for seed in 0..trials {
        let mut reg = Registry::new();
        let fwd = build(&mut reg, seed);
        let p = randomized(&reg, seed);
        acc.add(check(&p, |g, p| {
            let out = f(g, p, &*fwd)?;
            project(g, out, seed)
        })?);
    }
    Ok(acc.done())
}

/// Runs `trials` random instances of every check.
pub fn op_suite(trials: u64) -> Result<Vec<OpCheck>> {
    let t = trials;
    let mut out = vec![
        op("add", t, &[("a", &[2, 3, 4]), ("b", &[4])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.add(a, b)
        })?,
        op("sub", t, &[("a", &[2, 1, 4]), ("b", &[3, 1])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.sub(a, b)
        })?,
        op("mul", t, &[("a", &[2, 3, 4]), ("b", &[2, 1, 4])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.mul(a, b)
        })?,
        op("scale/add_scalar", t, &[("a", &[5])], |g, p| {
            let a = g.param(p, "a")?;
            let s = g.scale(a, -1.7)?;
            g.add_scalar(s, 0.3)
        })?,
        op("square", t, &[("a", &[3, 3])], |g, p| {
            let a = g.param(p, "a")?;
            g.square(a)
        })?,
        op("gelu", t, &[("a", &[4, 5])], |g, p| {
            let a = g.param(p, "a")?;
            let a = g.scale(a, 2.0)?;
            g.gelu(a)
        })?,
        op("mish", t, &[("a", &[4, 5])], |g, p| {
            let a = g.param(p, "a")?;
            let a = g.scale(a, 2.0)?;
            g.mish(a)
        })?,
        op("mean", t, &[("a", &[3, 4])], |g, p| {
            let a = g.param(p, "a")?;
            let sq = g.square(a)?;
            g.mean(sq)
        })?,
        op("mean_dim", t, &[("a", &[2, 3, 4])], |g, p| {
            let a = g.param(p, "a")?;
            let sq = g.square(a)?;
            g.mean_dim(sq, 1)
        })?,
        op("matmul shared", t, &[("a", &[2, 3, 4]), ("b", &[4, 5])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.matmul(a, b)
        })?,
        op("matmul batched", t, &[("a", &[2, 2, 3, 4]), ("b", &[2, 2, 4, 2])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.matmul(a, b)
        })?,
        op("swap_axes/reshape", t, &[("a", &[2, 3, 4])], |g, p| {
            let a = g.param(p, "a")?;
            let s = g.swap_axes(a, 0, 2)?;
            let s = g.reshape(s, &[4, 6])?;
            g.square(s)
        })?,
        op("concat/slice", t, &[("a", &[2, 3, 4]), ("b", &[2, 2, 4])], |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let c = g.concat(&[a, b], 1)?;
            let s = g.slice(c, 1, 1, 4)?;
            g.square(s)
        })?,
        op("embedding", t, &[("t", &[5, 3])], |g, p| {
            let tb = g.param(p, "t")?;
            let e = g.embedding(tb, &[4, 0, 4, 2])?;
            g.square(e)
        })?,
        op("softmax", t, &[("a", &[2, 4, 4])], |g, p| {
            let a = g.param(p, "a")?;
            g.softmax(a, false)
        })?,
        op("softmax causal", t, &[("a", &[2, 4, 4])], |g, p| {
            let a = g.param(p, "a")?;
            g.softmax(a, true)
        })?,
        op("layer_norm", t, &[("x", &[3, 6]), ("gain", &[6]), ("bias", &[6])], |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "gain")?, g.param(p, "bias")?);
            g.layer_norm(x, w, b)
        })?,
        op("group_norm", t, &[("x", &[2, 4, 5]), ("gain", &[4]), ("bias", &[4])], |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "gain")?, g.param(p, "bias")?);
            g.group_norm(x, w, b, 2)
        })?,
        op("conv1d", t, &[("x", &[2, 3, 7]), ("w", &[4, 3, 5]), ("b", &[4])], |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv1d(x, w, Some(b), 1, 2)
        })?,
        op("conv1d stride 2", t, &[("x", &[2, 3, 8]), ("w", &[3, 3, 3]), ("b", &[3])], |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv1d(x, w, Some(b), 2, 1)
        })?,
        op("conv_transpose1d", t, &[("x", &[2, 3, 4]), ("w", &[3, 2, 4]), ("b", &[2])], |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv_transpose1d(x, w, Some(b), 2, 1)
        })?,
        op("film", t, &[("x", &[2, 3, 4]), ("s", &[2, 3]), ("h", &[2, 3])], |g, p| {
            let (x, s, h) = (g.param(p, "x")?, g.param(p, "s")?, g.param(p, "h")?);
            g.film(x, s, h)
        })?,
    ];
    out.push(module(
        "conv/groupnorm/film cell",
        t,
        |reg, _| {
            let gn = GroupNorm::new(reg, "gn", 4, 2);
            let cond = Linear::new(reg, "cond", 3, 8);
            reg.add("conv.weight", &[4, 2, 5], Init::Zeros);
            reg.add("x", &[2, 2, 6], Init::Zeros);
            reg.add("c", &[2, 3], Init::Zeros);
            Box::new(move |g, p| {
                let (x, w, c) = (g.param(p, "x")?, g.param(p, "conv.weight")?, g.param(p, "c")?);
                let h = g.conv1d(x, w, None, 1, 2)?;
                let h = gn.forward(g, p, h)?;
                let h = g.mish(h)?;
                let c = g.mish(c)?;
                let ss = cond.forward(g, p, c)?;
                let scale = g.slice(ss, 1, 0, 4)?;
                let scale = g.add_scalar(scale, 1.0)?;
                let shift = g.slice(ss, 1, 4, 8)?;
                g.film(h, scale, shift)
            })
        },
        |g, p, f| f(g, p),
    )?);
    out.push(module(
        "multi-head cross attention",
        t,
        |reg, _| {
            let mha = MultiHeadAttention::new(reg, "att", 4, 2);
            reg.add("q", &[2, 3, 4], Init::Zeros);
            reg.add("kv", &[2, 5, 4], Init::Zeros);
            Box::new(move |g, p| {
                let (q, kv) = (g.param(p, "q")?, g.param(p, "kv")?);
                mha.forward(g, p, q, kv, false)
            })
        },
        |g, p, f| f(g, p),
    )?);
    out.push(module(
        "encoder/decoder blocks",
        t,
        |reg, seed| {
            let enc = EncoderBlock::new(reg, "enc", 4, 2);
            let dec = DecoderBlock::new(reg, "dec", 4, 2, seed % 2 == 0);
            reg.add("src", &[2, 3, 4], Init::Zeros);
            reg.add("tgt", &[2, 3, 4], Init::Zeros);
            Box::new(move |g, p| {
                let (src, tgt) = (g.param(p, "src")?, g.param(p, "tgt")?);
                let mem = enc.forward(g, p, src)?;
                dec.forward(g, p, tgt, mem)
            })
        },
        |g, p, f| f(g, p),
    )?);
    Ok(out)
}
