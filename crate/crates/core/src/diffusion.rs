//! DDPM schedule, corruption, loss and the reverse-time samplers.
//!
//! Sampling state is `f64` and channel-last `[B, L, C]`; the denoiser is any
//! closure returning the predicted noise for a whole state at step `t`.

use icl_tensor::{Elem, Graph, Params, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::models::{Arch, MetaModel};

const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
pub const LINEAR_BETA: (f64, f64) = (1e-4, 2e-2);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub schedule: ScheduleKind,
    pub w_u: f64,
    pub w_y: f64,
    pub warm_start_k: usize,
    /// Shift, in steps, used to build the warm-start prior from a reference.
    pub prior_stride: usize,
}

impl DiffusionConfig {
    pub fn for_arch(arch: Arch) -> Self {
        let w = WeightMask::for_arch(arch);
        Self { t: 100, schedule: ScheduleKind::Cosine, w_u: w.w_u, w_y: w.w_y, warm_start_k: 5, prior_stride: 8 }
    }

    pub fn mask(&self) -> WeightMask {
        WeightMask { w_u: self.w_u, w_y: self.w_y }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.t, self.schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::BadT(0));
        }
        if !(1..=self.t).contains(&self.warm_start_k) {
            return Err(Error::BadK { k: self.warm_start_k, t: self.t });
        }
        self.mask().validate()
    }
}

/// Per-group loss weights: `w_u` over input channels, `w_y` over observation
/// channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMask {
    pub w_u: f64,
    pub w_y: f64,
}

impl WeightMask {
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Diffuser => Self { w_u: 1.0, w_y: 3.0 },
            _ => Self { w_u: 1.0, w_y: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_u >= 0.0 && self.w_y >= 0.0 && self.w_u.is_finite() && self.w_y.is_finite()) {
            return Err(Error::ConfigInvalid(format!("diffusion weights must be >= 0, got ({}, {})", self.w_u, self.w_y)));
        }
        Ok(())
    }

    /// Per-channel weights for the target layout of `arch`. Conditioned
    /// models only generate observations and are weighted uniformly.
    pub fn channel_weights(&self, arch: Arch, d_u: usize, d_y: usize) -> Vec<f64> {
        match arch {
            Arch::Diffuser => {
                let mut w = vec![self.w_u; d_u];
                w.extend(std::iter::repeat_n(self.w_y, d_y));
                w
            }
            _ => vec![1.0; d_y],
        }
    }
}

/// Tables indexed by step `t` in `1..=T` through the accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub t: usize,
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub posterior_variance: Vec<f64>,
}

pub fn make_schedule(t_max: usize, kind: ScheduleKind) -> Result<DiffusionSchedule> {
    if t_max == 0 {
        return Err(Error::BadT(0));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let x = ((t as f64 / t_max as f64) + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            (1..=t_max).map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA)).collect()
        }
        ScheduleKind::Linear => {
            let (lo, hi) = LINEAR_BETA;
            if t_max == 1 {
                vec![lo]
            } else {
                (0..t_max).map(|i| lo + (hi - lo) * i as f64 / (t_max - 1) as f64).collect()
            }
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let posterior_variance = (0..t_max)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
        })
        .collect();
    Ok(DiffusionSchedule { t: t_max, kind, beta, alpha, alpha_bar, posterior_variance })
}

impl DiffusionSchedule {
    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.t {
            return Err(Error::BadT(t));
        }
        Ok(t - 1)
    }

    pub fn beta_at(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.idx(t)?])
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.idx(t)?])
    }

    pub fn posterior_variance_at(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_variance[self.idx(t)?])
    }
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn q_sample(x0: &Tensor<f64>, t: usize, eps: &Tensor<f64>, sched: &DiffusionSchedule) -> Result<Tensor<f64>> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch(format!("q_sample: x0 {:?} vs eps {:?}", x0.shape(), eps.shape())));
    }
    let ab = sched.alpha_bar_at(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Ok(Tensor::new(x0.shape().to_vec(), data)?)
}

/// A noised training batch: one step per leading-axis element.
#[derive(Clone, Debug)]
pub struct NoisedBatch {
    pub ts: Vec<usize>,
    pub eps: Tensor<f64>,
    pub x_t: Tensor<f64>,
}

/// Draws all steps `t ~ U{1..T}` first, then the noise, and corrupts each
/// element of `x0 [B, ...]` at its own step.
pub fn noise_batch<R: Rng + ?Sized>(x0: &Tensor<f64>, sched: &DiffusionSchedule, rng: &mut R) -> Result<NoisedBatch> {
    let b = *x0.shape().first().ok_or_else(|| Error::ShapeMismatch("noise_batch needs a batch axis".into()))?;
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=sched.t)).collect();
    let eps = Tensor::<f64>::randn(x0.shape(), rng);
    let per = x0.numel() / b.max(1);
    let mut x_t = Vec::with_capacity(x0.numel());
    for (i, &t) in ts.iter().enumerate() {
        let ab = sched.alpha_bar_at(t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let r = i * per..(i + 1) * per;
        x_t.extend(x0.data()[r.clone()].iter().zip(&eps.data()[r]).map(|(x, e)| a * x + s * e));
    }
    Ok(NoisedBatch { ts, x_t: Tensor::new(x0.shape().to_vec(), x_t)?, eps })
}

/// `mean((w ⊙ (eps - eps_hat))^2)` with `w` broadcast over the last axis.
pub fn weighted_mse<T: Elem>(g: &mut Graph<T>, eps_hat: Var, eps: &Tensor<f64>, weights: &[f64]) -> Result<Var> {
    let s = g.shape(eps_hat).to_vec();
    if s != eps.shape() || s.last() != Some(&weights.len()) {
        return Err(Error::ShapeMismatch(format!(
            "loss: eps_hat {s:?}, eps {:?}, {} weights",
            eps.shape(),
            weights.len()
        )));
    }
    let e = g.constant(eps.cast());
    let d = g.sub(e, eps_hat)?;
    let w = g.constant(Tensor::from_f64(&[weights.len()], weights)?);
    let d = g.mul(d, w)?;
    let d = g.square(d)?;
    Ok(g.mean(d)?)
}

/// Joint `[B, N, d_u + d_y]` layout, inputs first.
pub fn joint(u: &Tensor<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(Tensor::cat(&[u, y], 2)?)
}

/// Diffusion objective for one normalized batch.
pub fn training_loss<T: Elem, R: Rng + ?Sized>(
    model: &MetaModel,
    g: &mut Graph<T>,
    p: &Params<T>,
    batch: &Batch,
    mask: &WeightMask,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Var> {
    let c = &model.config;
    if sched.t != c.diffusion_steps {
        return Err(Error::ConfigInvalid(format!("schedule has T = {}, model expects {}", sched.t, c.diffusion_steps)));
    }
    let x0: Tensor<f64> = match model.arch() {
        Arch::Diffuser => joint(&batch.u, &batch.y)?.cast(),
        Arch::Cdcnn | Arch::Cdt => batch.fut_y().cast(),
        Arch::RoboMorph => return Err(Error::ConfigInvalid("RoboMorph has no diffusion objective".into())),
    };
    let nb = noise_batch(&x0, sched, rng)?;
    let ctx = if model.arch().is_conditioned() {
        let u = g.constant(batch.u.cast());
        let y = g.constant(batch.ctx_y().cast());
        Some(model.encode_context(g, p, u, y)?)
    } else {
        None
    };
    let x = g.constant(nb.x_t.cast());
    let eps_hat = model.denoise(g, p, x, &nb.ts, ctx.as_ref())?;
    weighted_mse(g, eps_hat, &nb.eps, &mask.channel_weights(model.arch(), c.d_u, c.d_y))
}

/// One reverse step `x_t -> x_{t-1}`; no noise is injected at `t = 1`.
pub fn p_sample_step<F, R>(
    denoise: &mut F,
    x_t: &Tensor<f64>,
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    let i = sched.idx(t)?;
    let eps = denoise(x_t, t)?;
    if eps.shape() != x_t.shape() {
        return Err(Error::ShapeMismatch(format!("denoiser returned {:?} for {:?}", eps.shape(), x_t.shape())));
    }
    let coef = sched.beta[i] / (1.0 - sched.alpha_bar[i]).sqrt();
    let inv = 1.0 / sched.alpha[i].sqrt();
    let mut out: Vec<f64> = x_t.data().iter().zip(eps.data()).map(|(x, e)| (x - coef * e) * inv).collect();
    if t > 1 {
        let sigma = sched.posterior_variance[i].sqrt();
        for v in &mut out {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(Tensor::new(x_t.shape().to_vec(), out)?)
}

/// Known entries for inpainting: values plus a same-length boolean mask.
#[derive(Clone, Copy, Debug)]
pub struct Inpaint<'a> {
    pub known: &'a Tensor<f64>,
    pub mask: &'a [bool],
}

impl Inpaint<'_> {
    fn check(&self, shape: &[usize]) -> Result<()> {
        if self.mask.len() != self.known.numel() || self.known.shape() != shape {
            return Err(Error::MaskShapeMismatch { mask: self.mask.len(), known: self.known.numel() });
        }
        Ok(())
    }

    fn clamp(&self, x: &mut Tensor<f64>) {
        for ((v, &k), &m) in x.data_mut().iter_mut().zip(self.known.data()).zip(self.mask) {
            if m {
                *v = k;
            }
        }
    }
}

fn run_chain<F, R>(
    denoise: &mut F,
    mut x: Tensor<f64>,
    from: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
    inpaint: Option<Inpaint<'_>>,
) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    if let Some(ip) = &inpaint {
        ip.check(x.shape())?;
        ip.clamp(&mut x);
    }
    for t in (1..=from).rev() {
        x = p_sample_step(denoise, &x, t, sched, rng)?;
        if let Some(ip) = &inpaint {
            ip.clamp(&mut x);
        }
    }
    Ok(x)
}

/// Full ancestral chain from `x_T ~ N(0, I)`.
pub fn sample<F, R>(denoise: &mut F, shape: &[usize], sched: &DiffusionSchedule, rng: &mut R) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    let x = Tensor::randn(shape, rng);
    run_chain(denoise, x, sched.t, sched, rng, None)
}

/// Full chain with known entries overwritten by their clean values at the
/// start and after every step.
pub fn inpaint_sample<F, R>(
    denoise: &mut F,
    known: &Tensor<f64>,
    mask: &[bool],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    let ip = Inpaint { known, mask };
    ip.check(known.shape())?;
    let x = Tensor::randn(known.shape(), rng);
    run_chain(denoise, x, sched.t, sched, rng, Some(ip))
}

/// Runs only the last `k` steps, starting from the prior noised to step `k`.
/// At `k = T` the prior is ignored and the start is pure noise, so the call
/// reproduces [`sample`] / [`inpaint_sample`] exactly for the same stream.
pub fn warm_start_sample<F, R>(
    denoise: &mut F,
    prior: &Tensor<f64>,
    k: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
    inpaint: Option<Inpaint<'_>>,
) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>>,
    R: Rng + ?Sized,
{
    if k == 0 || k > sched.t {
        return Err(Error::BadK { k, t: sched.t });
    }
    let eps = Tensor::randn(prior.shape(), rng);
    let x = if k == sched.t { eps } else { q_sample(prior, k, &eps, sched)? };
    run_chain(denoise, x, k, sched, rng, inpaint)
}

/// Warm-start prior from a reference trajectory `[B, L, C]`: shifted left
/// by `stride` steps along axis 1, last value held.
pub fn shifted_prior(reference: &Tensor<f64>, stride: usize) -> Result<Tensor<f64>> {
    let s = reference.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch(format!("prior reference must be [B, L, C], got {s:?}")));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    let src = reference.data();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for i in 0..l {
            let j = (i + stride).min(l - 1);
            let at = (bi * l + j) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Ok(Tensor::new(s.to_vec(), out)?)
}

#[cfg(test)]
mod tests;
