//! Horizon prediction for any architecture on normalized tensors.

use icl_tensor::{Graph, Params, Tensor};
use rand::Rng;

use crate::diffusion::{self, DiffusionSchedule, Inpaint};
use crate::error::{Error, Result};
use crate::models::{Arch, MetaModel};

/// How a diffusion model produces its sample.
#[derive(Clone, Debug)]
pub enum SampleMode {
    /// All `T` steps from pure noise.
    Full,
    /// The last `k` steps from a normalized horizon prior `[B, N - m, d_y]`.
    WarmStart { k: usize, prior: Tensor<f64> },
}

/// Noise predictor bound to one conditioning batch. `u [B, N, d_u]` and
/// `y_ctx [B, m, d_y]` are normalized.
pub fn model_denoiser<'a>(
    model: &'a MetaModel,
    params: &'a Params<f32>,
    u: &'a Tensor<f32>,
    y_ctx: &'a Tensor<f32>,
) -> impl FnMut(&Tensor<f64>, usize) -> Result<Tensor<f64>> + 'a {
    move |x: &Tensor<f64>, t: usize| {
        let mut g = Graph::inference();
        let ctx = if model.arch().is_conditioned() {
            let (u, y) = (g.constant(u.clone()), g.constant(y_ctx.clone()));
            Some(model.encode_context(&mut g, params, u, y)?)
        } else {
            None
        };
        let xv = g.constant(x.cast());
        let ts = vec![t; x.shape()[0]];
        let out = model.denoise(&mut g, params, xv, &ts, ctx.as_ref())?;
        Ok(g.value(out).cast())
    }
}

/// Known values and mask for Diffuser inpainting: every input channel and
/// the context observations.
pub fn diffuser_known(u: &Tensor<f32>, y_ctx: &Tensor<f32>, horizon_y: Option<&Tensor<f64>>) -> Result<(Tensor<f64>, Vec<bool>)> {
    let (us, ys) = (u.shape(), y_ctx.shape());
    let (b, n, du, m, dy) = (us[0], us[1], us[2], ys[1], ys[2]);
    let h = n - m;
    if let Some(p) = horizon_y {
        if p.shape() != [b, h, dy] {
            return Err(Error::ShapeMismatch(format!("horizon prior {:?}, expected [{b}, {h}, {dy}]", p.shape())));
        }
    }
    let c = du + dy;
    let mut known = vec![0.0; b * n * c];
    let mut mask = vec![false; b * n * c];
    for bi in 0..b {
        for t in 0..n {
            let at = (bi * n + t) * c;
            for j in 0..du {
                known[at + j] = u.data()[(bi * n + t) * du + j] as f64;
                mask[at + j] = true;
            }
            for j in 0..dy {
                if t < m {
                    known[at + du + j] = y_ctx.data()[(bi * m + t) * dy + j] as f64;
                    mask[at + du + j] = true;
                } else if let Some(p) = horizon_y {
                    known[at + du + j] = p.data()[(bi * h + t - m) * dy + j];
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, n, c], known)?, mask))
}

/// Normalized `[B, N - m, d_y]` prediction from normalized `u [B, N, d_u]`
/// and `y_ctx [B, m, d_y]`.
pub fn predict_horizon<R: Rng + ?Sized>(
    model: &MetaModel,
    params: &Params<f32>,
    sched: Option<&DiffusionSchedule>,
    u: &Tensor<f32>,
    y_ctx: &Tensor<f32>,
    mode: &SampleMode,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let c = &model.config;
    let (us, ys) = (u.shape(), y_ctx.shape());
    if us.len() != 3 || ys.len() != 3 || us[0] != ys[0] || us[1..] != [c.n_steps, c.d_u] || ys[1..] != [c.context, c.d_y] {
        return Err(Error::ShapeMismatch(format!("predict_horizon got u {us:?}, y_ctx {ys:?}")));
    }
    let b = us[0];
    if model.arch() == Arch::RoboMorph {
        let mut g = Graph::inference();
        let cu = g.constant(u.narrow(1, 0, c.context)?);
        let cy = g.constant(y_ctx.clone());
        let fu = g.constant(u.narrow(1, c.context, c.n_steps)?);
        let out = model.robomorph_forward(&mut g, params, cu, cy, fu)?;
        return Ok(g.value(out).clone());
    }
    let sched = sched.ok_or_else(|| Error::ConfigInvalid(format!("{} needs a diffusion schedule", c.arch)))?;
    let mut denoise = model_denoiser(model, params, u, y_ctx);
    let out = match (model.arch(), mode) {
        (Arch::Diffuser, SampleMode::Full) => {
            let (known, mask) = diffuser_known(u, y_ctx, None)?;
            diffusion::inpaint_sample(&mut denoise, &known, &mask, sched, rng)?
        }
        (Arch::Diffuser, SampleMode::WarmStart { k, prior }) => {
            let (known, mask) = diffuser_known(u, y_ctx, Some(prior))?;
            let ip = Inpaint { known: &known, mask: &mask };
            diffusion::warm_start_sample(&mut denoise, &known, *k, sched, rng, Some(ip))?
        }
        (_, SampleMode::Full) => diffusion::sample(&mut denoise, &[b, c.horizon(), c.d_y], sched, rng)?,
        (_, SampleMode::WarmStart { k, prior }) => diffusion::warm_start_sample(&mut denoise, prior, *k, sched, rng, None)?,
    };
    let out: Tensor<f32> = out.cast();
    if model.arch() == Arch::Diffuser {
        let y = out.narrow(2, c.d_u, c.d_u + c.d_y)?;
        return Ok(y.narrow(1, c.context, c.n_steps)?);
    }
    Ok(out)
}
