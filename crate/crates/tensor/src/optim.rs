//! Adam with bias correction, cosine annealing, and global-norm clipping.

use crate::elem::Elem;
use crate::error::{shape_err, Result};
use crate::params::Params;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::f64::consts::PI;

pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Elem> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Elem> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First/second moment estimates for a parameter, once it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }

    /// One bias-corrected update at learning rate `lr`. Parameters without a
    /// gradient entry are left untouched.
    pub fn step(&mut self, params: &mut Params<T>, grads: &GradMap<T>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return shape_err("adam_step", format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
                .zip(g.data())
            {
                let gf = gi.as_f64();
                let mf = self.beta1 * mi.as_f64() + (1.0 - self.beta1) * gf;
                let vf = self.beta2 * vi.as_f64() + (1.0 - self.beta2) * gf * gf;
                *mi = T::lit(mf);
                *vi = T::lit(vf);
                let update = lr * (mf / bc1) / ((vf / bc2).sqrt() + self.eps);
                *pi = T::lit(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at step 0 to `lr0 / 10` at `total`.
pub fn lr_at(step: u64, total: u64, lr0: f64) -> f64 {
    let lr_final = lr0 / 10.0;
    if total == 0 || step == 0 {
        return lr0;
    }
    if step >= total {
        return lr_final;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_final + (lr0 - lr_final) * (1.0 + (PI * frac).cos()) / 2.0
}

pub fn global_norm<T: Elem>(grads: &GradMap<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| x.as_f64().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// pre-clip norm and whether clipping happened.
pub fn clip_grad_norm<T: Elem>(grads: &mut GradMap<T>, max_norm: f64) -> (f64, bool) {
    let norm = global_norm(grads);
    if norm <= max_norm || !norm.is_finite() {
        return (norm, false);
    }
    let k = T::lit(max_norm / norm);
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|x| *x = *x * k);
    }
    (norm, true)
}
