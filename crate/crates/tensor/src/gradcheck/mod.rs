//! Central finite-difference checks of reverse-mode gradients in `f64`.
//!
//! Anything that should be differentiated (weights and inputs alike) goes in
//! the `Params` handed to the closure, which rebuilds the graph from scratch.

mod suite;

pub use suite::{op_suite, OpCheck};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::Params;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Per tensor: `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
    /// with Euclidean norms.
    pub rel_err: BTreeMap<String, f64>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.values().copied().fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.rel_err
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn loss_value<F>(params: &Params<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let mut g = Graph::inference();
    let v = f(&mut g, params)?;
    Ok(g.value(v).item())
}

pub fn check<F>(params: &Params<f64>, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    check_with_floor(params, f, 1e-6)
}

pub fn check_with_floor<F>(params: &Params<f64>, f: F, floor: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    run(params, &f, floor, |t| (0..t).collect())
}

/// Like [`check`], but only perturbs up to `per_tensor` randomly chosen
/// coordinates of each tensor; errors are measured over those coordinates.
pub fn check_sampled<F>(params: &Params<f64>, f: F, per_tensor: usize, seed: u64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(params, &f, 1e-6, |n| {
        let mut idx = sample(&mut rng, n, per_tensor.min(n)).into_vec();
        idx.sort_unstable();
        idx
    })
}

fn run<F, S>(params: &Params<f64>, f: &F, floor: f64, mut coords: S) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &Params<f64>) -> Result<Var>,
    S: FnMut(usize) -> Vec<usize>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(loss)?.into_params();

    let mut work = params.clone();
    let mut rel_err = BTreeMap::new();
    for (name, t) in params.iter() {
        let idx = coords(t.numel());
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let x0 = t.data()[i];
            work.get_mut(name)?.data_mut()[i] = x0 + FD_STEP;
            let up = loss_value(&work, f)?;
            work.get_mut(name)?.data_mut()[i] = x0 - FD_STEP;
            let down = loss_value(&work, f)?;
            work.get_mut(name)?.data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let analytic: Vec<f64> = match grads.get(name) {
            Some(g) => idx.iter().map(|&i| g.data()[i]).collect(),
            None => vec![0.0; idx.len()],
        };
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied())).max(floor);
        rel_err.insert(name.clone(), diff / scale);
    }
    Ok(GradReport { rel_err })
}

fn norm(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|v| v * v).sum::<f64>().sqrt()
}
