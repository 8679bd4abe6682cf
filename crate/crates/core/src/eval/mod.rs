//! Frequency sweeps, warm-start degradation and latency benchmarks.

mod report;

pub use report::{read_latency_csv, read_sweep_csv, write_latency, write_sweep, SVG_NS};

use std::path::Path;
use std::time::Instant;

use icl_tensor::{Params, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, generate_trajectory, thread_pool, DatasetConfig, Trajectory};
use crate::diffusion::{shifted_prior, DiffusionConfig, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::inference::{predict_horizon, SampleMode};
use crate::models::{load_checkpoint, CheckpointMeta, MetaModel};
use crate::signal::SignalKind;

/// `sqrt(mean((pred - truth)^2))` over every entry.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("rmse over {} vs {} values", pred.len(), truth.len())));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub freq_hz: f64,
    pub signal: SignalKind,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n_scenarios: usize,
    pub in_distribution: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Training frequency range, drawn as the ID band.
    pub id_band: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub model: String,
    pub warm_start_k: usize,
    pub wall_time_mean_ms: f64,
    pub wall_time_std_ms: f64,
    pub rmse_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    pub fn new(mut rows: Vec<LatencyRow>) -> Self {
        rows.sort_by_key(|r| r.warm_start_k);
        Self { rows }
    }
}

/// A checkpoint ready for inference.
pub struct LoadedModel {
    pub label: String,
    pub model: MetaModel,
    pub params: Params<f32>,
    pub meta: CheckpointMeta,
    pub sched: Option<DiffusionSchedule>,
    pub diffusion: DiffusionConfig,
}

impl LoadedModel {
    pub fn from_parts(label: impl Into<String>, params: Params<f32>, meta: CheckpointMeta) -> Result<Self> {
        let model = MetaModel::new(&meta.model)?;
        model.check_params(&params)?;
        let diffusion = meta.diffusion.clone().unwrap_or_else(|| DiffusionConfig::for_arch(meta.model.arch));
        let sched = if meta.model.arch.is_diffusion() { Some(diffusion.schedule()?) } else { None };
        Ok(Self { label: label.into(), model, params, meta, sched, diffusion })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        Self::from_parts(meta.model.arch.name(), params, meta)
    }

    /// Steps in a full chain; 0 for the deterministic model.
    pub fn full_k(&self) -> usize {
        self.sched.as_ref().map_or(0, |s| s.t)
    }

    /// Normalized `(u [B, N, d_u], y_ctx [B, m, d_y], y_future [B, H, d_y])`.
    pub fn normalized_batch(&self, trajs: &[&Trajectory]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f64>)> {
        let c = &self.meta.model;
        let (n, m, du, dy) = (c.n_steps, c.context, c.d_u, c.d_y);
        let mut u = Vec::new();
        let mut y = Vec::new();
        for t in trajs {
            if (t.n, t.d_u, t.d_y) != (n, du, dy) {
                return Err(Error::ShapeMismatch(format!("trajectory ({}, {}, {}) vs model ({n}, {du}, {dy})", t.n, t.d_u, t.d_y)));
            }
            u.extend(self.meta.stats.normalize_u(&t.u));
            y.extend(self.meta.stats.normalize_y(&t.y));
        }
        let b = trajs.len();
        let y = Tensor::new(vec![b, n, dy], y)?;
        Ok((Tensor::new(vec![b, n, du], u)?, y.narrow(1, 0, m)?, y.narrow(1, m, n)?.cast()))
    }

    /// Predicts the horizon for `trajs` and returns the per-trajectory RMSE
    /// in physical units. `k = None` runs the full chain.
    pub fn horizon_rmse(&self, trajs: &[&Trajectory], k: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let c = &self.meta.model;
        let (u, y_ctx, fut) = self.normalized_batch(trajs)?;
        let mode = match k {
            Some(k) if self.sched.is_some() => SampleMode::WarmStart { k, prior: shifted_prior(&fut, self.diffusion.prior_stride)? },
            _ => SampleMode::Full,
        };
        let pred = predict_horizon(&self.model, &self.params, self.sched.as_ref(), &u, &y_ctx, &mode, rng)?;
        let per = c.horizon() * c.d_y;
        let pred = self.meta.stats.denormalize_y(pred.data());
        trajs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let p: Vec<f64> = pred[i * per..(i + 1) * per].iter().map(|&v| v as f64).collect();
                let truth: Vec<f64> = t.y[c.context * c.d_y..].iter().map(|&v| v as f64).collect();
                rmse(&p, &truth)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Sweep frequencies in Hz; `None` spans 0.5x to 2x the training band.
    pub freq_grid: Option<Vec<f64>>,
    pub n_scenarios: usize,
    pub seed: u64,
    /// Trajectories per inference batch.
    pub chunk: usize,
    pub k_list: Vec<usize>,
    /// Scenarios per k in the warm-start degradation run.
    pub warm_scenarios: usize,
    pub n_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { freq_grid: None, n_scenarios: 100, seed: 0, chunk: 25, k_list: vec![5, 10, 25, 50, 100], warm_scenarios: 20, n_repeats: 10 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 || self.chunk == 0 || self.warm_scenarios == 0 || self.n_repeats == 0 {
            return Err(Error::ConfigInvalid("eval: counts must be positive".into()));
        }
        if let Some(g) = &self.freq_grid {
            if g.is_empty() || g.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                return Err(Error::ConfigInvalid("eval.freq_grid must be non-empty and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// 8 points, linearly spaced from half the lower to twice the upper edge.
pub fn default_freq_grid(band: [f64; 2]) -> Vec<f64> {
    let (lo, hi) = (0.5 * band[0], 2.0 * band[1]);
    (0..8).map(|i| lo + (hi - lo) * i as f64 / 7.0).collect()
}

/// Scenario set shared by every model at one grid frequency.
pub fn sweep_scenarios(class: &DatasetConfig, f: f64, fi: usize, n: usize, master_seed: u64) -> Result<Vec<Trajectory>> {
    let cfg = DatasetConfig { profile: class.profile.pinned_at(f), seed: derive_seed(master_seed, fi as u64, 0), ..class.clone() };
    (0..n).map(|i| generate_trajectory(&cfg, i)).collect()
}

pub fn frequency_sweep(
    lm: &LoadedModel,
    class: &DatasetConfig,
    freq_grid: &[f64],
    n_scenarios: usize,
    chunk: usize,
    master_seed: u64,
    workers: usize,
) -> Result<SweepReport> {
    if freq_grid.is_empty() || n_scenarios == 0 {
        return Err(Error::ConfigInvalid("sweep needs frequencies and scenarios".into()));
    }
    let band = lm.meta.dataset.as_ref().map(|d| d.profile.freq);
    let pool = thread_pool(workers)?;
    let mut rows = Vec::with_capacity(freq_grid.len());
    for (fi, &f) in freq_grid.iter().enumerate() {
        let scen = sweep_scenarios(class, f, fi, n_scenarios, master_seed)?;
        let refs: Vec<&Trajectory> = scen.iter().collect();
        let chunks: Vec<&[&Trajectory]> = refs.chunks(chunk.max(1)).collect();
        let per_chunk: Vec<Result<Vec<f64>>> = pool.install(|| {
            chunks
                .par_iter()
                .enumerate()
                .map(|(ci, ch)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, fi as u64, 1 + ci as u64));
                    lm.horizon_rmse(ch, None, &mut rng)
                })
                .collect()
        });
        let mut errs = Vec::with_capacity(n_scenarios);
        for r in per_chunk {
            errs.extend(r?);
        }
        let (rmse_mean, rmse_std) = mean_std(&errs);
        rows.push(SweepRow {
            model: lm.label.clone(),
            freq_hz: f,
            signal: class.profile.signal,
            rmse_mean,
            rmse_std,
            n_scenarios,
            in_distribution: band.is_some_and(|[lo, hi]| lo <= f && f <= hi),
        });
    }
    Ok(SweepReport { rows, id_band: band })
}

/// Scenarios drawn from the checkpoint's own training distribution.
pub fn training_scenarios(lm: &LoadedModel, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let class = lm
        .meta
        .dataset
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid(format!("{} checkpoint records no training dataset", lm.label)))?;
    let cfg = DatasetConfig { seed: derive_seed(seed, u64::MAX, 0), ..class.clone() };
    (0..n).map(|i| generate_trajectory(&cfg, i)).collect()
}

/// Warm-started prediction per `k`, one trajectory at a time so wall time is
/// per-trajectory. Scenario `i` uses the same random stream for every `k`.
pub fn warmstart_degradation(lm: &LoadedModel, scenarios: &[Trajectory], k_list: &[usize], seed: u64) -> Result<LatencyReport> {
    let sched = lm.sched.as_ref().ok_or_else(|| Error::ConfigInvalid(format!("{} is not a diffusion model", lm.label)))?;
    if scenarios.is_empty() {
        return Err(Error::ConfigInvalid("warm-start run needs scenarios".into()));
    }
    let mut rows = Vec::new();
    for &k in k_list {
        if k == 0 || k > sched.t {
            return Err(Error::BadK { k, t: sched.t });
        }
        let mut times = Vec::new();
        let mut errs = Vec::new();
        for (i, t) in scenarios.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, 7));
            let start = Instant::now();
            let e = lm.horizon_rmse(&[t], Some(k), &mut rng)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            errs.extend(e);
        }
        let (wall_time_mean_ms, wall_time_std_ms) = mean_std(&times);
        rows.push(LatencyRow { model: lm.label.clone(), warm_start_k: k, wall_time_mean_ms, wall_time_std_ms, rmse_mean: mean_std(&errs).0 });
    }
    Ok(LatencyReport::new(rows))
}

pub const WARMUP_CALLS: usize = 3;

/// Single-trajectory latency after [`WARMUP_CALLS`] untimed calls. The
/// deterministic model reports `k = 0`; diffusion models report the full
/// chain and, when shorter, the configured warm start.
pub fn latency_bench(models: &[LoadedModel], traj: &Trajectory, n_repeats: usize, seed: u64) -> Result<LatencyReport> {
    let mut rows = Vec::new();
    for lm in models {
        let mut ks = vec![lm.full_k()];
        if lm.sched.is_some() && lm.diffusion.warm_start_k < lm.full_k() {
            ks.push(lm.diffusion.warm_start_k);
        }
        for k in ks {
            let run = |rep: usize| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64, 8));
                let start = Instant::now();
                let e = lm.horizon_rmse(&[traj], (k > 0).then_some(k), &mut rng)?;
                Ok::<_, Error>((start.elapsed().as_secs_f64() * 1e3, e[0]))
            };
            for w in 0..WARMUP_CALLS {
                run(usize::MAX - w)?;
            }
            let (times, errs): (Vec<f64>, Vec<f64>) = (0..n_repeats.max(1)).map(run).collect::<Result<Vec<_>>>()?.into_iter().unzip();
            let (wall_time_mean_ms, wall_time_std_ms) = mean_std(&times);
            rows.push(LatencyRow { model: lm.label.clone(), warm_start_k: k, wall_time_mean_ms, wall_time_std_ms, rmse_mean: mean_std(&errs).0 });
        }
    }
    Ok(LatencyReport::new(rows))
}
