//! Training loop, loss log and held-out evaluation of the objective.

use std::fs;
use std::path::{Path, PathBuf};

use icl_tensor::optim::{clip_grad_norm, lr_at, Adam};
use icl_tensor::{Elem, Graph, Params, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, load_batches, Batch, Dataset};
use crate::diffusion::{self, DiffusionConfig, DiffusionSchedule, WeightMask};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, Arch, CheckpointMeta, MetaModel, ModelConfig};

pub const LOSS_LOG: &str = "loss.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn lr0_for(arch: Arch) -> f64 {
        if arch.is_conditioned() {
            1e-4
        } else {
            6e-4
        }
    }

    pub fn for_arch(arch: Arch) -> Self {
        Self { epochs: 10, batch_size: 64, lr0: Self::lr0_for(arch), seed: 0, checkpoint_every: 0, clip_norm: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigInvalid("train: epochs and batch_size must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::ConfigInvalid("train: lr0 and clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_traj: usize) -> usize {
        self.epochs * (n_traj / self.batch_size)
    }
}

/// Diffusion settings resolved for a model, `None` for RoboMorph.
pub struct Objective {
    pub mask: WeightMask,
    pub sched: DiffusionSchedule,
}

impl Objective {
    pub fn new(model: &ModelConfig, diff: &DiffusionConfig) -> Result<Option<Self>> {
        if !model.arch.is_diffusion() {
            return Ok(None);
        }
        diff.validate()?;
        if diff.t != model.diffusion_steps {
            return Err(Error::ConfigInvalid(format!(
                "diffusion.T = {} but model.diffusion_steps = {}",
                diff.t, model.diffusion_steps
            )));
        }
        Ok(Some(Self { mask: diff.mask(), sched: diff.schedule()? }))
    }
}

/// Horizon MSE for RoboMorph, the weighted noise-prediction loss otherwise.
pub fn objective<T: Elem, R: Rng + ?Sized>(
    model: &MetaModel,
    g: &mut Graph<T>,
    p: &Params<T>,
    batch: &Batch,
    obj: Option<&Objective>,
    rng: &mut R,
) -> Result<Var> {
    match obj {
        None => {
            let (cu, cy, fu) = (g.constant(batch.ctx_u().cast()), g.constant(batch.ctx_y().cast()), g.constant(batch.fut_u().cast()));
            let pred = model.robomorph_forward(g, p, cu, cy, fu)?;
            let y = g.constant(batch.fut_y().cast());
            let d = g.sub(pred, y)?;
            let d = g.square(d)?;
            Ok(g.mean(d)?)
        }
        Some(o) => diffusion::training_loss(model, g, p, batch, &o.mask, &o.sched, rng),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params<f32>,
    pub steps: usize,
    /// Objective on the training set with the final parameters.
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub clipped_steps: usize,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    step: usize,
    epoch: usize,
    lr: f64,
    loss: f64,
    batch_indices: &'a [usize],
    grad_norm: Option<f64>,
    detail: String,
}

fn non_finite(out_dir: &Path, snap: Snapshot<'_>) -> Error {
    let path = out_dir.join(format!("nonfinite_{}.json", snap.step));
    let written = serde_json::to_vec_pretty(&snap).map_err(Error::from).and_then(|b| Ok(fs::write(&path, b)?));
    let snapshot = match written {
        Ok(()) => path.display().to_string(),
        Err(e) => format!("unwritten ({e})"),
    };
    Error::NonFiniteLoss { step: snap.step, snapshot }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step}.bin")
}

pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    diff: &DiffusionConfig,
    data: &Dataset,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.n_steps != model_cfg.n_steps || data.context != model_cfg.context || data.d_u != model_cfg.d_u || data.d_y != model_cfg.d_y {
        return Err(Error::ShapeMismatch(format!(
            "dataset (N {}, m {}, d_u {}, d_y {}) does not match the model config",
            data.n_steps, data.context, data.d_u, data.d_y
        )));
    }
    let total = cfg.total_steps(data.len());
    if total == 0 {
        return Err(Error::ConfigInvalid(format!("{} trajectories fill no batch of {}", data.len(), cfg.batch_size)));
    }
    let model = MetaModel::new(model_cfg)?;
    let obj = Objective::new(model_cfg, diff)?;
    fs::create_dir_all(out_dir)?;
    let mut params = model.init_params(cfg.seed);
    let mut adam = Adam::default();
    let log_path = out_dir.join(LOSS_LOG);
    let mut log = csv::Writer::from_path(&log_path)?;
    log.write_record(["step", "epoch", "loss", "lr"])?;

    let meta = |step: usize| CheckpointMeta {
        model: model_cfg.clone(),
        stats: data.stats.clone(),
        dataset: data.config.clone(),
        diffusion: model_cfg.arch.is_diffusion().then(|| diff.clone()),
        step,
    };
    let mut step = 0;
    let mut clipped_steps = 0;
    let mut last_ckpt = None;
    for epoch in 0..cfg.epochs {
        for batch in load_batches(data, cfg.batch_size, cfg.seed, epoch)? {
            let lr = lr_at(step as u64, (total - 1) as u64, cfg.lr0);
            let snap = |loss: f64, grad_norm: Option<f64>, detail: String| Snapshot {
                step,
                epoch,
                lr,
                loss,
                batch_indices: &batch.indices,
                grad_norm,
                detail,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step as u64, 1));
            let mut g = Graph::new();
            let loss = match objective(&model, &mut g, &params, &batch, obj.as_ref(), &mut rng) {
                Err(Error::Tensor(TensorError::NonFinite(op))) => {
                    return Err(non_finite(out_dir, snap(f64::NAN, None, format!("non-finite value in {op}"))));
                }
                r => r?,
            };
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(non_finite(out_dir, snap(lv, None, "loss".into())));
            }
            let mut grads = g.backward(loss)?.into_params();
            let (norm, clipped) = clip_grad_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(non_finite(out_dir, snap(lv, Some(norm), "gradient norm".into())));
            }
            if clipped {
                clipped_steps += 1;
                log::debug!("step {step}: gradient norm {norm:.3e} clipped to {}", cfg.clip_norm);
            }
            adam.step(&mut params, &grads, lr)?;
            if !params.all_finite() {
                return Err(non_finite(out_dir, snap(lv, Some(norm), "parameters after update".into())));
            }
            log.write_record([step.to_string(), epoch.to_string(), format!("{lv:e}"), format!("{lr:e}")])?;
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                let path = out_dir.join(checkpoint_name(step));
                save_checkpoint(&path, &params, &meta(step))?;
                last_ckpt = Some((step, path));
            }
        }
        log.flush()?;
        log::info!("epoch {epoch}: {step} steps");
    }
    log.flush()?;
    let checkpoint = match last_ckpt {
        Some((s, p)) if s == step => p,
        _ => {
            let path = out_dir.join(checkpoint_name(step));
            save_checkpoint(&path, &params, &meta(step))?;
            path
        }
    };
    if clipped_steps > 0 {
        log::info!("gradient clipping active on {clipped_steps} of {step} steps");
    }
    let final_loss = eval_loss(&model, &params, obj.as_ref(), data, cfg.batch_size, cfg.seed)?;
    Ok(TrainOutcome { params, steps: step, final_loss, checkpoint, loss_log: log_path, clipped_steps })
}

/// Mean objective over every trajectory (chunks of `batch_size`, in order)
/// without updating parameters. Diffusion noise is seeded per chunk.
pub fn eval_loss(
    model: &MetaModel,
    params: &Params<f32>,
    obj: Option<&Objective>,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::ConfigInvalid("eval_loss on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut acc = 0.0;
    for (i, chunk) in idx.chunks(batch_size.max(1)).enumerate() {
        let batch = Batch::from_indices(data, chunk);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, 2));
        let mut g = Graph::inference();
        let l = objective(model, &mut g, params, &batch, obj, &mut rng)?;
        acc += g.value(l).item() as f64 * chunk.len() as f64;
    }
    Ok(acc / data.len() as f64)
}

/// [`eval_loss`] for a checkpoint file against a dataset directory.
pub fn eval_checkpoint_loss(ckpt: &Path, data_dir: &Path, batch_size: usize, seed: u64) -> Result<f64> {
    let (params, meta) = crate::models::load_checkpoint(ckpt)?;
    let mut data = Dataset::open(data_dir)?;
    data.stats = meta.stats.clone();
    let model = MetaModel::new(&meta.model)?;
    let diff = meta.diffusion.clone().unwrap_or_else(|| DiffusionConfig::for_arch(meta.model.arch));
    let obj = Objective::new(&meta.model, &diff)?;
    eval_loss(&model, &params, obj.as_ref(), &data, batch_size, seed)
}
