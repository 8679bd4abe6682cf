//! Command-line front end. `main` only parses arguments and maps errors to
//! exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, RunConfig};
use crate::dataset::{derive_seed, generate_dataset, generate_trajectory, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{self, LoadedModel};
use crate::trainer;

#[derive(Debug, Parser)]
#[command(name = "icl-dyn", version, about = "In-context dynamics meta-models: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; preset defaults fill everything not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sharded trajectory dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train the configured model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Frequency sweep and, for diffusion models, warm-start degradation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Predict one trajectory and write it as CSV.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        traj_index: usize,
        /// Take the trajectory from this dataset instead of regenerating it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Single-trajectory inference latency for one or more checkpoints.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        ckpt: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sample { common, .. }
            | Command::Bench { common, .. } => common,
        }
    }
}

/// One machine-parsable line for standard error.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('"', "'").replace('\n', " ");
    format!("error kind={} code={} msg=\"{msg}\"", e.kind(), e.exit_code())
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = config::load(common.config.as_deref())?;
    let out = common.out.clone();
    config::write_resolved(&cfg, &out)?;
    match cli.command {
        Command::Gen { workers, .. } => {
            let m = generate_dataset(&cfg.dataset, &out, workers)?;
            log::info!("wrote {} trajectories in {} shards to {}", m.counts.n_traj, m.shards.len(), out.display());
        }
        Command::Train { data, .. } => {
            let ds = Dataset::open(&data)?;
            let o = trainer::train(&cfg.model, &cfg.train, &cfg.diffusion, &ds, &out)?;
            log::info!("{} steps, final loss {:.4e}, checkpoint {}", o.steps, o.final_loss, o.checkpoint.display());
        }
        Command::Eval { ckpt, workers, .. } => cmd_eval(&cfg, &ckpt, &out, workers)?,
        Command::Sample { ckpt, traj_index, data, .. } => cmd_sample(&cfg, &ckpt, traj_index, data.as_deref(), &out)?,
        Command::Bench { ckpt, .. } => {
            let models = ckpt.iter().map(|p| LoadedModel::load(p)).collect::<Result<Vec<_>>>()?;
            let traj = eval::training_scenarios(&models[0], 1, cfg.eval.seed)?.remove(0);
            let rep = eval::latency_bench(&models, &traj, cfg.eval.n_repeats, cfg.eval.seed)?;
            eval::write_latency(&rep, &out.join("reports"), "latency")?;
        }
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, ckpt: &Path, out: &Path, workers: usize) -> Result<()> {
    let lm = LoadedModel::load(ckpt)?;
    let class = lm.meta.dataset.clone().unwrap_or_else(|| cfg.dataset.clone());
    let grid = cfg.eval.freq_grid.clone().unwrap_or_else(|| eval::default_freq_grid(class.profile.freq));
    let reports = out.join("reports");
    let sweep = eval::frequency_sweep(&lm, &class, &grid, cfg.eval.n_scenarios, cfg.eval.chunk, cfg.eval.seed, workers)?;
    eval::write_sweep(&sweep, &reports, "sweep")?;
    if lm.sched.is_some() {
        let scen = eval::training_scenarios(&lm, cfg.eval.warm_scenarios, cfg.eval.seed)?;
        let rep = eval::warmstart_degradation(&lm, &scen, &cfg.eval.k_list, cfg.eval.seed)?;
        eval::write_latency(&rep, &reports, "warmstart")?;
    }
    log::info!("reports written to {}", reports.display());
    Ok(())
}

fn cmd_sample(cfg: &RunConfig, ckpt: &Path, index: usize, data: Option<&Path>, out: &Path) -> Result<()> {
    let lm = LoadedModel::load(ckpt)?;
    let traj: Trajectory = match data {
        Some(dir) => {
            let ds = Dataset::open(dir)?;
            ds.trajectories.get(index).cloned().ok_or_else(|| {
                Error::ConfigInvalid(format!("--traj-index {index} out of range for {} trajectories", ds.len()))
            })?
        }
        None => {
            let class = lm.meta.dataset.clone().unwrap_or_else(|| cfg.dataset.clone());
            generate_trajectory(&class, index)?
        }
    };
    let c = &lm.meta.model;
    let (u, y_ctx, _) = lm.normalized_batch(&[&traj])?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.eval.seed, index as u64, 9));
    let pred = crate::inference::predict_horizon(&lm.model, &lm.params, lm.sched.as_ref(), &u, &y_ctx, &crate::inference::SampleMode::Full, &mut rng)?;
    let pred = lm.meta.stats.denormalize_y(pred.data());

    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("sample.csv"))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..c.d_u).map(|j| format!("u_{j}")));
    header.extend((0..c.d_y).map(|j| format!("y_true_{j}")));
    header.extend((0..c.d_y).map(|j| format!("y_pred_{j}")));
    w.write_record(&header)?;
    for t in 0..c.n_steps {
        let mut row = vec![t.to_string()];
        row.extend(traj.u[t * c.d_u..(t + 1) * c.d_u].iter().map(|v| v.to_string()));
        row.extend(traj.y[t * c.d_y..(t + 1) * c.d_y].iter().map(|v| v.to_string()));
        if t >= c.context {
            let k = t - c.context;
            row.extend(pred[k * c.d_y..(k + 1) * c.d_y].iter().map(|v| v.to_string()));
        } else {
            row.extend(std::iter::repeat_n(String::new(), c.d_y));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
