//! Trajectory datasets: deterministic parallel generation into binary shards,
//! manifests, normalization statistics and shuffled batch loading.

mod loader;
pub mod shard;
mod stats;

pub use loader::{load_batches, Batch, Batches};
pub use stats::{compute_stats, NormalizationStats, STD_FLOOR};

use crate::error::{config_err, Error, Result};
use crate::signal::{render_inputs, RandomizationProfile};
use crate::system::{sample_system, simulate, SystemClassConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shard::ShardHeader;
use stats::ChannelMoments;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";
pub const META_FILE: &str = "meta.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_traj: usize,
    /// Trajectory length N.
    pub n_steps: usize,
    /// Context length m.
    pub context: usize,
    pub dt: f64,
    pub seed: u64,
    pub shard_size: usize,
    /// Resampling attempts for a diverging draw before giving up.
    pub max_retries: u32,
    pub profile: RandomizationProfile,
    pub system: SystemClassConfig,
}

impl DatasetConfig {
    pub fn horizon(&self) -> usize {
        self.n_steps - self.context
    }

    pub fn d_u(&self) -> usize {
        self.system.dims.d_u
    }

    pub fn d_y(&self) -> usize {
        self.system.dims.d_y
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.context && self.context < self.n_steps) {
            return config_err(format!("need 0 < context < n_steps, got {} and {}", self.context, self.n_steps));
        }
        if self.shard_size == 0 {
            return config_err("shard_size must be >= 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return config_err(format!("dt must be positive, got {}", self.dt));
        }
        self.profile.validate()?;
        self.system.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub traj_index: usize,
    pub seed: u64,
    pub retries: u32,
    pub system_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub d_u: usize,
    pub d_y: usize,
    /// Row-major `n x d_u`.
    pub u: Vec<f32>,
    /// Row-major `n x d_y`.
    pub y: Vec<f32>,
    pub meta: TrajMeta,
}

impl Trajectory {
    fn segment(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            n: end - start,
            u: self.u[start * self.d_u..end * self.d_u].to_vec(),
            y: self.y[start * self.d_y..end * self.d_y].to_vec(),
            meta: self.meta.clone(),
            ..*self
        }
    }
}

/// `(context, future)` at step `m`: steps `[0, m)` and `[m, n)`.
pub fn split(traj: &Trajectory, m: usize) -> Result<(Trajectory, Trajectory)> {
    if !(0 < m && m < traj.n) {
        return Err(Error::BadSplit { m, n: traj.n });
    }
    Ok((traj.segment(0, m), traj.segment(m, traj.n)))
}

pub fn rejoin(context: &Trajectory, future: &Trajectory) -> Trajectory {
    let mut t = context.clone();
    t.n += future.n;
    t.u.extend_from_slice(&future.u);
    t.y.extend_from_slice(&future.y);
    t
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for trajectory `index` on attempt `retry`. Depends on nothing
/// else, so resampling one trajectory never shifts another.
pub fn derive_seed(master: u64, index: u64, retry: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ retry.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn generate_trajectory(cfg: &DatasetConfig, index: usize) -> Result<Trajectory> {
    let (d_u, n) = (cfg.d_u(), cfg.n_steps);
    let mut last = None;
    for retry in 0..=cfg.max_retries {
        let seed = derive_seed(cfg.seed, index as u64, retry as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = sample_system(&cfg.system, &mut rng);
        let inputs = render_inputs(&cfg.profile, d_u, n, cfg.dt, &mut rng);
        match simulate(&spec, &inputs.values, n, cfg.dt, cfg.system.blowup_bound) {
            Ok(y) => {
                let u: Vec<f32> = inputs.values.iter().map(|&v| v as f32).collect();
                let y: Vec<f32> = y.iter().map(|&v| v as f32).collect();
                if u.iter().chain(&y).any(|v| !v.is_finite()) {
                    last = Some(Error::NumericalDivergence { step: n, magnitude: f64::INFINITY });
                    continue;
                }
                let bytes: Vec<u8> = spec.param_vector().iter().flat_map(|v| v.to_le_bytes()).collect();
                let meta = TrajMeta { traj_index: index, seed, retries: retry, system_hash: shard::digest(&bytes) };
                return Ok(Trajectory { n, d_u, d_y: cfg.d_y(), u, y, meta });
            }
            Err(e @ Error::NumericalDivergence { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub n_traj: usize,
    pub n_steps: usize,
    pub d_u: usize,
    pub d_y: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitLengths {
    pub context: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEntry {
    pub file: String,
    /// Trajectory index range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub counts: Counts,
    pub split: SplitLengths,
    pub config: DatasetConfig,
    pub shards: Vec<ShardEntry>,
    pub stats_file: String,
    pub meta_file: String,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!("manifest schema {} (expected {SCHEMA_VERSION})", m.schema_version)));
        }
        Ok(m)
    }

    /// Hash of the serialized manifest; equal for equal generation inputs.
    pub fn content_digest(&self) -> String {
        shard::digest(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    /// Reads and verifies one shard.
    pub fn read_shard(&self, dir: &Path, i: usize) -> Result<Vec<shard::RawTrajectory>> {
        let e = &self.shards[i];
        let bytes = fs::read(dir.join(&e.file))?;
        let actual = shard::digest(&bytes);
        if actual != e.digest {
            return Err(Error::DigestMismatch { shard: e.file.clone(), expected: e.digest.clone(), actual });
        }
        let (h, trajs) = shard::decode(&bytes)?;
        let want = ShardHeader {
            n_traj: e.end - e.start,
            n_steps: self.counts.n_steps,
            d_u: self.counts.d_u,
            d_y: self.counts.d_y,
        };
        if h != want {
            return Err(Error::SchemaMismatch(format!("{}: header {h:?} disagrees with manifest {want:?}", e.file)));
        }
        Ok(trajs)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn shard_name(i: usize) -> String {
    format!("shard_{i:05}.bin")
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot start {workers} workers: {e}")))
}

/// Generates every trajectory, writes shards, per-trajectory metadata,
/// normalization stats and the manifest. Output bytes do not depend on
/// `workers`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path, workers: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    if cfg.n_traj == 0 {
        return config_err("n_traj must be >= 1");
    }
    fs::create_dir_all(out_dir)?;
    let pool = thread_pool(workers)?;
    let (d_u, d_y) = (cfg.d_u(), cfg.d_y());
    let mut shards = Vec::new();
    let mut meta = csv::Writer::from_writer(Vec::new());
    let mut start = 0;
    while start < cfg.n_traj {
        let end = (start + cfg.shard_size).min(cfg.n_traj);
        let trajs: Vec<Trajectory> =
            pool.install(|| (start..end).into_par_iter().map(|i| generate_trajectory(cfg, i)).collect::<Result<_>>())?;
        let h = ShardHeader { n_traj: trajs.len(), n_steps: cfg.n_steps, d_u, d_y };
        let views: Vec<(&[f32], &[f32])> = trajs.iter().map(|t| (t.u.as_slice(), t.y.as_slice())).collect();
        let bytes = shard::encode(h, &views);
        let file = shard_name(shards.len());
        write_atomic(&out_dir.join(&file), &bytes)?;
        for t in &trajs {
            meta.serialize(&t.meta)?;
        }
        shards.push(ShardEntry { file, start, end, digest: shard::digest(&bytes) });
        start = end;
    }
    let meta_bytes = meta.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&out_dir.join(META_FILE), &meta_bytes)?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        counts: Counts { n_traj: cfg.n_traj, n_steps: cfg.n_steps, d_u, d_y },
        split: SplitLengths { context: cfg.context, horizon: cfg.horizon() },
        config: cfg.clone(),
        shards,
        stats_file: STATS_FILE.into(),
        meta_file: META_FILE.into(),
    };
    let stats = compute_stats_from_shards(&manifest, out_dir)?;
    write_json(&out_dir.join(STATS_FILE), &stats)?;
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Two passes over the shards on disk, one shard in memory at a time.
pub fn compute_stats_from_shards(manifest: &DatasetManifest, dir: &Path) -> Result<NormalizationStats> {
    if manifest.shards.is_empty() {
        return Err(Error::StatsMissing("manifest lists no shards".into()));
    }
    let mut u = ChannelMoments::new(manifest.counts.d_u);
    let mut y = ChannelMoments::new(manifest.counts.d_y);
    for i in 0..manifest.shards.len() {
        for (tu, ty) in manifest.read_shard(dir, i)? {
            u.first_pass(&tu);
            y.first_pass(&ty);
        }
    }
    u.finish_first();
    y.finish_first();
    for i in 0..manifest.shards.len() {
        for (tu, ty) in manifest.read_shard(dir, i)? {
            u.second_pass(&tu);
            y.second_pass(&ty);
        }
    }
    let (u_mean, u_std) = u.finish();
    let (y_mean, y_std) = y.finish();
    Ok(NormalizationStats { u_mean, u_std, y_mean, y_std })
}

/// A dataset held in memory, raw (unnormalized) values plus the stats used
/// to normalize them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub n_steps: usize,
    pub context: usize,
    pub d_u: usize,
    pub d_y: usize,
    pub trajectories: Vec<Trajectory>,
    pub stats: NormalizationStats,
    /// Generation config when the data came from a manifest.
    pub config: Option<DatasetConfig>,
    pub dir: Option<PathBuf>,
}

impl Dataset {
    /// Loads every shard (verifying digests) and the stored stats.
    pub fn open(dir: &Path) -> Result<Self> {
        let m = DatasetManifest::read(dir)?;
        let stats_path = dir.join(&m.stats_file);
        if !stats_path.exists() {
            return Err(Error::StatsMissing(stats_path.display().to_string()));
        }
        let stats: NormalizationStats = serde_json::from_slice(&fs::read(&stats_path)?)?;
        stats.check(m.counts.d_u, m.counts.d_y)?;
        let metas: Vec<TrajMeta> = csv::Reader::from_path(dir.join(&m.meta_file))?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        if metas.len() != m.counts.n_traj {
            return Err(Error::SchemaMismatch(format!("{} metadata rows for {} trajectories", metas.len(), m.counts.n_traj)));
        }
        let mut trajectories = Vec::with_capacity(m.counts.n_traj);
        for i in 0..m.shards.len() {
            for (u, y) in m.read_shard(dir, i)? {
                let meta = metas[trajectories.len()].clone();
                trajectories.push(Trajectory { n: m.counts.n_steps, d_u: m.counts.d_u, d_y: m.counts.d_y, u, y, meta });
            }
        }
        Ok(Self {
            n_steps: m.counts.n_steps,
            context: m.split.context,
            d_u: m.counts.d_u,
            d_y: m.counts.d_y,
            trajectories,
            stats,
            config: Some(m.config),
            dir: Some(dir.to_path_buf()),
        })
    }

    /// In-memory dataset; stats are computed from `trajectories` when not given.
    pub fn from_trajectories(
        trajectories: Vec<Trajectory>,
        context: usize,
        stats: Option<NormalizationStats>,
    ) -> Result<Self> {
        let first = trajectories.first().ok_or_else(|| Error::ConfigInvalid("empty dataset".into()))?;
        let (n, d_u, d_y) = (first.n, first.d_u, first.d_y);
        if trajectories.iter().any(|t| t.n != n || t.d_u != d_u || t.d_y != d_y) {
            return Err(Error::ShapeMismatch("trajectories differ in shape".into()));
        }
        if !(0 < context && context < n) {
            return Err(Error::BadSplit { m: context, n });
        }
        let stats = match stats {
            Some(s) => s,
            None => compute_stats(&trajectories)?,
        };
        stats.check(d_u, d_y)?;
        Ok(Self { n_steps: n, context, d_u, d_y, trajectories, stats, config: None, dir: None })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.n_steps - self.context
    }
}
