//! Run configuration: preset defaults, deep merge of user JSON, strict
//! parsing and cross-section consistency checks.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::DatasetConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::models::{Arch, ModelConfig, Preset};
use crate::signal::{DatasetId, RandomizationProfile, SignalKind};
use crate::system::{Dims, SystemClassConfig};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "ICL_DYN_SEED";
pub const RESOLVED_FILE: &str = "config.resolved.json";
pub const LARGE_N_TRAJ: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn defaults(preset: Preset, arch: Arch) -> Self {
        let dataset = match preset {
            Preset::Desk => DatasetConfig {
                n_traj: 4096,
                n_steps: 128,
                context: 96,
                dt: 0.05,
                seed: 0,
                shard_size: 1024,
                max_retries: 8,
                profile: RandomizationProfile::table(DatasetId::D2, SignalKind::Chirp),
                system: SystemClassConfig::default(),
            },
            Preset::Paper => DatasetConfig {
                n_traj: 3_500_000,
                n_steps: 400,
                context: 320,
                dt: 0.05,
                seed: 0,
                shard_size: 8192,
                max_retries: 8,
                profile: RandomizationProfile::table(DatasetId::D2, SignalKind::Chirp),
                system: SystemClassConfig { dims: Dims { n_x: 14, d_u: 7, d_y: 7 }, ..SystemClassConfig::default() },
            },
        };
        let model = ModelConfig::for_preset(preset, arch, dataset.d_u(), dataset.d_y());
        Self {
            preset,
            model,
            dataset,
            train: TrainConfig::for_arch(arch),
            diffusion: DiffusionConfig::for_arch(arch),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.diffusion.validate()?;
        self.eval.validate()?;
        let (d, m) = (&self.dataset, &self.model);
        let pairs = [
            ("d_u", d.d_u(), m.d_u),
            ("d_y", d.d_y(), m.d_y),
            ("n_steps", d.n_steps, m.n_steps),
            ("context", d.context, m.context),
            ("diffusion_steps", self.diffusion.t, m.diffusion_steps),
        ];
        for (key, want, got) in pairs {
            if want != got {
                return Err(Error::ConfigInvalid(format!("model.{key} = {got} disagrees with the dataset/diffusion value {want}")));
            }
        }
        if m.preset != self.preset {
            return Err(Error::ConfigInvalid("model.preset disagrees with preset".into()));
        }
        Ok(())
    }
}

/// Objects merge key by key; anything else in `over` replaces `base`.
pub fn deep_merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(v: &Value, what: &str) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::ConfigInvalid(format!("{what}: {e}")))
}

fn path<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().try_fold(v, |v, k| v.get(k))
}

/// Expands the preset, merges `user` on top, fills model keys derived from
/// other sections unless set explicitly, applies the seed override and
/// validates.
pub fn resolve(user: &Value, seed_override: Option<u64>) -> Result<RunConfig> {
    let mut user = match user {
        Value::Null => Value::Object(Map::new()),
        Value::Object(_) => user.clone(),
        _ => return Err(Error::ConfigInvalid("config root must be a JSON object".into())),
    };
    if let Some(Value::Object(model)) = user.get_mut("model") {
        for (alias, key) in [("N", "n_steps"), ("m", "context")] {
            if let Some(v) = model.remove(alias) {
                if model.contains_key(key) {
                    return Err(Error::ConfigInvalid(format!("model.{alias} and model.{key} both given")));
                }
                model.insert(key.into(), v);
            }
        }
    }
    let preset: Preset = match user.get("preset") {
        Some(v) => parse(v, "preset")?,
        None => Preset::Desk,
    };
    let arch: Arch = match path(&user, &["model", "arch"]) {
        Some(v) => parse(v, "model.arch")?,
        None => Arch::RoboMorph,
    };
    let mut merged = serde_json::to_value(RunConfig::defaults(preset, arch))?;
    deep_merge(&mut merged, &user);

    let derived: [(&str, &[&str]); 6] = [
        ("d_u", &["dataset", "system", "dims", "d_u"]),
        ("d_y", &["dataset", "system", "dims", "d_y"]),
        ("n_steps", &["dataset", "n_steps"]),
        ("context", &["dataset", "context"]),
        ("diffusion_steps", &["diffusion", "T"]),
        ("preset", &["preset"]),
    ];
    for (key, src) in derived {
        if path(&user, &["model", key]).is_none() {
            if let Some(v) = path(&merged, src).cloned() {
                merged["model"][key] = v;
            }
        }
    }
    if let Some(seed) = seed_override {
        for section in ["dataset", "train", "eval"] {
            merged[section]["seed"] = Value::from(seed);
        }
    }
    let cfg: RunConfig = parse(&merged, "config")?;
    cfg.validate()?;
    if cfg.dataset.n_traj > LARGE_N_TRAJ {
        log::warn!(
            "dataset.n_traj = {} exceeds {LARGE_N_TRAJ}; expect long generation and training times on desk hardware",
            cfg.dataset.n_traj
        );
    }
    Ok(cfg)
}

/// Reads `ICL_DYN_SEED`; an unparsable value is a config error.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={s} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Loads a config file (or none) and resolves it with the environment seed.
pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let user: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", p.display())))?
        }
        None => Value::Null,
    };
    resolve(&user, seed_from_env()?)
}

pub fn write_resolved(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(RESOLVED_FILE), serde_json::to_vec_pretty(cfg)?)?;
    Ok(())
}
