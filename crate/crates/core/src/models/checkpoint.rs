use std::path::Path;

use icl_tensor::{checkpoint, Params};
use serde::{Deserialize, Serialize};

use super::{MetaModel, ModelConfig};
use crate::dataset::{DatasetConfig, NormalizationStats};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};

/// Everything needed besides the tensors to run a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub stats: NormalizationStats,
    /// Generation config of the training data, when it came from a manifest.
    pub dataset: Option<DatasetConfig>,
    pub diffusion: Option<DiffusionConfig>,
    pub step: usize,
}

pub fn save_checkpoint(path: &Path, params: &Params<f32>, meta: &CheckpointMeta) -> Result<()> {
    MetaModel::new(&meta.model)?.check_params(params)?;
    checkpoint::save(path, params, &serde_json::to_value(meta)?)?;
    Ok(())
}

/// Loads and validates tensors against the architecture named in the meta.
pub fn load_checkpoint(path: &Path) -> Result<(Params<f32>, CheckpointMeta)> {
    let (params, meta) = checkpoint::load(path).map_err(|e| match e {
        icl_tensor::TensorError::Io(io) => Error::Io(io),
        other => Error::SchemaMismatch(other.to_string()),
    })?;
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| Error::SchemaMismatch(format!("checkpoint meta: {e}")))?;
    MetaModel::new(&meta.model)?.check_params(&params)?;
    Ok((params, meta))
}
