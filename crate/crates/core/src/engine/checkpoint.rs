use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{MlpConfig, VipModel};
use super::train::TrainConfig;
use crate::concept::{QuerySet, StandardizationStats};
use crate::error::{Error, Result};
use crate::format::{dim_u32, put_f64s, put_u32, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VIPCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What the model was trained on and how.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub query_set: Option<String>,
    #[serde(default)]
    pub stats: Option<StandardizationStats>,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VipModel,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    mlp: MlpConfig,
    n_queries: usize,
    n_classes: usize,
    predictor_params: usize,
    querier_params: usize,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: VipModel, meta: CheckpointMeta) -> Self {
        Checkpoint { model, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let header = serde_json::to_vec(&Header {
            mlp: m.config,
            n_queries: m.n_queries(),
            n_classes: m.n_classes(),
            predictor_params: m.predictor.n_params(),
            querier_params: m.querier.n_params(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(
            16 + header.len() + 8 * (m.predictor.n_params() + m.querier.n_params()),
        );
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, dim_u32(header.len(), "header length")?);
        out.extend_from_slice(&header);
        put_f64s(&mut out, m.predictor.params());
        put_f64s(&mut out, m.querier.params());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "checkpoint version {version}, supported {CHECKPOINT_VERSION}"
            )));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let predictor = r.f64s(header.predictor_params)?;
        let querier = r.f64s(header.querier_params)?;
        r.finish()?;
        let model = VipModel::from_parts(
            header.mlp,
            header.n_queries,
            header.n_classes,
            predictor,
            querier,
        )
        .map_err(|e| Error::Format(format!("checkpoint parameters: {e}")))?;
        Ok(Checkpoint {
            model,
            meta: header.meta,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Reject a checkpoint whose query dimension differs from `queries`.
    pub fn check_query_set(&self, queries: &QuerySet) -> Result<()> {
        if self.model.n_queries() != queries.len() {
            return Err(Error::VersionMismatch(format!(
                "checkpoint has {} queries, query set '{}' has {}",
                self.model.n_queries(),
                queries.name,
                queries.len()
            )));
        }
        Ok(())
    }
}
