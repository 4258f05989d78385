use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use vip_core::concept::{LabeledDataset, QuerySet};
use vip_core::engine::Checkpoint;

pub const CHECKPOINT_EXT: &str = "vipckpt";

/// A checkpoint plus the optional query texts and stored samples that make
/// it usable from a session.
#[derive(Debug)]
pub struct LoadedModel {
    pub name: String,
    pub checkpoint: Checkpoint,
    pub queries: Option<QuerySet>,
    pub samples: Option<LabeledDataset>,
}

impl LoadedModel {
    pub fn new(
        name: impl Into<String>,
        checkpoint: Checkpoint,
        queries: Option<QuerySet>,
        samples: Option<LabeledDataset>,
    ) -> vip_core::Result<Self> {
        if let Some(q) = &queries {
            checkpoint.check_query_set(q)?;
        }
        if let Some(s) = &samples {
            if s.answers.n_queries != checkpoint.model.n_queries() {
                return Err(vip_core::Error::DimensionMismatch(format!(
                    "samples have {} queries, checkpoint has {}",
                    s.answers.n_queries,
                    checkpoint.model.n_queries()
                )));
            }
        }
        Ok(LoadedModel {
            name: name.into(),
            checkpoint,
            queries,
            samples,
        })
    }

    pub fn query_text(&self, id: usize) -> String {
        self.queries
            .as_ref()
            .and_then(|q| q.queries.get(id))
            .map(|q| q.text.clone())
            .unwrap_or_else(|| format!("query {id}"))
    }

    pub fn class_names(&self) -> Vec<String> {
        let meta = &self.checkpoint.meta.class_names;
        if meta.len() == self.checkpoint.model.n_classes() {
            meta.clone()
        } else {
            (0..self.checkpoint.model.n_classes()).map(|y| format!("class {y}")).collect()
        }
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            name: self.name.clone(),
            n_queries: self.checkpoint.model.n_queries(),
            n_classes: self.checkpoint.model.n_classes(),
            class_names: self.class_names(),
            query_set: self.queries.as_ref().map(|q| q.name.clone()),
            n_samples: self.samples.as_ref().map(|s| s.len()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub n_queries: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub query_set: Option<String>,
    pub n_samples: Option<usize>,
}

/// Read-only set of models, shared by every session.
#[derive(Debug, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<LoadedModel>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: LoadedModel) {
        self.models.insert(model.name.clone(), Arc::new(model));
    }

    pub fn get(&self, name: &str) -> Option<Arc<LoadedModel>> {
        self.models.get(name).cloned()
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.models.values().map(|m| m.summary()).collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Load every `<name>.vipckpt` in `dir`. A sibling `<name>.queries.json`
    /// supplies query texts and a `<name>.samples/` directory supplies rows
    /// for dataset-row sessions.
    pub fn load_dir(dir: impl AsRef<Path>) -> vip_core::Result<Self> {
        let dir = dir.as_ref();
        let mut registry = ModelRegistry::new();
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == CHECKPOINT_EXT))
            .collect();
        paths.sort();
        for path in paths {
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let checkpoint = Checkpoint::read(&path)?;
            let queries_path = dir.join(format!("{name}.queries.json"));
            let queries = if queries_path.exists() {
                Some(QuerySet::read_json(&queries_path)?)
            } else {
                None
            };
            let samples_dir = dir.join(format!("{name}.samples"));
            let samples = if samples_dir.is_dir() {
                Some(LabeledDataset::load_dir(&samples_dir)?.0)
            } else {
                None
            };
            tracing::info!(model = name, "loaded checkpoint");
            registry.insert(LoadedModel::new(name, checkpoint, queries, samples)?);
        }
        Ok(registry)
    }
}
