//! Seeded generator of small discrete tasks that mix informative queries
//! with the kinds of queries concept filters target: constants, exact
//! duplicates and class indicators.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DiscreteHistory, DiscreteTaskModel, TaskModel};
use crate::concept::{
    AnswerMatrix, EmbeddingKind, EmbeddingTable, LabeledDataset, Query, QuerySet, Split,
};
use crate::error::{Error, Result};
use crate::trajectory::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub n_classes: usize,
    /// Number of informative (noisy class-partition) queries.
    pub n_queries: usize,
    /// Flip probability of informative answers.
    pub noise: f64,
    pub duplicates: usize,
    pub constants: usize,
    pub class_indicators: usize,
    /// Flip probability of class-indicator answers; defaults to `noise`.
    #[serde(default)]
    pub indicator_noise: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    pub seed: u64,
}

fn default_embedding_dim() -> usize {
    64
}

impl SyntheticTaskConfig {
    /// Four classes, ten informative queries at 10% noise plus two
    /// constants, one duplicate and one class indicator.
    pub fn standard(seed: u64) -> Self {
        SyntheticTaskConfig {
            n_classes: 4,
            n_queries: 10,
            noise: 0.1,
            duplicates: 1,
            constants: 2,
            class_indicators: 1,
            indicator_noise: None,
            n_train: 4000,
            n_test: 1000,
            embedding_dim: default_embedding_dim(),
            seed,
        }
    }

    pub fn total_queries(&self) -> usize {
        self.n_queries + self.constants + self.duplicates + self.class_indicators
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryRole {
    Informative,
    Constant,
    Duplicate { source: usize },
    ClassIndicator { class: usize },
}

impl QueryRole {
    /// Whether a concept filter is expected to remove this query.
    pub fn is_filter_target(self) -> bool {
        !matches!(self, QueryRole::Informative)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: SyntheticTaskConfig,
    pub model: DiscreteTaskModel,
    pub roles: Vec<QueryRole>,
    pub queries: QuerySet,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// One unit-norm text embedding per query; indicators reuse their class
    /// embedding and duplicates their source's.
    pub query_embeddings: EmbeddingTable,
    pub class_embeddings: EmbeddingTable,
}

fn ceil_log2(n: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < n {
        bits += 1;
    }
    bits
}

fn bernoulli_table(ones: &[bool], flip: f64) -> Vec<Vec<f64>> {
    ones.iter()
        .map(|&one| {
            if one {
                vec![flip, 1.0 - flip]
            } else {
                vec![1.0 - flip, flip]
            }
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Build the model, query metadata, embeddings and train/test samples.
/// Query ids are laid out as informative, constants, duplicates, then class
/// indicators.
pub fn make_synthetic_task(config: &SyntheticTaskConfig) -> Result<SyntheticTask> {
    let n = config.n_classes;
    if n < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if !(0.0..=0.5).contains(&config.noise) {
        return Err(Error::invalid(format!(
            "noise {} outside [0, 0.5]",
            config.noise
        )));
    }
    let indicator_noise = config.indicator_noise.unwrap_or(config.noise);
    if !(0.0..=0.5).contains(&indicator_noise) {
        return Err(Error::invalid(format!(
            "indicator noise {indicator_noise} outside [0, 0.5]"
        )));
    }
    if config.duplicates > 0 && config.n_queries == 0 {
        return Err(Error::invalid(
            "duplicates need at least one informative query",
        ));
    }
    if config.total_queries() == 0 {
        return Err(Error::invalid("task has no queries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut tables = Vec::new();
    let mut roles = Vec::new();
    let bits = ceil_log2(n);
    for j in 0..config.n_queries {
        let ones: Vec<bool> = if j < bits {
            (0..n).map(|y| (y >> j) & 1 == 1).collect()
        } else {
            let chosen = sample(&mut rng, n, n / 2);
            let mut ones = vec![false; n];
            for c in chosen {
                ones[c] = true;
            }
            ones
        };
        tables.push(bernoulli_table(&ones, config.noise));
        roles.push(QueryRole::Informative);
    }
    for _ in 0..config.constants {
        tables.push(bernoulli_table(&vec![false; n], 0.0));
        roles.push(QueryRole::Constant);
    }
    let mut copies = Vec::new();
    for _ in 0..config.duplicates {
        let source = rng.random_range(0..config.n_queries);
        copies.push((tables.len(), source));
        tables.push(tables[source].clone());
        roles.push(QueryRole::Duplicate { source });
    }
    for i in 0..config.class_indicators {
        let class = i % n;
        let ones: Vec<bool> = (0..n).map(|y| y == class).collect();
        tables.push(bernoulli_table(&ones, indicator_noise));
        roles.push(QueryRole::ClassIndicator { class });
    }
    let total = tables.len();
    let mut model = DiscreteTaskModel::new(vec![1.0 / n as f64; n], vec![2; total], tables)?;
    for (q, s) in copies {
        model.set_copy(q, s)?;
    }

    let class_names: Vec<String> = (0..n).map(|y| format!("class {y}")).collect();
    let queries = QuerySet::new(
        format!("synthetic-{}", config.seed),
        roles
            .iter()
            .enumerate()
            .map(|(id, role)| {
                let (text, attribute, value) = match *role {
                    QueryRole::Informative => (
                        format!("trait {id}"),
                        format!("trait {id}"),
                        "present".to_string(),
                    ),
                    QueryRole::Constant => (
                        format!("absent trait {id}"),
                        format!("trait {id}"),
                        "absent".to_string(),
                    ),
                    QueryRole::Duplicate { source } => (
                        format!("trait {source} copy {id}"),
                        format!("trait {source}"),
                        "copy".to_string(),
                    ),
                    QueryRole::ClassIndicator { class } => (
                        format!("is {}", class_names[class]),
                        "class".to_string(),
                        class_names[class].clone(),
                    ),
                };
                Query {
                    id,
                    text,
                    attribute,
                    value,
                    origin_class: "synthetic".to_string(),
                }
            })
            .collect(),
    )?;

    let dim = config.embedding_dim.max(2);
    let class_vecs: Vec<Vec<f32>> = (0..n).map(|_| random_unit(&mut rng, dim)).collect();
    let mut query_vecs: Vec<Vec<f32>> = Vec::with_capacity(total);
    for role in &roles {
        let v = match *role {
            QueryRole::Duplicate { source } => query_vecs[source].clone(),
            QueryRole::ClassIndicator { class } => class_vecs[class].clone(),
            _ => random_unit(&mut rng, dim),
        };
        query_vecs.push(v);
    }
    let query_embeddings =
        EmbeddingTable::new(EmbeddingKind::Text, total, dim, query_vecs.concat())?;
    let class_embeddings = EmbeddingTable::new(EmbeddingKind::Text, n, dim, class_vecs.concat())?;

    let train = sample_dataset(&model, &class_names, config.n_train, Split::Train, &mut rng)?;
    let test = sample_dataset(&model, &class_names, config.n_test, Split::Test, &mut rng)?;

    Ok(SyntheticTask {
        config: config.clone(),
        model,
        roles,
        queries,
        train,
        test,
        query_embeddings,
        class_embeddings,
    })
}

/// Draw `n_samples` (answers, label) pairs. Symbol 1 is recorded as +1.0 and
/// symbol 0 as -1.0.
pub fn sample_dataset(
    model: &DiscreteTaskModel,
    class_names: &[String],
    n_samples: usize,
    split: Split,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    let q = model.n_queries();
    let mut values = Vec::with_capacity(n_samples * q);
    let mut labels = Vec::with_capacity(n_samples);
    let mut symbols = vec![0usize; q];
    for _ in 0..n_samples {
        let y = draw(&model.prior, rng);
        for j in 0..q {
            let src = model.source_of(j);
            symbols[j] = if src != j {
                symbols[src]
            } else {
                draw(&model.cond_probs[j][y], rng)
            };
        }
        values.extend(symbols.iter().map(|&s| if s == 1 { 1.0 } else { -1.0 }));
        labels.push(y);
    }
    LabeledDataset::new(
        split,
        labels,
        class_names.to_vec(),
        AnswerMatrix::new(n_samples, q, values)?,
    )
}

fn draw(dist: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final partial sum; fall back to the last
    // symbol with mass.
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Accuracy of the exact posterior argmax given every answer of each sample.
pub fn bayes_accuracy(model: &DiscreteTaskModel, data: &LabeledDataset) -> Result<f64> {
    let mut hits = 0;
    for i in 0..data.len() {
        let history = DiscreteHistory {
            observed: data
                .answers
                .row(i)
                .iter()
                .enumerate()
                .map(|(q, &v)| (q, usize::from(v > 0.0)))
                .collect(),
        };
        if argmax(&model.posterior(&history)?) == data.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}
