use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::history::History;
use super::model::{Grads, MlpConfig, SelectionPath, VipModel};
use crate::concept::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, linear_decay, Adam};

/// Examples per rayon task. Gradients are reduced chunk by chunk in a fixed
/// order, so the result does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub t_max: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay_epochs: usize,
    pub batch_size: usize,
    /// Longest sampled history. `None` means one short of the full query
    /// set, so the querier always has something left to pick.
    #[serde(default)]
    pub k_max: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1: StageConfig {
                epochs: 4000,
                lr: 1e-4,
            },
            stage2: StageConfig {
                epochs: 1500,
                lr: 5e-5,
            },
            t_max: 100,
            tau_start: 1.0,
            tau_end: 0.2,
            tau_decay_epochs: 20,
            batch_size: 128,
            k_max: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The short schedule used for synthetic tasks: 300 random-history
    /// epochs followed by 100 biased ones.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            stage1: StageConfig {
                epochs: 300,
                lr: 1e-4,
            },
            stage2: StageConfig {
                epochs: 100,
                lr: 5e-5,
            },
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1.epochs == 0 && self.stage2.epochs == 0 {
            return Err(Error::invalid("at least one training epoch is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        for tau in [self.tau_start, self.tau_end] {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::invalid(format!("temperature {tau} outside (0, 1]")));
            }
        }
        for lr in [self.stage1.lr, self.stage2.lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!(
                    "learning rate {lr} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn tau(&self, epoch: usize) -> f64 {
        linear_decay(self.tau_start, self.tau_end, epoch, self.tau_decay_epochs)
    }
}

/// How training histories are drawn.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// `k` distinct queries chosen uniformly at random.
    Random,
    /// `k` queries chosen by rolling out the querier, each pick sampled from
    /// its tempered softmax.
    Biased { model: &'a VipModel, tau: f64 },
}

/// Draw `k ~ Uniform{0..=k_max}` and build a history of `k` answers from
/// `row`.
pub fn sample_history(
    row: &[f64],
    sampling: Sampling<'_>,
    k_max: usize,
    rng: &mut impl Rng,
) -> Result<History> {
    if k_max > row.len() {
        return Err(Error::invalid(format!(
            "history length {k_max} exceeds {} queries",
            row.len()
        )));
    }
    let k = rng.random_range(0..=k_max);
    match sampling {
        Sampling::Random => {
            let picks = index::sample(rng, row.len(), k).into_vec();
            Ok(History::from_row(row, &picks))
        }
        Sampling::Biased { model, tau } => {
            let mut h = History::empty(row.len());
            for _ in 0..k {
                let sel = model.querier_forward(&h, tau)?;
                let q = sample_categorical(&sel.soft, rng);
                h.add(q, row[q])?;
            }
            Ok(h)
        }
    }
}

pub fn sample_categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// One row of the training loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub tau: f64,
    pub loss: f64,
}

pub fn write_loss_log(records: &[LossRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_loss_log(records: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    write_loss_log(records, std::fs::File::create(path)?)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Independent stream for one (stage, epoch, sample) triple, so sampling
/// does not depend on batch order or thread count.
fn example_rng(seed: u64, stage: u8, epoch: usize, sample: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&u64::from(stage).to_le_bytes());
    key[16..24].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[24..].copy_from_slice(&sample.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Train a fresh model (or continue `initial`) on a standardized training
/// split. Returns the trained model and the per-epoch loss log.
pub fn train(
    config: &TrainConfig,
    mlp: MlpConfig,
    data: &LabeledDataset,
    initial: Option<VipModel>,
) -> Result<(VipModel, Vec<LossRecord>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let n_queries = data.answers.n_queries;
    if n_queries < 2 {
        return Err(Error::invalid("training needs at least two queries"));
    }
    let mut model = match initial {
        Some(m) => {
            if m.n_queries() != n_queries || m.n_classes() != data.n_classes() {
                return Err(Error::dims(format!(
                    "initial model is {}x{}, data is {}x{}",
                    m.n_queries(),
                    m.n_classes(),
                    n_queries,
                    data.n_classes()
                )));
            }
            m
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            VipModel::new(mlp, n_queries, data.n_classes(), &mut rng)?
        }
    };
    let k_max = config.k_max.unwrap_or(n_queries - 1).min(n_queries - 1);
    let mut adam_p = Adam::new(model.predictor.n_params());
    let mut adam_q = Adam::new(model.querier.n_params());
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for (stage, sc) in [(1u8, config.stage1), (2u8, config.stage2)] {
        for epoch in 0..sc.epochs {
            let lr = cosine_lr(sc.lr, epoch, config.t_max);
            let tau = config.tau(epoch);
            order.shuffle(&mut example_rng(config.seed, stage, epoch, u64::MAX));
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let parts: Vec<Result<(f64, Grads)>> = batch
                    .par_chunks(CHUNK)
                    .map(|chunk| {
                        let mut g = Grads::zeros(&model);
                        let mut loss = 0.0;
                        for &i in chunk {
                            let row = data.answers.row(i);
                            let mut rng = example_rng(config.seed, stage, epoch, i as u64);
                            let sampling = if stage == 1 {
                                Sampling::Random
                            } else {
                                Sampling::Biased { model: &model, tau }
                            };
                            let h = sample_history(row, sampling, k_max, &mut rng)?;
                            loss += model.example_loss(
                                &h,
                                row,
                                data.labels[i],
                                tau,
                                SelectionPath::StraightThrough,
                                Some(&mut g),
                            )?;
                        }
                        Ok((loss, g))
                    })
                    .collect();
                let mut total = Grads::zeros(&model);
                let mut batch_loss = 0.0;
                for part in parts {
                    let (l, g) = part?;
                    batch_loss += l;
                    total.add(&g);
                }
                if !batch_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        stage,
                        detail: format!("batch loss {batch_loss} at lr {lr:e}, tau {tau}"),
                    });
                }
                epoch_loss += batch_loss;
                total.scale(1.0 / batch.len() as f64);
                adam_p.step(model.predictor.params_mut(), &total.predictor, lr);
                adam_q.step(model.querier.params_mut(), &total.querier, lr);
                if !all_finite(model.predictor.params()) || !all_finite(model.querier.params()) {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        stage,
                        detail: format!("parameters diverged at lr {lr:e}, tau {tau}"),
                    });
                }
            }
            log.push(LossRecord {
                epoch,
                stage,
                lr,
                tau,
                loss: epoch_loss / data.len() as f64,
            });
        }
    }
    Ok((model, log))
}

/// Fit the predictor alone on full histories, the dense upper-bound
/// classifier. Uses stage 1 of `config` for epochs and learning rate.
pub fn train_predictor_full(
    config: &TrainConfig,
    mlp: MlpConfig,
    data: &LabeledDataset,
) -> Result<(VipModel, Vec<LossRecord>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let n_queries = data.answers.n_queries;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VipModel::new(mlp, n_queries, data.n_classes(), &mut rng)?;
    let all: Vec<usize> = (0..n_queries).collect();
    let histories: Vec<History> = (0..data.len())
        .map(|i| History::from_row(data.answers.row(i), &all))
        .collect();
    let mut adam = Adam::new(model.predictor.n_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let sc = config.stage1;
    for epoch in 0..sc.epochs {
        let lr = cosine_lr(sc.lr, epoch, config.t_max);
        order.shuffle(&mut example_rng(config.seed, 0, epoch, u64::MAX));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let parts: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; model.predictor.n_params()];
                    let mut loss = 0.0;
                    for &i in chunk {
                        loss +=
                            model.predictor_loss(&histories[i], data.labels[i], Some(&mut g))?;
                    }
                    Ok((loss, g))
                })
                .collect();
            let mut total = vec![0.0; model.predictor.n_params()];
            let mut batch_loss = 0.0;
            for part in parts {
                let (l, g) = part?;
                batch_loss += l;
                total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    stage: 1,
                    detail: format!("batch loss {batch_loss} at lr {lr:e}"),
                });
            }
            epoch_loss += batch_loss;
            let s = 1.0 / batch.len() as f64;
            total.iter_mut().for_each(|v| *v *= s);
            adam.step(model.predictor.params_mut(), &total, lr);
            if !all_finite(model.predictor.params()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    stage: 1,
                    detail: format!("parameters diverged at lr {lr:e}"),
                });
            }
        }
        log.push(LossRecord {
            epoch,
            stage: 1,
            lr,
            tau: config.tau_end,
            loss: epoch_loss / data.len() as f64,
        });
    }
    Ok((model, log))
}
