use rand::Rng;
use serde::{Deserialize, Serialize};

use super::history::History;
use crate::error::{Error, Result};
use crate::nn::{softmax, Arch, Mlp};
use crate::trajectory::argmax;

/// Shape of the predictor and querier networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub arch: Arch,
    pub hidden_width: usize,
    /// Append the mask to the network input so an answer of exactly 0 is
    /// distinguishable from an unasked query.
    #[serde(default)]
    pub mask_channel: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            arch: Arch::Shallow,
            hidden_width: 512,
            mask_channel: false,
        }
    }
}

/// Output of the querier for one history.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
    pub logits: Vec<f64>,
}

/// How the selected query enters the predictor during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPath {
    /// Forward with the one-hot choice, backward through the tempered
    /// softmax.
    StraightThrough,
    /// Forward and backward through the tempered softmax.
    Soft,
}

/// Gradient buffers for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub predictor: Vec<f64>,
    pub querier: Vec<f64>,
}

impl Grads {
    pub fn zeros(model: &VipModel) -> Self {
        Grads {
            predictor: vec![0.0; model.predictor.n_params()],
            querier: vec![0.0; model.querier.n_params()],
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.predictor.iter_mut().zip(&other.predictor) {
            *a += b;
        }
        for (a, b) in self.querier.iter_mut().zip(&other.querier) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.predictor
            .iter_mut()
            .chain(self.querier.iter_mut())
            .for_each(|v| *v *= s);
    }
}

pub const LOG_CLAMP: f64 = 1e-12;

/// KL from the one-hot label distribution to the predicted posterior, i.e.
/// the negative log-likelihood of the label.
pub fn vip_loss(posterior: &[f64], label: usize) -> f64 {
    let p = posterior[label];
    // Written as a comparison rather than f64::max so a NaN posterior stays NaN.
    -(if p < LOG_CLAMP { LOG_CLAMP } else { p }).ln()
}

/// The predictor/querier pair. The two networks share no weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VipModel {
    pub config: MlpConfig,
    n_queries: usize,
    n_classes: usize,
    pub predictor: Mlp,
    pub querier: Mlp,
}

impl VipModel {
    pub fn new(
        config: MlpConfig,
        n_queries: usize,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_queries == 0 || n_classes == 0 || config.hidden_width == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        let in_dim = input_dim(&config, n_queries);
        let predictor = Mlp::new(config.arch, in_dim, config.hidden_width, n_classes, rng);
        let querier = Mlp::new(config.arch, in_dim, config.hidden_width, n_queries, rng);
        Ok(VipModel {
            config,
            n_queries,
            n_classes,
            predictor,
            querier,
        })
    }

    pub fn from_parts(
        config: MlpConfig,
        n_queries: usize,
        n_classes: usize,
        predictor_params: Vec<f64>,
        querier_params: Vec<f64>,
    ) -> Result<Self> {
        let in_dim = input_dim(&config, n_queries);
        Ok(VipModel {
            config,
            n_queries,
            n_classes,
            predictor: Mlp::from_params(
                config.arch,
                in_dim,
                config.hidden_width,
                n_classes,
                predictor_params,
            )?,
            querier: Mlp::from_params(
                config.arch,
                in_dim,
                config.hidden_width,
                n_queries,
                querier_params,
            )?,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn check(&self, history: &History) -> Result<()> {
        if history.len() != self.n_queries {
            return Err(Error::dims(format!(
                "history covers {} queries, model expects {}",
                history.len(),
                self.n_queries
            )));
        }
        Ok(())
    }

    /// Posterior over classes given the history.
    pub fn predictor_forward(&self, history: &History) -> Result<Vec<f64>> {
        self.check(history)?;
        Ok(softmax(
            &self
                .predictor
                .forward(&history.input(self.config.mask_channel)),
        ))
    }

    /// Next-query distribution. Already-selected queries get probability
    /// zero; `hard` is the one-hot argmax of `soft`.
    pub fn querier_forward(&self, history: &History, tau: f64) -> Result<Selection> {
        self.check(history)?;
        if history.is_full() {
            return Err(Error::AllQueriesSelected);
        }
        let logits = self
            .querier
            .forward(&history.input(self.config.mask_channel));
        Ok(select(&logits, history, tau))
    }

    /// Loss of one training example: the querier picks one more query for
    /// `history`, the predictor scores the augmented history against
    /// `label`. Gradients for both networks are accumulated into `grads`
    /// when given.
    pub fn example_loss(
        &self,
        history: &History,
        row: &[f64],
        label: usize,
        tau: f64,
        path: SelectionPath,
        grads: Option<&mut Grads>,
    ) -> Result<f64> {
        self.check(history)?;
        if row.len() != self.n_queries {
            return Err(Error::dims("answer row length"));
        }
        if history.is_full() {
            return Err(Error::AllQueriesSelected);
        }
        let mc = self.config.mask_channel;
        let q_trace = self.querier.forward_traced(&history.input(mc));
        let sel = select(&q_trace.output, history, tau);
        let z = match path {
            SelectionPath::StraightThrough => &sel.hard,
            SelectionPath::Soft => &sel.soft,
        };
        let q = self.n_queries;
        let mut p_in = Vec::with_capacity(if mc { 2 * q } else { q });
        p_in.extend((0..q).map(|j| history.values()[j] + row[j] * z[j]));
        if mc {
            p_in.extend((0..q).map(|j| history.mask()[j] + z[j]));
        }
        let p_trace = self.predictor.forward_traced(&p_in);
        let post = softmax(&p_trace.output);
        let loss = vip_loss(&post, label);

        if let Some(grads) = grads {
            let mut d_logits = post.clone();
            if post[label] > LOG_CLAMP {
                d_logits[label] -= 1.0;
            } else {
                d_logits.fill(0.0);
            }
            let d_in = self
                .predictor
                .backward(&p_trace, &d_logits, &mut grads.predictor);
            let d_z: Vec<f64> = (0..q)
                .map(|j| d_in[j] * row[j] + if mc { d_in[q + j] } else { 0.0 })
                .collect();
            let dot: f64 = sel.soft.iter().zip(&d_z).map(|(s, d)| s * d).sum();
            let d_q: Vec<f64> = sel
                .soft
                .iter()
                .zip(&d_z)
                .map(|(&s, &d)| s * (d - dot) / tau)
                .collect();
            self.querier.backward(&q_trace, &d_q, &mut grads.querier);
        }
        Ok(loss)
    }

    /// Negative log-likelihood of the predictor alone on `history`, with
    /// predictor gradients accumulated into `grad`.
    pub fn predictor_loss(
        &self,
        history: &History,
        label: usize,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        self.check(history)?;
        let trace = self
            .predictor
            .forward_traced(&history.input(self.config.mask_channel));
        let post = softmax(&trace.output);
        if let Some(grad) = grad {
            let mut d = post.clone();
            if post[label] > LOG_CLAMP {
                d[label] -= 1.0;
            } else {
                d.fill(0.0);
            }
            self.predictor.backward(&trace, &d, grad);
        }
        Ok(vip_loss(&post, label))
    }
}

fn input_dim(config: &MlpConfig, n_queries: usize) -> usize {
    if config.mask_channel {
        2 * n_queries
    } else {
        n_queries
    }
}

pub fn select(logits: &[f64], history: &History, tau: f64) -> Selection {
    let masked: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            if history.is_selected(j) {
                f64::NEG_INFINITY
            } else {
                l / tau
            }
        })
        .collect();
    let soft = softmax(&masked);
    let index = argmax(&masked);
    let mut hard = vec![0.0; logits.len()];
    hard[index] = 1.0;
    Selection {
        index,
        hard,
        soft,
        logits: logits.to_vec(),
    }
}
