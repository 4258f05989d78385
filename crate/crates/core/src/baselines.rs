//! Comparators: an elastic-net linear model on the answers (the final layer
//! of a label-free concept bottleneck) and a dense classifier that sees
//! every answer.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::{AnswerMatrix, LabeledDataset};
use crate::engine::{
    train_predictor_full, History, LossRecord, MlpConfig, StageConfig, TrainConfig, VipModel,
};
use crate::error::{Error, Result};
use crate::format::{dim_u32, put_f64s, put_u32, Reader};
use crate::nn::softmax;
use crate::trajectory::argmax;

pub const LINEAR_MAGIC: &[u8; 8] = b"VIPLIN1\n";
pub const SPARSITY_EPS: f64 = 1e-8;

/// Multinomial logistic model `softmax(W a + b)` over query answers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConceptModel {
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major `n_classes x n_features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct LinearHeader {
    n_classes: usize,
    n_features: usize,
    lambda: f64,
    alpha: f64,
}

impl LinearConceptModel {
    pub fn zeros(n_classes: usize, n_features: usize, lambda: f64, alpha: f64) -> Self {
        LinearConceptModel {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
            lambda,
            alpha,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * self.n_features..(c + 1) * self.n_features];
                self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        let hits = (0..data.len())
            .filter(|&i| self.predict(data.answers.row(i)) == data.labels[i])
            .count();
        hits as f64 / data.len().max(1) as f64
    }

    /// The regularizer `(1 - alpha)/2 ||W||_F^2 + alpha ||W||_1`.
    pub fn penalty(&self) -> f64 {
        let l2: f64 = self.weights.iter().map(|w| w * w).sum();
        let l1: f64 = self.weights.iter().map(|w| w.abs()).sum();
        (1.0 - self.alpha) / 2.0 * l2 + self.alpha * l1
    }

    /// Mean cross-entropy plus `lambda` times the penalty.
    pub fn objective(&self, x: &AnswerMatrix, labels: &[usize]) -> f64 {
        mean_cross_entropy(self, x, labels) + self.lambda * self.penalty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&LinearHeader {
            n_classes: self.n_classes,
            n_features: self.n_features,
            lambda: self.lambda,
            alpha: self.alpha,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(LINEAR_MAGIC);
        put_u32(&mut out, dim_u32(header.len(), "header length")?);
        out.extend_from_slice(&header);
        put_f64s(&mut out, &self.weights);
        put_f64s(&mut out, &self.bias);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(LINEAR_MAGIC)?;
        let len = r.u32()? as usize;
        let h: LinearHeader = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("linear model header: {e}")))?;
        let cells = h
            .n_classes
            .checked_mul(h.n_features)
            .ok_or_else(|| Error::Format("weight block size overflow".into()))?;
        let weights = r.f64s(cells)?;
        let bias = r.f64s(h.n_classes)?;
        r.finish()?;
        Ok(LinearConceptModel {
            n_classes: h.n_classes,
            n_features: h.n_features,
            weights,
            bias,
            lambda: h.lambda,
            alpha: h.alpha,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Number of query columns with any weight above [`SPARSITY_EPS`] in
/// magnitude.
pub fn sparsity(model: &LinearConceptModel) -> usize {
    (0..model.n_features)
        .filter(|&j| {
            (0..model.n_classes)
                .any(|c| model.weights[c * model.n_features + j].abs() > SPARSITY_EPS)
        })
        .count()
}

fn mean_cross_entropy(model: &LinearConceptModel, x: &AnswerMatrix, labels: &[usize]) -> f64 {
    let n = x.n_samples.max(1) as f64;
    (0..x.n_samples)
        .map(|i| {
            let z = model.logits(x.row(i));
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[labels[i]]
        })
        .sum::<f64>()
        / n
}

/// Smooth part of the objective (cross-entropy plus the squared term) and
/// its gradient.
fn smooth_value_grad(
    model: &LinearConceptModel,
    x: &AnswerMatrix,
    labels: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let (nc, nf) = (model.n_classes, model.n_features);
    let n = x.n_samples.max(1) as f64;
    let mut gw = vec![0.0; nc * nf];
    let mut gb = vec![0.0; nc];
    let mut ce = 0.0;
    for i in 0..x.n_samples {
        let row = x.row(i);
        let z = model.logits(row);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ce += lse - z[labels[i]];
        for c in 0..nc {
            let d = (z[c] - lse).exp() - f64::from(u8::from(c == labels[i]));
            gb[c] += d / n;
            for (g, a) in gw[c * nf..(c + 1) * nf].iter_mut().zip(row) {
                *g += d * a / n;
            }
        }
    }
    let ridge = model.lambda * (1.0 - model.alpha);
    let l2: f64 = model.weights.iter().map(|w| w * w).sum();
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g += ridge * w;
    }
    (ce / n + ridge / 2.0 * l2, gw, gb)
}

/// `sign(v) * max(|v| - t, 0)`, the proximal map of `t |.|`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tol: f64,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        ElasticNetConfig {
            lambda: 0.0,
            alpha: 0.99,
            max_iters: 20_000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetFit {
    pub model: LinearConceptModel,
    /// Objective before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Proximal gradient with backtracking line search. The bias is not
/// penalized. `warm` seeds the weights, e.g. from the previous point of a
/// regularization path.
pub fn train_elastic_net(
    x: &AnswerMatrix,
    labels: &[usize],
    n_classes: usize,
    config: &ElasticNetConfig,
    warm: Option<&LinearConceptModel>,
) -> Result<ElasticNetFit> {
    if labels.len() != x.n_samples {
        return Err(Error::dims(format!(
            "{} labels for {} samples",
            labels.len(),
            x.n_samples
        )));
    }
    if !(0.0..=1.0).contains(&config.alpha) || !(config.lambda >= 0.0) {
        return Err(Error::invalid("need lambda >= 0 and alpha in [0, 1]"));
    }
    let mut model = match warm {
        Some(w) if w.n_classes == n_classes && w.n_features == x.n_queries => LinearConceptModel {
            lambda: config.lambda,
            alpha: config.alpha,
            ..w.clone()
        },
        Some(_) => return Err(Error::dims("warm start has the wrong shape")),
        None => LinearConceptModel::zeros(n_classes, x.n_queries, config.lambda, config.alpha),
    };
    let l1 = config.lambda * config.alpha;
    let mut step = 1.0;
    let (mut g_val, mut gw, mut gb) = smooth_value_grad(&model, x, labels);
    let mut obj = g_val + l1 * model.weights.iter().map(|w| w.abs()).sum::<f64>();
    if !obj.is_finite() {
        return Err(Error::NonFiniteObjective { iterations: 0 });
    }
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        step *= 1.5;
        let accepted = loop {
            let mut cand = model.clone();
            for (w, g) in cand.weights.iter_mut().zip(&gw) {
                *w = soft_threshold(*w - step * g, step * l1);
            }
            for (b, g) in cand.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
            let (c_val, c_gw, c_gb) = smooth_value_grad(&cand, x, labels);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((new, old), g) in cand.weights.iter().zip(&model.weights).zip(&gw) {
                lin += g * (new - old);
                sq += (new - old).powi(2);
            }
            for ((new, old), g) in cand.bias.iter().zip(&model.bias).zip(&gb) {
                lin += g * (new - old);
                sq += (new - old).powi(2);
            }
            if c_val <= g_val + lin + sq / (2.0 * step) {
                break Some((cand, c_val, c_gw, c_gb, sq));
            }
            step /= 2.0;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((cand, c_val, c_gw, c_gb, sq)) = accepted else {
            converged = true;
            break;
        };
        let c_obj = c_val + l1 * cand.weights.iter().map(|w| w.abs()).sum::<f64>();
        if !c_obj.is_finite() {
            return Err(Error::NonFiniteObjective { iterations });
        }
        let decrease = obj - c_obj;
        model = cand;
        g_val = c_val;
        gw = c_gw;
        gb = c_gb;
        obj = c_obj;
        trace.push(obj);
        if decrease < config.tol || sq == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(ElasticNetFit {
        model,
        objective_trace: trace,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub sparsity: usize,
    pub test_accuracy: f64,
}

/// Fit each `lambda` in ascending order, warm-starting from the previous
/// solution, and score it on `test`.
pub fn elastic_net_path(
    train: &LabeledDataset,
    test: &LabeledDataset,
    lambdas: &[f64],
    config: &ElasticNetConfig,
) -> Result<(Vec<LinearConceptModel>, Vec<PathPoint>)> {
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut models: Vec<LinearConceptModel> = Vec::with_capacity(sorted.len());
    let mut points = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let cfg = ElasticNetConfig { lambda, ..*config };
        let fit = train_elastic_net(
            &train.answers,
            &train.labels,
            train.n_classes(),
            &cfg,
            models.last(),
        )?;
        points.push(PathPoint {
            lambda,
            sparsity: sparsity(&fit.model),
            test_accuracy: fit.model.accuracy(test),
        });
        models.push(fit.model);
    }
    Ok((models, points))
}

pub fn write_path_csv(points: &[PathPoint], out: impl io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseConfig {
    pub epochs: usize,
    pub lr: f64,
    pub t_max: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        DenseConfig {
            epochs: 1000,
            lr: 1e-4,
            t_max: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseResult {
    pub model: VipModel,
    pub test_accuracy: f64,
    pub log: Vec<LossRecord>,
}

/// Train the predictor network alone on complete answer vectors and report
/// test accuracy.
pub fn train_dense(
    train: &LabeledDataset,
    test: &LabeledDataset,
    mlp: MlpConfig,
    config: &DenseConfig,
) -> Result<DenseResult> {
    if train.answers.n_queries != test.answers.n_queries {
        return Err(Error::dims("train and test have different query counts"));
    }
    let tc = TrainConfig {
        stage1: StageConfig {
            epochs: config.epochs,
            lr: config.lr,
        },
        stage2: StageConfig {
            epochs: 0,
            lr: config.lr,
        },
        t_max: config.t_max,
        batch_size: config.batch_size,
        seed: config.seed,
        ..TrainConfig::default()
    };
    let (model, log) = train_predictor_full(&tc, mlp, train)?;
    let all: Vec<usize> = (0..test.answers.n_queries).collect();
    let mut hits = 0;
    for i in 0..test.len() {
        let p = model.predictor_forward(&History::from_row(test.answers.row(i), &all))?;
        if argmax(&p) == test.labels[i] {
            hits += 1;
        }
    }
    Ok(DenseResult {
        test_accuracy: hits as f64 / test.len().max(1) as f64,
        model,
        log,
    })
}
