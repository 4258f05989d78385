//! Oracles shared by the integration and acceptance tests. Nothing here
//! calls into the code it checks beyond reading plain model fields.

#![allow(dead_code)]

use rand::Rng;
use vip_core::concept::{AnswerMatrix, LabeledDataset, Split};
use vip_core::engine::{History, SelectionPath, VipModel};
use vip_core::exact::DiscreteTaskModel;
use vip_core::nn::softmax;

/// Every answer vector of the model, with its alphabet-size radix.
fn answer_vectors(model: &DiscreteTaskModel) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &k in &model.alphabet_sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// P(answers, y) from the model's tables, treating a copy as a hard
/// equality with its source.
fn joint_cell(model: &DiscreteTaskModel, answers: &[usize], y: usize) -> f64 {
    let mut p = model.prior[y];
    for (q, &a) in answers.iter().enumerate() {
        match model.copy_of.get(q).copied().flatten() {
            Some(src) => {
                if answers[src] != a {
                    return 0.0;
                }
            }
            None => p *= model.cond_probs[q][y][a],
        }
    }
    p
}

/// Full joint over (answer vector, class), restricted to the history event
/// and renormalized.
pub fn conditioned_joint(
    model: &DiscreteTaskModel,
    observed: &[(usize, usize)],
) -> Vec<(Vec<usize>, usize, f64)> {
    let n = model.prior.len();
    let mut cells = Vec::new();
    for v in answer_vectors(model) {
        if observed.iter().any(|&(q, a)| v[q] != a) {
            continue;
        }
        for y in 0..n {
            let p = joint_cell(model, &v, y);
            if p > 0.0 {
                cells.push((v.clone(), y, p));
            }
        }
    }
    let z: f64 = cells.iter().map(|c| c.2).sum();
    for c in &mut cells {
        c.2 /= z;
    }
    cells
}

pub fn brute_force_posterior(model: &DiscreteTaskModel, observed: &[(usize, usize)]) -> Vec<f64> {
    let mut post = vec![0.0; model.prior.len()];
    for (_, y, p) in conditioned_joint(model, observed) {
        post[y] += p;
    }
    post
}

/// I(q; Y | history) by summing over the whole conditioned joint.
pub fn brute_force_mi(model: &DiscreteTaskModel, query: usize, observed: &[(usize, usize)]) -> f64 {
    let k = model.alphabet_sizes[query];
    let n = model.prior.len();
    let mut pay = vec![vec![0.0; n]; k];
    for (v, y, p) in conditioned_joint(model, observed) {
        pay[v[query]][y] += p;
    }
    let pa: Vec<f64> = pay.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..n).map(|y| pay.iter().map(|r| r[y]).sum()).collect();
    let mut mi = 0.0;
    for a in 0..k {
        for y in 0..n {
            let p = pay[a][y];
            if p > 0.0 {
                mi += p * (p / (pa[a] * py[y])).ln();
            }
        }
    }
    mi
}

pub fn brute_force_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

fn random_dist(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut d: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let rest: f64 = d[1..].iter().sum();
    d[0] = 1.0 - rest;
    d
}

/// A random binary-query model: random prior, random tables, with some
/// constant, deterministic and copied queries mixed in.
pub fn random_binary_model(
    rng: &mut impl Rng,
    max_classes: usize,
    max_queries: usize,
) -> DiscreteTaskModel {
    let n = rng.random_range(2..=max_classes);
    let nq = rng.random_range(1..=max_queries);
    let prior = random_dist(rng, n);
    let mut tables = Vec::with_capacity(nq);
    for _ in 0..nq {
        let kind = rng.random_range(0..6);
        let table: Vec<Vec<f64>> = match kind {
            0 => {
                let p: f64 = rng.random_range(0.0..1.0);
                vec![vec![1.0 - p, p]; n]
            }
            1 => (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        vec![1.0, 0.0]
                    } else {
                        vec![0.0, 1.0]
                    }
                })
                .collect(),
            _ => (0..n)
                .map(|_| {
                    let p: f64 = rng.random_range(0.0..1.0);
                    vec![1.0 - p, p]
                })
                .collect(),
        };
        tables.push(table);
    }
    let mut m = DiscreteTaskModel::new(prior, vec![2; nq], tables).unwrap();
    if nq >= 2 && rng.random_bool(0.3) {
        let src = rng.random_range(0..nq - 1);
        m.set_copy(nq - 1, src).unwrap();
    }
    m
}

/// A random history with positive probability under the model.
pub fn random_history(rng: &mut impl Rng, model: &DiscreteTaskModel) -> Vec<(usize, usize)> {
    let nq = model.alphabet_sizes.len();
    let y = {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = model.prior.len() - 1;
        for (i, &p) in model.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    let mut answers = vec![0usize; nq];
    for q in 0..nq {
        answers[q] = match model.copy_of.get(q).copied().flatten() {
            Some(src) => answers[src],
            None => {
                let p1 = model.cond_probs[q][y][1];
                usize::from(rng.random::<f64>() < p1)
            }
        };
    }
    let k = rng.random_range(0..nq);
    let mut ids: Vec<usize> = (0..nq).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    ids.truncate(k);
    ids.into_iter().map(|q| (q, answers[q])).collect()
}

/// Straight-through surrogate loss: the forward value equals the hard-path
/// loss, while the querier's dependence enters only through
/// `soft(theta) - soft(theta0)`, whose derivative is the estimator's.
pub fn straight_through_surrogate(
    model: &VipModel,
    history: &History,
    row: &[f64],
    label: usize,
    tau: f64,
    frozen_soft: &[f64],
) -> f64 {
    let q = row.len();
    let mut input = history.values().to_vec();
    if model.config.mask_channel {
        input.extend_from_slice(history.mask());
    }
    let logits = model.querier.forward(&input);
    let scaled: Vec<f64> = (0..q)
        .map(|j| {
            if history.mask()[j] != 0.0 {
                f64::NEG_INFINITY
            } else {
                logits[j] / tau
            }
        })
        .collect();
    let soft = softmax(&scaled);
    let mut best = 0;
    for j in 0..q {
        if scaled[j] > scaled[best] {
            best = j;
        }
    }
    let z: Vec<f64> = (0..q)
        .map(|j| f64::from(u8::from(j == best)) + soft[j] - frozen_soft[j])
        .collect();
    let mut p_in: Vec<f64> = (0..q)
        .map(|j| history.values()[j] + row[j] * z[j])
        .collect();
    if model.config.mask_channel {
        p_in.extend((0..q).map(|j| history.mask()[j] + z[j]));
    }
    let post = softmax(&model.predictor.forward(&p_in));
    -post[label].max(1e-12).ln()
}

/// The querier's tempered soft distribution, computed directly.
pub fn soft_selection(model: &VipModel, history: &History, tau: f64) -> Vec<f64> {
    let mut input = history.values().to_vec();
    if model.config.mask_channel {
        input.extend_from_slice(history.mask());
    }
    let logits = model.querier.forward(&input);
    let scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            if history.mask()[j] != 0.0 {
                f64::NEG_INFINITY
            } else {
                l / tau
            }
        })
        .collect();
    softmax(&scaled)
}

pub struct GradCheck {
    pub max_rel_error: f64,
    /// (analytic, numeric) at the worst parameter.
    pub worst: (f64, f64),
    pub n_params: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(1e-8)
    }
}

fn five_point(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (p1, m1, p2, m2) = (f(h), f(-h), f(2.0 * h), f(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Compare analytic gradients of one example with five-point central
/// differences (error of order `h^4`).
/// Predictor parameters are checked against the hard-path loss and querier
/// parameters against the straight-through surrogate; with
/// `SelectionPath::Soft` both are checked against the soft-path loss.
pub fn check_example_gradients(
    model: &VipModel,
    history: &History,
    row: &[f64],
    label: usize,
    tau: f64,
    path: SelectionPath,
    h: f64,
) -> GradCheck {
    let mut grads = vip_core::engine::Grads::zeros(model);
    model
        .example_loss(history, row, label, tau, path, Some(&mut grads))
        .unwrap();
    let frozen = soft_selection(model, history, tau);
    let mut worst: f64 = 0.0;
    let mut worst_pair = (0.0, 0.0);
    let mut count = 0;
    let mut record = |a: f64, b: f64| {
        let e = rel_error(a, b);
        if e > worst {
            worst = e;
            worst_pair = (a, b);
        }
    };

    let mut m = model.clone();
    for i in 0..m.predictor.n_params() {
        let orig = m.predictor.params()[i];
        let numeric = five_point(h, |d| {
            m.predictor.params_mut()[i] = orig + d;
            m.example_loss(history, row, label, tau, path, None)
                .unwrap()
        });
        m.predictor.params_mut()[i] = orig;
        record(grads.predictor[i], numeric);
        count += 1;
    }
    for i in 0..m.querier.n_params() {
        let orig = m.querier.params()[i];
        let loss_at = |m: &VipModel| match path {
            SelectionPath::Soft => m
                .example_loss(history, row, label, tau, path, None)
                .unwrap(),
            SelectionPath::StraightThrough => {
                straight_through_surrogate(m, history, row, label, tau, &frozen)
            }
        };
        let numeric = five_point(h, |d| {
            m.querier.params_mut()[i] = orig + d;
            loss_at(&m)
        });
        m.querier.params_mut()[i] = orig;
        record(grads.querier[i], numeric);
        count += 1;
    }
    GradCheck {
        max_rel_error: worst,
        worst: worst_pair,
        n_params: count,
    }
}

/// Plain full-batch gradient descent on unregularized mean cross-entropy,
/// run until the gradient norm is tiny. Returns (weights, bias, objective).
pub fn logistic_regression_oracle(
    x: &AnswerMatrix,
    labels: &[usize],
    n_classes: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let (n, d) = (x.n_samples, x.n_queries);
    let mut w = vec![0.0; n_classes * d];
    let mut b = vec![0.0; n_classes];
    let objective = |w: &[f64], b: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let z: Vec<f64> = (0..n_classes)
                .map(|c| b[c] + (0..d).map(|j| w[c * d + j] * x.get(i, j)).sum::<f64>())
                .collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[labels[i]];
        }
        total / n as f64
    };
    let mut lr = 1.0;
    let mut f = objective(&w, &b);
    for _ in 0..200_000 {
        let mut gw = vec![0.0; n_classes * d];
        let mut gb = vec![0.0; n_classes];
        for i in 0..n {
            let z: Vec<f64> = (0..n_classes)
                .map(|c| b[c] + (0..d).map(|j| w[c * d + j] * x.get(i, j)).sum::<f64>())
                .collect();
            let p = softmax(&z);
            for c in 0..n_classes {
                let r = p[c] - if c == labels[i] { 1.0 } else { 0.0 };
                gb[c] += r / n as f64;
                for j in 0..d {
                    gw[c * d + j] += r * x.get(i, j) / n as f64;
                }
            }
        }
        let gnorm: f64 = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - lr * g).collect();
            let nb: Vec<f64> = b.iter().zip(&gb).map(|(a, g)| a - lr * g).collect();
            let nf = objective(&nw, &nb);
            if nf <= f - 0.5 * lr * gnorm * gnorm {
                w = nw;
                b = nb;
                f = nf;
                lr *= 1.2;
                break;
            }
            lr /= 2.0;
        }
    }
    (w, b, f)
}

/// Overlapping Gaussian blobs in `d` dimensions, one per class.
pub fn blob_dataset(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    n_classes: usize,
    spread: f64,
) -> LabeledDataset {
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % n_classes;
        labels.push(y);
        for j in 0..d {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            values.push(centers[y][j] + spread * (u + v));
        }
    }
    let names = (0..n_classes).map(|c| format!("class{c}")).collect();
    LabeledDataset::new(
        Split::Train,
        labels,
        names,
        AnswerMatrix::new(n, d, values).unwrap(),
    )
    .unwrap()
}
