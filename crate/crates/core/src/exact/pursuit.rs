use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::{DiscreteHistory, TaskModel};
use crate::error::{Error, Result};
use crate::trajectory::{argmax, Step, StopReason, StopRule, TrajectoryRecord};

/// Shannon entropy in nats, with 0 log 0 = 0.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::NotADistribution(
            "negative or non-finite entry".into(),
        ));
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(format!("sums to {s}")));
    }
    Ok(-dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

pub fn exact_posterior(model: &impl TaskModel, history: &DiscreteHistory) -> Result<Vec<f64>> {
    model.posterior(history)
}

pub fn mutual_information(
    model: &impl TaskModel,
    query: usize,
    history: &DiscreteHistory,
) -> Result<f64> {
    model.mutual_information(query, history)
}

/// Supplies discrete answer symbols to the exact pursuit loop.
pub trait SymbolSource {
    fn symbol(&mut self, query: usize) -> Result<usize>;
}

impl<F: FnMut(usize) -> Result<usize>> SymbolSource for F {
    fn symbol(&mut self, query: usize) -> Result<usize> {
        self(query)
    }
}

/// Reads symbols from a stored row of real answers: positive values are
/// symbol 1, everything else symbol 0.
#[derive(Debug, Clone, Copy)]
pub struct SignRow<'a>(pub &'a [f64]);

impl SymbolSource for SignRow<'_> {
    fn symbol(&mut self, query: usize) -> Result<usize> {
        self.0
            .get(query)
            .map(|&v| usize::from(v > 0.0))
            .ok_or(Error::IndexOutOfRange {
                index: query,
                len: self.0.len(),
            })
    }
}

/// Mutual-information gap below which two queries count as tied.
pub const MI_TIE_TOL: f64 = 1e-12;

/// Index of the unobserved query with the largest conditional mutual
/// information, lowest id on ties (within [`MI_TIE_TOL`]). `None` once every
/// query is observed.
pub fn most_informative_query(
    model: &impl TaskModel,
    history: &DiscreteHistory,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for q in 0..model.n_queries() {
        if history.contains(q) {
            continue;
        }
        let mi = model.mutual_information(q, history)?;
        if best.is_none_or(|(_, b)| mi > b + MI_TIE_TOL) {
            best = Some((q, mi));
        }
    }
    Ok(best)
}

/// Every unobserved query whose mutual information is within `tol` of the
/// maximum.
pub fn most_informative_set(
    model: &impl TaskModel,
    history: &DiscreteHistory,
    tol: f64,
) -> Result<Vec<usize>> {
    let scores: Vec<(usize, f64)> = (0..model.n_queries())
        .filter(|&q| !history.contains(q))
        .map(|q| model.mutual_information(q, history).map(|mi| (q, mi)))
        .collect::<Result<_>>()?;
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(scores
        .into_iter()
        .filter(|s| s.1 >= best - tol)
        .map(|s| s.0)
        .collect())
}

/// Greedy Information Pursuit with the true model: repeatedly ask the most
/// informative query until the posterior clears the threshold or the budget
/// runs out.
pub fn exact_ip_run(
    model: &impl TaskModel,
    source: &mut dyn SymbolSource,
    rule: StopRule,
) -> Result<TrajectoryRecord> {
    let mut history = DiscreteHistory::new();
    let mut posterior = model.posterior(&history)?;
    let mut steps = Vec::new();
    let stop_reason = loop {
        if rule.reached(&posterior) {
            break StopReason::Threshold;
        }
        if steps.len() >= rule.budget {
            break StopReason::Budget;
        }
        let Some((query, _)) = most_informative_query(model, &history)? else {
            break StopReason::Budget;
        };
        let symbol = source.symbol(query)?;
        history.push(query, symbol)?;
        posterior = model.posterior(&history)?;
        steps.push(Step {
            query,
            answer: symbol as f64,
            posterior: posterior.clone(),
        });
    };
    Ok(TrajectoryRecord {
        prediction: argmax(&posterior),
        steps,
        stop_reason,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Positive versus non-positive.
    Sign,
    /// `k` bins with edges at empirical quantiles.
    Quantile(usize),
}

fn discretize(column: &[f64], binning: Binning) -> Vec<usize> {
    match binning {
        Binning::Sign => column.iter().map(|&v| usize::from(v > 0.0)).collect(),
        Binning::Quantile(k) => {
            let k = k.max(1);
            let mut sorted = column.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let edges: Vec<f64> = (1..k).map(|i| sorted[(i * n) / k]).collect();
            column
                .iter()
                .map(|&v| edges.iter().filter(|&&e| e <= v).count())
                .collect()
        }
    }
}

/// Plug-in mutual information (nats) between a discretized answer column and
/// the labels.
pub fn empirical_mi(column: &[f64], labels: &[usize], binning: Binning) -> f64 {
    assert_eq!(column.len(), labels.len(), "column and labels must align");
    let n = column.len();
    if n == 0 {
        return 0.0;
    }
    let bins = discretize(column, binning);
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut by_bin: HashMap<usize, usize> = HashMap::new();
    let mut by_label: HashMap<usize, usize> = HashMap::new();
    for (&b, &y) in bins.iter().zip(labels) {
        *joint.entry((b, y)).or_default() += 1;
        *by_bin.entry(b).or_default() += 1;
        *by_label.entry(y).or_default() += 1;
    }
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mut mi = 0.0;
    for ((b, y), c) in cells {
        let ratio = (c as f64 * n as f64) / (by_bin[&b] as f64 * by_label[&y] as f64);
        mi += c as f64 / n as f64 * ratio.ln();
    }
    mi.max(0.0)
}
