use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Threshold,
    Budget,
}

/// Stop once the largest posterior entry reaches `threshold`, or after
/// `budget` answered queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub threshold: f64,
    pub budget: usize,
}

impl StopRule {
    pub fn new(threshold: f64, budget: usize) -> Self {
        StopRule { threshold, budget }
    }

    pub fn reached(&self, posterior: &[f64]) -> bool {
        max_entry(posterior) >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub query: usize,
    pub answer: f64,
    pub posterior: Vec<f64>,
}

/// The query-answer chain of one inference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<Step>,
    pub stop_reason: StopReason,
    pub prediction: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn queries(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.query).collect()
    }

    pub fn contains(&self, query: usize) -> bool {
        self.steps.iter().any(|s| s.query == query)
    }
}

/// Supplies the answer to a query on demand: a stored sample row, a script,
/// or a person.
pub trait AnswerSource {
    fn answer(&mut self, query: usize) -> Result<f64>;
}

impl<F: FnMut(usize) -> Result<f64>> AnswerSource for F {
    fn answer(&mut self, query: usize) -> Result<f64> {
        self(query)
    }
}

/// Answers read from one row of an answer matrix.
#[derive(Debug, Clone, Copy)]
pub struct RowSource<'a>(pub &'a [f64]);

impl AnswerSource for RowSource<'_> {
    fn answer(&mut self, query: usize) -> Result<f64> {
        self.0.get(query).copied().ok_or(Error::IndexOutOfRange {
            index: query,
            len: self.0.len(),
        })
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn max_entry(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
