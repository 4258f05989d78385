use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Observed (query, answer symbol) pairs, in the order they were asked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteHistory {
    pub observed: Vec<(usize, usize)>,
}

impl DiscreteHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, query: usize) -> bool {
        self.observed.iter().any(|&(q, _)| q == query)
    }

    pub fn push(&mut self, query: usize, symbol: usize) -> Result<()> {
        if self.contains(query) {
            return Err(Error::QueryAlreadyObserved(query));
        }
        self.observed.push((query, symbol));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }
}

/// A finite task whose exact posteriors and mutual informations can be
/// enumerated.
pub trait TaskModel {
    fn n_classes(&self) -> usize;
    fn n_queries(&self) -> usize;
    fn alphabet_size(&self, query: usize) -> usize;

    /// P(Y | history).
    fn posterior(&self, history: &DiscreteHistory) -> Result<Vec<f64>>;

    /// I(q(X); Y | history) in nats.
    fn mutual_information(&self, query: usize, history: &DiscreteHistory) -> Result<f64>;

    fn check_history(&self, history: &DiscreteHistory) -> Result<()> {
        let mut seen = vec![false; self.n_queries()];
        for &(q, a) in &history.observed {
            if q >= self.n_queries() {
                return Err(Error::IndexOutOfRange {
                    index: q,
                    len: self.n_queries(),
                });
            }
            if seen[q] {
                return Err(Error::QueryAlreadyObserved(q));
            }
            seen[q] = true;
            if a >= self.alphabet_size(q) {
                return Err(Error::invalid(format!(
                    "symbol {a} outside alphabet of size {} for query {q}",
                    self.alphabet_size(q)
                )));
            }
        }
        Ok(())
    }
}

/// Class prior plus per-query class-conditional answer distributions.
///
/// Answers are conditionally independent given the class, except that a
/// query listed in `copy_of` always repeats the answer of its source query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTaskModel {
    pub prior: Vec<f64>,
    pub alphabet_sizes: Vec<usize>,
    /// `cond_probs[query][class][symbol]`.
    pub cond_probs: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub copy_of: Vec<Option<usize>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::NotADistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::NotADistribution(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl DiscreteTaskModel {
    pub fn new(
        prior: Vec<f64>,
        alphabet_sizes: Vec<usize>,
        cond_probs: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = alphabet_sizes.len();
        let m = DiscreteTaskModel {
            prior,
            alphabet_sizes,
            cond_probs,
            copy_of: vec![None; n],
        };
        m.validate()?;
        Ok(m)
    }

    /// Mark `query` as an exact copy of `source`. The copy takes the source's
    /// conditional table.
    pub fn set_copy(&mut self, query: usize, source: usize) -> Result<()> {
        if self.copy_of.is_empty() {
            self.copy_of = vec![None; self.n_queries()];
        }
        self.cond_probs[query] = self.cond_probs[source].clone();
        self.alphabet_sizes[query] = self.alphabet_sizes[source];
        self.copy_of[query] = Some(source);
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let n_classes = self.prior.len();
        if n_classes == 0 {
            return Err(Error::invalid("model has no classes"));
        }
        check_distribution(&self.prior, "prior")?;
        if self.cond_probs.len() != self.alphabet_sizes.len() {
            return Err(Error::dims(
                "cond_probs and alphabet_sizes disagree on query count",
            ));
        }
        for (q, table) in self.cond_probs.iter().enumerate() {
            let k = self.alphabet_sizes[q];
            if k < 2 {
                return Err(Error::invalid(format!("query {q} alphabet size {k} < 2")));
            }
            if table.len() != n_classes {
                return Err(Error::dims(format!(
                    "query {q} table has {} classes",
                    table.len()
                )));
            }
            for (y, row) in table.iter().enumerate() {
                if row.len() != k {
                    return Err(Error::dims(format!(
                        "query {q} class {y} row length {}",
                        row.len()
                    )));
                }
                check_distribution(row, &format!("P(q{q} | y={y})"))?;
            }
        }
        if !self.copy_of.is_empty() {
            if self.copy_of.len() != self.n_queries() {
                return Err(Error::dims("copy_of length differs from query count"));
            }
            for (q, src) in self.copy_of.iter().enumerate() {
                if let Some(s) = *src {
                    if s >= self.n_queries() || s == q || self.copy_of[s].is_some() {
                        return Err(Error::invalid(format!(
                            "query {q} copies invalid source {s}"
                        )));
                    }
                    if self.cond_probs[s] != self.cond_probs[q] {
                        return Err(Error::invalid(format!(
                            "copy {q} table differs from source {s}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The query whose answer `query` carries (itself unless it is a copy).
    pub fn source_of(&self, query: usize) -> usize {
        self.copy_of.get(query).copied().flatten().unwrap_or(query)
    }

    /// Whether the query's answer distribution is the same for every class
    /// with non-zero weight.
    fn uninformative_under(&self, query: usize, weights: &[f64]) -> bool {
        let table = &self.cond_probs[query];
        let mut reference: Option<&Vec<f64>> = None;
        for (y, row) in table.iter().enumerate() {
            if weights[y] == 0.0 {
                continue;
            }
            match reference {
                None => reference = Some(row),
                Some(r) if r != row => return false,
                _ => {}
            }
        }
        true
    }

    /// The model restricted to `keep`, in that order. A copy whose source is
    /// dropped keeps its table and becomes an ordinary query.
    pub fn select_queries(&self, keep: &[usize]) -> Result<Self> {
        let mut position = vec![None; self.n_queries()];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.n_queries() {
                return Err(Error::IndexOutOfRange {
                    index: old,
                    len: self.n_queries(),
                });
            }
            if position[old].replace(new).is_some() {
                return Err(Error::invalid(format!("query {old} listed twice")));
            }
        }
        let copy_of = if self.copy_of.is_empty() {
            Vec::new()
        } else {
            keep.iter()
                .map(|&old| self.copy_of[old].and_then(|s| position[s]))
                .collect()
        };
        let m = DiscreteTaskModel {
            prior: self.prior.clone(),
            alphabet_sizes: keep.iter().map(|&q| self.alphabet_sizes[q]).collect(),
            cond_probs: keep.iter().map(|&q| self.cond_probs[q].clone()).collect(),
            copy_of,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let m: DiscreteTaskModel =
            serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Format(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

fn normalize(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let z: f64 = w.iter().sum();
    if !(z > 0.0) {
        return Err(Error::ZeroEvidence);
    }
    for v in &mut w {
        *v /= z;
    }
    Ok(w)
}

impl TaskModel for DiscreteTaskModel {
    fn n_classes(&self) -> usize {
        self.prior.len()
    }

    fn n_queries(&self) -> usize {
        self.alphabet_sizes.len()
    }

    fn alphabet_size(&self, query: usize) -> usize {
        self.alphabet_sizes[query]
    }

    fn posterior(&self, history: &DiscreteHistory) -> Result<Vec<f64>> {
        self.check_history(history)?;
        let mut w = self.prior.clone();
        // One factor per distinct source; copies must agree with it.
        let mut seen: Vec<Option<usize>> = vec![None; self.n_queries()];
        for &(q, a) in &history.observed {
            let src = self.source_of(q);
            match seen[src] {
                Some(prev) if prev != a => return Err(Error::ZeroEvidence),
                Some(_) => continue,
                None => seen[src] = Some(a),
            }
            for (y, wy) in w.iter_mut().enumerate() {
                *wy *= self.cond_probs[src][y][a];
            }
        }
        normalize(w)
    }

    fn mutual_information(&self, query: usize, history: &DiscreteHistory) -> Result<f64> {
        if query >= self.n_queries() {
            return Err(Error::IndexOutOfRange {
                index: query,
                len: self.n_queries(),
            });
        }
        if history.contains(query) {
            return Err(Error::QueryAlreadyObserved(query));
        }
        let post = self.posterior(history)?;
        let src = self.source_of(query);
        // The answer is already determined by an observed copy.
        if history
            .observed
            .iter()
            .any(|&(q, _)| self.source_of(q) == src)
        {
            return Ok(0.0);
        }
        if self.uninformative_under(src, &post) {
            return Ok(0.0);
        }
        let table = &self.cond_probs[src];
        let k = self.alphabet_sizes[src];
        let mut marginal = vec![0.0; k];
        for (y, &py) in post.iter().enumerate() {
            for a in 0..k {
                marginal[a] += py * table[y][a];
            }
        }
        let mut mi = 0.0;
        for (y, &py) in post.iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            for a in 0..k {
                let p = table[y][a];
                if p > 0.0 {
                    mi += py * p * (p / marginal[a]).ln();
                }
            }
        }
        Ok(mi.max(0.0))
    }
}

/// A full joint table over (answers, class), for small binary-ish tasks
/// where the answers are not conditionally independent.
///
/// Cells are indexed mixed-radix with query 0 most significant and the class
/// as the least significant digit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub n_classes: usize,
    pub alphabet_sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

pub const MAX_JOINT_CELLS: usize = 1 << 24;

impl JointTable {
    pub fn new(n_classes: usize, alphabet_sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let cells = alphabet_sizes
            .iter()
            .try_fold(n_classes, |acc, &k| acc.checked_mul(k))
            .filter(|&c| c <= MAX_JOINT_CELLS)
            .ok_or_else(|| Error::invalid("joint table too large"))?;
        if probs.len() != cells {
            return Err(Error::dims(format!(
                "joint has {} cells, expected {cells}",
                probs.len()
            )));
        }
        if alphabet_sizes.iter().any(|&k| k < 2) {
            return Err(Error::invalid("alphabet sizes must be at least 2"));
        }
        check_distribution(&probs, "joint")?;
        Ok(JointTable {
            n_classes,
            alphabet_sizes,
            probs,
        })
    }

    /// Expand a factored model into its full joint.
    pub fn from_model(model: &DiscreteTaskModel) -> Result<Self> {
        let sizes = model.alphabet_sizes.clone();
        let n = model.n_classes();
        let cells = sizes
            .iter()
            .try_fold(n, |acc, &k| acc.checked_mul(k))
            .filter(|&c| c <= MAX_JOINT_CELLS)
            .ok_or_else(|| Error::invalid("joint table too large"))?;
        let mut probs = vec![0.0; cells];
        let mut answers = vec![0usize; sizes.len()];
        for (cell, p) in probs.iter_mut().enumerate() {
            let y = decode(cell, n, &sizes, &mut answers);
            let mut v = model.prior[y];
            for (q, &a) in answers.iter().enumerate() {
                let src = model.source_of(q);
                if src != q {
                    if answers[src] != a {
                        v = 0.0;
                        break;
                    }
                    continue;
                }
                v *= model.cond_probs[q][y][a];
            }
            *p = v;
        }
        Ok(JointTable {
            n_classes: n,
            alphabet_sizes: sizes,
            probs,
        })
    }

    /// Joint of (answer to `query`, class) restricted to cells consistent
    /// with the history, unnormalized.
    fn restricted(&self, query: Option<usize>, history: &DiscreteHistory) -> Vec<Vec<f64>> {
        let k = query.map_or(1, |q| self.alphabet_sizes[q]);
        let mut out = vec![vec![0.0; self.n_classes]; k];
        let mut answers = vec![0usize; self.alphabet_sizes.len()];
        for (cell, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let y = decode(cell, self.n_classes, &self.alphabet_sizes, &mut answers);
            if history.observed.iter().all(|&(q, a)| answers[q] == a) {
                let a = query.map_or(0, |q| answers[q]);
                out[a][y] += p;
            }
        }
        out
    }
}

fn decode(mut cell: usize, n_classes: usize, sizes: &[usize], answers: &mut [usize]) -> usize {
    let y = cell % n_classes;
    cell /= n_classes;
    for q in (0..sizes.len()).rev() {
        answers[q] = cell % sizes[q];
        cell /= sizes[q];
    }
    y
}

impl TaskModel for JointTable {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_queries(&self) -> usize {
        self.alphabet_sizes.len()
    }

    fn alphabet_size(&self, query: usize) -> usize {
        self.alphabet_sizes[query]
    }

    fn posterior(&self, history: &DiscreteHistory) -> Result<Vec<f64>> {
        self.check_history(history)?;
        normalize(self.restricted(None, history).swap_remove(0))
    }

    fn mutual_information(&self, query: usize, history: &DiscreteHistory) -> Result<f64> {
        if query >= self.n_queries() {
            return Err(Error::IndexOutOfRange {
                index: query,
                len: self.n_queries(),
            });
        }
        if history.contains(query) {
            return Err(Error::QueryAlreadyObserved(query));
        }
        self.check_history(history)?;
        let joint = self.restricted(Some(query), history);
        let z: f64 = joint.iter().flatten().sum();
        if !(z > 0.0) {
            return Err(Error::ZeroEvidence);
        }
        let py: Vec<f64> = (0..self.n_classes)
            .map(|y| joint.iter().map(|row| row[y]).sum::<f64>() / z)
            .collect();
        let mut mi = 0.0;
        for row in &joint {
            let pa: f64 = row.iter().sum::<f64>() / z;
            for (y, &c) in row.iter().enumerate() {
                let pay = c / z;
                if pay > 0.0 {
                    mi += pay * (pay / (pa * py[y])).ln();
                }
            }
        }
        Ok(mi.max(0.0))
    }
}
