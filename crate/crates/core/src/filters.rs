//! The three concept-set filters of the label-free CBM pipeline, plus the
//! report that sets what they remove against what pursuit actually asks.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concept::{AnswerMatrix, EmbeddingTable, LabeledDataset, QuerySet};
use crate::engine::{infer_dataset, VipModel};
use crate::error::{Error, Result};
use crate::trajectory::{StopRule, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub classname_cutoff: f64,
    pub similarity_cutoff: f64,
    pub activation_cutoff: f64,
    pub activation_top_k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            classname_cutoff: 0.85,
            similarity_cutoff: 0.9,
            activation_cutoff: 0.25,
            activation_top_k: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Classname,
    Similarity,
    Activation,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Classname => "classname",
            FilterKind::Similarity => "similarity",
            FilterKind::Activation => "activation",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classname" => Ok(FilterKind::Classname),
            "similarity" => Ok(FilterKind::Similarity),
            "activation" => Ok(FilterKind::Activation),
            other => Err(Error::Format(format!("unknown filter '{other}'"))),
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Queries whose text embedding is within `cutoff` cosine similarity of
/// some class-name embedding.
pub fn filter_classname_similarity(
    queries: &EmbeddingTable,
    class_names: &EmbeddingTable,
    cutoff: f64,
) -> Result<Vec<usize>> {
    if queries.dim() != class_names.dim() {
        return Err(Error::dims(format!(
            "query embeddings have dim {}, class names {}",
            queries.dim(),
            class_names.dim()
        )));
    }
    Ok((0..queries.rows())
        .filter(|&j| {
            (0..class_names.rows()).any(|c| cosine(queries.row(j), class_names.row(c)) >= cutoff)
        })
        .collect())
}

/// Greedy scan in id order: a query is dropped when it is within `cutoff`
/// of any earlier query that was kept.
pub fn filter_interconcept_similarity(queries: &EmbeddingTable, cutoff: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    for j in 0..queries.rows() {
        if kept
            .iter()
            .any(|&k| cosine(queries.row(j), queries.row(k)) >= cutoff)
        {
            removed.push(j);
        } else {
            kept.push(j);
        }
    }
    removed
}

/// Queries whose mean of the `top_k` largest raw training answers falls
/// below `cutoff`.
pub fn filter_activation(raw: &AnswerMatrix, cutoff: f64, top_k: usize) -> Vec<usize> {
    (0..raw.n_queries)
        .filter(|&j| {
            let mut col = raw.column(j);
            col.sort_by(|a, b| b.total_cmp(a));
            let k = top_k.max(1).min(col.len());
            if k == 0 {
                return false;
            }
            col[..k].iter().sum::<f64>() / (k as f64) < cutoff
        })
        .collect()
}

/// Fraction of trajectories that ask each query.
pub fn selection_frequency_of(trajectories: &[TrajectoryRecord], n_queries: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_queries];
    for t in trajectories {
        for s in &t.steps {
            counts[s.query] += 1;
        }
    }
    let n = trajectories.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Run inference over `data` under `rule` and count how often each query
/// is asked.
pub fn selection_frequency(
    model: &VipModel,
    data: &LabeledDataset,
    rule: StopRule,
) -> Result<Vec<f64>> {
    let ts = infer_dataset(model, data, rule)?;
    Ok(selection_frequency_of(&ts, model.n_queries()))
}

/// Removed id sets from each filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterFlags {
    pub classname: Vec<usize>,
    pub similarity: Vec<usize>,
    pub activation: Vec<usize>,
}

impl FilterFlags {
    /// Run all three filters with the given configuration.
    pub fn compute(
        config: &FilterConfig,
        query_embeddings: &EmbeddingTable,
        class_embeddings: &EmbeddingTable,
        raw_train: &AnswerMatrix,
    ) -> Result<Self> {
        Ok(FilterFlags {
            classname: filter_classname_similarity(
                query_embeddings,
                class_embeddings,
                config.classname_cutoff,
            )?,
            similarity: filter_interconcept_similarity(query_embeddings, config.similarity_cutoff),
            activation: filter_activation(
                raw_train,
                config.activation_cutoff,
                config.activation_top_k,
            ),
        })
    }

    pub fn removed_by(&self, query: usize) -> Vec<FilterKind> {
        let mut out = Vec::new();
        if self.classname.contains(&query) {
            out.push(FilterKind::Classname);
        }
        if self.similarity.contains(&query) {
            out.push(FilterKind::Similarity);
        }
        if self.activation.contains(&query) {
            out.push(FilterKind::Activation);
        }
        out
    }

    /// Every id removed by at least one filter, ascending.
    pub fn union(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .classname
            .iter()
            .chain(&self.similarity)
            .chain(&self.activation)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRow {
    pub query_id: usize,
    pub text: String,
    pub removed_by: Vec<FilterKind>,
    pub empirical_mi: f64,
    pub selection_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub n_flagged: usize,
    pub n_kept: usize,
    pub flagged_mean_mi: f64,
    pub kept_mean_mi: f64,
    pub flagged_mean_frequency: f64,
    pub kept_mean_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub rows: Vec<FilterRow>,
    pub summary: FilterSummary,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    query_id: usize,
    text: String,
    removed_by: String,
    empirical_mi: f64,
    selection_frequency: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(rows: &[FilterRow]) -> FilterSummary {
    let flagged = || rows.iter().filter(|r| !r.removed_by.is_empty());
    let kept = || rows.iter().filter(|r| r.removed_by.is_empty());
    FilterSummary {
        n_flagged: flagged().count(),
        n_kept: kept().count(),
        flagged_mean_mi: mean(flagged().map(|r| r.empirical_mi)),
        kept_mean_mi: mean(kept().map(|r| r.empirical_mi)),
        flagged_mean_frequency: mean(flagged().map(|r| r.selection_frequency)),
        kept_mean_frequency: mean(kept().map(|r| r.selection_frequency)),
    }
}

/// Merge filter output, empirical mutual information and selection
/// frequency into one table per query.
pub fn filter_report(
    queries: &QuerySet,
    flags: &FilterFlags,
    empirical_mi: &[f64],
    selection_frequency: &[f64],
) -> Result<FilterReport> {
    let n = queries.len();
    if empirical_mi.len() != n || selection_frequency.len() != n {
        return Err(Error::dims(format!(
            "{n} queries, {} MI values, {} frequencies",
            empirical_mi.len(),
            selection_frequency.len()
        )));
    }
    if let Some(&bad) = flags.union().iter().find(|&&j| j >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let rows: Vec<FilterRow> = queries
        .queries
        .iter()
        .enumerate()
        .map(|(j, q)| FilterRow {
            query_id: j,
            text: q.text.clone(),
            removed_by: flags.removed_by(j),
            empirical_mi: empirical_mi[j],
            selection_frequency: selection_frequency[j],
        })
        .collect();
    Ok(FilterReport {
        summary: summarize(&rows),
        rows,
    })
}

impl FilterReport {
    /// CSV with columns `query_id,text,removed_by,empirical_mi,selection_frequency`;
    /// `removed_by` lists filter names separated by `;`.
    pub fn write_csv(&self, out: impl io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                query_id: r.query_id,
                text: r.text.clone(),
                removed_by: r
                    .removed_by
                    .iter()
                    .map(|k| k.as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
                empirical_mi: r.empirical_mi,
                selection_frequency: r.selection_frequency,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl io::Read) -> Result<Self> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(input).deserialize::<CsvRow>() {
            let rec = rec?;
            let removed_by = rec
                .removed_by
                .split(';')
                .filter(|s| !s.is_empty())
                .map(FilterKind::from_str)
                .collect::<Result<Vec<_>>>()?;
            rows.push(FilterRow {
                query_id: rec.query_id,
                text: rec.text,
                removed_by,
                empirical_mi: rec.empirical_mi,
                selection_frequency: rec.selection_frequency,
            });
        }
        Ok(FilterReport {
            summary: summarize(&rows),
            rows,
        })
    }
}
