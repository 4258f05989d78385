use crate::error::{Error, Result};

/// Masked query-answer state: `values[j]` holds the answer to query `j`
/// where `mask[j]` is 1 and is zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    mask: Vec<f64>,
    values: Vec<f64>,
}

impl History {
    pub fn empty(n_queries: usize) -> Self {
        History {
            mask: vec![0.0; n_queries],
            values: vec![0.0; n_queries],
        }
    }

    /// History holding the answers in `row` for the listed queries.
    pub fn from_row(row: &[f64], queries: &[usize]) -> Self {
        let mut h = History::empty(row.len());
        for &q in queries {
            h.mask[q] = 1.0;
            h.values[q] = row[q];
        }
        h
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_selected(&self, query: usize) -> bool {
        self.mask[query] != 0.0
    }

    pub fn n_selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&m| m != 0.0)
    }

    /// Record an answer: M <- M + e_q and S <- S + answer * e_q.
    pub fn add(&mut self, query: usize, answer: f64) -> Result<()> {
        if query >= self.mask.len() {
            return Err(Error::IndexOutOfRange {
                index: query,
                len: self.mask.len(),
            });
        }
        if self.is_selected(query) {
            return Err(Error::invalid(format!("query {query} already in history")));
        }
        self.mask[query] = 1.0;
        self.values[query] = answer;
        Ok(())
    }

    /// Network input: the masked answers, optionally followed by the mask.
    pub fn input(&self, mask_channel: bool) -> Vec<f64> {
        let mut v = self.values.clone();
        if mask_channel {
            v.extend_from_slice(&self.mask);
        }
        v
    }
}
