use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{dim_u32, put_f32s, put_u32, Reader};

pub const ANSWERS_MAGIC: &[u8; 8] = b"VIPANS1\n";
pub const EMBEDDING_MAGIC: &[u8; 8] = b"VIPEMB1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Text,
}

/// Row-major table of l2-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    kind: EmbeddingKind,
}

impl EmbeddingTable {
    /// Builds a table, rescaling every row to unit norm. Rows already within
    /// 1e-6 of unit norm are left untouched so that stored tables reload
    /// bit-for-bit.
    pub fn new(kind: EmbeddingKind, rows: usize, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::dims(format!(
                "embedding data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if dim == 0 {
            return Err(Error::dims("embedding dimension is zero"));
        }
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::invalid(format!("embedding row {i} has norm {norm}")));
            }
            if (norm - 1.0).abs() > 1e-6 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Ok(EmbeddingTable {
            rows,
            dim,
            data,
            kind,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        put_u32(&mut out, dim_u32(self.rows, "rows")?);
        put_u32(&mut out, dim_u32(self.dim, "cols")?);
        put_f32s(&mut out, self.data.iter().copied());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], kind: EmbeddingKind) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(EMBEDDING_MAGIC)?;
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let data = r.f32s(rows * dim)?;
        r.finish()?;
        EmbeddingTable::new(kind, rows, dim, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, kind: EmbeddingKind) -> Result<Self> {
        EmbeddingTable::from_bytes(&fs::read(path)?, kind)
    }
}

/// Samples x queries matrix of query answers, row-major.
///
/// Values are held as `f64` in memory. The on-disk format stores 32-bit
/// floats, so persistence is exact for values representable in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerMatrix {
    pub n_samples: usize,
    pub n_queries: usize,
    pub values: Vec<f64>,
    pub standardized: bool,
}

impl AnswerMatrix {
    pub fn new(n_samples: usize, n_queries: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_samples * n_queries {
            return Err(Error::dims(format!(
                "answer matrix has {} values, expected {n_samples}x{n_queries}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite answer at flat index {pos}"
            )));
        }
        Ok(AnswerMatrix {
            n_samples,
            n_queries,
            values,
            standardized: false,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_queries..(i + 1) * self.n_queries]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_queries + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.get(i, j)).collect()
    }

    /// Keep only the listed query columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> AnswerMatrix {
        let mut values = Vec::with_capacity(self.n_samples * cols.len());
        for i in 0..self.n_samples {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        AnswerMatrix {
            n_samples: self.n_samples,
            n_queries: cols.len(),
            values,
            standardized: self.standardized,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> AnswerMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_queries);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        AnswerMatrix {
            n_samples: rows.len(),
            n_queries: self.n_queries,
            values,
            standardized: self.standardized,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(17 + self.values.len() * 4);
        out.extend_from_slice(ANSWERS_MAGIC);
        put_u32(&mut out, dim_u32(self.n_samples, "rows")?);
        put_u32(&mut out, dim_u32(self.n_queries, "cols")?);
        out.push(u8::from(self.standardized));
        put_f32s(&mut out, self.values.iter().map(|&v| v as f32));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(ANSWERS_MAGIC)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let standardized = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("standardized flag {other}"))),
        };
        let values = r.f32s(rows * cols)?.into_iter().map(f64::from).collect();
        r.finish()?;
        let mut m = AnswerMatrix::new(rows, cols, values)?;
        m.standardized = standardized;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        AnswerMatrix::from_bytes(&fs::read(path)?)
    }
}

/// Sidecar JSON written next to a binary answer or embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub dataset: String,
    pub query_set: String,
    pub stats: Option<StandardizationStats>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl MatrixManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Z-score statistics fitted on training answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query: Option<PerQueryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    /// One mean and std over every entry of the training matrix.
    #[default]
    Global,
    PerQuery,
}

const MIN_STD: f64 = 1e-12;

fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = vals.clone().count() as f64;
    let mean = vals.clone().sum::<f64>() / n;
    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardize answers. Without `stats` they are fitted on `raw` (the
/// training split); with `stats` they are applied unchanged.
pub fn standardize_answers(
    raw: &AnswerMatrix,
    stats: Option<&StandardizationStats>,
    scope: StandardizeScope,
) -> Result<(AnswerMatrix, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_stats(raw, scope)?,
    };
    if stats.std < MIN_STD {
        return Err(Error::DegenerateStd(stats.std));
    }
    let mut values = raw.values.clone();
    match &stats.per_query {
        None => {
            for v in &mut values {
                *v = (*v - stats.mean) / stats.std;
            }
        }
        Some(pq) => {
            if pq.means.len() != raw.n_queries || pq.stds.len() != raw.n_queries {
                return Err(Error::dims(format!(
                    "per-query stats cover {} queries, matrix has {}",
                    pq.means.len(),
                    raw.n_queries
                )));
            }
            for row in values.chunks_exact_mut(raw.n_queries) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - pq.means[j]) / pq.stds[j];
                }
            }
        }
    }
    let out = AnswerMatrix {
        n_samples: raw.n_samples,
        n_queries: raw.n_queries,
        values,
        standardized: true,
    };
    Ok((out, stats))
}

fn fit_stats(raw: &AnswerMatrix, scope: StandardizeScope) -> Result<StandardizationStats> {
    if raw.values.is_empty() {
        return Err(Error::DegenerateStd(0.0));
    }
    let (mean, std) = mean_std(raw.values.iter().copied());
    if std < MIN_STD {
        return Err(Error::DegenerateStd(std));
    }
    let per_query = match scope {
        StandardizeScope::Global => None,
        StandardizeScope::PerQuery => {
            let mut means = Vec::with_capacity(raw.n_queries);
            let mut stds = Vec::with_capacity(raw.n_queries);
            for j in 0..raw.n_queries {
                let (m, s) = mean_std((0..raw.n_samples).map(|i| raw.get(i, j)));
                if s < MIN_STD {
                    return Err(Error::DegenerateStd(s));
                }
                means.push(m);
                stds.push(s);
            }
            Some(PerQueryStats { means, stds })
        }
    };
    Ok(StandardizationStats {
        mean,
        std,
        per_query,
    })
}

/// Raw dot products between every image row and every text row.
pub fn compute_answers(images: &EmbeddingTable, texts: &EmbeddingTable) -> Result<AnswerMatrix> {
    if images.dim() != texts.dim() {
        return Err(Error::dims(format!(
            "image dim {} != text dim {}",
            images.dim(),
            texts.dim()
        )));
    }
    let mut values = Vec::with_capacity(images.rows() * texts.rows());
    for i in 0..images.rows() {
        let img = images.row(i);
        for j in 0..texts.rows() {
            let dot: f64 = img
                .iter()
                .zip(texts.row(j))
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            values.push(dot);
        }
    }
    AnswerMatrix::new(images.rows(), texts.rows(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarizationReport {
    /// Chosen threshold per query; an answer above it reads as 1.
    pub thresholds: Vec<f64>,
    /// Mean over queries of per-query binarization accuracy, per split.
    pub split_accuracy: Vec<(Split, f64)>,
}

/// Pick, per query, the threshold that best binarizes the validation answers
/// against `ground_truth`, then report average attribute accuracy per split.
///
/// Candidates are midpoints between consecutive distinct sorted validation
/// answers plus one point below the minimum and one above the maximum.
/// Ties go to the smaller threshold.
pub fn binarize_and_score(
    answers: &AnswerMatrix,
    ground_truth: &[bool],
    splits: &[Split],
) -> Result<BinarizationReport> {
    let n = answers.n_samples;
    let q = answers.n_queries;
    if ground_truth.len() != n * q {
        return Err(Error::dims(format!(
            "ground truth has {} entries, answers {n}x{q}",
            ground_truth.len()
        )));
    }
    if splits.len() != n {
        return Err(Error::dims(format!(
            "{} split tags for {n} samples",
            splits.len()
        )));
    }
    let val: Vec<usize> = (0..n).filter(|&i| splits[i] == Split::Validation).collect();
    if val.is_empty() {
        return Err(Error::MissingSplit("validation".into()));
    }

    let mut thresholds = Vec::with_capacity(q);
    for j in 0..q {
        let mut pairs: Vec<(f64, bool)> = val
            .iter()
            .map(|&i| (answers.get(i, j), ground_truth[i * q + j]))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Below the minimum every sample reads as 1.
        let mut correct = pairs.iter().filter(|p| p.1).count();
        let mut best = (correct, pairs[0].0 - 1.0);
        let mut k = 0;
        while k < pairs.len() {
            let v = pairs[k].0;
            while k < pairs.len() && pairs[k].0 == v {
                if pairs[k].1 {
                    correct -= 1;
                } else {
                    correct += 1;
                }
                k += 1;
            }
            let t = if k < pairs.len() {
                0.5 * (v + pairs[k].0)
            } else {
                v + 1.0
            };
            if correct > best.0 {
                best = (correct, t);
            }
        }
        thresholds.push(best.1);
    }

    let mut split_accuracy = Vec::new();
    for split in [Split::Train, Split::Validation, Split::Test] {
        let rows: Vec<usize> = (0..n).filter(|&i| splits[i] == split).collect();
        if rows.is_empty() {
            continue;
        }
        let mut total = 0.0;
        for (j, &t) in thresholds.iter().enumerate() {
            let hits = rows
                .iter()
                .filter(|&&i| (answers.get(i, j) > t) == ground_truth[i * q + j])
                .count();
            total += hits as f64 / rows.len() as f64;
        }
        split_accuracy.push((split, total / q as f64));
    }
    Ok(BinarizationReport {
        thresholds,
        split_accuracy,
    })
}

/// Answers plus labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub split: Split,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub answers: AnswerMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    split: Split,
    class_names: Vec<String>,
    labels: Vec<usize>,
}

pub const ANSWERS_FILE: &str = "answers.bin";
pub const LABELS_FILE: &str = "labels.json";

impl LabeledDataset {
    pub fn new(
        split: Split,
        labels: Vec<usize>,
        class_names: Vec<String>,
        answers: AnswerMatrix,
    ) -> Result<Self> {
        if labels.len() != answers.n_samples {
            return Err(Error::dims(format!(
                "{} labels for {} samples",
                labels.len(),
                answers.n_samples
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(LabeledDataset {
            split,
            labels,
            class_names,
            answers,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select_columns(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            answers: self.answers.select_columns(cols),
            ..self.clone()
        }
    }

    pub fn write_labels(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = LabelsFile {
            split: self.split,
            class_names: self.class_names.clone(),
            labels: self.labels.clone(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Write `answers.bin`, its sidecar manifest and `labels.json` into `dir`.
    pub fn save_dir(
        &self,
        dir: impl AsRef<Path>,
        manifest: &MatrixManifest,
    ) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let answers = dir.join(ANSWERS_FILE);
        self.answers.write(&answers)?;
        let side = sidecar_path(&answers);
        manifest.write(&side)?;
        let labels = dir.join(LABELS_FILE);
        self.write_labels(&labels)?;
        Ok(vec![answers, side, labels])
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<(Self, Option<MatrixManifest>)> {
        let dir = dir.as_ref();
        let answers_path = dir.join(ANSWERS_FILE);
        let answers = AnswerMatrix::read(&answers_path)?;
        let side = sidecar_path(&answers_path);
        let manifest = if side.exists() {
            Some(MatrixManifest::read(&side)?)
        } else {
            None
        };
        let labels: LabelsFile = serde_json::from_slice(&fs::read(dir.join(LABELS_FILE))?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let ds = LabeledDataset::new(labels.split, labels.labels, labels.class_names, answers)?;
        Ok((ds, manifest))
    }
}
