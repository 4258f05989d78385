//! Concept ingestion: prompt text for the language model, parsing of its
//! attribute lists into queries, and embedding dot-product answers.

mod answers;
mod query;

pub use answers::{
    binarize_and_score, compute_answers, sidecar_path, standardize_answers, AnswerMatrix,
    BinarizationReport, EmbeddingKind, EmbeddingTable, LabeledDataset, MatrixManifest,
    PerQueryStats, Split, StandardizationStats, StandardizeScope, ANSWERS_FILE, ANSWERS_MAGIC,
    EMBEDDING_MAGIC, LABELS_FILE,
};
pub use query::{
    build_prompt, normalize_text, parse_attribute_list, render_attribute_list, Query, QuerySet,
};
