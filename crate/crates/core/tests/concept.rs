use vip_core::concept::*;
use vip_core::Error;

#[test]
fn prompt_with_object_type() {
    assert_eq!(
        build_prompt("bird", "Blue Jay"),
        "List the useful visual attributes (and their values) of the bird image category 'Blue Jay'."
    );
    assert_eq!(
        build_prompt("scene", "airport"),
        "List the useful visual attributes (and their values) of the scene image category 'airport'."
    );
}

#[test]
fn prompt_blank_object_type_collapses_space() {
    assert_eq!(
        build_prompt("", "cats"),
        "List the useful visual attributes (and their values) of the image category 'cats'."
    );
}

#[test]
fn parses_single_pair() {
    let qs = parse_attribute_list("Size: Medium", "Blue Jay").unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(qs[0].text, "medium size");
    assert_eq!(qs[0].origin_class, "Blue Jay");
}

#[test]
fn splits_multiple_values() {
    let qs = parse_attribute_list("Color: blue, white", "x").unwrap();
    let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
    assert_eq!(texts, ["blue color", "white color"]);
    assert_eq!(qs[1].id, 1);
}

#[test]
fn skips_lines_without_colon() {
    let qs = parse_attribute_list("no colon line\nShape: round", "x").unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(qs[0].text, "round shape");
}

#[test]
fn normalizes_and_drops_duplicates() {
    let raw = "1. Beak  Shape: Short,  Pointed.\n- beak shape: short\n* Wings:   Blue ";
    let qs = parse_attribute_list(raw, "x").unwrap();
    let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
    assert_eq!(
        texts,
        ["short beak shape", "pointed beak shape", "blue wings"]
    );
}

#[test]
fn empty_output_is_an_error() {
    assert!(matches!(
        parse_attribute_list("nothing here\n\n", "x"),
        Err(Error::EmptyOutput)
    ));
    assert!(matches!(
        parse_attribute_list("Size: , ", "x"),
        Err(Error::EmptyOutput)
    ));
}

#[test]
fn union_renumbers_and_dedups() {
    let a = parse_attribute_list("Size: medium\nColor: blue", "a").unwrap();
    let b = parse_attribute_list("Color: Blue, red", "b").unwrap();
    let set = QuerySet::union("u", [a, b]);
    let texts = set.texts();
    assert_eq!(texts, ["medium size", "blue color", "red color"]);
    assert_eq!(set.queries[2].id, 2);
    assert_eq!(set.queries[2].origin_class, "b");
    set.validate().unwrap();
}

#[test]
fn embedding_prefix() {
    let set = QuerySet::union("u", [parse_attribute_list("Size: medium", "a").unwrap()]);
    assert_eq!(set.embedding_texts(""), ["medium size"]);
    assert_eq!(
        set.embedding_texts("An image of an object with {concept}"),
        ["An image of an object with medium size"]
    );
}

#[test]
fn empty_set_rejected_on_write() {
    let dir = tempfile::tempdir().unwrap();
    let set = QuerySet {
        name: "empty".into(),
        queries: vec![],
    };
    assert!(matches!(
        set.write_json(dir.path().join("q.json")),
        Err(Error::Format(_))
    ));
}

#[test]
fn json_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let set = QuerySet::union(
        "cub",
        [parse_attribute_list("Size: medium\nColor: blue, white", "Blue Jay").unwrap()],
    );
    set.write_json(&path).unwrap();
    assert_eq!(QuerySet::read_json(&path).unwrap(), set);
}

#[test]
fn rejects_non_contiguous_ids() {
    let mut set = QuerySet::union("u", [parse_attribute_list("A: x, y", "c").unwrap()]);
    set.queries[1].id = 5;
    assert!(set.validate().is_err());
}

fn table(kind: EmbeddingKind, rows: &[&[f32]]) -> EmbeddingTable {
    let dim = rows[0].len();
    EmbeddingTable::new(kind, rows.len(), dim, rows.concat()).unwrap()
}

#[test]
fn self_similarity_is_one() {
    let v: &[f32] = &[0.2, -0.4, 0.8, 0.1];
    let a = compute_answers(
        &table(EmbeddingKind::Image, &[v]),
        &table(EmbeddingKind::Text, &[v]),
    )
    .unwrap();
    assert!((a.values[0] - 1.0).abs() < 1e-6);
    assert!(!a.standardized);
}

#[test]
fn orthogonal_is_zero() {
    let a = compute_answers(
        &table(EmbeddingKind::Image, &[&[1.0, 0.0]]),
        &table(EmbeddingKind::Text, &[&[0.0, 1.0]]),
    )
    .unwrap();
    assert_eq!(a.values[0], 0.0);
}

#[test]
fn simple_dot_product() {
    let a = compute_answers(
        &table(EmbeddingKind::Image, &[&[0.6, 0.8]]),
        &table(EmbeddingKind::Text, &[&[1.0, 0.0]]),
    )
    .unwrap();
    assert!((a.values[0] - 0.6).abs() < 1e-6);
}

#[test]
fn dimension_mismatch() {
    let r = compute_answers(
        &table(EmbeddingKind::Image, &[&[0.6, 0.8]]),
        &table(EmbeddingKind::Text, &[&[1.0, 0.0, 0.0]]),
    );
    assert!(matches!(r, Err(Error::DimensionMismatch(_))));
}

#[test]
fn rows_normalized_on_construction() {
    let t = table(EmbeddingKind::Image, &[&[3.0, 4.0]]);
    assert!((t.row(0)[0] - 0.6).abs() < 1e-6);
    assert!((t.row(0)[1] - 0.8).abs() < 1e-6);
    assert!(EmbeddingTable::new(EmbeddingKind::Text, 1, 2, vec![0.0, 0.0]).is_err());
}

#[test]
fn global_standardization_worked_example() {
    let raw = AnswerMatrix::new(2, 2, vec![1.0, 3.0, 3.0, 5.0]).unwrap();
    let (z, stats) = standardize_answers(&raw, None, StandardizeScope::Global).unwrap();
    assert_eq!(stats.mean, 3.0);
    assert!((stats.std - 2f64.sqrt()).abs() < 1e-12);
    let s = 2f64.sqrt();
    let expected = [-s, 0.0, 0.0, s];
    for (a, b) in z.values.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(z.standardized);
}

#[test]
fn constant_matrix_is_degenerate() {
    let raw = AnswerMatrix::new(3, 2, vec![0.25; 6]).unwrap();
    assert!(matches!(
        standardize_answers(&raw, None, StandardizeScope::Global),
        Err(Error::DegenerateStd(_))
    ));
}

#[test]
fn fitted_stats_reapplied() {
    let raw = AnswerMatrix::new(2, 3, vec![0.1, 0.3, 0.2, 0.25, 0.22, 0.31]).unwrap();
    let (_, stats) = standardize_answers(&raw, None, StandardizeScope::Global).unwrap();
    let (z, again) = standardize_answers(&raw, Some(&stats), StandardizeScope::Global).unwrap();
    assert_eq!(again, stats);
    let mean = z.values.iter().sum::<f64>() / z.values.len() as f64;
    assert!(mean.abs() < 1e-9);
}

#[test]
fn per_query_scope() {
    let raw = AnswerMatrix::new(2, 2, vec![1.0, 10.0, 3.0, 30.0]).unwrap();
    let (z, stats) = standardize_answers(&raw, None, StandardizeScope::PerQuery).unwrap();
    assert!(stats.per_query.is_some());
    assert_eq!(z.values, vec![-1.0, -1.0, 1.0, 1.0]);
}

#[test]
fn separable_validation_scores_one() {
    let answers = AnswerMatrix::new(4, 1, vec![-0.3, -0.1, 0.2, 0.5]).unwrap();
    let gt = [false, false, true, true];
    let splits = [Split::Validation; 4];
    let r = binarize_and_score(&answers, &gt, &splits).unwrap();
    assert_eq!(r.split_accuracy, vec![(Split::Validation, 1.0)]);
    assert!((r.thresholds[0] - 0.05).abs() < 1e-12);
}

#[test]
fn all_ones_thresholds_below_minimum() {
    let answers = AnswerMatrix::new(3, 1, vec![0.7, -2.0, 0.1]).unwrap();
    let r = binarize_and_score(&answers, &[true; 3], &[Split::Validation; 3]).unwrap();
    assert!(r.thresholds[0] < -2.0);
    assert_eq!(r.split_accuracy[0].1, 1.0);
}

#[test]
fn missing_validation_split() {
    let answers = AnswerMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
    assert!(matches!(
        binarize_and_score(&answers, &[false, true], &[Split::Train, Split::Test]),
        Err(Error::MissingSplit(_))
    ));
}

#[test]
fn wrong_magic_rejected() {
    let m = AnswerMatrix::new(1, 1, vec![0.5]).unwrap();
    let mut bytes = m.to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(matches!(
        AnswerMatrix::from_bytes(&bytes),
        Err(Error::Format(_))
    ));
    let t = table(EmbeddingKind::Text, &[&[1.0, 0.0]]);
    assert!(matches!(
        AnswerMatrix::from_bytes(&t.to_bytes().unwrap()),
        Err(Error::Format(_))
    ));
}

#[test]
fn truncated_file_detected() {
    let m = AnswerMatrix::new(2, 2, vec![0.5, 1.0, 2.0, 3.0]).unwrap();
    let bytes = m.to_bytes().unwrap();
    assert!(matches!(
        AnswerMatrix::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::TruncatedFile { .. })
    ));
}

#[test]
fn dataset_dir_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let answers = AnswerMatrix::new(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let ds = LabeledDataset::new(
        Split::Test,
        vec![1, 0],
        vec!["a".into(), "b".into()],
        answers,
    )
    .unwrap();
    let manifest = MatrixManifest {
        dataset: "toy".into(),
        query_set: "q".into(),
        stats: Some(StandardizationStats {
            mean: 0.1,
            std: 2.0,
            per_query: None,
        }),
    };
    ds.save_dir(dir.path(), &manifest).unwrap();
    let (back, m) = LabeledDataset::load_dir(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(m.unwrap(), manifest);
}
