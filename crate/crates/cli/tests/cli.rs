use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vip_core::concept::{LabeledDataset, QuerySet};
use vip_core::engine::{infer, sweep_tradeoff, write_tradeoff_csv, Checkpoint};
use vip_core::exact::{exact_ip_run, DiscreteTaskModel, SignRow};
use vip_core::trajectory::{RowSource, StopRule};

fn vip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vip")).args(args).output().expect("run vip")
}

fn ok(args: &[&str]) -> String {
    let out = vip(args);
    assert!(
        out.status.success(),
        "vip {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &[&str] = &[
    "synth", "--classes", "3", "--queries", "4", "--duplicates", "1", "--constants", "1", "--indicators", "1",
    "--train", "240", "--test", "60", "--embedding-dim", "16", "--seed", "5",
];

fn synth_into(dir: &Path) {
    let mut args = SYNTH.to_vec();
    args.extend(["--out", p(dir)]);
    ok(&args);
}

fn train_into(data: &Path, out: &Path) {
    ok(&[
        "train", "--data", p(&data.join("train")), "--width", "16", "--stage1-epochs", "6", "--stage2-epochs", "3",
        "--batch-size", "32", "--seed", "3", "--out", p(out),
    ]);
}

#[test]
fn exit_codes() {
    assert_eq!(vip(&["--help"]).status.code(), Some(0));
    assert_eq!(vip(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(vip(&["eval", "--ckpt", "x"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.vipckpt");
    let out = vip(&["eval", "--ckpt", p(&missing), "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_into(a.path());
    synth_into(b.path());
    let ma: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["seed"], 5);
    let outputs = ma["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "train/answers.bin"));
    for o in outputs {
        let rel = o["path"].as_str().unwrap();
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
    }
    let queries = QuerySet::read_json(a.path().join("queries.json")).unwrap();
    assert_eq!(queries.len(), 7);
}

#[test]
fn training_is_reproducible_and_outputs_match_the_library() {
    let data = tempfile::tempdir().unwrap();
    synth_into(data.path());
    let run1 = tempfile::tempdir().unwrap();
    let run2 = tempfile::tempdir().unwrap();
    train_into(data.path(), run1.path());
    train_into(data.path(), run2.path());
    let ckpt_path = run1.path().join("model.vipckpt");
    assert_eq!(fs::read(&ckpt_path).unwrap(), fs::read(run2.path().join("model.vipckpt")).unwrap());
    assert!(fs::read_to_string(run1.path().join("loss.csv")).unwrap().lines().count() > 1);

    let ckpt = Checkpoint::read(&ckpt_path).unwrap();
    let (test, _) = LabeledDataset::load_dir(data.path().join("test")).unwrap();

    let sweep = tempfile::tempdir().unwrap();
    ok(&[
        "sweep", "--ckpt", p(&ckpt_path), "--data", p(&data.path().join("test")), "--thresholds", "0.5,0.9",
        "--out", p(sweep.path()),
    ]);
    let points = sweep_tradeoff(&ckpt.model, &test, &[0.5, 0.9], None).unwrap();
    let mut expected = Vec::new();
    write_tradeoff_csv(&points, &mut expected).unwrap();
    assert_eq!(fs::read(sweep.path().join("tradeoff.csv")).unwrap(), expected);

    let trace = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "trace", "--ckpt", p(&ckpt_path), "--data", p(&data.path().join("test")), "--sample", "4", "--queries",
        p(&data.path().join("queries.json")), "--threshold", "0.95", "--budget", "5", "--out", p(trace.path()),
    ]);
    assert!(stdout.contains("prediction: "));
    assert_eq!(fs::read_to_string(trace.path().join("trace.txt")).unwrap(), stdout);
    let record = infer(&ckpt.model, &mut RowSource(test.answers.row(4)), StopRule::new(0.95, 5)).unwrap();
    let js: serde_json::Value = serde_json::from_slice(&fs::read(trace.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(js["steps"], serde_json::to_value(&record.steps).unwrap());
    assert_eq!(js["prediction"], record.prediction);

    let eval = tempfile::tempdir().unwrap();
    ok(&[
        "eval", "--ckpt", p(&ckpt_path), "--data", p(&data.path().join("test")), "--threshold", "0.9", "--out",
        p(eval.path()),
    ]);
    let lines = fs::read_to_string(eval.path().join("trajectories.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), test.len());
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(eval.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_samples"], test.len());
    let bad = vip(&[
        "eval", "--ckpt", p(&ckpt_path), "--data", p(&data.path().join("test")), "--threshold", "1.5", "--out",
        p(eval.path()),
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let filters = tempfile::tempdir().unwrap();
    ok(&[
        "filters", "--queries", p(&data.path().join("queries.json")), "--query-emb",
        p(&data.path().join("query_embeddings.bin")), "--class-emb", p(&data.path().join("class_embeddings.bin")),
        "--data", p(&data.path().join("test")), "--ckpt", p(&ckpt_path), "--out", p(filters.path()),
    ]);
    let report = fs::read_to_string(filters.path().join("filter_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 8);
}

#[test]
fn exact_ip_matches_the_library_and_drops_queries() {
    let data = tempfile::tempdir().unwrap();
    synth_into(data.path());
    let model_path = data.path().join("model.json");
    let model = DiscreteTaskModel::read_json(&model_path).unwrap();
    let (test, _) = LabeledDataset::load_dir(data.path().join("test")).unwrap();

    let out = tempfile::tempdir().unwrap();
    ok(&[
        "exact-ip", "--model", p(&model_path), "--data", p(&data.path().join("test")), "--threshold", "0.95",
        "--out", p(out.path()),
    ]);
    let lines = fs::read_to_string(out.path().join("trajectories.jsonl")).unwrap();
    let rule = StopRule::new(0.95, 7);
    for (i, line) in lines.lines().enumerate() {
        let t = exact_ip_run(&model, &mut SignRow(test.answers.row(i)), rule).unwrap();
        assert_eq!(line, serde_json::to_string(&t).unwrap());
    }

    let dropped = tempfile::tempdir().unwrap();
    ok(&[
        "exact-ip", "--model", p(&model_path), "--data", p(&data.path().join("test")), "--drop", "0,4",
        "--out", p(dropped.path()),
    ]);
    let lines = fs::read_to_string(dropped.path().join("trajectories.jsonl")).unwrap();
    for line in lines.lines() {
        let t: serde_json::Value = serde_json::from_str(line).unwrap();
        for s in t["steps"].as_array().unwrap() {
            let q = s["query"].as_u64().unwrap();
            assert!(q != 0 && q != 4);
        }
    }
}

#[test]
fn elastic_net_path_is_written() {
    let data = tempfile::tempdir().unwrap();
    synth_into(data.path());
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "baseline", "elastic-net", "--train", p(&data.path().join("train")), "--test",
        p(&data.path().join("test")), "--lambdas", "0.001,0.1,100", "--max-iters", "3000", "--out", p(out.path()),
    ]);
    assert!(stdout.contains("lambda"));
    let csv = fs::read_to_string(out.path().join("path.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "lambda,sparsity,test_accuracy");
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("100.0,0,"));
    assert!(out.path().join("linear_02.viplin").exists());
}
