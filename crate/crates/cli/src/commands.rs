use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vip_core::baselines::{elastic_net_path, train_dense, write_path_csv, DenseConfig, ElasticNetConfig};
use vip_core::concept::{
    compute_answers, parse_attribute_list, standardize_answers, AnswerMatrix, EmbeddingKind, EmbeddingTable,
    LabeledDataset, MatrixManifest, QuerySet, Split, StandardizationStats, StandardizeScope,
};
use vip_core::engine::{
    infer, infer_dataset, save_loss_log, summarize, sweep_tradeoff, train as train_model, write_tradeoff_csv,
    Checkpoint, CheckpointMeta, MlpConfig, TrainConfig, VipModel,
};
use vip_core::exact::{empirical_mi, exact_ip_run, make_synthetic_task, Binning, DiscreteTaskModel, SignRow, SyntheticTaskConfig};
use vip_core::filters::{filter_report, selection_frequency, FilterConfig, FilterFlags};
use vip_core::trajectory::{RowSource, StopReason, StopRule, Step, TrajectoryRecord};

use crate::manifest::ManifestBuilder;
use crate::render::render_trace;
use crate::{
    BaselineArgs, BaselineKind, EvalArgs, ExactIpArgs, FiltersArgs, IngestArgs, RuleArgs, Schedule, SweepArgs,
    SynthArgs, TraceArgs, TrainArgs,
};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_split(dir: &Path) -> Result<(LabeledDataset, Option<MatrixManifest>)> {
    LabeledDataset::load_dir(dir).with_context(|| format!("loading split {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::read(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn stop_rule(args: &RuleArgs, n_queries: usize) -> Result<StopRule> {
    ensure!(
        args.threshold > 0.0 && args.threshold <= 1.0,
        "threshold {} outside (0, 1]",
        args.threshold
    );
    let budget = args.budget.unwrap_or(n_queries);
    ensure!(budget <= n_queries, "budget {budget} exceeds {n_queries} queries");
    Ok(StopRule::new(args.threshold, budget))
}

fn check_width(model: &VipModel, data: &LabeledDataset) -> Result<()> {
    ensure!(
        model.n_queries() == data.answers.n_queries,
        "checkpoint expects {} queries, data has {}",
        model.n_queries(),
        data.answers.n_queries
    );
    Ok(())
}

fn write_jsonl(path: &Path, items: &[impl Serialize]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    n_samples: usize,
    threshold: f64,
    budget: usize,
    accuracy: f64,
    avg_queries: f64,
    stopped_by_threshold: usize,
    stopped_by_budget: usize,
}

fn metrics(ts: &[TrajectoryRecord], labels: &[usize], rule: StopRule) -> Metrics {
    let (accuracy, avg_queries) = summarize(ts, labels);
    let by_threshold = ts.iter().filter(|t| t.stop_reason == StopReason::Threshold).count();
    Metrics {
        n_samples: ts.len(),
        threshold: rule.threshold,
        budget: rule.budget,
        accuracy,
        avg_queries,
        stopped_by_threshold: by_threshold,
        stopped_by_budget: ts.len() - by_threshold,
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SyntheticTaskConfig>(p)?,
        None => SyntheticTaskConfig::standard(0),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { cfg.$field = v; })*
        };
    }
    apply!(classes => n_classes, queries => n_queries, noise => noise, duplicates => duplicates,
        constants => constants, indicators => class_indicators, n_train => n_train, n_test => n_test,
        embedding_dim => embedding_dim, seed => seed);
    if a.indicator_noise.is_some() {
        cfg.indicator_noise = a.indicator_noise;
    }
    let task = make_synthetic_task(&cfg)?;

    let out = &a.out;
    fs::create_dir_all(out)?;
    let mut m = ManifestBuilder::new("synth", &cfg)?.seed(cfg.seed);
    if let Some(p) = &a.config {
        m.input(p);
    }
    let files = [
        "config.json",
        "model.json",
        "roles.json",
        "queries.json",
        "query_embeddings.bin",
        "class_embeddings.bin",
    ]
    .map(|f| out.join(f));
    write_json(&files[0], &cfg)?;
    task.model.write_json(&files[1])?;
    write_json(&files[2], &task.roles)?;
    task.queries.write_json(&files[3])?;
    task.query_embeddings.write(&files[4])?;
    task.class_embeddings.write(&files[5])?;
    m.outputs(files);
    let manifest = MatrixManifest {
        dataset: format!("synthetic-{}", cfg.seed),
        query_set: task.queries.name.clone(),
        stats: None,
    };
    m.outputs(task.train.save_dir(out.join("train"), &manifest)?);
    m.outputs(task.test.save_dir(out.join("test"), &manifest)?);
    m.write(out)?;
    println!(
        "synthetic task: {} classes, {} queries, {} train / {} test samples -> {}",
        cfg.n_classes,
        cfg.total_queries(),
        cfg.n_train,
        cfg.n_test,
        out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct LabelFile {
    class_names: Vec<String>,
    labels: Vec<usize>,
}

fn attribute_query_set(dir: &Path, name: &str) -> Result<QuerySet> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .txt attribute lists in {}", dir.display());
    let mut lists = Vec::new();
    for p in &paths {
        let class = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let raw = fs::read_to_string(p)?;
        lists.push(parse_attribute_list(&raw, class).with_context(|| format!("parsing {}", p.display()))?);
    }
    Ok(QuerySet::union(name, lists))
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let queries = match (&a.queries, &a.attribute_lists) {
        (Some(p), _) => QuerySet::read_json(p)?,
        (None, Some(dir)) => attribute_query_set(dir, &a.dataset)?,
        (None, None) => bail!("either --queries or --attribute-lists is required"),
    };
    let texts = EmbeddingTable::read(&a.text_emb, EmbeddingKind::Text)?;
    ensure!(
        texts.rows() == queries.len(),
        "{} text embeddings for {} queries",
        texts.rows(),
        queries.len()
    );
    let scope: StandardizeScope = a.scope.into();
    let out = &a.out;
    fs::create_dir_all(out)?;
    let mut m = ManifestBuilder::new(
        "ingest",
        &json!({"dataset": a.dataset, "query_set": queries.name, "scope": scope}),
    )?;
    for p in [&a.queries, &a.attribute_lists].into_iter().flatten() {
        m.input(p);
    }
    m.input(&a.text_emb);

    let splits = [
        (Split::Train, Some(&a.train_images), Some(&a.train_labels)),
        (Split::Validation, a.val_images.as_ref(), a.val_labels.as_ref()),
        (Split::Test, a.test_images.as_ref(), a.test_labels.as_ref()),
    ];
    let mut stats: Option<StandardizationStats> = None;
    for (split, images, labels) in splits {
        let (Some(images), Some(labels)) = (images, labels) else {
            continue;
        };
        m.input(images);
        m.input(labels);
        let imgs = EmbeddingTable::read(images, EmbeddingKind::Image)?;
        let raw = compute_answers(&imgs, &texts)?;
        let (std_answers, fitted) = standardize_answers(&raw, stats.as_ref(), scope)?;
        if split == Split::Train {
            let raw_path = out.join("train_raw.bin");
            raw.write(&raw_path)?;
            m.output(&raw_path);
            stats = Some(fitted.clone());
        }
        let lf: LabelFile = read_json(labels)?;
        let ds = LabeledDataset::new(split, lf.labels, lf.class_names, std_answers)?;
        let manifest = MatrixManifest {
            dataset: a.dataset.clone(),
            query_set: queries.name.clone(),
            stats: Some(fitted),
        };
        m.outputs(ds.save_dir(out.join(split.as_str()), &manifest)?);
        println!("{}: {} samples x {} queries", split.as_str(), ds.len(), queries.len());
    }
    let qpath = out.join("queries.json");
    queries.write_json(&qpath)?;
    m.output(&qpath);
    m.write(out)?;
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TrainFile {
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    mlp: Option<MlpConfig>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let file: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let mut cfg = file.train.unwrap_or_else(|| match a.schedule {
        Schedule::Desk => TrainConfig::desk(0),
        Schedule::Full => TrainConfig::default(),
    });
    let mut mlp = file.mlp.unwrap_or_default();
    if let Some(v) = a.arch {
        mlp.arch = v.into();
    }
    if let Some(v) = a.width {
        mlp.hidden_width = v;
    }
    if a.mask_channel {
        mlp.mask_channel = true;
    }
    if let Some(v) = a.stage1_epochs {
        cfg.stage1.epochs = v;
    }
    if let Some(v) = a.stage2_epochs {
        cfg.stage2.epochs = v;
    }
    if let Some(v) = a.stage1_lr {
        cfg.stage1.lr = v;
    }
    if let Some(v) = a.stage2_lr {
        cfg.stage2.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if a.k_max.is_some() {
        cfg.k_max = a.k_max;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }

    let (data, manifest) = load_split(&a.data)?;
    let (model, log) = train_model(&cfg, mlp, &data, None)?;
    let final_loss = log.last().map(|r| r.loss);
    let meta = CheckpointMeta {
        query_set: manifest.as_ref().map(|m| m.query_set.clone()),
        stats: manifest.and_then(|m| m.stats),
        class_names: data.class_names.clone(),
        train: Some(cfg.clone()),
        final_loss,
    };

    let out = &a.out;
    fs::create_dir_all(out)?;
    let ckpt = out.join(format!("{}.{}", a.name, vip_service::CHECKPOINT_EXT));
    Checkpoint::new(model, meta).write(&ckpt)?;
    let loss = out.join("loss.csv");
    save_loss_log(&log, &loss)?;
    let mut m = ManifestBuilder::new("train", &TrainFile {
        train: Some(cfg.clone()),
        mlp: Some(mlp),
    })?
    .seed(cfg.seed);
    m.input(&a.data);
    if let Some(p) = &a.config {
        m.input(p);
    }
    m.output(&ckpt);
    m.output(&loss);
    m.write(out)?;
    println!(
        "trained {} + {} epochs, final loss {:.4} -> {}",
        cfg.stage1.epochs,
        cfg.stage2.epochs,
        final_loss.unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let (data, _) = load_split(&a.data)?;
    check_width(&ckpt.model, &data)?;
    let rule = stop_rule(&a.rule, ckpt.model.n_queries())?;
    let ts = infer_dataset(&ckpt.model, &data, rule)?;
    let report = metrics(&ts, &data.labels, rule);

    let out = &a.out;
    fs::create_dir_all(out)?;
    let mpath = out.join("metrics.json");
    write_json(&mpath, &report)?;
    let tpath = out.join("trajectories.jsonl");
    write_jsonl(&tpath, &ts)?;
    let mut m = ManifestBuilder::new("eval", &rule)?;
    m.input(&a.ckpt);
    m.input(&a.data);
    m.output(&mpath);
    m.output(&tpath);
    m.write(out)?;
    println!(
        "accuracy {:.4}, average queries {:.3} over {} samples",
        report.accuracy, report.avg_queries, report.n_samples
    );
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let (data, _) = load_split(&a.data)?;
    check_width(&ckpt.model, &data)?;
    for &t in &a.thresholds {
        stop_rule(
            &RuleArgs {
                threshold: t,
                budget: a.budget,
            },
            ckpt.model.n_queries(),
        )?;
    }
    let points = sweep_tradeoff(&ckpt.model, &data, &a.thresholds, a.budget)?;

    let out = &a.out;
    fs::create_dir_all(out)?;
    let path = out.join("tradeoff.csv");
    write_tradeoff_csv(&points, fs::File::create(&path)?)?;
    let mut m = ManifestBuilder::new("sweep", &json!({"thresholds": a.thresholds, "budget": a.budget}))?;
    m.input(&a.ckpt);
    m.input(&a.data);
    m.output(&path);
    m.write(out)?;
    println!("{:>9}  {:>11}  {:>8}", "threshold", "avg_queries", "accuracy");
    for p in &points {
        println!("{:>9}  {:>11.3}  {:>8.4}", p.threshold, p.avg_queries, p.accuracy);
    }
    Ok(())
}

pub fn filters(a: &FiltersArgs) -> Result<()> {
    let queries = QuerySet::read_json(&a.queries)?;
    let qemb = EmbeddingTable::read(&a.query_emb, EmbeddingKind::Text)?;
    let cemb = EmbeddingTable::read(&a.class_emb, EmbeddingKind::Text)?;
    let (data, _) = load_split(&a.data)?;
    let raw = match &a.raw_train {
        Some(p) => AnswerMatrix::read(p)?,
        None => data.answers.clone(),
    };
    let ckpt = load_checkpoint(&a.ckpt)?;
    check_width(&ckpt.model, &data)?;
    let rule = stop_rule(&a.rule, ckpt.model.n_queries())?;
    let config = FilterConfig {
        classname_cutoff: a.classname_cutoff,
        similarity_cutoff: a.similarity_cutoff,
        activation_cutoff: a.activation_cutoff,
        activation_top_k: a.activation_top_k,
    };

    let flags = FilterFlags::compute(&config, &qemb, &cemb, &raw)?;
    let mi: Vec<f64> = (0..queries.len())
        .map(|j| empirical_mi(&data.answers.column(j), &data.labels, Binning::Sign))
        .collect();
    let freq = selection_frequency(&ckpt.model, &data, rule)?;
    let report = filter_report(&queries, &flags, &mi, &freq)?;

    let out = &a.out;
    fs::create_dir_all(out)?;
    let csv = out.join("filter_report.csv");
    report.write_csv(fs::File::create(&csv)?)?;
    let summary = out.join("filter_summary.json");
    write_json(&summary, &report.summary)?;
    let mut m = ManifestBuilder::new("filters", &json!({"filters": config, "rule": rule}))?;
    for p in [&a.queries, &a.query_emb, &a.class_emb, &a.data, &a.ckpt] {
        m.input(p);
    }
    if let Some(p) = &a.raw_train {
        m.input(p);
    }
    m.output(&csv);
    m.output(&summary);
    m.write(out)?;
    let s = &report.summary;
    println!(
        "{} flagged, {} kept; mean selection frequency flagged {:.3} vs kept {:.3}; mean MI flagged {:.3} vs kept {:.3}",
        s.n_flagged, s.n_kept, s.flagged_mean_frequency, s.kept_mean_frequency, s.flagged_mean_mi, s.kept_mean_mi
    );
    Ok(())
}

pub fn exact_ip(a: &ExactIpArgs) -> Result<()> {
    let full = DiscreteTaskModel::read_json(&a.model)?;
    let (data, _) = load_split(&a.data)?;
    ensure!(
        data.answers.n_queries == full.alphabet_sizes.len(),
        "model has {} queries, data has {}",
        full.alphabet_sizes.len(),
        data.answers.n_queries
    );
    let keep: Vec<usize> = (0..full.alphabet_sizes.len()).filter(|q| !a.drop.contains(q)).collect();
    let model = full.select_queries(&keep)?;
    let rule = stop_rule(&a.rule, keep.len())?;
    let restricted = data.select_columns(&keep);
    let mut ts = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let mut t = exact_ip_run(&model, &mut SignRow(restricted.answers.row(i)), rule)?;
        for s in &mut t.steps {
            s.query = keep[s.query];
        }
        ts.push(t);
    }
    let report = metrics(&ts, &data.labels, rule);

    let out = &a.out;
    fs::create_dir_all(out)?;
    let mpath = out.join("metrics.json");
    write_json(&mpath, &report)?;
    let tpath = out.join("trajectories.jsonl");
    write_jsonl(&tpath, &ts)?;
    let mut m = ManifestBuilder::new("exact-ip", &json!({"rule": rule, "drop": a.drop}))?;
    m.input(&a.model);
    m.input(&a.data);
    m.output(&mpath);
    m.output(&tpath);
    m.write(out)?;
    println!(
        "exact pursuit: accuracy {:.4}, average queries {:.3} over {} samples",
        report.accuracy, report.avg_queries, report.n_samples
    );
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> Result<()> {
    match &a.kind {
        BaselineKind::ElasticNet {
            train,
            test,
            lambdas,
            alpha,
            max_iters,
            out,
        } => {
            let (tr, _) = load_split(train)?;
            let (te, _) = load_split(test)?;
            let cfg = ElasticNetConfig {
                alpha: *alpha,
                max_iters: *max_iters,
                ..ElasticNetConfig::default()
            };
            let (models, points) = elastic_net_path(&tr, &te, lambdas, &cfg)?;
            fs::create_dir_all(out)?;
            let mut m = ManifestBuilder::new("baseline elastic-net", &json!({"lambdas": lambdas, "config": cfg}))?;
            m.input(train);
            m.input(test);
            let path = out.join("path.csv");
            write_path_csv(&points, fs::File::create(&path)?)?;
            m.output(&path);
            for (i, model) in models.iter().enumerate() {
                let p = out.join(format!("linear_{i:02}.viplin"));
                model.write(&p)?;
                m.output(&p);
            }
            m.write(out)?;
            println!("{:>10}  {:>8}  {:>8}", "lambda", "concepts", "accuracy");
            for p in &points {
                println!("{:>10}  {:>8}  {:>8.4}", p.lambda, p.sparsity, p.test_accuracy);
            }
        }
        BaselineKind::Dense {
            train,
            test,
            epochs,
            lr,
            batch_size,
            arch,
            width,
            seed,
            out,
        } => {
            let (tr, _) = load_split(train)?;
            let (te, _) = load_split(test)?;
            let mlp = MlpConfig {
                arch: (*arch).into(),
                hidden_width: *width,
                mask_channel: false,
            };
            let cfg = DenseConfig {
                epochs: *epochs,
                lr: *lr,
                batch_size: *batch_size,
                seed: *seed,
                ..DenseConfig::default()
            };
            let result = train_dense(&tr, &te, mlp, &cfg)?;
            fs::create_dir_all(out)?;
            let mut m = ManifestBuilder::new("baseline dense", &json!({"mlp": mlp, "config": cfg}))?.seed(*seed);
            m.input(train);
            m.input(test);
            let meta = CheckpointMeta {
                class_names: tr.class_names.clone(),
                final_loss: result.log.last().map(|r| r.loss),
                ..CheckpointMeta::default()
            };
            let ckpt = out.join("dense.vipckpt");
            Checkpoint::new(result.model, meta).write(&ckpt)?;
            let loss = out.join("loss.csv");
            save_loss_log(&result.log, &loss)?;
            let mpath = out.join("metrics.json");
            write_json(&mpath, &json!({"test_accuracy": result.test_accuracy}))?;
            for p in [&ckpt, &loss, &mpath] {
                m.output(p);
            }
            m.write(out)?;
            println!("dense predictor test accuracy {:.4}", result.test_accuracy);
        }
    }
    Ok(())
}

pub fn serve(a: &vip_service::ServeArgs) -> Result<()> {
    tracing_subscriber::fmt().with_max_level(tracing::Level::INFO).init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(vip_service::serve(a))?;
    Ok(())
}

#[derive(Serialize)]
struct TraceFile<'a> {
    sample: usize,
    label: usize,
    steps: &'a [Step],
    stop_reason: StopReason,
    prediction: usize,
}

pub fn trace(a: &TraceArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let (data, _) = load_split(&a.data)?;
    check_width(&ckpt.model, &data)?;
    ensure!(a.sample < data.len(), "sample {} out of range ({} samples)", a.sample, data.len());
    let rule = stop_rule(&a.rule, ckpt.model.n_queries())?;
    let queries = a.queries.as_ref().map(QuerySet::read_json).transpose()?;
    let record = infer(&ckpt.model, &mut RowSource(data.answers.row(a.sample)), rule)?;

    let text = |q: usize| {
        queries
            .as_ref()
            .and_then(|qs| qs.queries.get(q))
            .map(|x| x.text.clone())
            .unwrap_or_else(|| format!("query {q}"))
    };
    let label = data.labels[a.sample];
    let header = format!("sample {} (label: {})", a.sample, data.class_names[label]);
    let rendered = render_trace(&record, &text, &data.class_names, &header);
    print!("{rendered}");

    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let txt = out.join("trace.txt");
        fs::write(&txt, &rendered)?;
        let js = out.join("trace.json");
        write_json(
            &js,
            &TraceFile {
                sample: a.sample,
                label,
                steps: &record.steps,
                stop_reason: record.stop_reason,
                prediction: record.prediction,
            },
        )?;
        let mut m = ManifestBuilder::new("trace", &json!({"sample": a.sample, "rule": rule}))?;
        m.input(&a.ckpt);
        m.input(&a.data);
        if let Some(p) = &a.queries {
            m.input(p);
        }
        m.output(&txt);
        m.output(&js);
        m.write(out)?;
    }
    Ok(())
}
