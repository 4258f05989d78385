//! `vip`: batch workflows for Information Pursuit.
//!
//! Every subcommand writes its artifacts plus a `manifest.json` (settings,
//! input and output hashes) into the directory given by `--out`. Exit code
//! 0 means success, 1 a data or runtime error, 2 a usage error.

mod commands;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vip_core::concept::StandardizeScope;
use vip_core::nn::Arch;

#[derive(Parser)]
#[command(name = "vip", version, about = "Interpretable classification by Information Pursuit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task: model, queries, embeddings and train/test splits.
    Synth(SynthArgs),
    /// Turn precomputed embeddings into standardized query-answer splits.
    Ingest(IngestArgs),
    /// Train a querier/predictor checkpoint.
    Train(TrainArgs),
    /// Run inference on a split and report accuracy and query counts.
    Eval(EvalArgs),
    /// Accuracy versus average number of queries over stopping thresholds.
    Sweep(SweepArgs),
    /// Concept-filter report: which queries each filter removes and how
    /// informative and how often selected they are.
    Filters(FiltersArgs),
    /// Greedy pursuit with the exact task model.
    ExactIp(ExactIpArgs),
    /// Elastic-net or dense baselines on full answer vectors.
    Baseline(BaselineArgs),
    /// Start the HTTP session service.
    Serve(vip_service::ServeArgs),
    /// Print the query-answer chain for one sample.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON task configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Number of informative queries.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub duplicates: Option<usize>,
    #[arg(long)]
    pub constants: Option<usize>,
    #[arg(long)]
    pub indicators: Option<usize>,
    #[arg(long)]
    pub indicator_noise: Option<f64>,
    #[arg(long = "train")]
    pub n_train: Option<usize>,
    #[arg(long = "test")]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScopeArg {
    Global,
    PerQuery,
}

impl From<ScopeArg> for StandardizeScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Global => StandardizeScope::Global,
            ScopeArg::PerQuery => StandardizeScope::PerQuery,
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Query set JSON.
    #[arg(long, conflicts_with = "attribute_lists", required_unless_present = "attribute_lists")]
    pub queries: Option<PathBuf>,
    /// Directory of `<class>.txt` attribute lists returned by the language
    /// model; their union becomes the query set.
    #[arg(long)]
    pub attribute_lists: Option<PathBuf>,
    /// Text embeddings of the queries, one row per query.
    #[arg(long)]
    pub text_emb: PathBuf,
    /// Image embeddings of the training split.
    #[arg(long)]
    pub train_images: PathBuf,
    /// Labels JSON `{"class_names": [...], "labels": [...]}` of the training split.
    #[arg(long)]
    pub train_labels: PathBuf,
    #[arg(long, requires = "val_labels")]
    pub val_images: Option<PathBuf>,
    #[arg(long)]
    pub val_labels: Option<PathBuf>,
    #[arg(long, requires = "test_labels")]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    pub scope: ScopeArg,
    /// Dataset name recorded next to the answer files.
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Shallow,
    Deep,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Shallow => Arch::Shallow,
            ArchArg::Deep => Arch::Deep,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Schedule {
    /// 300 + 100 epochs.
    Desk,
    /// 4000 + 1500 epochs.
    Full,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training split directory (`answers.bin`, `labels.json`).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON `{"train": {...}, "mlp": {...}}`; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub schedule: Schedule,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Feed the selection mask to the networks as well as the masked answers.
    #[arg(long)]
    pub mask_channel: bool,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub stage1_lr: Option<f64>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// File stem of the checkpoint (`<name>.vipckpt`).
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RuleArgs {
    /// Stop once the largest posterior probability reaches this value.
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    /// Most queries to ask; defaults to the whole query set.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.8,0.9,0.99")]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FiltersArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    #[arg(long)]
    pub class_emb: PathBuf,
    /// Unstandardized training answers, used by the activation filter.
    /// Defaults to the answers of `--data`.
    #[arg(long)]
    pub raw_train: Option<PathBuf>,
    /// Split used for empirical mutual information and selection frequency.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long, default_value_t = 0.85)]
    pub classname_cutoff: f64,
    #[arg(long, default_value_t = 0.9)]
    pub similarity_cutoff: f64,
    #[arg(long, default_value_t = 0.25)]
    pub activation_cutoff: f64,
    #[arg(long, default_value_t = 5)]
    pub activation_top_k: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExactIpArgs {
    /// Task model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Split whose answer signs are the observed symbols.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Query ids to remove before running.
    #[arg(long, value_delimiter = ',')]
    pub drop: Vec<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(subcommand)]
    pub kind: BaselineKind,
}

#[derive(Subcommand, Debug)]
pub enum BaselineKind {
    /// Sparse linear model along a regularization path.
    ElasticNet {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001,0.01,0.1")]
        lambdas: Vec<f64>,
        /// Share of the penalty that is absolute rather than squared.
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value_t = 20000)]
        max_iters: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Predictor network on complete answer vectors.
    Dense {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, value_enum, default_value = "shallow")]
        arch: ArchArg,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sample: usize,
    /// Query set JSON for readable query texts.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Also write `trace.txt`, `trace.json` and a manifest here.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Filters(a) => commands::filters(&a),
        Command::ExactIp(a) => commands::exact_ip(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Trace(a) => commands::trace(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
