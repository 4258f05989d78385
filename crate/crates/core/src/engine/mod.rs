//! The variational querier/predictor pair: masked histories, the
//! straight-through selection, two-stage training and threshold-stopped
//! inference with intervention.

mod checkpoint;
mod history;
mod infer;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use history::History;
pub use infer::{
    infer, infer_dataset, intervene, summarize, sweep_tradeoff, write_tradeoff_csv, InferenceRun,
    Intervention, TradeoffPoint, INFER_TAU,
};
pub use model::{
    select, vip_loss, Grads, MlpConfig, Selection, SelectionPath, VipModel, LOG_CLAMP,
};
pub use train::{
    sample_categorical, sample_history, save_loss_log, train, train_predictor_full, write_loss_log,
    LossRecord, Sampling, StageConfig, TrainConfig,
};
