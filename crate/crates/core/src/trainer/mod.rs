//! Joint multi-task training, evaluation and ablation runs.

mod ablation;
mod batch;
mod config;
mod eval;
mod train;

pub use ablation::{ablation_matrix, AblationGrid, AblationRow, AblationTable};
pub use batch::{build_batch, BatchItem, TaskSets};
pub use config::{digest_json, set_dotted, TrainConfig};
pub use eval::{
    attribute_rating, evaluate, evaluate_with, field_metrics, generation_prompt, oracle_prediction, predict,
    think_trace, EvalOptions, Prediction,
};
pub use train::{
    init_model, loss_joint, loss_joint_with, sample_loss, train, vae_loss, GradSink, LossBreakdown, StepLog, TrainLog,
    TrainOutcome,
};
