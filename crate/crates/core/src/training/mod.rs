//! Parameters, gradients, optimizer, the two-phase schedule and the
//! finite-difference gradient checker.

mod checkpoint;
mod config;
mod gradcheck;
mod optim;
mod schedule;
mod store;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, to_checkpoint_string};
pub use config::{
    DataConfig, GradCheckConfig, LexiconRef, PhaseConfig, PhaseRole, ProjectionConfig, RunConfig, TrainingConfig,
};
pub use gradcheck::{gradient_check, gradient_check_objective, GradCheckReport, TensorCheck};
pub use optim::{optimizer_step, LearningRates, Optimizer, OptimizerKind};
pub use schedule::{
    compute_gradients, document_gradients, loss_log_string, read_loss_log, run_schedule, write_loss_log, BatchResult,
    LossRecord, Phase, TrainOptions, TrainingSchedule,
};
pub use store::{init_parameters, Gradients, InitMode, ParamGroup, ParameterStore, Tensor, TensorSpec};
