//! Adam with gradient clipping, the multi-task training loop with
//! validation-driven early stopping, and the pseudopair retraining cycle.

mod cycle;
mod optim;
mod trainer;

pub use cycle::{augmented_sources, run_pseudopair_cycle, CycleMode, CycleOutcome, PseudoPairConfig};
pub use optim::{clip_gradients, global_norm, Adam};
pub use trainer::{
    train, Evaluator, Inspection, StepInfo, StopReason, TrainConfig, TrainLog, TrainOutcome, Trainer,
    ValidationEvaluator,
};
