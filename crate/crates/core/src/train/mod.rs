//! Optimizers, learning-rate schedules, oversampling and training loops.

mod loops;
mod optim;
mod oversample;
mod schedule;

pub use loops::{
    fine_tune, pretrain, FineTuneConfig, LossTrace, PretrainConfig, PretrainData, TraceRow,
    TrainConfig,
};
pub use optim::{clip_grad_norm, sgd_step, AdamConfig, AdamState, DecayMode, Optimizer};
pub use oversample::random_oversample;
pub use schedule::{LrSchedule, ScheduleShape};
