//! Joint two-task training: configuration, batching, the four system
//! variants, the optimizer step and inference helpers.

mod batch;
mod config;
mod infer;
mod model;
mod step;

pub use batch::{make_batches, Batch, BatchSchedule};
pub use config::{total_loss, TrainConfig, Variant};
pub use infer::{
    break_gap_positions, frame_levels, low_energy_frames, synthesize, teacher_forced_alignment, PeChoice, Synthesis,
};
pub use model::{Losses, Model};
pub use step::{
    evaluate_breaks, init_prosody_state, pretrain_prosody, prosody_step, train_step, LossEma, StepMetrics,
    TrainState,
};
