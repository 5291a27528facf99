//! Training: teacher pretraining, bucketed stage-1 adaptation and stage-2
//! distribution-matching distillation.

mod data;
mod dmd;
mod supervised;

pub use data::{simulate_sequence, DataConfig, Dataset, Sequence, Window};
pub use dmd::{
    distill, dmd_direction, dmd_generator_step, dmd_gradient, draw_chunks, fake_score_step, full_trace_gradients,
    rollout, score_input, ChunkSchedule, Direction, DistillConfig, DistillLogLine, DistillOutcome, DmdStepReport, Draw,
    MotionNoise, MotionProvenance, MotionSource, RolloutTrace, ScoreInput,
};
pub use supervised::{
    denoise_mse, fit_denoising, pretrain_teacher, stage1_adapt, zero_predictor_mse, FitReport, SupervisedOpts,
};
