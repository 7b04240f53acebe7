//! Lower-bound-guided training of the f16 decoder.

mod loss;
mod optim;
mod train;

pub use loss::{
    bound_noise, loss_bound_in, loss_f16_in, loss_rec_in, regularizer_tv_in, BoundTerm, LossParts,
    LossValues, LossWeights, PerceptualExtractor, Reduction, PERCEPTUAL_CHANNELS,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{
    codec_input, crop, explicit_factor, pretrain_reference, sample_batch, stage_a_step,
    stage_b_step, super_resolve, train, validate, LogRow, PretrainConfig, Sample, Stage,
    StepReport, TrainConfig, TrainState, TrainSummary, ALL_GROUPS, CSV_HEADER,
};
