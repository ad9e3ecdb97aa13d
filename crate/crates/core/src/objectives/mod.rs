//! Pretraining objectives, mask sampling and the toy training loop.

pub mod electra;
pub mod masking;
pub mod mlm;
pub mod optim;
pub mod train;

pub use electra::{
    disc_loss, electra_step, generator_config, sample_replacements, ElectraBatch, ElectraOutput,
};
pub use masking::{mask_budget, sample_mask_single, sample_mask_span, MaskPlan};
pub use mlm::{mlm_logits, mlm_loss, mlm_loss_value};
pub use optim::AdamW;
pub use train::{train_toy, trace_csv, write_trace_csv, TracePoint, TrainOutcome, TrainSummary};
