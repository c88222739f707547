//! Two-stage conditional image translation.

pub mod data;
pub mod loss;
pub mod pipeline;
pub mod train;

pub use data::{generate_paired_data, DrivePolicy, Pair, PairedSet, Split};
pub use loss::{d_loss, g_loss, GanLossReport, DEFAULT_LAMBDA};
pub use pipeline::TranslationPipeline;
pub use train::{train_stage, EpochRecord, GanConfig, Stage, StageResult};
