//! Desk-scale trainable transformer: gradient tape, model, training loop,
//! synthetic tasks, binarization, and checkpoints.

pub mod binarize;
pub mod checkpoint;
pub mod model;
pub mod tape;
pub mod task;
pub mod train;

pub use binarize::{binarize, BinarizeStrategy};
pub use model::{loss, Model, ModelConfig, INPUT_WIDTH, OUTPUT_WIDTH};
pub use tape::{Gradients, NodeId, Tape};
pub use task::{chord_cue_task, copy_task, Sample};
pub use train::{clip_global_norm, curriculum_length, grad_check, train, EpochLog, GradCheck, TrainConfig};
