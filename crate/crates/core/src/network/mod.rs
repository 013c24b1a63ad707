//! The hierarchical encoder/decoder, presets, ablation variants and training.

mod config;
mod model;
mod train;

pub use config::{apply_variant, mode_name, parse_key_values, parse_value, ModelConfig, StageConfig, Variant};
pub use model::{
    canonical_order, Downsampled, ForwardOutput, GateCapture, SatModel, Stage, TransitionDown, TransitionUp,
    MODEL_CONFIG_FILE,
};
pub use train::{clip_grad_norm, evaluate, predict, train, EpochLog, MultiStep, Optimizer, OptimizerKind, TrainConfig};
