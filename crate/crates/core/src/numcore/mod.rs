//! Dense tensors with reverse-mode differentiation.

mod checkpoint;
mod gradcheck;
mod layers;
mod ops;
mod params;
mod scalar;
mod segment;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, StoredParam,
    CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, GradCheck};
pub use layers::{LayerNorm, Linear, Mlp};
pub use ops::ReduceKind;
pub use params::{load_params, Init, ParamStore};
pub use scalar::Scalar;
pub use segment::SegmentMap;
pub use tensor::{grad_enabled, no_grad, Backward, DiffTensor};
