//! Size-aware transformer for point cloud semantic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`] dense tensors with reverse-mode differentiation
//! * [`geometry`] voxel hashing, window partitions, sampling and neighbour search
//! * [`attention`] voxel tokens, point-voxel cross attention, windowed point
//!   attention, the shunted head split and the per-head re-attention gate
//! * [`network`] the hierarchical encoder/decoder, presets, ablation variants
//!   and the training loop
//! * [`data`] synthetic scenes and the `SATPC1` point cloud format
//! * [`evalbench`] metrics, attention cost counting and gate diagnostics

pub mod attention;
pub mod data;
pub mod error;
pub mod evalbench;
pub mod geometry;
pub mod network;
pub mod numcore;

pub use error::{Error, Result};
