//! Multi-granularity attention: voxel tokens, point-voxel cross attention,
//! windowed point attention, the shunted head split, the per-head
//! re-attention gate and the assembled transformer block.

mod kernel;
mod mga;

pub use kernel::{attention_pairs, count_pairs, grouped_attention, Attended};
pub use mga::{
    count_attention_macs, mga, point_attention, pvca, re_attention, sat_block, voxel_tokenize,
    BlockConfig, BlockOutput, CoarseParams, MacCounts, MgaMode, MgaOutput, MgaParams, Projections,
    ReAttentionParams, SatBlockParams,
};
