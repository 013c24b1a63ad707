//! Segmentation metrics, attention cost benchmarking and re-attention
//! diagnostics.

mod bench;
mod metrics;
mod reattention;

pub use bench::{bench_attention, bench_csv, write_bench_csv, BenchRow, BENCH_HEADER};
pub use metrics::{
    class_iou_variance, lowest_variance_row, miou_macc, ConfusionMatrix, Metrics, S3DIS_AREA5_ROWS,
    S3DIS_BEAM, S3DIS_CLASSES,
};
pub use reattention::{export_reattention, layer_csv, reattention_report, trend_csv, LayerGates, ReAttentionReport};
