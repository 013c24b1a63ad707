//! Synthetic size-varied scenes and the `SATPC1` point cloud format.

mod batch;
mod cloud;
mod format;
mod scene;

pub use batch::make_batches;
pub use cloud::{PointCloud, SizeClass, CLASS_NAMES, NUM_CLASSES};
pub use format::{decode_cloud, encode_cloud, read_cloud, write_cloud, FORMAT_MAGIC};
pub use scene::{generate_scene, SceneSpec};
