//! Spatial indexing: voxel hashing, nested window partitions, farthest point
//! sampling, nearest-neighbour search and interpolation weights.

mod knn;
mod sampling;
mod voxel;
mod window;

pub use knn::{interpolate_3nn, knn, Interpolation, Knn, NeighborIndex};
pub use sampling::{default_start, farthest_point_sample, SamplingResult};
pub use voxel::{cell_of, voxel_assign, Cell, CellAssignment, Point3};
pub use window::{lexicographic_order, WindowIndex, WindowSpec};
