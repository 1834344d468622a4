//! Spatial indices: a kd-tree over points and a BVH over triangles.

mod bvh;
mod kdtree;
mod triangle;

pub use bvh::{ClosestHit, TriangleBvh};
pub use kdtree::KdTree;
pub use triangle::{closest_point_on_triangle, point_triangle_distance_sq};
