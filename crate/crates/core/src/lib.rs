//! Geometry toolkit for multi-person human mesh reconstruction.
//!
//! Provides a deterministic software rasterizer, canonical orthographic view
//! construction, perspective-to-orthographic point-cloud reprojection,
//! latent-grid blending operators, normal-supervised mesh refinement with
//! interpenetration and visibility terms, multi-view texture fusion and a
//! reconstruction metric suite.

pub mod camera;
pub mod canonical;
pub mod diffrender;
pub mod error;
pub mod image;
pub mod imgproc;
pub mod io;
pub mod latent;
pub mod math;
pub mod metrics;
pub mod mesh;
pub mod optim;
pub mod pers2ortho;
pub mod pointcloud;
pub mod primitives;
pub mod refine;
pub mod render;
pub mod spatial;
pub mod texture;

pub use camera::{Camera, Projection};
pub use error::{GeomError, Result};
pub use image::{ImageBuffer, Semantic, DEPTH_BACKGROUND};
pub use math::{Aabb, Mat3, Vec2, Vec3};
pub use mesh::{bounding_box, compute_face_normals, compute_vertex_normals, Mesh, Normals, Scene};
pub use pointcloud::ColoredPointCloud;
pub use render::{rasterize, vertex_visibility, RasterOptions, RenderOutput};
