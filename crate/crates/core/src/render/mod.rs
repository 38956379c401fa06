//! Pinhole projection and silhouette rasterization.
//!
//! [`rasterize_hard`] produces binary ground-truth masks. [`rasterize_soft`]
//! produces a smooth occupancy image recorded on a tape so losses on it can
//! be differentiated back to screen vertices and everything upstream.

mod camera;
mod image;
mod mesh;
mod raster;
mod scene;

pub use camera::{Keypoint2D, PinholeCamera, FOCAL_AT_128};
pub use image::{load_pgm_sequence, save_pgm_sequence, MaskKind, SilhouetteImage};
pub use mesh::{reference_tool_meshes, TriMesh, SHAFT_SEGMENTS};
pub use raster::{default_sigma, rasterize_hard, rasterize_soft, soft_occupancy, SOFT_CUTOFF};
pub use scene::{MeshPart, ToolModel};
