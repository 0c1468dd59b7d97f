//! Synthetic scene labeling and keypoint-based 6D pose recovery for clustered,
//! texture-less rigid parts.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: poses, pinhole projection, reprojection error.
//! - [`mesh`]: triangle meshes, numbered edge polylines, keypoint sampling.
//! - [`raster`]: silhouettes, depth, index masks, keypoint visibility, heatmaps.
//! - [`synth`]: randomized multi-part scenes, annotation and dataset I/O.
//! - [`pnp`]: linear PnP, weighted Levenberg-Marquardt refinement, RANSAC.
//! - [`multi`]: detector abstraction, candidate clustering, sequential
//!   occlusion-aware estimation and evaluation metrics.


pub mod error;
pub mod geometry;
pub mod mesh;
pub mod multi;
pub mod pnp;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    project, reprojection_error, CameraIntrinsics, Correspondence, Keypoint3D, KeypointSet3D, Pose,
    Vec2, Vec3,
};
pub use mesh::{EdgePolyline, PartModel, TriangleMesh};
pub use raster::{BinaryImage, BoundingBox, DepthBuffer, Heatmap, IndexMask};
