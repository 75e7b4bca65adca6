//! Multi-view image-to-voxel detection numerics.
//!
//! The crate covers the non-learned core of a multi-view 3D detection
//! pipeline: pinhole projection of posed 2D feature maps into a dense voxel
//! volume with frustum masks and averaging, oriented-box geometry with
//! rotated IoU, anchor-based and anchor-free box codecs with their losses,
//! rotated BEV non-maximum suppression, detection metrics (IoU-threshold AP,
//! center-distance AP, translation/scale/orientation errors), and parsers
//! for KITTI calibration/label files plus the crate's own scene and config
//! formats.
//!
//! All operations are pure functions of immutable inputs. With the default
//! `parallel` feature the voxel-volume and anchor-assignment inner loops run
//! on rayon; outputs are bitwise identical to the sequential fallback.

pub mod codec;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod math;
pub mod nms;
pub mod stub;
pub mod voxel;

pub use geometry::{Box3D, CameraExtrinsics, CameraIntrinsics, Polygon2D};
pub use voxel::{CameraView, FeatureMap2D, VoxelGridSpec, VoxelVolume};
