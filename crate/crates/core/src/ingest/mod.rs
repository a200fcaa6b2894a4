//! Point-cloud ingestion: parsing, windowing, voxelization and augmentation.

pub mod augment;
pub mod manifest;
pub mod points;
pub mod radhar;
pub mod voxel;

pub use augment::{augment_points, augment_voxels, flip_y, translate, AugmentPolicy};
pub use manifest::{parse_manifest, ManifestEntry, DEFAULT_CLASSES};
pub use points::{
    parse_frame_stream, polar_to_cartesian, serialize_frame_stream, window_sequences, Point, PointFrame, RadarDetection,
};
pub use radhar::parse_radhar;
pub use voxel::{voxelize, Bounds, VoxelDims, VoxelSequence};
