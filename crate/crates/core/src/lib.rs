//! Consistent multi-modality (LiDAR point cloud + camera image) data augmentation.
//!
//! The crate is organized around three mechanisms:
//!
//! * [`transform_flow`] — every global augmentation is recorded as an invertible
//!   transform; a point in the augmented cloud finds its pixel in the augmented
//!   image by reversing the point transforms, projecting through the calibration
//!   chain, and replaying the image transforms.
//! * [`gt_database`] / [`moca_engine`] — an offline ground-truth object bank and
//!   a cut-and-paste procedure that discards BEV collisions, filters 2D occlusion
//!   by intersection-over-foreground with mixed thresholds, and composites image
//!   patches in depth order.
//! * [`fusion_sampler`] — differentiable bilinear sampling of multi-scale feature
//!   maps at projected point coordinates, plus the quantized nearest-cell baseline.
//!
//! [`cli_io`] provides file formats (KITTI calibration/velodyne, scene and
//! database containers), a synthetic scene generator for desk-scale verification,
//! and the CLI subcommands.

pub mod cli_io;
pub mod fusion_sampler;
pub mod geometry;
pub mod gt_database;
pub mod moca_engine;
pub mod transform_flow;
