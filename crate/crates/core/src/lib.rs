//! Semantic voxel mapping: lidar scans registered by odometry into a sparse voxel grid,
//! per-pixel class scores fused into each voxel by Bayes' rule, then a batch refinement that
//! fixes building/vegetation columns and removes the traces of moving vehicles.
//!
//! The core is generic over the scalar type ([`num::Real`], implemented for `f32` and `f64`);
//! the aliases below fix it to `f64`, which is what the file formats and the CLI use.

pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod label;
pub mod num;
pub mod pipeline;
pub mod refine;
pub mod synth;

pub use error::{Error, Location, Result};
pub use eval::{evaluate, ConfusionMatrix, MetricsReport};
pub use geometry::{KeySet, VoxelKey};
pub use label::Label;
pub use num::Real;

pub type Pose = geometry::Pose<f64>;
pub type PointCloud = geometry::PointCloud<f64>;
pub type OccupancyMap = geometry::OccupancyMap<f64>;
pub type LabelDistribution = fusion::LabelDistribution<f64>;
pub type SegmentationFrame = fusion::SegmentationFrame<f64>;
pub type CameraModel = fusion::CameraModel<f64>;
pub type SemanticCell = fusion::SemanticCell<f64>;
pub type SemanticVoxelMap = fusion::SemanticVoxelMap<f64>;
pub type FusionParams = fusion::FusionParams<f64>;
pub type RefineParams = refine::RefineParams<f64>;
pub type MapBuilder = pipeline::MapBuilder<f64>;
