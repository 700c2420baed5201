//! Core estimator for a lightweight LiDAR-inertial-visual odometry system.
//!
//! The filter state lives in [`state`]; LiDAR point-to-plane and direct
//! photometric measurements are fused by a sequential iterated Kalman
//! update ([`esikf`], [`lidar`], [`visual`]). A degeneracy evaluator on the
//! LiDAR constraint spectrum ([`degeneracy`]) drives an adaptive visual
//! frame selector ([`selector`]). Geometry is kept in a hash-indexed
//! voxel/octree local map ([`voxel_map`]) that slides with the robot and
//! hands its visual points to a sparse long-term map ([`longterm`]).

pub mod camera;
pub mod degeneracy;
pub mod error;
pub mod esikf;
pub mod lidar;
pub mod longterm;
pub mod pose;
pub mod selector;
pub mod so3;
pub mod state;
pub mod visual;
pub mod voxel_map;

pub use error::{Error, Result};
pub use pose::Pose;
pub use state::{CovarianceMatrix, ErrorState, ImuSample, StateVector};
