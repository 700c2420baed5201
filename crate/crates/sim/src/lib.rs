//! Deterministic simulator for planar worlds.
//!
//! Worlds are sets of finite textured rectangles ([`world`]); bodies follow
//! analytic trajectories ([`trajectory`]); LiDAR, camera and IMU streams are
//! synthesised from exact geometry and kinematics ([`sensors`]) with noise
//! drawn from counter-based streams ([`rng`]). Named fixtures live in
//! [`scenario`].

pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod trajectory;
pub mod world;

pub use scenario::{scenario, Frame, GroundTruth, Scenario, Simulation, SCENARIO_NAMES};
pub use sensors::{generate_imu, raycast_lidar, render_camera, LidarPattern, SensorNoiseSpec, GRAVITY};
pub use trajectory::{Kinematics, TrajectoryKind, TrajectorySpec};
pub use world::{PlaneSurface, Texture, WorldModel};
