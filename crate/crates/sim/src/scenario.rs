//! Named, versioned scenario fixtures and on-demand sensor streams.

use livo_core::camera::{CameraModel, Image};
use livo_core::lidar::LidarScan;
use livo_core::{ImuSample, Pose};
use nalgebra::{Point3, Rotation3, Vector3};

use crate::sensors::{generate_imu, quantize, raycast_lidar, render_camera, LidarPattern, SensorNoiseSpec, DEFAULT_MAX_RANGE};
use crate::trajectory::{Segment, SpeedProfile, Sway, TrajectoryKind, TrajectorySpec};
use crate::world::{PlaneSurface, Texture, WorldModel};

pub const SCENARIO_NAMES: [&str; 6] = ["room-loop", "corridor", "wall-facing", "outdoor-loop", "revisit-loop", "long-walk"];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub version: u32,
    pub world: WorldModel,
    pub trajectory: TrajectorySpec,
    pub pattern: LidarPattern,
    pub max_range: f64,
    pub camera: CameraModel,
    pub imu_from_lidar: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub timestamp: f64,
    pub pose: Pose,
}

/// One LiDAR sweep and the camera image taken at its end.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scan: LidarScan,
    pub image: Image,
}

fn default_extrinsic() -> Pose {
    Pose::new(Rotation3::identity(), Vector3::new(0.05, 0.0, 0.08))
}

fn gentle_sway() -> Sway {
    Sway { roll: 2f64.to_radians(), pitch: 3f64.to_radians(), omega: 0.7 }
}

fn smooth(i: usize) -> Texture {
    Texture::smooth(0.9 * i as f64 + 0.3, 1.0)
}

fn room_loop() -> Scenario {
    let mut world = WorldModel::default();
    world.add_box(
        Point3::new(-6.0, -6.0, 0.0),
        Point3::new(6.0, 6.0, 4.0),
        [
            Texture::Checkerboard { size: 1.0, low: 0.3, high: 0.7 },
            smooth(1),
            smooth(2),
            smooth(3),
            smooth(4),
            smooth(5),
        ],
    );
    let mut trajectory = TrajectorySpec::circle(Vector3::new(0.0, 0.0, 1.5), 4.0, 1.0, 4.0).with_sway(gentle_sway());
    trajectory.kind = TrajectoryKind::RoomLoop;
    Scenario {
        name: "room-loop",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::dome16(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

fn corridor() -> Scenario {
    let mut world = WorldModel::default();
    world.add_box(
        Point3::new(0.0, -1.5, 0.0),
        Point3::new(140.0, 1.5, 3.0),
        [smooth(0), smooth(1), smooth(2), smooth(3), smooth(4), smooth(5)],
    );
    let trajectory = TrajectorySpec::waypoints(
        TrajectoryKind::CorridorWalk,
        &[Vector3::new(20.0, 0.0, 1.2), Vector3::new(120.0, 0.0, 1.2)],
        2.5,
        2.0,
        0.0,
    )
    .with_sway(gentle_sway());
    Scenario {
        name: "corridor",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::spinning16(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

fn wall_facing() -> Scenario {
    let mut world = WorldModel::default();
    world.push(PlaneSurface::axis_aligned(0, 3.0, [-10.0, 0.0], [10.0, 6.0], smooth(0)));
    world.push(PlaneSurface::axis_aligned(2, 0.0, [-5.0, -10.0], [3.0, 10.0], smooth(1)));
    let profile = SpeedProfile::new(6.0, 0.5, 2.0);
    let trajectory = TrajectorySpec::new(
        TrajectoryKind::Line,
        vec![Segment::Move { from: Vector3::new(0.0, -3.0, 1.0), to: Vector3::new(0.0, 3.0, 1.0), yaw: 0.0, profile }],
        Some(gentle_sway()),
    );
    Scenario {
        name: "wall-facing",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::narrow70(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

fn building(world: &mut WorldModel, center: Vector3<f64>, half: f64, height: f64, seed: usize) {
    let (x0, x1, y0, y1) = (center.x - half, center.x + half, center.y - half, center.y + half);
    world.push(PlaneSurface::axis_aligned(0, x0, [y0, 0.0], [y1, height], smooth(seed)));
    world.push(PlaneSurface::axis_aligned(0, x1, [y0, 0.0], [y1, height], smooth(seed + 1)));
    world.push(PlaneSurface::axis_aligned(1, y0, [0.0, x0], [height, x1], smooth(seed + 2)));
    world.push(PlaneSurface::axis_aligned(1, y1, [0.0, x0], [height, x1], smooth(seed + 3)));
    world.push(PlaneSurface::axis_aligned(2, height, [x0, y0], [x1, y1], smooth(seed + 4)));
}

fn outdoor_loop() -> Scenario {
    let mut world = WorldModel::default();
    world.push(PlaneSurface::axis_aligned(2, 0.0, [-60.0, -60.0], [60.0, 60.0], Texture::smooth(0.2, 3.0)));
    for (i, c) in [(-30.0, 0.0), (30.0, 0.0), (0.0, 20.0), (0.0, -20.0), (18.0, 18.0), (-18.0, -18.0)].iter().enumerate() {
        building(&mut world, Vector3::new(c.0, c.1, 0.0), 4.0, 8.0 + i as f64, 5 * i);
    }
    let duration = std::f64::consts::TAU / 0.1;
    let trajectory = TrajectorySpec::new(
        TrajectoryKind::Lissajous,
        vec![Segment::Lissajous {
            center: Vector3::new(0.0, 0.0, 1.8),
            amplitude: Vector3::new(20.0, 12.0, 0.3),
            omega: Vector3::new(0.1, 0.2, 0.3),
            phase: Vector3::zeros(),
            duration,
        }],
        Some(gentle_sway()),
    );
    Scenario {
        name: "outdoor-loop",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::spinning16(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

/// A rectangular corridor ring driven three times around, so every
/// corridor is revisited after its points left a small local map.
fn revisit_loop() -> Scenario {
    let mut world = WorldModel::default();
    world.add_box(
        Point3::new(-2.0, -2.0, 0.0),
        Point3::new(102.0, 32.0, 3.0),
        [smooth(0), smooth(1), smooth(2), smooth(3), smooth(4), smooth(5)],
    );
    let (x0, x1, y0, y1, h) = (2.0, 98.0, 2.0, 28.0, 3.0);
    world.push(PlaneSurface::axis_aligned(0, x0, [y0, 0.0], [y1, h], smooth(6)));
    world.push(PlaneSurface::axis_aligned(0, x1, [y0, 0.0], [y1, h], smooth(7)));
    world.push(PlaneSurface::axis_aligned(1, y0, [0.0, x0], [h, x1], smooth(8)));
    world.push(PlaneSurface::axis_aligned(1, y1, [0.0, x0], [h, x1], smooth(9)));
    let z = 1.3;
    let waypoints = [
        Vector3::new(10.0, 0.0, z),
        Vector3::new(100.0, 0.0, z),
        Vector3::new(100.0, 30.0, z),
        Vector3::new(0.0, 30.0, z),
        Vector3::new(0.0, 0.0, z),
        Vector3::new(100.0, 0.0, z),
        Vector3::new(100.0, 30.0, z),
        Vector3::new(0.0, 30.0, z),
        Vector3::new(0.0, 0.0, z),
        Vector3::new(100.0, 0.0, z),
        Vector3::new(100.0, 30.0, z),
        Vector3::new(0.0, 30.0, z),
    ];
    let trajectory =
        TrajectorySpec::waypoints(TrajectoryKind::RevisitLoop, &waypoints, 3.0, 2.0, 3.0).with_sway(gentle_sway());
    Scenario {
        name: "revisit-loop",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::spinning16(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

/// A 300 m straight walk down a hall with buttresses every 10 m.
fn long_walk() -> Scenario {
    let mut world = WorldModel::default();
    world.add_box(
        Point3::new(-10.0, -4.0, 0.0),
        Point3::new(320.0, 4.0, 4.0),
        [smooth(0), smooth(1), smooth(2), smooth(3), smooth(4), smooth(5)],
    );
    for k in 0..32 {
        let x = -5.0 + 10.0 * k as f64;
        let (lo, hi) = if k % 2 == 0 { (3.4, 4.0) } else { (-4.0, -3.4) };
        world.push(PlaneSurface::axis_aligned(0, x, [lo, 0.0], [hi, 4.0], smooth(6 + k % 4)));
    }
    let mut trajectory = TrajectorySpec::line(Vector3::new(0.0, 0.0, 1.5), Vector3::new(300.0, 0.0, 1.5), 3.0, 2.0)
        .with_sway(gentle_sway());
    trajectory.kind = TrajectoryKind::Line;
    Scenario {
        name: "long-walk",
        version: 1,
        world,
        trajectory,
        pattern: LidarPattern::spinning16(),
        max_range: DEFAULT_MAX_RANGE,
        camera: CameraModel::default(),
        imu_from_lidar: default_extrinsic(),
    }
}

pub fn scenario(name: &str) -> Option<Scenario> {
    Some(match name {
        "room-loop" => room_loop(),
        "corridor" => corridor(),
        "wall-facing" => wall_facing(),
        "outdoor-loop" => outdoor_loop(),
        "revisit-loop" => revisit_loop(),
        "long-walk" => long_walk(),
        _ => return None,
    })
}

impl Scenario {
    pub fn world_from_lidar(&self, t: f64) -> Pose {
        self.trajectory.pose(t).compose(&self.imu_from_lidar)
    }

    pub fn frame_count(&self) -> usize {
        (self.trajectory.duration() * self.trajectory.rates.lidar_hz + 1e-9).floor() as usize
    }

    pub fn scan_window(&self, k: usize) -> (f64, f64) {
        let hz = self.trajectory.rates.lidar_hz;
        (k as f64 / hz, (k + 1) as f64 / hz)
    }

    pub fn scan(&self, k: usize, noise: &SensorNoiseSpec) -> LidarScan {
        let (start, end) = self.scan_window(k);
        let pose_at = |t: f64| self.world_from_lidar(t);
        raycast_lidar(&self.world, &pose_at, &self.pattern, start, end, self.max_range, noise, k as u64)
    }

    /// 8-bit quantized image at the end of scan `k`.
    pub fn image(&self, k: usize, noise: &SensorNoiseSpec) -> Image {
        let (_, t) = self.scan_window(k);
        quantize(&render_camera(&self.world, &self.trajectory.pose(t), &self.camera, noise, t, k as u64))
    }

    /// Ground truth at the IMU rate.
    pub fn groundtruth(&self) -> Vec<GroundTruth> {
        let hz = self.trajectory.rates.imu_hz;
        let count = (self.trajectory.duration() * hz + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let t = i as f64 / hz;
                GroundTruth { timestamp: t, pose: self.trajectory.pose(t) }
            })
            .collect()
    }
}

/// A scenario bound to a noise realisation. IMU and ground truth are
/// materialised; frames are generated on demand.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub noise: SensorNoiseSpec,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Vec<GroundTruth>,
}

impl Simulation {
    pub fn new(scenario: Scenario, noise: SensorNoiseSpec) -> Self {
        let imu = generate_imu(&scenario.trajectory, &noise);
        let groundtruth = scenario.groundtruth();
        Self { scenario, noise, imu, groundtruth }
    }

    pub fn frame_count(&self) -> usize {
        self.scenario.frame_count()
    }

    pub fn frame(&self, k: usize) -> Frame {
        Frame { scan: self.scenario.scan(k, &self.noise), image: self.scenario.image(k, &self.noise) }
    }
}
