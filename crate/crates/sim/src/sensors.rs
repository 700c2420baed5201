//! LiDAR, camera and IMU models over a [`WorldModel`].

use livo_core::camera::{CameraModel, Image};
use livo_core::lidar::{LidarPoint, LidarScan};
use livo_core::{ImuSample, Pose};
use nalgebra::{Point3, Vector2, Vector3};

use crate::rng::{gaussian, stream_rng, Stream};
use crate::trajectory::TrajectorySpec;
use crate::world::WorldModel;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);
pub const DEFAULT_MAX_RANGE: f64 = 50.0;
/// Returns closer than this are discarded as self-hits.
pub const MIN_RANGE: f64 = 0.3;

/// Ray directions in the LiDAR frame, grouped into firing columns. All rays
/// of one column share a timestamp; columns are spread uniformly over the
/// scan period.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPattern {
    pub columns: Vec<Vec<Vector3<f64>>>,
}

impl LidarPattern {
    /// Spinning multi-line sensor covering 360° in azimuth.
    pub fn spinning(lines: usize, min_elevation: f64, max_elevation: f64, azimuth_steps: usize) -> Self {
        let columns = (0..azimuth_steps)
            .map(|c| {
                let az = std::f64::consts::TAU * c as f64 / azimuth_steps as f64;
                (0..lines)
                    .map(|l| {
                        let el = min_elevation + (max_elevation - min_elevation) * l as f64 / (lines - 1).max(1) as f64;
                        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
                    })
                    .collect()
            })
            .collect();
        Self { columns }
    }

    /// 16 lines over ±15°, 0.8° azimuth resolution.
    pub fn spinning16() -> Self {
        Self::spinning(16, -15f64.to_radians(), 15f64.to_radians(), 450)
    }

    /// 16 lines from -7° to 52°, the vertical span of dome-shaped 360°
    /// sensors that see the ceiling of a room.
    pub fn dome16() -> Self {
        Self::spinning(16, -7f64.to_radians(), 52f64.to_radians(), 450)
    }

    /// Forward-looking sensor with a circular field of view, sampled on a
    /// sunflower spiral (one ray per column).
    pub fn narrow(fov: f64, rays: usize) -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let cos_max = (0.5 * fov).cos();
        let columns = (0..rays)
            .map(|i| {
                let f = (i as f64 + 0.5) / rays as f64;
                let cos_t = 1.0 - f * (1.0 - cos_max);
                let sin_t = (1.0 - cos_t * cos_t).sqrt();
                let phi = golden * i as f64;
                vec![Vector3::new(cos_t, sin_t * phi.cos(), sin_t * phi.sin())]
            })
            .collect();
        Self { columns }
    }

    /// 70° circular field of view.
    pub fn narrow70() -> Self {
        Self::narrow(70f64.to_radians(), 4000)
    }

    pub fn ray_count(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoiseSpec {
    pub lidar_range_sigma: f64,
    /// Gyro white-noise density, rad/s/√Hz.
    pub gyro_noise: f64,
    /// Accelerometer white-noise density, m/s²/√Hz.
    pub accel_noise: f64,
    /// Bias random-walk densities.
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    /// Constant biases injected from t = 0.
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub image_noise_sigma: f64,
    pub seed: u64,
}

impl SensorNoiseSpec {
    pub fn zero() -> Self {
        Self {
            lidar_range_sigma: 0.0,
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            image_noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_valid(&self) -> bool {
        [
            self.lidar_range_sigma,
            self.gyro_noise,
            self.accel_noise,
            self.gyro_bias_walk,
            self.accel_bias_walk,
            self.image_noise_sigma,
        ]
        .iter()
        .all(|s| *s >= 0.0 && s.is_finite())
    }
}

impl Default for SensorNoiseSpec {
    /// A consumer-grade MEMS IMU and a 2 cm ranging LiDAR.
    fn default() -> Self {
        Self {
            lidar_range_sigma: 0.02,
            gyro_noise: 1e-3,
            accel_noise: 1e-2,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            gyro_bias: Vector3::new(2e-3, -1e-3, 1.5e-3),
            accel_bias: Vector3::new(0.02, -0.015, 0.01),
            image_noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// Casts every ray of `pattern` from the LiDAR pose at its firing time.
/// `world_from_lidar` is evaluated once per column; `scan_index` selects the
/// noise stream so scans can be generated independently.
#[allow(clippy::too_many_arguments)]
pub fn raycast_lidar(
    world: &WorldModel,
    world_from_lidar: &dyn Fn(f64) -> Pose,
    pattern: &LidarPattern,
    scan_start: f64,
    scan_end: f64,
    max_range: f64,
    noise: &SensorNoiseSpec,
    scan_index: u64,
) -> LidarScan {
    let mut rng = stream_rng(noise.seed, Stream::LidarRange, scan_index);
    let period = scan_end - scan_start;
    let columns = pattern.columns.len();
    let mut points = Vec::with_capacity(pattern.ray_count());
    for (c, rays) in pattern.columns.iter().enumerate() {
        let t = scan_start + period * c as f64 / columns as f64;
        let pose = world_from_lidar(t);
        let origin = Point3::from(pose.translation);
        for d in rays {
            // One draw per ray whether or not it hits keeps streams aligned.
            let n = if noise.lidar_range_sigma > 0.0 { gaussian(&mut rng) * noise.lidar_range_sigma } else { 0.0 };
            let Some(hit) = world.raycast(&origin, &(pose.rotation * d), max_range) else { continue };
            let range = hit.range + n;
            if range < MIN_RANGE {
                continue;
            }
            points.push(LidarPoint { timestamp: t, point: Point3::from(d * range) });
        }
    }
    LidarScan { points, scan_start, scan_end }
}

/// Renders the world from a world-from-IMU pose. Pixel centres sit at
/// integer coordinates; misses are 0.
pub fn render_camera(
    world: &WorldModel,
    imu_pose: &Pose,
    camera: &CameraModel,
    noise: &SensorNoiseSpec,
    timestamp: f64,
    image_index: u64,
) -> Image {
    let cam = camera.camera_pose(imu_pose);
    let origin = Point3::from(cam.translation);
    let mut image = Image::new(camera.width, camera.height, timestamp);
    for v in 0..camera.height {
        let mut rng = (noise.image_noise_sigma > 0.0)
            .then(|| stream_rng(noise.seed, Stream::Pixel, image_index * camera.height as u64 + v as u64));
        for u in 0..camera.width {
            let dir = (cam.rotation * camera.unproject(&Vector2::new(u as f64, v as f64))).normalize();
            let mut value = world.raycast(&origin, &dir, f64::INFINITY).map_or(0.0, |h| {
                world.planes[h.plane].shade(&(origin + dir * h.range))
            });
            if let Some(rng) = rng.as_mut() {
                value += noise.image_noise_sigma * gaussian(rng);
            }
            image.data[v * camera.width + u] = value;
        }
    }
    image
}

/// Rounds intensities to 8-bit levels in `[0, 1]`, as stored on disk.
pub fn quantize(image: &Image) -> Image {
    let mut out = image.clone();
    for v in &mut out.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}

/// IMU samples at `spec.rates.imu_hz` covering `[0, duration]`.
pub fn generate_imu(spec: &TrajectorySpec, noise: &SensorNoiseSpec) -> Vec<ImuSample> {
    let dt = 1.0 / spec.rates.imu_hz;
    let count = (spec.duration() * spec.rates.imu_hz + 1e-9).floor() as usize + 1;
    let sqrt_dt = dt.sqrt();
    let mut bg = noise.gyro_bias;
    let mut ba = noise.accel_bias;
    let draw = |stream: Stream, index: usize| {
        let mut rng = stream_rng(noise.seed, stream, index as u64);
        Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng))
    };
    (0..count)
        .map(|i| {
            let t = i as f64 / spec.rates.imu_hz;
            let k = spec.kinematics(t);
            if i > 0 {
                if noise.gyro_bias_walk > 0.0 {
                    bg += draw(Stream::GyroBias, i) * (noise.gyro_bias_walk * sqrt_dt);
                }
                if noise.accel_bias_walk > 0.0 {
                    ba += draw(Stream::AccelBias, i) * (noise.accel_bias_walk * sqrt_dt);
                }
            }
            let mut w = k.angular_velocity + bg;
            let mut a = k.pose.rotation.inverse() * (k.acceleration - GRAVITY) + ba;
            if noise.gyro_noise > 0.0 {
                w += draw(Stream::Gyro, i) * (noise.gyro_noise / sqrt_dt);
            }
            if noise.accel_noise > 0.0 {
                a += draw(Stream::Accel, i) * (noise.accel_noise / sqrt_dt);
            }
            ImuSample { timestamp: t, angular_velocity: w, linear_acceleration: a }
        })
        .collect()
}
