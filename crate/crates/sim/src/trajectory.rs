//! Analytic, twice-differentiable body trajectories.
//!
//! Every segment provides closed-form position, velocity, acceleration and
//! heading derivatives, so the IMU stream never relies on numerical
//! differentiation. Orientation is yaw from the segment plus an optional
//! roll/pitch sway, composed as `Rz(ψ)·Ry(θ)·Rx(φ)`.

use std::f64::consts::FRAC_PI_2;

use livo_core::Pose;
use nalgebra::{Rotation3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Line,
    Circle,
    Lissajous,
    CorridorWalk,
    RoomLoop,
    RevisitLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub imu_hz: f64,
    pub lidar_hz: f64,
    pub camera_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { imu_hz: 200.0, lidar_hz: 10.0, camera_hz: 10.0 }
    }
}

/// Position, velocity and acceleration in the world frame; angular velocity
/// in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

/// Rest-to-rest motion along a line: quintic smooth-step speed ramps around
/// a constant-speed cruise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    pub distance: f64,
    pub speed: f64,
    pub ramp: f64,
}

impl SpeedProfile {
    pub fn new(distance: f64, speed: f64, ramp: f64) -> Self {
        // Too short to reach cruise speed: ramp straight up and down.
        let speed = speed.min(distance / ramp);
        Self { distance, speed, ramp }
    }

    pub fn duration(&self) -> f64 {
        self.distance / self.speed + self.ramp
    }

    fn ramp_up(&self, t: f64) -> (f64, f64, f64) {
        let x = (t / self.ramp).clamp(0.0, 1.0);
        let (v, tr) = (self.speed, self.ramp);
        let s = v * tr * (x.powi(6) - 3.0 * x.powi(5) + 2.5 * x.powi(4));
        let ds = v * (6.0 * x.powi(5) - 15.0 * x.powi(4) + 10.0 * x.powi(3));
        let dds = v / tr * (30.0 * x.powi(4) - 60.0 * x.powi(3) + 30.0 * x.powi(2));
        (s, ds, dds)
    }

    /// Arc length and its first two time derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let total = self.duration();
        let t = t.clamp(0.0, total);
        if t <= self.ramp {
            self.ramp_up(t)
        } else if t >= total - self.ramp {
            let (s, ds, dds) = self.ramp_up(total - t);
            (self.distance - s, ds, -dds)
        } else {
            (0.5 * self.speed * self.ramp + self.speed * (t - self.ramp), self.speed, 0.0)
        }
    }
}

fn quintic_step(x: f64) -> (f64, f64, f64) {
    let x = x.clamp(0.0, 1.0);
    (
        10.0 * x.powi(3) - 15.0 * x.powi(4) + 6.0 * x.powi(5),
        30.0 * x.powi(2) - 60.0 * x.powi(3) + 30.0 * x.powi(4),
        60.0 * x - 180.0 * x.powi(2) + 120.0 * x.powi(3),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Hold { position: Vector3<f64>, yaw: f64, duration: f64 },
    Move { from: Vector3<f64>, to: Vector3<f64>, yaw: f64, profile: SpeedProfile },
    Turn { position: Vector3<f64>, yaw_from: f64, yaw_to: f64, duration: f64 },
    /// Constant-speed circle in a horizontal plane, heading along the tangent.
    Circle { center: Vector3<f64>, radius: f64, speed: f64, phase: f64, duration: f64 },
    /// `p_i = center_i + amplitude_i·sin(omega_i·t + phase_i)`, heading along
    /// the horizontal velocity (which must not vanish).
    Lissajous { center: Vector3<f64>, amplitude: Vector3<f64>, omega: Vector3<f64>, phase: Vector3<f64>, duration: f64 },
}

/// Translational state plus heading `(ψ, ψ̇)`.
type SegmentState = (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64, f64);

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Hold { duration, .. }
            | Segment::Turn { duration, .. }
            | Segment::Circle { duration, .. }
            | Segment::Lissajous { duration, .. } => *duration,
            Segment::Move { profile, .. } => profile.duration(),
        }
    }

    fn eval(&self, t: f64) -> SegmentState {
        let z = Vector3::zeros();
        match self {
            Segment::Hold { position, yaw, .. } => (*position, z, z, *yaw, 0.0),
            Segment::Move { from, to, yaw, profile } => {
                let dir = (to - from).normalize();
                let (s, ds, dds) = profile.eval(t);
                (from + dir * s, dir * ds, dir * dds, *yaw, 0.0)
            }
            Segment::Turn { position, yaw_from, yaw_to, duration } => {
                let (q, dq, _) = quintic_step(t / duration);
                let delta = yaw_to - yaw_from;
                (*position, z, z, yaw_from + delta * q, delta * dq / duration)
            }
            Segment::Circle { center, radius, speed, phase, .. } => {
                let rate = speed / radius;
                let phi = phase + rate * t;
                let (s, c) = phi.sin_cos();
                let p = center + Vector3::new(radius * c, radius * s, 0.0);
                let v = Vector3::new(-speed * s, speed * c, 0.0);
                let a = Vector3::new(-speed * rate * c, -speed * rate * s, 0.0);
                (p, v, a, phi + FRAC_PI_2, rate)
            }
            Segment::Lissajous { center, amplitude, omega, phase, .. } => {
                let mut p = *center;
                let mut v = z;
                let mut a = z;
                for i in 0..3 {
                    let arg = omega[i] * t + phase[i];
                    p[i] += amplitude[i] * arg.sin();
                    v[i] = amplitude[i] * omega[i] * arg.cos();
                    a[i] = -amplitude[i] * omega[i] * omega[i] * arg.sin();
                }
                let speed2 = v.x * v.x + v.y * v.y;
                let yaw = v.y.atan2(v.x);
                let yaw_rate = (v.x * a.y - v.y * a.x) / speed2;
                (p, v, a, yaw, yaw_rate)
            }
        }
    }
}

/// Small periodic roll and pitch superimposed on the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sway {
    pub roll: f64,
    pub pitch: f64,
    pub omega: f64,
}

impl Sway {
    fn eval(&self, t: f64) -> (f64, f64, f64, f64) {
        let (s, c) = (self.omega * t).sin_cos();
        let (s2, c2) = (self.omega * t + 1.0).sin_cos();
        (self.roll * s, self.roll * self.omega * c, self.pitch * s2, self.pitch * self.omega * c2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub segments: Vec<Segment>,
    pub sway: Option<Sway>,
    pub rates: Rates,
    starts: Vec<f64>,
    duration: f64,
}

impl TrajectorySpec {
    pub fn new(kind: TrajectoryKind, segments: Vec<Segment>, sway: Option<Sway>) -> Self {
        assert!(!segments.is_empty(), "a trajectory needs at least one segment");
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            starts.push(t);
            t += s.duration();
        }
        Self { kind, segments, sway, rates: Rates::default(), starts, duration: t }
    }

    pub fn stationary(position: Vector3<f64>, yaw: f64, duration: f64) -> Self {
        Self::new(TrajectoryKind::Line, vec![Segment::Hold { position, yaw, duration }], None)
    }

    pub fn line(from: Vector3<f64>, to: Vector3<f64>, speed: f64, ramp: f64) -> Self {
        Self::waypoints(TrajectoryKind::Line, &[from, to], speed, ramp, 0.0)
    }

    pub fn circle(center: Vector3<f64>, radius: f64, speed: f64, laps: f64) -> Self {
        let duration = laps * std::f64::consts::TAU * radius / speed;
        Self::new(
            TrajectoryKind::Circle,
            vec![Segment::Circle { center, radius, speed, phase: -FRAC_PI_2, duration }],
            None,
        )
    }

    /// Stop-and-go polyline: straight moves facing the direction of travel,
    /// with in-place yaw turns of `turn_time` seconds at every corner.
    pub fn waypoints(kind: TrajectoryKind, points: &[Vector3<f64>], speed: f64, ramp: f64, turn_time: f64) -> Self {
        assert!(points.len() >= 2, "need at least two waypoints");
        let heading = |a: &Vector3<f64>, b: &Vector3<f64>| (b.y - a.y).atan2(b.x - a.x);
        let mut segments = Vec::new();
        let mut yaw = heading(&points[0], &points[1]);
        for w in points.windows(2) {
            let next = heading(&w[0], &w[1]);
            if segments.last().is_some() && turn_time > 0.0 {
                let mut delta = next - yaw;
                delta = (delta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
                segments.push(Segment::Turn { position: w[0], yaw_from: yaw, yaw_to: yaw + delta, duration: turn_time });
                yaw += delta;
            } else {
                yaw = next;
            }
            let profile = SpeedProfile::new((w[1] - w[0]).norm(), speed, ramp);
            segments.push(Segment::Move { from: w[0], to: w[1], yaw, profile });
        }
        Self::new(kind, segments, None)
    }

    pub fn with_sway(mut self, sway: Sway) -> Self {
        self.sway = Some(sway);
        self
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.duration);
        let i = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        (i, t - self.starts[i])
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let (i, local) = self.locate(t);
        let (p, v, a, yaw, yaw_rate) = self.segments[i].eval(local);
        let (roll, roll_rate, pitch, pitch_rate) = self.sway.map_or((0.0, 0.0, 0.0, 0.0), |s| s.eval(t));
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
        let omega = rx.inverse() * (ry.inverse() * Vector3::new(0.0, 0.0, yaw_rate) + Vector3::new(0.0, pitch_rate, 0.0))
            + Vector3::new(roll_rate, 0.0, 0.0);
        Kinematics { pose: Pose::new(rz * ry * rx, p), velocity: v, acceleration: a, angular_velocity: omega }
    }

    pub fn pose(&self, t: f64) -> Pose {
        self.kinematics(t).pose
    }

    /// Travelled distance up to `t`, integrated at 100 Hz.
    pub fn distance_until(&self, t: f64) -> f64 {
        let steps = (t * 100.0).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        (0..steps)
            .map(|k| {
                let (a, b) = (self.kinematics(k as f64 * h).velocity.norm(), self.kinematics((k + 1) as f64 * h).velocity.norm());
                0.5 * (a + b) * h
            })
            .sum()
    }
}
