//! LiDAR scans, motion compensation, point-to-plane residuals against the
//! voxel map, and the iterated LiDAR update.

use nalgebra::{Point3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::esikf::{iterated_update, IterationConfig, NormalEquations, UpdateOutcome};
use crate::pose::Pose;
use crate::state::{
    discrete_transition, propagate, CovarianceMatrix, ImuSample, NoiseVector, ProcessNoise,
    StateVector,
};
use crate::voxel_map::{PlaneFeature, VoxelMap};

/// Largest tolerated hole in the IMU stream while undistorting a scan.
pub const MAX_UNDISTORT_GAP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub timestamp: f64,
    /// LiDAR frame, metres.
    pub point: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarScan {
    pub points: Vec<LidarPoint>,
    pub scan_start: f64,
    pub scan_end: f64,
}

impl LidarScan {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_end >= self.scan_start) {
            return Err(Error::InvalidArgument(format!(
                "scan end {} before start {}",
                self.scan_end, self.scan_start
            )));
        }
        let mut prev = self.scan_start;
        for p in &self.points {
            if p.timestamp < prev || p.timestamp > self.scan_end {
                return Err(Error::InvalidArgument(format!(
                    "point timestamp {} out of order or outside [{}, {}]",
                    p.timestamp, self.scan_start, self.scan_end
                )));
            }
            prev = p.timestamp;
        }
        Ok(())
    }
}

/// Timestamped world-from-IMU poses produced while integrating the IMU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseTrack {
    samples: Vec<(f64, Pose)>,
}

impl PoseTrack {
    pub fn push(&mut self, t: f64, pose: Pose) {
        self.samples.push((t, pose));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&(f64, Pose)> {
        self.samples.last()
    }

    /// Interpolated pose, clamped to the covered interval.
    pub fn pose_at(&self, t: f64) -> Option<Pose> {
        let s = &self.samples;
        let first = s.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        let idx = s.partition_point(|(ts, _)| *ts <= t);
        if idx >= s.len() {
            return Some(s[s.len() - 1].1);
        }
        let (t0, p0) = &s[idx - 1];
        let (t1, p1) = &s[idx];
        let span = t1 - t0;
        if span <= 0.0 {
            return Some(*p1);
        }
        Some(p0.interpolate(p1, (t - t0) / span))
    }
}

/// Result of integrating the IMU over `[t_from, t_to]`.
#[derive(Debug, Clone)]
pub struct Propagated {
    pub state: StateVector,
    pub covariance: CovarianceMatrix,
    pub track: PoseTrack,
}

/// Integrates state (and covariance when `noise` is given) from `t_from`
/// to `t_to` with zero-order hold on the IMU samples. `imu` must hold the
/// last sample at or before `t_from` and be time-ordered.
pub fn propagate_interval(
    state: &StateVector,
    covariance: &CovarianceMatrix,
    imu: &[ImuSample],
    t_from: f64,
    t_to: f64,
    noise: Option<&ProcessNoise>,
    max_gap: f64,
) -> Result<Propagated> {
    let mut track = PoseTrack::default();
    track.push(t_from, state.pose());
    let mut out = Propagated { state: *state, covariance: *covariance, track };
    if t_to <= t_from {
        return Ok(out);
    }
    let start = imu.partition_point(|s| s.timestamp <= t_from);
    if start == 0 {
        return Err(Error::ImuCoverage { start: t_from, end: t_to });
    }
    let mut k = start - 1;
    let mut t = t_from;
    while t < t_to {
        let next_t = imu.get(k + 1).map_or(f64::INFINITY, |s| s.timestamp).min(t_to);
        let gap_end = imu.get(k + 1).map_or(f64::INFINITY, |s| s.timestamp);
        if gap_end - imu[k].timestamp > max_gap && imu[k].timestamp < t_to {
            if gap_end.is_infinite() {
                return Err(Error::ImuCoverage { start: t_from, end: t_to });
            }
            return Err(Error::UndistortionGap { gap: gap_end - imu[k].timestamp, at: imu[k].timestamp });
        }
        let dt = next_t - t;
        if dt > 0.0 {
            match noise {
                Some(n) => {
                    let (s, p) = propagate(&out.state, &out.covariance, &imu[k], dt, &n.discrete(dt))?;
                    out.state = s;
                    out.covariance = p;
                }
                None => out.state = discrete_transition(&out.state, &imu[k], dt, &NoiseVector::zeros()),
            }
            out.track.push(next_t, out.state.pose());
        }
        t = next_t;
        k += 1;
        if k >= imu.len() {
            break;
        }
    }
    if t < t_to {
        return Err(Error::ImuCoverage { start: t_from, end: t_to });
    }
    Ok(out)
}

/// Moves every point into the LiDAR frame at `scan_end` using a pose track.
pub fn undistort_with_track(scan: &LidarScan, track: &PoseTrack, imu_from_lidar: &Pose) -> Vec<Point3<f64>> {
    let Some(end) = track.pose_at(scan.scan_end) else { return Vec::new() };
    let end_from_world = imu_from_lidar.inverse().compose(&end.inverse());
    scan.points
        .iter()
        .map(|lp| {
            let world_from_lidar = track.pose_at(lp.timestamp).unwrap_or(end).compose(imu_from_lidar);
            end_from_world.transform_point(&world_from_lidar.transform_point(&lp.point))
        })
        .collect()
}

/// Motion-compensates a scan given the state at `scan_start`.
pub fn undistort(
    scan: &LidarScan,
    imu_stream: &[ImuSample],
    state: &StateVector,
    imu_from_lidar: &Pose,
) -> Result<Vec<Point3<f64>>> {
    if scan.points.is_empty() {
        return Ok(Vec::new());
    }
    let prop = propagate_interval(
        state,
        &CovarianceMatrix::zeros(),
        imu_stream,
        scan.scan_start,
        scan.scan_end,
        None,
        MAX_UNDISTORT_GAP,
    )?;
    Ok(undistort_with_track(scan, &prop.track, imu_from_lidar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarConfig {
    /// Range noise standard deviation, metres.
    pub beam_sigma: f64,
    /// Association gate on |residual|, metres.
    pub gate: f64,
    /// Mahalanobis gate in standard deviations.
    pub mahalanobis_sigmas: f64,
    pub iteration: IterationConfig,
    pub imu_from_lidar: Pose,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beam_sigma: 0.02,
            gate: 0.3,
            mahalanobis_sigmas: 3.0,
            iteration: IterationConfig::default(),
            imu_from_lidar: Pose::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointToPlaneResidual {
    pub world_point: Point3<f64>,
    pub plane: PlaneFeature,
    /// `normalᵀ (world_point − center)`.
    pub residual: f64,
    /// Over `(δθ, δp)`.
    pub jacobian: Vector6<f64>,
    /// Residual variance: beam noise plus the plane's contribution.
    pub noise: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ResidualSet {
    pub residuals: Vec<PointToPlaneResidual>,
    pub skipped: usize,
}

/// Jacobian row of a point-to-plane residual for IMU-frame point `p`.
#[inline]
pub fn point_to_plane_jacobian(rotation: &nalgebra::Rotation3<f64>, p_imu: &Point3<f64>, normal: &Vector3<f64>) -> Vector6<f64> {
    let rot = p_imu.coords.cross(&(rotation.inverse() * normal));
    Vector6::new(rot.x, rot.y, rot.z, normal.x, normal.y, normal.z)
}

/// Associates IMU-frame points with map planes and linearizes them.
///
/// With `pose_cov` the 3σ test also accounts for the prior pose
/// uncertainty projected onto each residual.
pub fn build_residuals(
    state: &StateVector,
    points_imu: &[Point3<f64>],
    map: &VoxelMap,
    config: &LidarConfig,
    pose_cov: Option<&CovarianceMatrix>,
) -> ResidualSet {
    let beam_var = config.beam_sigma * config.beam_sigma;
    let mut out = ResidualSet { residuals: Vec::with_capacity(points_imu.len()), skipped: 0 };
    let pose_block = pose_cov.map(|p| p.fixed_view::<6, 6>(0, 0).into_owned());
    for p in points_imu {
        let world = Point3::from(state.rotation * p.coords + state.position);
        let Some(plane) = map.query_plane(&world) else {
            out.skipped += 1;
            continue;
        };
        let r = plane.signed_distance(&world);
        if r.abs() >= config.gate {
            out.skipped += 1;
            continue;
        }
        let noise = beam_var + plane.distance_variance(&world);
        let jacobian = point_to_plane_jacobian(&state.rotation, p, &plane.normal);
        let gate_var = noise + pose_block.map_or(0.0, |pb| (jacobian.transpose() * pb * jacobian)[(0, 0)]);
        let k = config.mahalanobis_sigmas;
        if r * r > k * k * gate_var {
            out.skipped += 1;
            continue;
        }
        out.residuals.push(PointToPlaneResidual { world_point: world, plane: *plane, residual: r, jacobian, noise });
    }
    out
}

#[derive(Debug, Clone)]
pub struct LidarUpdateOutcome {
    pub update: UpdateOutcome,
    /// Plane normals of the last iteration's accepted associations.
    pub normals: Vec<Vector3<f64>>,
    pub skipped: usize,
    /// Fewer than six residuals were available.
    pub underconstrained: bool,
}

/// Iterated LiDAR update, rebuilding residuals at every iterate.
pub fn lidar_iterated_update<F>(
    state: &StateVector,
    covariance: &CovarianceMatrix,
    iteration: &IterationConfig,
    mut residual_builder: F,
) -> LidarUpdateOutcome
where
    F: FnMut(&StateVector) -> ResidualSet,
{
    let mut normals = Vec::new();
    let mut skipped = 0;
    let update = iterated_update(state, covariance, iteration, |x| {
        let set = residual_builder(x);
        let mut eq = NormalEquations::default();
        for r in &set.residuals {
            eq.push(&r.jacobian, r.residual, 1.0 / r.noise);
        }
        normals = set.residuals.iter().map(|r| r.plane.normal).collect();
        skipped = set.skipped;
        eq
    });
    let underconstrained = update.measurements < 6;
    LidarUpdateOutcome { update, normals, skipped, underconstrained }
}

/// Voxel-grid downsampling keeping the first point per cell, in input order.
pub fn voxel_downsample(points: &[Point3<f64>], leaf: f64) -> Vec<Point3<f64>> {
    if leaf <= 0.0 {
        return points.to_vec();
    }
    let mut seen = std::collections::HashSet::with_capacity_and_hasher(points.len(), crate::voxel_map::DetState::default());
    points
        .iter()
        .filter(|p| seen.insert(crate::voxel_map::VoxelKey::from_point(p, leaf)))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3;

    fn imu_stream(t0: f64, t1: f64, w: Vector3<f64>, a: Vector3<f64>) -> Vec<ImuSample> {
        let n = ((t1 - t0) / 0.005).round() as usize;
        (0..=n)
            .map(|k| ImuSample { timestamp: t0 + k as f64 * 0.005, angular_velocity: w, linear_acceleration: a })
            .collect()
    }

    fn scan(points: &[(f64, [f64; 3])]) -> LidarScan {
        LidarScan {
            points: points.iter().map(|(t, p)| LidarPoint { timestamp: *t, point: Point3::from(*p) }).collect(),
            scan_start: 0.0,
            scan_end: 0.1,
        }
    }

    #[test]
    fn stationary_undistortion_is_identity() {
        let state = StateVector::default();
        let imu = imu_stream(0.0, 0.1, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81));
        let s = scan(&[(0.0, [1.0, 2.0, 3.0]), (0.05, [-1.0, 0.5, 0.2]), (0.1, [4.0, 0.0, -1.0])]);
        let out = undistort(&s, &imu, &state, &Pose::identity()).unwrap();
        for (o, i) in out.iter().zip(&s.points) {
            assert!((o - i.point).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_velocity_shift() {
        let v = Vector3::new(2.0, -1.0, 0.5);
        let state = StateVector { velocity: v, ..Default::default() };
        let imu = imu_stream(0.0, 0.1, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81));
        let s = scan(&[(0.0, [1.0, 2.0, 3.0])]);
        let out = undistort(&s, &imu, &state, &Pose::identity()).unwrap();
        let expected = Vector3::new(1.0, 2.0, 3.0) - v * 0.1;
        assert!((out[0].coords - expected).norm() < 1e-9);
    }

    #[test]
    fn empty_scan_and_gap() {
        let imu = imu_stream(0.0, 0.1, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81));
        assert!(undistort(&LidarScan::default(), &imu, &StateVector::default(), &Pose::identity())
            .unwrap()
            .is_empty());
        let mut holey = imu.clone();
        holey.retain(|s| !(s.timestamp > 0.03 && s.timestamp < 0.06));
        let s = scan(&[(0.0, [1.0, 0.0, 0.0])]);
        assert!(matches!(
            undistort(&s, &holey, &StateVector::default(), &Pose::identity()),
            Err(Error::UndistortionGap { .. })
        ));
    }

    #[test]
    fn rotating_scan_matches_closed_form() {
        let w = Vector3::new(0.0, 0.0, 1.0);
        let state = StateVector::default();
        let imu = imu_stream(0.0, 0.1, w, Vector3::new(0.0, 0.0, 9.81));
        let s = scan(&[(0.05, [1.0, 0.0, 0.0])]);
        let out = undistort(&s, &imu, &state, &Pose::identity()).unwrap();
        let expected = so3::exp(&(-w * 0.05)) * Vector3::x();
        assert!((out[0].coords - expected).norm() < 1e-9);
    }

    #[test]
    fn pose_track_interpolates() {
        let mut tr = PoseTrack::default();
        tr.push(0.0, Pose::identity());
        tr.push(1.0, Pose::new(so3::exp(&Vector3::new(0.0, 0.0, 0.5)), Vector3::new(2.0, 0.0, 0.0)));
        let mid = tr.pose_at(0.5).unwrap();
        assert!((mid.translation.x - 1.0).abs() < 1e-12);
        assert!((so3::log(&mid.rotation).z - 0.25).abs() < 1e-12);
    }

    #[test]
    fn downsample_keeps_first_per_cell() {
        let pts = vec![Point3::new(0.01, 0.0, 0.0), Point3::new(0.02, 0.0, 0.0), Point3::new(0.3, 0.0, 0.0)];
        assert_eq!(voxel_downsample(&pts, 0.2), vec![pts[0], pts[2]]);
    }
}
