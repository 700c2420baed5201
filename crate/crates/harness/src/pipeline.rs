//! The per-frame estimator loop: propagation, LiDAR update, degeneracy
//! evaluation, frame selection, visual update and map maintenance.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use livo_core::camera::{CameraModel, ImagePyramid};
use livo_core::degeneracy::{constraint_spectrum, ConstraintSpectrum, DegeneracyState};
use livo_core::lidar::{
    build_residuals, lidar_iterated_update, propagate_interval, undistort_with_track, voxel_downsample, LidarConfig, LidarScan,
};
use livo_core::longterm::{LongTermMap, VisualPoint};
use livo_core::selector::{adaptive_threshold, SelectorState, SelectorThresholds};
use livo_core::state::{min_eigenvalue, symmetrize, ProcessNoise};
use livo_core::visual::{attach_visual_points, project_point, update_with_points, SparseDepth, VisualConfig};
use livo_core::voxel_map::VoxelMap;
use livo_core::{CovarianceMatrix, ImuSample, StateVector};
use nalgebra::{Point3, Vector2, Vector3};

use crate::config::PipelineConfig;
use crate::dataset::{Calibration, GroundTruthPose, SensorSource, SYNC_TOLERANCE};
use crate::error::{HarnessError, Result};
use crate::metrics::{ate_rmse, associate, StageStats, TimedPosition};
use crate::report::{
    DegeneracyRecord, MemoryPeak, MemoryRecord, PoseRecord, ReportHeader, RunReport, RuntimeTable, SelectionRecord,
    Summary, TimingRecord, FORMAT, RECORD_TYPES, VERSION,
};

/// Pixel cell size of the occlusion depth grid.
const DEPTH_CELL: usize = 8;
/// Depth slack for the occlusion test, metres.
const OCCLUSION_TOLERANCE: f64 = 0.3;
/// Pixel grid used to spread local visual points over the image.
const SPREAD_CELL: f64 = 16.0;

fn initial_covariance() -> CovarianceMatrix {
    let diag = [1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4, 1e-8, 1e-8, 1e-8];
    CovarianceMatrix::from_diagonal(&nalgebra::SVector::from(diag))
}

/// Initial state from ground truth near `t0`, or a gravity-aligned rest
/// state from the first accelerometer sample when none exists.
fn initial_state(t0: f64, groundtruth: &[GroundTruthPose], imu: &[ImuSample]) -> StateVector {
    let i = groundtruth.partition_point(|g| g.timestamp < t0 - SYNC_TOLERANCE);
    if i + 2 < groundtruth.len() && (groundtruth[i].timestamp - t0).abs() < 0.01 {
        let (g0, g1, g2) = (&groundtruth[i], &groundtruth[i + 1], &groundtruth[i + 2]);
        let dt = 0.5 * (g2.timestamp - g0.timestamp);
        let velocity = (-3.0 * g0.position + 4.0 * g1.position - g2.position) / (2.0 * dt);
        let pose = g0.pose();
        return StateVector { rotation: pose.rotation, position: pose.translation, velocity, ..Default::default() };
    }
    let mut state = StateVector::default();
    if let Some(s) = imu.iter().find(|s| s.timestamp >= t0 - SYNC_TOLERANCE).or(imu.last()) {
        let up_body = s.linear_acceleration.normalize();
        if let Some(r) = nalgebra::Rotation3::rotation_between(&up_body, &Vector3::z()) {
            state.rotation = r;
        }
    }
    state
}

fn validate_frame(k: usize, scan: &LidarScan, image_timestamp: f64, t_prev: f64) -> Result<()> {
    let record = |what: &str| format!("frame {k} {what}");
    scan.validate().map_err(|e| HarnessError::Validation { record: record("scan"), message: e.to_string() })?;
    if scan.scan_start < t_prev - SYNC_TOLERANCE {
        return Err(HarnessError::Validation {
            record: record("scan"),
            message: format!("starts at t = {} before the previous scan end {t_prev}", scan.scan_start),
        });
    }
    if (image_timestamp - scan.scan_end).abs() > SYNC_TOLERANCE {
        return Err(HarnessError::Validation {
            record: record("image"),
            message: format!("t = {image_timestamp} is not synchronised with scan end {}", scan.scan_end),
        });
    }
    Ok(())
}

fn check_imu(imu: &[ImuSample]) -> Result<()> {
    if imu.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    for (i, w) in imu.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(HarnessError::Validation {
                record: format!("imu sample {}", i + 1),
                message: format!("t = {} does not follow t = {}", w[1].timestamp, w[0].timestamp),
            });
        }
    }
    Ok(())
}

/// Whether a map point can be observed in the current image.
struct Visibility<'a> {
    state: &'a StateVector,
    camera: &'a CameraModel,
    camera_position: Vector3<f64>,
    pyramid: &'a ImagePyramid,
    depth: &'a SparseDepth,
    cos_gate: f64,
    scale_change: f64,
    view_change: f64,
}

struct Visible {
    uv: Vector2<f64>,
    /// The view has moved more than half the allowed change from the
    /// reference, so the patch should be re-captured.
    stale: bool,
}

impl Visibility<'_> {
    fn check(&self, vp: &VisualPoint) -> Option<Visible> {
        let uv = project_point(self.state, self.camera, &vp.position)?;
        if !self.pyramid.patch_fits(&uv) {
            return None;
        }
        let ray = self.camera_position - vp.position.coords;
        if vp.normal_hint.dot(&ray).abs() <= self.cos_gate * ray.norm() {
            return None;
        }
        let reference = vp.reference_pose.translation - vp.position.coords;
        let scale = (ray.norm() / reference.norm()).ln().abs() / (1.0 + self.scale_change).ln();
        let view = ray.angle(&reference) / self.view_change;
        if scale > 1.0 || view > 1.0 {
            return None;
        }
        let cam_from_world = self.camera.camera_pose(&self.state.pose()).inverse();
        let depth = cam_from_world.transform_point(&vp.position).z;
        self.depth
            .is_visible(&uv, depth, OCCLUSION_TOLERANCE)
            .then_some(Visible { uv, stale: scale > 0.5 || view > 0.5 })
    }
}

/// Best-scoring point per image cell not already in `used`, then best
/// cells first.
fn spread(
    mut candidates: Vec<(Visible, VisualPoint)>,
    max: usize,
    used: &mut HashSet<(i64, i64)>,
) -> Vec<(Visible, VisualPoint)> {
    candidates.sort_by(|a, b| a.1.priority_cmp(&b.1));
    let mut out = Vec::new();
    for (v, vp) in candidates {
        if out.len() >= max {
            break;
        }
        let cell = ((v.uv.x / SPREAD_CELL) as i64, (v.uv.y / SPREAD_CELL) as i64);
        if used.insert(cell) {
            out.push((v, vp));
        }
    }
    out
}

fn position_key(p: &Point3<f64>) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

struct Estimator<'a> {
    config: &'a PipelineConfig,
    calibration: Calibration,
    imu: &'a [ImuSample],
    lidar: LidarConfig,
    visual: VisualConfig,
    noise: ProcessNoise,
    thresholds: SelectorThresholds,
    state: StateVector,
    covariance: CovarianceMatrix,
    t: f64,
    map: VoxelMap,
    longterm: Option<LongTermMap>,
    degeneracy: DegeneracyState,
    selector: SelectorState,
}

struct FrameOutput {
    pose: PoseRecord,
    degeneracy: DegeneracyRecord,
    selection: SelectionRecord,
    timing: TimingRecord,
    memory: MemoryRecord,
    min_eigenvalue: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl<'a> Estimator<'a> {
    fn new(config: &'a PipelineConfig, calibration: Calibration, imu: &'a [ImuSample], state: StateVector, t0: f64) -> Self {
        let origin = state.position;
        Self {
            config,
            calibration,
            imu,
            lidar: config.lidar_config(calibration.imu_from_lidar),
            visual: config.visual_config(),
            noise: config.process_noise(),
            thresholds: config.thresholds(),
            state,
            covariance: initial_covariance(),
            t: t0,
            map: VoxelMap::new(config.map_config(), origin),
            longterm: config.longterm_map.then(|| LongTermMap::new(config.longterm_config(), origin)),
            degeneracy: DegeneracyState::new(config.degeneracy_config()),
            selector: SelectorState::default(),
        }
    }

    fn estimator_error(timestamp: f64) -> impl FnOnce(livo_core::Error) -> HarnessError {
        move |source| {
            let timestamp = match &source {
                livo_core::Error::UndistortionGap { at, .. } => *at,
                _ => timestamp,
            };
            HarnessError::Estimator { timestamp, source }
        }
    }

    /// Re-captures the reference patches of the given local visual points
    /// from the current image at the posterior pose.
    fn refresh_patches(&mut self, pyramid: &ImagePyramid, which: &HashSet<[u64; 3]>, frame: u64) {
        let camera = self.calibration.camera;
        let cam_pose = camera.camera_pose(&self.state.pose());
        let state = self.state;
        for vp in self.map.visual_points_mut() {
            if !which.contains(&position_key(&vp.position)) {
                continue;
            }
            let Some(uv) = project_point(&state, &camera, &vp.position) else { continue };
            if let Ok(patch) = pyramid.extract_patch_pyramid(&uv) {
                vp.patch_pyramid = patch;
                vp.reference_pose = cam_pose;
                vp.last_observed = frame;
            }
        }
    }

    fn step(&mut self, k: usize, scan: &LidarScan, source: &dyn SensorSource) -> Result<FrameOutput> {
        let frame_start = Instant::now();
        let scan_end = scan.scan_end;
        let camera = self.calibration.camera;

        let stage = Instant::now();
        let prop = propagate_interval(&self.state, &self.covariance, self.imu, self.t, scan_end, Some(&self.noise), self.config.imu_max_gap)
            .map_err(Self::estimator_error(self.t))?;
        self.state = prop.state;
        self.covariance = prop.covariance;
        self.t = scan_end;
        let in_imu: Vec<Point3<f64>> = undistort_with_track(scan, &prop.track, &self.calibration.imu_from_lidar)
            .iter()
            .map(|p| self.calibration.imu_from_lidar.transform_point(p))
            .collect();
        let points = voxel_downsample(&in_imu, self.config.downsample_leaf);

        // The first scan seeds the map at full resolution so that planes
        // exist from the second frame on.
        let first = self.map.is_empty();
        let normals = if first {
            let world: Vec<Point3<f64>> = in_imu.iter().map(|p| self.state.pose().transform_point(p)).collect();
            self.map.update(&world);
            build_residuals(&self.state, &points, &self.map, &self.lidar, None).residuals.iter().map(|r| r.plane.normal).collect()
        } else {
            let prior = self.covariance;
            let out = lidar_iterated_update(&self.state, &self.covariance, &self.lidar.iteration, |x| {
                build_residuals(x, &points, &self.map, &self.lidar, Some(&prior))
            });
            if !out.update.state.is_finite() {
                return Err(HarnessError::Estimator { timestamp: scan_end, source: livo_core::Error::InvalidArgument("non-finite LiDAR update".into()) });
            }
            self.state = out.update.state;
            self.covariance = out.update.covariance;
            out.normals
        };
        let spectrum = constraint_spectrum(&normals, None);
        let degenerate = self.degeneracy.update(&spectrum);
        let lidar_ms = ms(stage);

        let stage = Instant::now();
        let pose = self.state.pose();
        let (tau, decision) = if self.config.selector {
            let sigma = if spectrum.valid { spectrum.sigma_min } else { 0.0 };
            let tau = adaptive_threshold(sigma, &self.thresholds);
            (tau, self.selector.should_select(&pose, &tau, degenerate))
        } else {
            let tau = SelectorThresholds { tau_position: 0.0, tau_rotation: 0.0 };
            (tau, self.selector.should_select(&pose, &tau, true))
        };
        let mut used: Vec<VisualPoint> = Vec::new();
        let mut stale = HashSet::new();
        let mut visible_positions: Vec<Point3<f64>> = Vec::new();
        let (mut local_points, mut longterm_points, mut applied) = (0, 0, false);
        // Sensor I/O is excluded from the stage timings.
        let mut io_ms = 0.0;
        let image = if decision.selected {
            let load = Instant::now();
            let image = source.image(k)?;
            io_ms = ms(load);
            Some(image)
        } else {
            None
        };
        let pyramid = image.as_ref().map(ImagePyramid::new);
        if let Some(pyramid) = &pyramid {
            let cam_pose = camera.camera_pose(&pose);
            let cam_from_imu = camera.cam_from_imu;
            let in_camera: Vec<Point3<f64>> = in_imu.iter().map(|p| cam_from_imu.transform_point(p)).collect();
            let depth = SparseDepth::new(&camera, &in_camera, DEPTH_CELL);
            let vis = Visibility {
                state: &self.state,
                camera: &camera,
                camera_position: cam_pose.translation,
                pyramid,
                depth: &depth,
                cos_gate: self.config.view_angle_deg.to_radians().cos(),
                scale_change: self.config.patch_scale_change,
                view_change: self.config.patch_view_change_deg.to_radians(),
            };
            // Archived points claim image cells before local ones.
            let mut cells = HashSet::new();
            if let Some(ltm) = &self.longterm {
                let candidates = ltm.query_visible(&cam_pose, &camera, usize::MAX);
                let visible: Vec<_> = candidates.into_iter().filter_map(|vp| vis.check(&vp).map(|v| (v, vp))).collect();
                let extra = spread(visible, self.config.max_longterm_points, &mut cells);
                longterm_points = extra.len();
                visible_positions.extend(extra.iter().map(|(_, vp)| vp.position));
                used.extend(extra.into_iter().map(|(_, vp)| vp));
            }
            let local: Vec<_> = self.map.visual_points().filter_map(|vp| vis.check(vp).map(|v| (v, vp.clone()))).collect();
            visible_positions.extend(local.iter().map(|(_, vp)| vp.position));
            for (v, vp) in spread(local, self.config.max_visual_points, &mut cells) {
                if v.stale {
                    stale.insert(position_key(&vp.position));
                }
                used.push(vp);
                local_points += 1;
            }
            if !used.is_empty() {
                let out = update_with_points(&self.state, &self.covariance, &used, pyramid, &camera, &self.visual);
                if out.applied && out.update.state.is_finite() {
                    self.state = out.update.state;
                    self.covariance = out.update.covariance;
                    applied = true;
                }
            }
        }
        symmetrize(&mut self.covariance);
        let mut visual_ms = ms(stage) - io_ms;

        let stage = Instant::now();
        let world: Vec<Point3<f64>> = points.iter().map(|p| self.state.pose().transform_point(p)).collect();
        if !first {
            self.map.update(&world);
        }
        let map_ms_update = ms(stage);

        let stage = Instant::now();
        let mut attached = 0;
        if let Some(pyramid) = &pyramid {
            if !stale.is_empty() {
                self.refresh_patches(pyramid, &stale, k as u64);
            }
            let occupied: Vec<Vector2<f64>> =
                visible_positions.iter().filter_map(|p| project_point(&self.state, &camera, p)).collect();
            attached = attach_visual_points(&mut self.map, pyramid, &camera, &self.state, &world, &occupied, k as u64, &self.visual);
        }
        visual_ms += ms(stage);

        let stage = Instant::now();
        let position = self.state.position;
        let evicted = self.map.slide(&position);
        if let Some(ltm) = &mut self.longterm {
            if !evicted.points.is_empty() {
                ltm.absorb(evicted.points);
            }
            ltm.slide(&position);
        }
        let stats = self.map.memory_stats();
        let memory = MemoryRecord {
            frame: k as u64,
            voxels: stats.voxels,
            nodes: stats.nodes,
            points: stats.points,
            visual_points: stats.visual_points,
            local_bytes: stats.estimated_bytes,
            longterm_points: self.longterm.as_ref().map_or(0, |l| l.point_count()),
            longterm_bytes: self.longterm.as_ref().map_or(0, |l| l.estimated_bytes()),
        };
        let map_ms = map_ms_update + ms(stage);
        let total_ms = ms(frame_start) - io_ms;

        let q = self.state.pose().quaternion();
        let finite = |v: f64| v.is_finite().then_some(v);
        let spectrum = if spectrum.valid { spectrum } else { ConstraintSpectrum { sigma_min: 0.0, sigma_mid: 0.0, sigma_max: 0.0, valid: false } };
        Ok(FrameOutput {
            pose: PoseRecord {
                frame: k as u64,
                t: scan_end,
                px: position.x,
                py: position.y,
                pz: position.z,
                qw: q.w,
                qx: q.i,
                qy: q.j,
                qz: q.k,
            },
            degeneracy: DegeneracyRecord {
                frame: k as u64,
                t: scan_end,
                sigma_min: spectrum.sigma_min,
                sigma_mid: spectrum.sigma_mid,
                sigma_max: spectrum.sigma_max,
                valid: spectrum.valid,
                flag: degenerate,
                residuals: normals.len(),
            },
            selection: SelectionRecord {
                frame: k as u64,
                t: scan_end,
                selected: decision.selected,
                degenerate,
                delta_position: finite(decision.delta_position),
                delta_rotation: finite(decision.delta_rotation),
                tau_position: tau.tau_position,
                tau_rotation: tau.tau_rotation,
                local_points,
                longterm_points,
                visual_applied: applied,
                attached,
            },
            timing: TimingRecord { frame: k as u64, lidar_ms, visual_ms, map_ms, total_ms },
            memory,
            min_eigenvalue: min_eigenvalue(&self.covariance),
        })
    }
}

/// Runs the full pipeline over `source` and assembles the report.
pub fn run_pipeline(config: &PipelineConfig, source: &dyn SensorSource) -> Result<RunReport> {
    config.validate()?;
    let wall = Instant::now();
    let mut frames = source.frame_count();
    if config.max_frames > 0 {
        frames = frames.min(config.max_frames);
    }
    if frames == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    let imu = source.imu();
    check_imu(imu)?;
    let calibration = source.calibration();
    calibration
        .camera
        .validate()
        .map_err(|e| HarnessError::Validation { record: "calibration".into(), message: e.to_string() })?;
    let groundtruth = source.groundtruth();

    let first = source.scan(0)?;
    validate_frame(0, &first, source.image_timestamp(0)?, f64::NEG_INFINITY)?;
    let t0 = first.scan_start;
    let mut est = Estimator::new(config, calibration, imu, initial_state(t0, groundtruth, imu), t0);

    let mut report = RunReport {
        header: ReportHeader {
            format: FORMAT.into(),
            version: VERSION,
            source: source.name(),
            seed: config.seed,
            selector: config.selector,
            longterm_map: config.longterm_map,
            local_edge: config.local_edge,
            config: config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
            records: RECORD_TYPES.iter().map(|s| s.to_string()).collect(),
        },
        trajectory: Vec::with_capacity(frames),
        degeneracy: Vec::with_capacity(frames),
        selection: Vec::with_capacity(frames),
        timing: Vec::with_capacity(frames),
        memory: Vec::with_capacity(frames),
        summary: Summary {
            frames: 0,
            camera_frames: 0,
            selected_frames: 0,
            selection_ratio: 0.0,
            degenerate_frames: 0,
            ate_rmse: None,
            ate_pairs: 0,
            runtime: RuntimeTable::default(),
            peak_memory: MemoryPeak::default(),
            final_memory: MemoryRecord::default(),
            min_covariance_eigenvalue: f64::INFINITY,
            wall_clock_s: 0.0,
        },
    };

    let mut peak = MemoryPeak::default();
    let mut min_eig = f64::INFINITY;
    let mut t_prev = f64::NEG_INFINITY;
    let mut pending = Some(first);
    for k in 0..frames {
        let scan = match pending.take() {
            Some(s) => s,
            None => source.scan(k)?,
        };
        validate_frame(k, &scan, source.image_timestamp(k)?, t_prev)?;
        t_prev = scan.scan_end;
        let out = est.step(k, &scan, source)?;
        let m = &out.memory;
        peak.voxels = peak.voxels.max(m.voxels);
        peak.local_bytes = peak.local_bytes.max(m.local_bytes);
        peak.longterm_bytes = peak.longterm_bytes.max(m.longterm_bytes);
        peak.total_bytes = peak.total_bytes.max(m.local_bytes + m.longterm_bytes);
        min_eig = min_eig.min(out.min_eigenvalue);
        report.trajectory.push(out.pose);
        report.degeneracy.push(out.degeneracy);
        report.selection.push(out.selection);
        report.timing.push(out.timing);
        report.memory.push(out.memory);
    }

    let truth: Vec<TimedPosition> =
        groundtruth.iter().map(|g| TimedPosition { timestamp: g.timestamp, position: g.position }).collect();
    let estimated = report.positions();
    let ate = if truth.is_empty() { None } else { ate_rmse(&estimated, &truth).ok() };
    let stage = |f: fn(&TimingRecord) -> f64| StageStats::from_samples(&report.timing.iter().map(f).collect::<Vec<_>>());
    let selected = report.selection.iter().filter(|s| s.selected).count();
    report.summary = Summary {
        frames,
        camera_frames: frames,
        selected_frames: selected,
        selection_ratio: 100.0 * selected as f64 / frames as f64,
        degenerate_frames: report.degeneracy.iter().filter(|d| d.flag).count(),
        ate_rmse: ate,
        ate_pairs: associate(&estimated, &truth).len(),
        runtime: RuntimeTable {
            lidar: stage(|t| t.lidar_ms),
            visual: stage(|t| t.visual_ms),
            map: stage(|t| t.map_ms),
            total: stage(|t| t.total_ms),
        },
        peak_memory: peak,
        final_memory: *report.memory.last().expect("at least one frame"),
        min_covariance_eigenvalue: min_eig,
        wall_clock_s: wall.elapsed().as_secs_f64(),
    };
    Ok(report)
}
