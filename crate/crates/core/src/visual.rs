//! Direct photometric update against map visual points, plus attachment of
//! new visual points on selected frames.

use nalgebra::{Point3, Vector2, Vector3, Vector6};

use crate::camera::{CameraModel, ImagePyramid, PATCH_MARGIN};
use crate::esikf::{iterated_update_from, IterationConfig, NormalEquations, UpdateOutcome};
use crate::longterm::{VisualPoint, PATCH_AREA, PYRAMID_LEVELS};
use crate::state::{CovarianceMatrix, StateVector};
use crate::voxel_map::VoxelMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualConfig {
    /// Per-pixel intensity noise standard deviation.
    pub pixel_sigma: f64,
    pub huber_delta: f64,
    /// When false the exposure gain is pinned to one.
    pub estimate_exposure: bool,
    pub iteration: IterationConfig,
    /// Points attached per selected frame.
    pub attach_budget: usize,
    /// Minimum pixel distance between attached points.
    pub attach_spacing: f64,
    /// Mean gradient magnitude below which a candidate is not attached.
    pub min_gradient: f64,
}

impl Default for VisualConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.05,
            huber_delta: 0.1,
            estimate_exposure: true,
            iteration: IterationConfig::default(),
            attach_budget: 40,
            attach_spacing: 20.0,
            min_gradient: 0.01,
        }
    }
}

/// One visual point observed in the current image at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricObservation {
    /// Index into the point list passed to [`photometric_residuals`].
    pub point_index: usize,
    pub level: usize,
    /// Current sample minus gain times reference value, per patch pixel.
    pub residuals: [f64; PATCH_AREA],
    /// Rows over `(δθ, δp)`.
    pub jacobians: [Vector6<f64>; PATCH_AREA],
    pub exposure_gain: f64,
}

impl PhotometricObservation {
    /// Adds Huber-weighted rows to `eq`.
    pub fn accumulate(&self, eq: &mut NormalEquations, pixel_sigma: f64, huber_delta: f64) {
        let w0 = 1.0 / (pixel_sigma * pixel_sigma);
        for (r, h) in self.residuals.iter().zip(&self.jacobians) {
            let a = r.abs();
            let w = if a <= huber_delta { w0 } else { w0 * huber_delta / a };
            eq.push(h, *r, w);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    pub observations: Vec<PhotometricObservation>,
    /// Points not visible or whose patch left the image.
    pub skipped: usize,
}

/// Level-0 pixel of a world point, if it projects with the patch margin.
pub fn project_point(state: &StateVector, camera: &CameraModel, pw: &Point3<f64>) -> Option<Vector2<f64>> {
    camera.project(&Projector::new(state, camera).points(pw).1)
}

fn patch_mean(patch: &[f64; PATCH_AREA]) -> f64 {
    patch.iter().sum::<f64>() / PATCH_AREA as f64
}

/// World points imaged by the reference patch samples at one level.
pub type Footprint = [Point3<f64>; PATCH_AREA];

/// Smallest |cos| between a reference viewing ray and the plane normal for
/// which the patch is warped.
const MIN_WARP_COSINE: f64 = 0.1;

/// Back-projects the reference patch samples of `vp` at `level` onto the
/// plane through `vp.position` with normal `vp.normal_hint`, as seen from
/// `vp.reference_pose`. `None` when the point is not in front of the
/// reference camera or the plane is seen too obliquely; such points are
/// compared without warping.
pub fn patch_footprint(vp: &VisualPoint, camera: &CameraModel, level: usize) -> Option<Footprint> {
    let reference = &vp.reference_pose;
    let uv = camera.project(&reference.inverse().transform_point(&vp.position))?;
    let n = vp.normal_hint;
    if !(n.norm_squared() > 0.0) {
        return None;
    }
    let scale = (1usize << level) as f64;
    let offset = n.dot(&(vp.position.coords - reference.translation));
    let mut out = [Point3::origin(); PATCH_AREA];
    for (k, slot) in out.iter_mut().enumerate() {
        let ray = reference.rotation * camera.unproject(&(uv + ImagePyramid::patch_offset(k) * scale));
        let denom = n.dot(&ray);
        if denom.abs() < MIN_WARP_COSINE * ray.norm() * n.norm() {
            return None;
        }
        let t = offset / denom;
        if t <= 0.0 {
            return None;
        }
        *slot = Point3::from(reference.translation + ray * t);
    }
    Some(out)
}

/// Footprints of every point at every level.
pub fn patch_footprints(points: &[VisualPoint], camera: &CameraModel) -> Vec<[Option<Footprint>; PYRAMID_LEVELS]> {
    points.iter().map(|vp| std::array::from_fn(|l| patch_footprint(vp, camera, l))).collect()
}

/// World-to-camera mapping at one state, with the pieces reused by the
/// per-sample Jacobians.
struct Projector<'a> {
    camera: &'a CameraModel,
    state: &'a StateVector,
    world_to_imu: nalgebra::Matrix3<f64>,
}

impl<'a> Projector<'a> {
    fn new(state: &'a StateVector, camera: &'a CameraModel) -> Self {
        Self { camera, state, world_to_imu: state.rotation.matrix().transpose() }
    }

    /// IMU-frame and camera-frame coordinates of a world point.
    #[inline]
    fn points(&self, pw: &Point3<f64>) -> (Vector3<f64>, Point3<f64>) {
        let rho = self.world_to_imu * (pw.coords - self.state.position);
        let c = &self.camera.cam_from_imu;
        (rho, Point3::from(c.rotation * rho + c.translation))
    }

    /// Row Jacobian of an image sample at `pc` with level gradient `grad`.
    #[inline]
    fn row(&self, rho: &Vector3<f64>, pc: &Point3<f64>, grad: &Vector2<f64>, scale: f64) -> Vector6<f64> {
        let g = self.camera.projection_jacobian(pc).transpose() * (grad * scale);
        let u = self.camera.cam_from_imu.rotation.inverse() * g;
        let jt = u.cross(rho);
        let jp = -(self.state.rotation * u);
        Vector6::new(jt.x, jt.y, jt.z, jp.x, jp.y, jp.z)
    }
}

/// Median ratio of current to reference patch means at `level`; one when
/// no point is usable.
pub fn estimate_exposure_gain(
    state: &StateVector,
    points: &[VisualPoint],
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    level: usize,
) -> f64 {
    let footprints = patch_footprints(points, camera);
    exposure_gain_with(state, points, &footprints, pyramid, camera, level)
}

fn exposure_gain_with(
    state: &StateVector,
    points: &[VisualPoint],
    footprints: &[[Option<Footprint>; PYRAMID_LEVELS]],
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    level: usize,
) -> f64 {
    let img = pyramid.level(level);
    let proj = Projector::new(state, camera);
    let mut ratios: Vec<f64> = points
        .iter()
        .zip(footprints)
        .filter_map(|(vp, fp)| {
            let uv = project_point(state, camera, &vp.position)?;
            if !pyramid.patch_fits(&uv) {
                return None;
            }
            let c = ImagePyramid::to_level(&uv, level);
            let mut sum = 0.0;
            for k in 0..PATCH_AREA {
                let q = match &fp[level] {
                    Some(fp) => ImagePyramid::to_level(&camera.project(&proj.points(&fp[k]).1)?, level),
                    None => c + ImagePyramid::patch_offset(k),
                };
                sum += img.sample(q.x, q.y).map_or(0.0, |s| s.0);
            }
            let reference = patch_mean(&vp.patch_pyramid[level]);
            (reference > 1e-3).then(|| sum / PATCH_AREA as f64 / reference)
        })
        .collect();
    if ratios.is_empty() {
        return 1.0;
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    }
}

/// Residuals and Jacobians of `points` in the current image at `level`.
///
/// Reference patches are warped through the plane of each point, so every
/// sample compares the same surface location in both images.
pub fn photometric_residuals(
    state: &StateVector,
    points: &[VisualPoint],
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    level: usize,
    exposure_gain: f64,
) -> ObservationSet {
    let footprints = patch_footprints(points, camera);
    residuals_with(state, points, &footprints, pyramid, camera, level, exposure_gain)
}

fn residuals_with(
    state: &StateVector,
    points: &[VisualPoint],
    footprints: &[[Option<Footprint>; PYRAMID_LEVELS]],
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    level: usize,
    exposure_gain: f64,
) -> ObservationSet {
    let img = pyramid.level(level);
    let scale = 1.0 / (1usize << level) as f64;
    let proj = Projector::new(state, camera);
    let mut out = ObservationSet::default();
    'points: for (i, (vp, fp)) in points.iter().zip(footprints).enumerate() {
        let (rho, pc) = proj.points(&vp.position);
        let Some(uv) = camera.project(&pc) else {
            out.skipped += 1;
            continue;
        };
        if !pyramid.patch_fits(&uv) {
            out.skipped += 1;
            continue;
        }
        let c = ImagePyramid::to_level(&uv, level);
        let reference = &vp.patch_pyramid[level];
        let mut obs = PhotometricObservation {
            point_index: i,
            level,
            residuals: [0.0; PATCH_AREA],
            jacobians: [Vector6::zeros(); PATCH_AREA],
            exposure_gain,
        };
        for k in 0..PATCH_AREA {
            let (rho_k, pc_k, q) = match &fp[level] {
                Some(fp) => {
                    let (rho_k, pc_k) = proj.points(&fp[k]);
                    let Some(uv_k) = camera.project(&pc_k) else {
                        out.skipped += 1;
                        continue 'points;
                    };
                    (rho_k, pc_k, ImagePyramid::to_level(&uv_k, level))
                }
                None => (rho, pc, c + ImagePyramid::patch_offset(k)),
            };
            let Some((value, grad)) = img.sample(q.x, q.y) else {
                out.skipped += 1;
                continue 'points;
            };
            obs.residuals[k] = value - exposure_gain * reference[k];
            obs.jacobians[k] = proj.row(&rho_k, &pc_k, &grad, scale);
        }
        out.observations.push(obs);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LevelStats {
    pub iterations: usize,
    pub observations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

#[derive(Debug, Clone)]
pub struct VisualUpdateOutcome {
    pub update: UpdateOutcome,
    /// Indexed by pyramid level.
    pub levels: [LevelStats; PYRAMID_LEVELS],
    /// False when no level had a single observation.
    pub applied: bool,
}

/// Coarse-to-fine iterated update over levels 2, 1, 0.
///
/// Every level uses the same prior; only the starting iterate carries over,
/// so the image information enters the posterior once. `builder` returns
/// the observations at a given iterate and level.
pub fn visual_iterated_update<F>(
    state: &StateVector,
    covariance: &CovarianceMatrix,
    config: &VisualConfig,
    mut builder: F,
) -> VisualUpdateOutcome
where
    F: FnMut(&StateVector, usize) -> Vec<PhotometricObservation>,
{
    let mut levels = [LevelStats::default(); PYRAMID_LEVELS];
    let mut best: Option<UpdateOutcome> = None;
    let mut start = *state;
    for level in (0..PYRAMID_LEVELS).rev() {
        let outcome = iterated_update_from(state, covariance, &start, &config.iteration, |x| {
            let mut eq = NormalEquations::default();
            let obs = builder(x, level);
            for o in &obs {
                o.accumulate(&mut eq, config.pixel_sigma, config.huber_delta);
            }
            eq
        });
        levels[level] = LevelStats {
            iterations: outcome.iterations,
            observations: outcome.measurements / PATCH_AREA,
            initial_cost: outcome.initial_cost,
            final_cost: outcome.final_cost,
        };
        if outcome.iterations > 0 {
            start = outcome.state;
            best = Some(outcome);
        }
    }
    match best {
        Some(update) => VisualUpdateOutcome { update, levels, applied: true },
        None => VisualUpdateOutcome {
            update: UpdateOutcome {
                state: *state,
                covariance: *covariance,
                converged: true,
                iterations: 0,
                measurements: 0,
                initial_cost: 0.0,
                final_cost: 0.0,
                min_eigenvalue: f64::NAN,
            },
            levels,
            applied: false,
        },
    }
}

/// Convenience wrapper running [`visual_iterated_update`] with
/// [`photometric_residuals`] on a fixed point set. The exposure gain is
/// re-estimated at every iterate.
pub fn update_with_points(
    state: &StateVector,
    covariance: &CovarianceMatrix,
    points: &[VisualPoint],
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    config: &VisualConfig,
) -> VisualUpdateOutcome {
    let footprints = patch_footprints(points, camera);
    visual_iterated_update(state, covariance, config, |x, level| {
        let gain = if config.estimate_exposure {
            exposure_gain_with(x, points, &footprints, pyramid, camera, level).clamp(0.5, 2.0)
        } else {
            1.0
        };
        residuals_with(x, points, &footprints, pyramid, camera, level, gain).observations
    })
}

/// Mean level-0 gradient magnitude over the patch footprint around `uv`.
fn patch_gradient_score(pyramid: &ImagePyramid, uv: &Vector2<f64>) -> f64 {
    let img = pyramid.level(0);
    let mut sum = 0.0;
    for k in 0..PATCH_AREA {
        let q = uv + ImagePyramid::patch_offset(k);
        if let Some((_, g)) = img.sample(q.x, q.y) {
            sum += g.norm();
        }
    }
    sum / PATCH_AREA as f64
}

/// Attaches up to `config.attach_budget` new visual points.
///
/// `candidates` are world points of the current scan; only those inside a
/// planar map node become visual points, snapped onto that plane along the
/// viewing ray. Candidates closer than the spacing to each other or to an
/// `occupied` pixel are suppressed greedily by descending gradient score.
pub fn attach_visual_points(
    map: &mut VoxelMap,
    pyramid: &ImagePyramid,
    camera: &CameraModel,
    state: &StateVector,
    candidates: &[Point3<f64>],
    occupied: &[Vector2<f64>],
    frame_index: u64,
    config: &VisualConfig,
) -> usize {
    if config.attach_budget == 0 {
        return 0;
    }
    let cam_pose = camera.camera_pose(&state.pose());
    let mut scored: Vec<(f64, usize, Vector2<f64>, Point3<f64>, Vector3<f64>)> = Vec::new();
    for (i, pw) in candidates.iter().enumerate() {
        let Some(plane) = map.query_plane(pw) else { continue };
        let Some(uv) = project_point(state, camera, pw) else { continue };
        if !camera.in_image(&uv, PATCH_MARGIN) || !pyramid.patch_fits(&uv) {
            continue;
        }
        let ray = cam_pose.rotation * camera.unproject(&uv);
        let denom = plane.normal.dot(&ray);
        let position = if denom.abs() > 0.2 * ray.norm() {
            let t = plane.normal.dot(&(plane.center - Point3::from(cam_pose.translation))) / denom;
            if t > 0.0 { Point3::from(cam_pose.translation + ray * t) } else { *pw }
        } else {
            *pw
        };
        let score = patch_gradient_score(pyramid, &uv);
        if score < config.min_gradient {
            continue;
        }
        scored.push((score, i, uv, position, plane.normal));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let spacing2 = config.attach_spacing * config.attach_spacing;
    let mut taken: Vec<Vector2<f64>> = occupied.to_vec();
    let mut attached = 0;
    for (score, _, _, position, normal) in scored {
        if attached >= config.attach_budget {
            break;
        }
        let Some(uv) = project_point(state, camera, &position) else { continue };
        if taken.iter().any(|t| (t - uv).norm_squared() < spacing2) {
            continue;
        }
        let Ok(patch_pyramid) = pyramid.extract_patch_pyramid(&uv) else { continue };
        let vp = VisualPoint {
            position,
            patch_pyramid,
            reference_pose: cam_pose,
            normal_hint: normal,
            observation_score: score,
            last_observed: frame_index,
        };
        if map.attach_visual_point(vp) {
            taken.push(uv);
            attached += 1;
        }
    }
    attached
}

/// Coarse per-cell minimum depth of the current scan, for occlusion tests.
#[derive(Debug, Clone)]
pub struct SparseDepth {
    cell: usize,
    cols: usize,
    rows: usize,
    depth: Vec<f64>,
}

impl SparseDepth {
    /// `points_camera` are scan points in the camera frame.
    pub fn new(camera: &CameraModel, points_camera: &[Point3<f64>], cell: usize) -> Self {
        let cell = cell.max(1);
        let cols = camera.width.div_ceil(cell);
        let rows = camera.height.div_ceil(cell);
        let mut depth = vec![f64::INFINITY; cols * rows];
        for pc in points_camera {
            let Some(uv) = camera.project(pc) else { continue };
            if !camera.in_image(&uv, 0.0) {
                continue;
            }
            let idx = (uv.y as usize / cell) * cols + uv.x as usize / cell;
            depth[idx] = depth[idx].min(pc.z);
        }
        Self { cell, cols, rows, depth }
    }

    /// False when the scan saw something clearly in front of `depth` at `uv`.
    pub fn is_visible(&self, uv: &Vector2<f64>, depth: f64, tolerance: f64) -> bool {
        if uv.x < 0.0 || uv.y < 0.0 {
            return false;
        }
        let (c, r) = (uv.x as usize / self.cell, uv.y as usize / self.cell);
        if c >= self.cols || r >= self.rows {
            return false;
        }
        depth <= self.depth[r * self.cols + c] + tolerance
    }
}
