use livo_core::camera::{CameraModel, Image, ImagePyramid};
use livo_core::esikf::IterationConfig;
use livo_core::longterm::{VisualPoint, PATCH_AREA};
use livo_core::so3;
use livo_core::state::block;
use livo_core::visual::{
    attach_visual_points, photometric_residuals, project_point, update_with_points, VisualConfig,
};
use livo_core::voxel_map::{MapConfig, VoxelMap};
use livo_core::{CovarianceMatrix, ErrorState, Pose, StateVector};
use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis-aligned plane `coord[axis] = offset` with a smooth texture.
struct Plane {
    axis: usize,
    offset: f64,
    phase: f64,
}

fn texture(a: f64, b: f64, phase: f64) -> f64 {
    0.5 + 0.18 * (3.1 * a + phase).sin() * (2.7 * b).cos()
        + 0.12 * (7.3 * a - 5.1 * b + 2.0 * phase).sin()
        + 0.06 * (13.0 * b + 0.5 * a).cos()
}

fn box_room(phase: f64) -> Vec<Plane> {
    vec![
        Plane { axis: 0, offset: 4.0, phase },
        Plane { axis: 0, offset: -4.0, phase: phase + 1.0 },
        Plane { axis: 1, offset: 2.5, phase: phase + 2.0 },
        Plane { axis: 1, offset: -2.5, phase: phase + 3.0 },
        Plane { axis: 2, offset: -1.2, phase: phase + 4.0 },
        Plane { axis: 2, offset: 1.6, phase: phase + 5.0 },
    ]
}

fn intersect(planes: &[Plane], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, pl) in planes.iter().enumerate() {
        let d = dir[pl.axis];
        if d.abs() < 1e-12 {
            continue;
        }
        let t = (pl.offset - origin[pl.axis]) / d;
        if t > 1e-6 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best
}

fn shade(planes: &[Plane], p: &Vector3<f64>, i: usize) -> f64 {
    let pl = &planes[i];
    let (a, b) = match pl.axis {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    texture(a, b, pl.phase)
}

fn render(planes: &[Plane], camera: &CameraModel, imu_pose: &Pose) -> Image {
    let cam = camera.camera_pose(imu_pose);
    Image::from_fn(camera.width, camera.height, 0.0, |u, v| {
        let dir = cam.rotation * camera.unproject(&Vector2::new(u as f64, v as f64));
        match intersect(planes, &cam.translation, &dir) {
            Some((t, i)) => shade(planes, &(cam.translation + dir * t), i),
            None => 0.0,
        }
    })
}

/// Visual points on a pixel grid, captured at `pose`.
fn capture(planes: &[Plane], camera: &CameraModel, pose: &Pose, pyr: &ImagePyramid, step: usize) -> Vec<VisualPoint> {
    let cam = camera.camera_pose(pose);
    let mut out = Vec::new();
    for v in (20..camera.height - 20).step_by(step) {
        for u in (20..camera.width - 20).step_by(step) {
            let uv = Vector2::new(u as f64 + 0.3, v as f64 + 0.6);
            let dir = cam.rotation * camera.unproject(&uv);
            let Some((t, i)) = intersect(planes, &cam.translation, &dir) else { continue };
            let Ok(patch_pyramid) = pyr.extract_patch_pyramid(&uv) else { continue };
            let mut normal = Vector3::zeros();
            normal[planes[i].axis] = 1.0;
            out.push(VisualPoint {
                position: Point3::from(cam.translation + dir * t),
                patch_pyramid,
                reference_pose: cam,
                normal_hint: normal,
                observation_score: 1.0,
                last_observed: 0,
            });
        }
    }
    out
}

fn truth_state() -> StateVector {
    StateVector {
        rotation: so3::exp(&Vector3::new(0.02, -0.05, 0.3)),
        position: Vector3::new(0.3, -0.2, 0.1),
        ..Default::default()
    }
}

fn prior_covariance() -> CovarianceMatrix {
    let mut p = CovarianceMatrix::identity() * 1e-3;
    for i in 0..3 {
        p[(block::ROT + i, block::ROT + i)] = 1e-4;
        p[(block::POS + i, block::POS + i)] = 1e-2;
    }
    p
}

#[test]
fn self_consistent_render_has_zero_residuals() {
    let camera = CameraModel::default();
    let planes = box_room(0.0);
    let truth = truth_state();
    let pyr = ImagePyramid::new(&render(&planes, &camera, &truth.pose()));
    let points = capture(&planes, &camera, &truth.pose(), &pyr, 25);
    assert!(points.len() > 20);
    for level in 0..3 {
        let set = photometric_residuals(&truth, &points, &pyr, &camera, level, 1.0);
        assert_eq!(set.observations.len(), points.len());
        for o in &set.observations {
            assert!(o.residuals.iter().all(|r| r.abs() < 1e-6));
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let camera = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-4;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let planes = box_room(trial as f64 * 0.37);
        let state = StateVector {
            rotation: so3::exp(&Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3))),
            position: Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            ..Default::default()
        };
        let pyr = ImagePyramid::new(&render(&planes, &camera, &state.pose()));
        let points = capture(&planes, &camera, &state.pose(), &pyr, 37);
        for level in 0..3 {
            let base = photometric_residuals(&state, &points, &pyr, &camera, level, 1.0);
            for obs in &base.observations {
                let vp = std::slice::from_ref(&points[obs.point_index]);
                let mut plus = Vec::new();
                let mut minus = Vec::new();
                let mut cells_stable = [true; PATCH_AREA];
                let uv0 = project_point(&state, &camera, &vp[0].position).unwrap();
                for j in 0..6 {
                    let mut d = ErrorState::zeros();
                    d[j] = h;
                    for (sign, store) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                        let s = state.boxplus(&(d * sign)).unwrap();
                        let uv = project_point(&s, &camera, &vp[0].position).unwrap();
                        let set = photometric_residuals(&s, vp, &pyr, &camera, level, 1.0);
                        let c0 = ImagePyramid::to_level(&uv0, level);
                        let c1 = ImagePyramid::to_level(&uv, level);
                        for (k, stable) in cells_stable.iter_mut().enumerate() {
                            let o = ImagePyramid::patch_offset(k);
                            let (a, b) = (c0 + o, c1 + o);
                            if a.x.floor() != b.x.floor() || a.y.floor() != b.y.floor() {
                                *stable = false;
                            }
                        }
                        store.push(set.observations[0].residuals);
                    }
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for k in (0..PATCH_AREA).filter(|&k| cells_stable[k]) {
                    for j in 0..6 {
                        let fd = (plus[j][k] - minus[j][k]) / (2.0 * h);
                        num += (fd - obs.jacobians[k][j]).powi(2);
                        den += obs.jacobians[k][j].powi(2);
                    }
                    checked += 1;
                }
                if den > 0.0 {
                    worst = worst.max((num / den).sqrt());
                }
            }
        }
    }
    assert!(checked > 10_000, "only {checked} rows checked");
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn two_centimetre_offset_is_recovered() {
    let camera = CameraModel::default();
    let planes = box_room(0.0);
    let truth = truth_state();
    let pyr = ImagePyramid::new(&render(&planes, &camera, &truth.pose()));
    let points = capture(&planes, &camera, &truth.pose(), &pyr, 24);
    assert!(points.len() >= 30);
    let offset: Vector3<f64> = Vector3::new(0.012, -0.01, 0.012);
    assert!((offset.norm() - 0.02).abs() < 1e-3);
    let prior = StateVector { position: truth.position + offset, ..truth };
    let p = prior_covariance();
    let cfg = VisualConfig { iteration: IterationConfig { epsilon: 1e-6, max_iters: 10 }, ..Default::default() };
    let out = update_with_points(&prior, &p, &points, &pyr, &camera, &cfg);
    assert!(out.applied);
    let err = (out.update.state.position - truth.position).norm();
    assert!(err < 2e-3, "position error {err}");
    assert!(out.update.covariance.trace() <= p.trace());
    assert!(out.levels[0].final_cost <= out.levels[2].initial_cost);

    let again = update_with_points(&prior, &p, &points, &pyr, &camera, &cfg);
    assert_eq!(again.update.state, out.update.state);
    assert_eq!(again.update.covariance, out.update.covariance);
}

#[test]
fn textured_floor_fills_budget() {
    // A larger sensor than the default so that more than the budget fits
    // under the spacing rule.
    let camera = CameraModel { fx: 240.0, fy: 240.0, cx: 159.5, cy: 119.5, width: 320, height: 240, ..Default::default() };
    let planes = vec![Plane { axis: 2, offset: 0.0, phase: 0.4 }];
    let state = StateVector {
        rotation: so3::exp(&Vector3::new(0.0, 50f64.to_radians(), 0.0)),
        position: Vector3::new(0.0, 0.0, 1.5),
        ..Default::default()
    };
    let pyr = ImagePyramid::new(&render(&planes, &camera, &state.pose()));
    let floor: Vec<Point3<f64>> = (0..120)
        .flat_map(|i| (0..120).map(move |j| Point3::new(0.02 + 0.05 * i as f64, -3.0 + 0.05 * j as f64, 0.0)))
        .collect();
    let mut map = VoxelMap::new(MapConfig::default(), Vector3::zeros());
    map.update(&floor);
    let unlimited = VisualConfig { attach_budget: usize::MAX, ..Default::default() };
    let mut probe = map.clone();
    let available = attach_visual_points(&mut probe, &pyr, &camera, &state, &floor, &[], 7, &unlimited);
    assert!(available > 40, "only {available} candidates survive suppression");

    let cfg = VisualConfig::default();
    let attached = attach_visual_points(&mut map, &pyr, &camera, &state, &floor, &[], 7, &cfg);
    assert_eq!(attached, 40);
    assert_eq!(map.visual_point_count(), 40);
    let uvs: Vec<Vector2<f64>> =
        map.visual_points().map(|vp| project_point(&state, &camera, &vp.position).unwrap()).collect();
    for (i, a) in uvs.iter().enumerate() {
        for b in &uvs[i + 1..] {
            assert!((a - b).norm() >= 20.0 - 1e-9);
        }
    }
    assert!(map.visual_points().all(|vp| vp.position.z.abs() < 1e-9 && vp.last_observed == 7));
}
