//! Sparse archive of visual points that slid out of the local map.

use std::cmp::Ordering;
use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::camera::CameraModel;
use crate::pose::Pose;
use crate::voxel_map::{DetState, SnapshotRecord, VoxelKey};

pub const PATCH_SIZE: usize = 8;
pub const PATCH_AREA: usize = PATCH_SIZE * PATCH_SIZE;
pub const PYRAMID_LEVELS: usize = 3;

/// Reference patches, one 8×8 block per pyramid level (level 0 finest).
pub type PatchPyramid = [[f64; PATCH_AREA]; PYRAMID_LEVELS];

#[derive(Debug, Clone, PartialEq)]
pub struct VisualPoint {
    pub position: Point3<f64>,
    pub patch_pyramid: PatchPyramid,
    /// World-from-camera pose at capture.
    pub reference_pose: Pose,
    /// Unit normal of the host plane.
    pub normal_hint: Vector3<f64>,
    pub observation_score: f64,
    /// Frame index of the last capture or successful observation.
    pub last_observed: u64,
}

impl VisualPoint {
    /// Bytes charged per visual point in memory reports.
    pub const RECORD_BYTES: usize = std::mem::size_of::<VisualPoint>();

    pub fn is_valid(&self) -> bool {
        self.patch_pyramid.iter().flatten().all(|v| v.is_finite())
            && (self.normal_hint.norm() - 1.0).abs() < 1e-6
    }

    /// Total order used when a cell overflows: higher score first, then
    /// earlier `last_observed`, then lexicographically smaller position.
    pub fn priority_cmp(&self, other: &VisualPoint) -> Ordering {
        other
            .observation_score
            .total_cmp(&self.observation_score)
            .then(self.last_observed.cmp(&other.last_observed))
            .then(self.position.x.total_cmp(&other.position.x))
            .then(self.position.y.total_cmp(&other.position.y))
            .then(self.position.z.total_cmp(&other.position.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongTermConfig {
    pub cell_size: f64,
    pub edge_length: f64,
    pub slide_threshold: f64,
    pub max_points_per_cell: usize,
    /// Largest accepted angle between `normal_hint` and the viewing ray.
    pub max_view_angle: f64,
}

impl Default for LongTermConfig {
    fn default() -> Self {
        Self {
            cell_size: 2.0,
            edge_length: 800.0,
            slide_threshold: 100.0,
            max_points_per_cell: 5,
            max_view_angle: 60f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AbsorbSummary {
    pub absorbed: usize,
    /// Points dropped because their cell kept higher-priority entries.
    pub displaced: usize,
}

#[derive(Debug, Clone)]
pub struct LongTermMap {
    config: LongTermConfig,
    table: HashMap<VoxelKey, Vec<VisualPoint>, DetState>,
    last_slide_center: Vector3<f64>,
}

impl LongTermMap {
    pub fn new(config: LongTermConfig, origin: Vector3<f64>) -> Self {
        Self { config, table: HashMap::default(), last_slide_center: origin }
    }

    pub fn config(&self) -> &LongTermConfig {
        &self.config
    }

    pub fn cell_count(&self) -> usize {
        self.table.len()
    }

    pub fn point_count(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&[VisualPoint]> {
        self.table.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &VisualPoint)> {
        self.table.iter().flat_map(|(k, v)| v.iter().map(move |p| (k, p)))
    }

    pub fn estimated_bytes(&self) -> usize {
        self.table.len() * (std::mem::size_of::<VoxelKey>() + std::mem::size_of::<Vec<VisualPoint>>())
            + self.point_count() * VisualPoint::RECORD_BYTES
    }

    pub fn absorb(&mut self, evicted: Vec<VisualPoint>) -> AbsorbSummary {
        let mut summary = AbsorbSummary::default();
        let cap = self.config.max_points_per_cell;
        for vp in evicted {
            let key = VoxelKey::from_point(&vp.position, self.config.cell_size);
            let cell = self.table.entry(key).or_default();
            cell.push(vp);
            summary.absorbed += 1;
            if cell.len() > cap {
                cell.sort_by(VisualPoint::priority_cmp);
                let dropped = cell.len() - cap;
                cell.truncate(cap);
                summary.displaced += dropped;
                summary.absorbed -= dropped;
            }
        }
        summary
    }

    /// Points visible from `camera_pose` (world-from-camera), best first.
    pub fn query_visible(
        &self,
        camera_pose: &Pose,
        camera: &CameraModel,
        max_points: usize,
    ) -> Vec<VisualPoint> {
        let cos_gate = self.config.max_view_angle.cos();
        let cam_from_world = camera_pose.inverse();
        let mut out: Vec<&VisualPoint> = self
            .table
            .values()
            .flatten()
            .filter(|vp| {
                let pc = cam_from_world.transform_point(&vp.position);
                let Some(uv) = camera.project(&pc) else { return false };
                if !camera.in_image(&uv, 0.0) {
                    return false;
                }
                let ray = camera_pose.translation - vp.position.coords;
                vp.normal_hint.dot(&ray).abs() > cos_gate * ray.norm()
            })
            .collect();
        out.sort_by(|a, b| a.priority_cmp(b));
        out.truncate(max_points);
        out.into_iter().cloned().collect()
    }

    /// Recentres on `robot_position` once it moved `slide_threshold`;
    /// returns how many points were dropped.
    pub fn slide(&mut self, robot_position: &Vector3<f64>) -> usize {
        if (robot_position - self.last_slide_center).norm() < self.config.slide_threshold {
            return 0;
        }
        self.last_slide_center = *robot_position;
        let half = 0.5 * self.config.edge_length;
        let size = self.config.cell_size;
        let mut dropped = 0;
        self.table.retain(|k, v| {
            let keep = (k.center(size).coords - robot_position).amax() <= half;
            if !keep {
                dropped += v.len();
            }
            keep
        });
        dropped
    }

    pub fn snapshot(&self) -> Vec<SnapshotRecord> {
        let mut recs: Vec<SnapshotRecord> = self
            .iter()
            .map(|(k, vp)| SnapshotRecord::Visual {
                key: *k,
                position: vp.position,
                normal: vp.normal_hint,
                score: vp.observation_score,
            })
            .collect();
        recs.sort_by(SnapshotRecord::order);
        recs
    }
}
