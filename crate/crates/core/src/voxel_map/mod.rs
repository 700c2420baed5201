//! Unified local map: fixed-size root voxels addressed by a hash of their
//! integer grid index, each refined by a three-level adaptive octree that
//! stores plane features, a bounded raw-point buffer and visual points.

mod octree;
mod plane;
mod snapshot;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::BuildHasherDefault;

use nalgebra::{Point3, Vector3};

use crate::longterm::VisualPoint;

pub use octree::OctreeNode;
pub use plane::{fit_plane, fit_stats, PlaneConfig, PlaneFeature, PlaneFit, PointStats};
pub use snapshot::{parse_snapshot, write_snapshot, SnapshotRecord};

/// Hasher with fixed keys so table iteration order is reproducible.
pub type DetState = BuildHasherDefault<DefaultHasher>;

/// Signed grid index of a root voxel; `floor(coordinate / size)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    #[inline]
    pub fn from_point(p: &Point3<f64>, size: f64) -> Self {
        Self {
            ix: (p.x / size).floor() as i64,
            iy: (p.y / size).floor() as i64,
            iz: (p.z / size).floor() as i64,
        }
    }

    pub fn center(&self, size: f64) -> Point3<f64> {
        Point3::new(
            (self.ix as f64 + 0.5) * size,
            (self.iy as f64 + 0.5) * size,
            (self.iz as f64 + 0.5) * size,
        )
    }
}

pub fn voxel_key(point: &Point3<f64>, root_size: f64) -> VoxelKey {
    VoxelKey::from_point(point, root_size)
}

/// Deepest octree level; roots are level 0.
pub const MAX_LEVEL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub root_size: f64,
    pub edge_length: f64,
    pub slide_threshold: f64,
    pub plane: PlaneConfig,
    /// Raw points kept per node; older ones are reservoir-sampled.
    pub node_point_cap: usize,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            root_size: 0.5,
            edge_length: 200.0,
            slide_threshold: 20.0,
            plane: PlaneConfig::default(),
            node_point_cap: 100,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateSummary {
    pub points: usize,
    pub new_voxels: usize,
    pub refit_planes: usize,
    pub subdivided_nodes: usize,
    /// Points dropped because their root voxel lies outside the map cube.
    pub outside: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvictedVisualPoints {
    pub voxels: usize,
    pub points: Vec<VisualPoint>,
}

/// Per-record byte sizes charged by [`VoxelMap::memory_stats`].
pub mod footprint {
    use super::*;
    pub const VOXEL_ENTRY: usize = std::mem::size_of::<VoxelKey>() + std::mem::size_of::<u64>();
    pub const NODE: usize = std::mem::size_of::<OctreeNode>();
    pub const POINT: usize = std::mem::size_of::<Point3<f64>>();
    pub const PLANE: usize = std::mem::size_of::<PlaneFeature>();
    pub const VISUAL_POINT: usize = VisualPoint::RECORD_BYTES;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapMemoryReport {
    pub voxels: usize,
    pub nodes: usize,
    pub planes: usize,
    pub points: usize,
    pub visual_points: usize,
    pub estimated_bytes: usize,
}

impl MapMemoryReport {
    fn finish(mut self) -> Self {
        self.estimated_bytes = self.voxels * footprint::VOXEL_ENTRY
            + self.nodes * footprint::NODE
            + self.planes * footprint::PLANE
            + self.points * footprint::POINT
            + self.visual_points * footprint::VISUAL_POINT;
        self
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: MapConfig,
    table: HashMap<VoxelKey, OctreeNode, DetState>,
    /// Roots holding at least one visual point.
    visual_index: BTreeSet<VoxelKey>,
    last_slide_center: Vector3<f64>,
}

impl VoxelMap {
    pub fn new(config: MapConfig, origin: Vector3<f64>) -> Self {
        Self {
            config,
            table: HashMap::default(),
            visual_index: BTreeSet::new(),
            last_slide_center: origin,
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn last_slide_center(&self) -> Vector3<f64> {
        self.last_slide_center
    }

    pub fn root(&self, key: &VoxelKey) -> Option<&OctreeNode> {
        self.table.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.table.keys()
    }

    /// Inserts world-frame points, refitting and subdividing touched nodes.
    /// Points whose root voxel centre lies outside the cube around the last
    /// slide centre are dropped.
    pub fn update(&mut self, world_points: &[Point3<f64>]) -> UpdateSummary {
        let mut summary = UpdateSummary { points: world_points.len(), ..Default::default() };
        let size = self.config.root_size;
        let half = 0.5 * self.config.edge_length;
        let mut batches: BTreeMap<VoxelKey, Vec<Point3<f64>>> = BTreeMap::new();
        for p in world_points.iter().filter(|p| p.coords.iter().all(|c| c.is_finite())) {
            let key = VoxelKey::from_point(p, size);
            if (key.center(size).coords - self.last_slide_center).amax() > half {
                summary.outside += 1;
                continue;
            }
            batches.entry(key).or_default().push(*p);
        }
        for (key, pts) in batches {
            let node = self.table.entry(key).or_insert_with(|| {
                summary.new_voxels += 1;
                OctreeNode::root(&key, size, self.config.seed)
            });
            node.insert(&pts, &self.config, &mut summary);
        }
        summary
    }

    /// Plane of the deepest node containing `p`, if that node is planar.
    pub fn query_plane(&self, p: &Point3<f64>) -> Option<&PlaneFeature> {
        let key = VoxelKey::from_point(p, self.config.root_size);
        self.table.get(&key)?.leaf(p).plane.as_ref()
    }

    /// Stores a visual point on the node containing it. Fails when the
    /// point lies in an unmapped voxel.
    pub fn attach_visual_point(&mut self, vp: VisualPoint) -> bool {
        let key = VoxelKey::from_point(&vp.position, self.config.root_size);
        let Some(root) = self.table.get_mut(&key) else { return false };
        root.leaf_mut(&vp.position).visual_points.push(vp);
        self.visual_index.insert(key);
        true
    }

    /// All visual points in key order.
    pub fn visual_points(&self) -> impl Iterator<Item = &VisualPoint> {
        self.visual_index
            .iter()
            .filter_map(|k| self.table.get(k))
            .flat_map(|n| n.visual_points_recursive())
    }

    /// Mutable access to all visual points, in key order.
    pub fn visual_points_mut(&mut self) -> impl Iterator<Item = &mut VisualPoint> {
        let index = &self.visual_index;
        let mut roots: Vec<(&VoxelKey, &mut OctreeNode)> = self.table.iter_mut().filter(|(k, _)| index.contains(k)).collect();
        roots.sort_by(|a, b| a.0.cmp(b.0));
        roots.into_iter().flat_map(|(_, n)| n.visual_points_recursive_mut())
    }

    pub fn visual_point_count(&self) -> usize {
        self.visual_points().count()
    }

    /// Recentres the map once the robot moved `slide_threshold` away from
    /// the previous centre, evicting every root whose centre falls outside
    /// the boundary cube. Visual points of evicted roots are returned.
    pub fn slide(&mut self, robot_position: &Vector3<f64>) -> EvictedVisualPoints {
        let mut out = EvictedVisualPoints::default();
        if (robot_position - self.last_slide_center).norm() < self.config.slide_threshold {
            return out;
        }
        self.last_slide_center = *robot_position;
        let half = 0.5 * self.config.edge_length;
        let size = self.config.root_size;
        let mut doomed: Vec<VoxelKey> = self
            .table
            .keys()
            .filter(|k| (k.center(size).coords - robot_position).amax() > half)
            .copied()
            .collect();
        doomed.sort();
        for key in doomed {
            if let Some(node) = self.table.remove(&key) {
                out.voxels += 1;
                if self.visual_index.remove(&key) {
                    out.points.extend(node.into_visual_points());
                }
            }
        }
        out
    }

    pub fn memory_stats(&self) -> MapMemoryReport {
        let mut r = MapMemoryReport { voxels: self.table.len(), ..Default::default() };
        for node in self.table.values() {
            node.accumulate_stats(&mut r);
        }
        r.finish()
    }

    /// One record per leaf node, sorted by key, level and position.
    pub fn snapshot(&self) -> Vec<SnapshotRecord> {
        let mut recs = Vec::new();
        for (key, node) in &self.table {
            node.snapshot_into(key, &mut recs);
        }
        recs.sort_by(SnapshotRecord::order);
        recs
    }
}
