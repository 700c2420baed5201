use nalgebra::{Point3, Vector3};

use super::plane::{fit_stats, PlaneFeature, PlaneFit, PointStats};
use super::{MapConfig, MapMemoryReport, SnapshotRecord, UpdateSummary, VoxelKey, MAX_LEVEL};
use crate::longterm::VisualPoint;

/// A cube of the adaptive octree. Holds a plane, or children, or only a
/// raw point buffer.
#[derive(Debug, Clone)]
pub struct OctreeNode {
    pub level: u8,
    pub center: Point3<f64>,
    pub half_size: f64,
    pub plane: Option<PlaneFeature>,
    pub children: Option<Box<[Option<OctreeNode>; 8]>>,
    pub points: Vec<Point3<f64>>,
    pub visual_points: Vec<VisualPoint>,
    stats: PointStats,
    seen: u64,
    tag: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn octant(center: &Point3<f64>, p: &Point3<f64>) -> usize {
    (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2
}

impl OctreeNode {
    pub(super) fn root(key: &VoxelKey, size: f64, seed: u64) -> Self {
        let tag = splitmix(
            seed ^ (key.ix as u64).wrapping_mul(0x9e37_79b9)
                ^ (key.iy as u64).wrapping_mul(0x85eb_ca6b_0000_0001)
                ^ (key.iz as u64).wrapping_mul(0xc2b2_ae35_0000_0101),
        );
        Self::new(0, key.center(size), 0.5 * size, tag)
    }

    fn new(level: u8, center: Point3<f64>, half_size: f64, tag: u64) -> Self {
        Self {
            level,
            center,
            half_size,
            plane: None,
            children: None,
            points: Vec::new(),
            visual_points: Vec::new(),
            stats: PointStats::new(center),
            seen: 0,
            tag,
        }
    }

    fn child_center(&self, idx: usize) -> Point3<f64> {
        let q = 0.5 * self.half_size;
        let s = |bit: usize| if idx & bit != 0 { q } else { -q };
        self.center + Vector3::new(s(1), s(2), s(4))
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (p - self.center).amax() <= self.half_size
    }

    /// Number of points absorbed by this node's statistics.
    pub fn absorbed(&self) -> usize {
        self.stats.count()
    }

    fn buffer(&mut self, p: &Point3<f64>, cap: usize) {
        let k = self.seen;
        self.seen += 1;
        if self.points.len() < cap {
            self.points.push(*p);
        } else {
            let j = (splitmix(self.tag ^ k.wrapping_mul(0xd1b5_4a32_d192_ed03)) % (k + 1)) as usize;
            if j < cap {
                self.points[j] = *p;
            }
        }
    }

    pub(super) fn insert(&mut self, pts: &[Point3<f64>], cfg: &MapConfig, summary: &mut UpdateSummary) {
        if self.children.is_some() {
            self.route_to_children(pts, cfg, summary);
            return;
        }
        for p in pts {
            self.stats.push(p);
            self.buffer(p, cfg.node_point_cap);
        }
        match fit_stats(&self.stats, &cfg.plane) {
            PlaneFit::Planar(pf) => {
                self.plane = Some(pf);
                summary.refit_planes += 1;
            }
            PlaneFit::NotPlanar { .. } => {
                self.plane = None;
                if self.level < MAX_LEVEL {
                    self.subdivide(cfg, summary);
                }
            }
            PlaneFit::InsufficientPoints { .. } => self.plane = None,
        }
    }

    fn route_to_children(&mut self, pts: &[Point3<f64>], cfg: &MapConfig, summary: &mut UpdateSummary) {
        let mut parts: [Vec<Point3<f64>>; 8] = Default::default();
        for p in pts {
            parts[octant(&self.center, p)].push(*p);
        }
        for (idx, part) in parts.iter().enumerate() {
            if part.is_empty() {
                continue;
            }
            let center = self.child_center(idx);
            let (level, half, tag) = (self.level + 1, 0.5 * self.half_size, splitmix(self.tag ^ (idx as u64 + 1)));
            let children = self.children.as_mut().expect("has children");
            children[idx]
                .get_or_insert_with(|| OctreeNode::new(level, center, half, tag))
                .insert(part, cfg, summary);
        }
    }

    fn subdivide(&mut self, cfg: &MapConfig, summary: &mut UpdateSummary) {
        summary.subdivided_nodes += 1;
        self.children = Some(Box::default());
        let pts = std::mem::take(&mut self.points);
        let visuals = std::mem::take(&mut self.visual_points);
        self.stats = PointStats::new(self.center);
        self.seen = 0;
        self.route_to_children(&pts, cfg, summary);
        for vp in visuals {
            self.leaf_mut(&vp.position).visual_points.push(vp);
        }
    }

    /// Deepest existing node on the path to `p`.
    pub fn leaf(&self, p: &Point3<f64>) -> &OctreeNode {
        let mut node = self;
        while let Some(children) = &node.children {
            match &children[octant(&node.center, p)] {
                Some(child) => node = child,
                None => break,
            }
        }
        node
    }

    pub(super) fn leaf_mut(&mut self, p: &Point3<f64>) -> &mut OctreeNode {
        let idx = octant(&self.center, p);
        let descend = matches!(&self.children, Some(c) if c[idx].is_some());
        if descend {
            self.children.as_mut().unwrap()[idx].as_mut().unwrap().leaf_mut(p)
        } else {
            self
        }
    }

    pub fn children_iter(&self) -> impl Iterator<Item = &OctreeNode> {
        self.children.iter().flat_map(|c| c.iter().flatten())
    }

    pub(super) fn visual_points_recursive(&self) -> Box<dyn Iterator<Item = &VisualPoint> + '_> {
        Box::new(
            self.visual_points
                .iter()
                .chain(self.children_iter().flat_map(|c| c.visual_points_recursive())),
        )
    }

    pub(super) fn visual_points_recursive_mut(&mut self) -> Box<dyn Iterator<Item = &mut VisualPoint> + '_> {
        let children = self.children.iter_mut().flat_map(|c| c.iter_mut().flatten());
        Box::new(self.visual_points.iter_mut().chain(children.flat_map(|c| c.visual_points_recursive_mut())))
    }

    pub(super) fn into_visual_points(self) -> Vec<VisualPoint> {
        let mut out = self.visual_points;
        if let Some(children) = self.children {
            for child in children.into_iter().flatten() {
                out.extend(child.into_visual_points());
            }
        }
        out
    }

    pub(super) fn accumulate_stats(&self, r: &mut MapMemoryReport) {
        r.nodes += 1;
        r.planes += self.plane.is_some() as usize;
        r.points += self.points.len();
        r.visual_points += self.visual_points.len();
        for c in self.children_iter() {
            c.accumulate_stats(r);
        }
    }

    pub(super) fn snapshot_into(&self, key: &VoxelKey, out: &mut Vec<SnapshotRecord>) {
        if self.children.is_some() {
            for c in self.children_iter() {
                c.snapshot_into(key, out);
            }
            return;
        }
        out.push(match &self.plane {
            Some(p) => SnapshotRecord::Node {
                key: *key,
                level: self.level,
                planar: true,
                center: p.center,
                normal: p.normal,
                count: p.point_count,
            },
            None => SnapshotRecord::Node {
                key: *key,
                level: self.level,
                planar: false,
                center: self.center,
                normal: Vector3::zeros(),
                count: self.stats.count(),
            },
        });
    }
}
