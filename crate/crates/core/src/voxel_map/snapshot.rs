//! Line-oriented map snapshot: one record per line,
//! `kind ix iy iz level x y z nx ny nz value`, where `kind` is `plane`,
//! `raw` or `visual`. For nodes `value` is the point count; for visual
//! points it is the observation score.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};

use super::VoxelKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnapshotRecord {
    Node {
        key: VoxelKey,
        level: u8,
        planar: bool,
        /// Plane centre for planar nodes, cube centre otherwise.
        center: Point3<f64>,
        normal: Vector3<f64>,
        count: usize,
    },
    Visual {
        key: VoxelKey,
        position: Point3<f64>,
        normal: Vector3<f64>,
        score: f64,
    },
}

impl SnapshotRecord {
    fn sort_key(&self) -> (u8, VoxelKey, u8, [f64; 3]) {
        match self {
            SnapshotRecord::Node { key, level, center, .. } => (0, *key, *level, center.coords.into()),
            SnapshotRecord::Visual { key, position, .. } => (1, *key, 0, position.coords.into()),
        }
    }

    pub fn order(a: &Self, b: &Self) -> Ordering {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(&kb.0)
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
            .then(ka.3[0].total_cmp(&kb.3[0]))
            .then(ka.3[1].total_cmp(&kb.3[1]))
            .then(ka.3[2].total_cmp(&kb.3[2]))
    }

    pub fn to_line(&self) -> String {
        let (kind, key, level, p, n, value) = match self {
            SnapshotRecord::Node { key, level, planar, center, normal, count } => {
                (if *planar { "plane" } else { "raw" }, key, *level, center, normal, count.to_string())
            }
            SnapshotRecord::Visual { key, position, normal, score } => {
                ("visual", key, 0, position, normal, score.to_string())
            }
        };
        let mut s = String::new();
        let _ = write!(
            s,
            "{kind} {} {} {} {level} {} {} {} {} {} {} {value}",
            key.ix, key.iy, key.iz, p.x, p.y, p.z, n.x, n.y, n.z
        );
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed snapshot line: {line:?}"));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 12 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad());
        let flt = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let key = VoxelKey::new(int(f[1])?, int(f[2])?, int(f[3])?);
        let level = f[4].parse::<u8>().map_err(|_| bad())?;
        let p = Point3::new(flt(f[5])?, flt(f[6])?, flt(f[7])?);
        let n = Vector3::new(flt(f[8])?, flt(f[9])?, flt(f[10])?);
        match f[0] {
            kind @ ("plane" | "raw") => Ok(SnapshotRecord::Node {
                key,
                level,
                planar: kind == "plane",
                center: p,
                normal: n,
                count: f[11].parse().map_err(|_| bad())?,
            }),
            "visual" => Ok(SnapshotRecord::Visual { key, position: p, normal: n, score: flt(f[11])? }),
            _ => Err(bad()),
        }
    }
}

pub fn write_snapshot(records: &[SnapshotRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_snapshot(text: &str) -> Result<Vec<SnapshotRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(SnapshotRecord::parse_line)
        .collect()
}
