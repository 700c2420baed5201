//! Planes-only worlds with procedural textures.

use nalgebra::{Point3, Vector3};

/// One sinusoidal component `amplitude · sin(ka·a + kb·b + phase)` of a
/// smooth texture; `a`, `b` are plane coordinates in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub ka: f64,
    pub kb: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant(f64),
    Checkerboard { size: f64, low: f64, high: f64 },
    Sinusoid { base: f64, waves: Vec<Wave> },
}

impl Texture {
    /// A band-limited pattern with incommensurate frequencies so that no two
    /// nearby patches look alike; `scale` stretches all wavelengths.
    pub fn smooth(phase: f64, scale: f64) -> Self {
        let k = 1.0 / scale;
        Texture::Sinusoid {
            base: 0.5,
            waves: vec![
                Wave { ka: 3.1 * k, kb: 1.3 * k, phase, amplitude: 0.16 },
                Wave { ka: -1.7 * k, kb: 4.3 * k, phase: 2.0 * phase + 0.4, amplitude: 0.12 },
                Wave { ka: 7.3 * k, kb: -5.1 * k, phase: 0.5 - phase, amplitude: 0.09 },
                Wave { ka: 0.9 * k, kb: 11.0 * k, phase: 3.0 * phase, amplitude: 0.05 },
            ],
        }
    }

    pub fn value(&self, a: f64, b: f64) -> f64 {
        match self {
            Texture::Constant(v) => *v,
            Texture::Checkerboard { size, low, high } => {
                let parity = ((a / size).floor() + (b / size).floor()).rem_euclid(2.0);
                if parity < 0.5 {
                    *low
                } else {
                    *high
                }
            }
            Texture::Sinusoid { base, waves } => {
                let v = waves.iter().fold(*base, |acc, w| acc + w.amplitude * (w.ka * a + w.kb * b + w.phase).sin());
                v.clamp(0.0, 1.0)
            }
        }
    }
}

/// A finite, two-sided textured rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSurface {
    pub center: Point3<f64>,
    pub normal: Vector3<f64>,
    /// In-plane axes; `u × v = normal`.
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
    pub texture: Texture,
}

impl PlaneSurface {
    /// `u_hint` is projected into the plane to define the first texture axis.
    pub fn new(
        center: Point3<f64>,
        normal: Vector3<f64>,
        u_hint: Vector3<f64>,
        half_u: f64,
        half_v: f64,
        texture: Texture,
    ) -> Self {
        let normal = normal.normalize();
        let u_axis = (u_hint - normal * normal.dot(&u_hint)).normalize();
        let v_axis = normal.cross(&u_axis);
        assert!(u_axis.iter().all(|c| c.is_finite()), "u_hint parallel to the normal");
        assert!(half_u > 0.0 && half_v > 0.0, "extents must be positive");
        Self { center, normal, u_axis, v_axis, half_u, half_v, texture }
    }

    /// Axis-aligned rectangle on `coord[axis] = offset`, spanning `lo..hi` in
    /// the two remaining coordinates (taken in cyclic order after `axis`).
    pub fn axis_aligned(axis: usize, offset: f64, lo: [f64; 2], hi: [f64; 2], texture: Texture) -> Self {
        let (ia, ib) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut center = Point3::origin();
        center[axis] = offset;
        center[ia] = 0.5 * (lo[0] + hi[0]);
        center[ib] = 0.5 * (lo[1] + hi[1]);
        let mut normal = Vector3::zeros();
        normal[axis] = 1.0;
        let mut u = Vector3::zeros();
        u[ia] = 1.0;
        Self::new(center, normal, u, 0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]), texture)
    }

    pub fn local(&self, p: &Point3<f64>) -> (f64, f64) {
        let d = p - self.center;
        (d.dot(&self.u_axis), d.dot(&self.v_axis))
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    /// Ray parameter of the hit, if the ray crosses the rectangle ahead of
    /// its origin.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.intersect_before(origin, dir, |_| true)
    }

    /// As [`intersect`](Self::intersect), rejecting hits for which `keep`
    /// is false before the extent test.
    fn intersect_before(&self, origin: &Point3<f64>, dir: &Vector3<f64>, keep: impl Fn(f64) -> bool) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        if t <= 1e-9 || !keep(t) {
            return None;
        }
        let (a, b) = self.local(&(origin + dir * t));
        (a.abs() <= self.half_u && b.abs() <= self.half_v).then_some(t)
    }

    pub fn shade(&self, p: &Point3<f64>) -> f64 {
        let (a, b) = self.local(p);
        self.texture.value(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub plane: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldModel {
    pub planes: Vec<PlaneSurface>,
}

impl WorldModel {
    pub fn new(planes: Vec<PlaneSurface>) -> Self {
        Self { planes }
    }

    pub fn push(&mut self, plane: PlaneSurface) {
        self.planes.push(plane);
    }

    /// Nearest hit along a unit direction within `max_range`.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, plane) in self.planes.iter().enumerate() {
            let keep = |t: f64| t <= max_range && best.is_none_or(|b| t < b.range);
            if let Some(t) = plane.intersect_before(origin, dir, keep) {
                best = Some(Hit { range: t, plane: i });
            }
        }
        best
    }

    /// Six walls of the box `min..max`; `textures` in the order
    /// floor, ceiling, x-min, x-max, y-min, y-max.
    pub fn add_box(&mut self, min: Point3<f64>, max: Point3<f64>, textures: [Texture; 6]) {
        let [floor, ceiling, x0, x1, y0, y1] = textures;
        let span = |axis: usize| {
            let (ia, ib) = ((axis + 1) % 3, (axis + 2) % 3);
            ([min[ia], min[ib]], [max[ia], max[ib]])
        };
        let (lo, hi) = span(2);
        self.push(PlaneSurface::axis_aligned(2, min.z, lo, hi, floor));
        self.push(PlaneSurface::axis_aligned(2, max.z, lo, hi, ceiling));
        let (lo, hi) = span(0);
        self.push(PlaneSurface::axis_aligned(0, min.x, lo, hi, x0));
        self.push(PlaneSurface::axis_aligned(0, max.x, lo, hi, x1));
        let (lo, hi) = span(1);
        self.push(PlaneSurface::axis_aligned(1, min.y, lo, hi, y0));
        self.push(PlaneSurface::axis_aligned(1, max.y, lo, hi, y1));
    }
}
