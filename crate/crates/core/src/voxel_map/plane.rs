use nalgebra::{Matrix3, Matrix6, Point3, Vector3};

/// Running sufficient statistics of a point set, kept relative to a fixed
/// anchor to limit cancellation far from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStats {
    anchor: Point3<f64>,
    count: usize,
    sum: Vector3<f64>,
    outer: Matrix3<f64>,
}

impl PointStats {
    pub fn new(anchor: Point3<f64>) -> Self {
        Self { anchor, count: 0, sum: Vector3::zeros(), outer: Matrix3::zeros() }
    }

    #[inline]
    pub fn push(&mut self, p: &Point3<f64>) {
        let d = p - self.anchor;
        self.count += 1;
        self.sum += d;
        self.outer += d * d.transpose();
    }

    pub fn extend<'a>(&mut self, pts: impl IntoIterator<Item = &'a Point3<f64>>) {
        for p in pts {
            self.push(p);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Point3<f64> {
        self.anchor + self.sum / self.count as f64
    }

    /// Population covariance of the absorbed points.
    pub fn covariance(&self) -> Matrix3<f64> {
        let n = self.count as f64;
        let m = self.sum / n;
        let c = self.outer / n - m * m.transpose();
        (c + c.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneConfig {
    pub min_points: usize,
    /// Planar iff `λ_min / λ_mid` is below this.
    pub planarity_threshold: f64,
    /// Per-point noise (m) propagated into the plane uncertainty.
    pub point_sigma: f64,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self { min_points: 10, planarity_threshold: 0.1, point_sigma: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFeature {
    pub center: Point3<f64>,
    /// Unit normal; its largest-magnitude component is positive.
    pub normal: Vector3<f64>,
    /// Covariance over `(normal, center)`.
    pub uncertainty: Matrix6<f64>,
    pub point_count: usize,
    /// `λ_min / λ_mid` of the point scatter.
    pub planarity: f64,
}

impl PlaneFeature {
    #[inline]
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    /// Variance of [`signed_distance`](Self::signed_distance) at `p` due to
    /// the plane estimate alone.
    pub fn distance_variance(&self, p: &Point3<f64>) -> f64 {
        let d = p - self.center;
        let mut j = nalgebra::Vector6::zeros();
        j.fixed_rows_mut::<3>(0).copy_from(&d);
        j.fixed_rows_mut::<3>(3).copy_from(&(-self.normal));
        (j.transpose() * self.uncertainty * j)[(0, 0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlaneFit {
    Planar(PlaneFeature),
    NotPlanar { planarity: f64 },
    InsufficientPoints { have: usize, need: usize },
}

impl PlaneFit {
    pub fn plane(&self) -> Option<&PlaneFeature> {
        match self {
            PlaneFit::Planar(p) => Some(p),
            _ => None,
        }
    }
}

/// Fits a plane to a point set by eigen-decomposition of its scatter.
pub fn fit_plane(points: &[Point3<f64>], config: &PlaneConfig) -> PlaneFit {
    let Some(first) = points.first() else {
        return PlaneFit::InsufficientPoints { have: 0, need: config.min_points };
    };
    let mut stats = PointStats::new(*first);
    stats.extend(points);
    fit_stats(&stats, config)
}

pub fn fit_stats(stats: &PointStats, config: &PlaneConfig) -> PlaneFit {
    let n = stats.count();
    if n < config.min_points.max(3) {
        return PlaneFit::InsufficientPoints { have: n, need: config.min_points.max(3) };
    }
    let eig = stats.covariance().symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam: [f64; 3] = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs: [Vector3<f64>; 3] = order.map(|i| eig.eigenvectors.column(i).into_owned());

    let planarity = if lam[1] > 0.0 { (lam[0] / lam[1]).clamp(0.0, 1.0) } else { 1.0 };
    if planarity >= config.planarity_threshold {
        return PlaneFit::NotPlanar { planarity };
    }

    let mut normal = vecs[0].normalize();
    if normal[normal.iamax()] < 0.0 {
        normal = -normal;
    }

    // First-order sensitivity of the smallest eigenvector to isotropic
    // point noise, summed in closed form over the scatter.
    let var = config.point_sigma * config.point_sigma;
    let nf = n as f64;
    let mut cov_n = Matrix3::zeros();
    for k in 1..3 {
        let gap = lam[k] - lam[0];
        if gap > 1e-12 {
            cov_n += vecs[k] * vecs[k].transpose() * ((lam[k] + lam[0]) / (gap * gap));
        }
    }
    let mut uncertainty = Matrix6::zeros();
    uncertainty.fixed_view_mut::<3, 3>(0, 0).copy_from(&(cov_n * (var / nf)));
    uncertainty
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * (var / nf)));

    PlaneFit::Planar(PlaneFeature {
        center: stats.mean(),
        normal,
        uncertainty,
        point_count: n,
        planarity,
    })
}
