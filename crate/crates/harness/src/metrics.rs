//! Trajectory error and runtime statistics.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Largest timestamp difference accepted when pairing poses.
pub const ASSOCIATION_WINDOW: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPosition {
    pub timestamp: f64,
    pub position: Vector3<f64>,
}

/// Pairs each estimate with the nearest ground-truth sample within
/// [`ASSOCIATION_WINDOW`]. `truth` must be time-ordered.
pub fn associate(estimated: &[TimedPosition], truth: &[TimedPosition]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut pairs = Vec::new();
    for e in estimated {
        let i = truth.partition_point(|g| g.timestamp < e.timestamp);
        let nearest = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| truth.get(j))
            .min_by(|a, b| (a.timestamp - e.timestamp).abs().total_cmp(&(b.timestamp - e.timestamp).abs()));
        if let Some(g) = nearest {
            if (g.timestamp - e.timestamp).abs() <= ASSOCIATION_WINDOW {
                pairs.push((e.position, g.position));
            }
        }
    }
    pairs
}

/// Least-squares rigid transform `(R, t)` minimising `Σ‖R·src + t − dst‖²`.
pub fn rigid_alignment(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Rotation3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let mu_s = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let mu_d = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let cov: Matrix3<f64> = pairs.iter().map(|(s, d)| (d - mu_d) * (s - mu_s).transpose()).sum::<Matrix3<f64>>() / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_unchecked(u * s * v_t);
    (r, mu_d - r * mu_s)
}

/// Absolute trajectory error: RMSE of positions after rigid alignment of
/// the estimate onto the ground truth.
pub fn ate_rmse(estimated: &[TimedPosition], truth: &[TimedPosition]) -> Result<f64> {
    let pairs = associate(estimated, truth);
    if pairs.len() < 3 {
        return Err(HarnessError::Metric(format!("ATE needs at least 3 associated poses, found {}", pairs.len())));
    }
    let (r, t) = rigid_alignment(&pairs);
    let sse: f64 = pairs.iter().map(|(s, d)| (r * s + t - d).norm_squared()).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Mean with both sample standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub count: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub sem_ms: f64,
}

impl StageStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { count: n, mean_ms: mean, std_ms: std, sem_ms: std / (n as f64).sqrt() }
    }
}
