//! Iterated error-state Kalman update shared by the LiDAR and visual stages.
//!
//! Both measurement models only observe the pose block `(δθ, δp)`, so a
//! linearization is summarized by its weighted normal equations over six
//! coordinates and the gain is formed with a 6×6 inverse.

use nalgebra::{Matrix6, SMatrix, Vector6};

use crate::state::{block, enforce_psd, CovarianceMatrix, ErrorState, StateVector, STATE_DIM};
use crate::so3;

/// `Σ hᵢᵀ wᵢ hᵢ` and `Σ hᵢᵀ wᵢ zᵢ` over residuals linearized at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEquations {
    pub hth: Matrix6<f64>,
    pub htz: Vector6<f64>,
    /// `Σ wᵢ zᵢ²`.
    pub cost: f64,
    pub count: usize,
}

impl Default for NormalEquations {
    fn default() -> Self {
        Self { hth: Matrix6::zeros(), htz: Vector6::zeros(), cost: 0.0, count: 0 }
    }
}

impl NormalEquations {
    /// Adds one scalar residual `z` with Jacobian row `h` and inverse variance `w`.
    #[inline]
    pub fn push(&mut self, h: &Vector6<f64>, z: f64, w: f64) {
        self.hth += h * h.transpose() * w;
        self.htz += h * (w * z);
        self.cost += w * z * z;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &NormalEquations) {
        self.hth += other.hth;
        self.htz += other.htz;
        self.cost += other.cost;
        self.count += other.count;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    /// Stop once `‖x^{κ+1} ⊟ x^κ‖ < epsilon` (mixed rad/m norm).
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_iters: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub state: StateVector,
    pub covariance: CovarianceMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Residual count of the last linearization.
    pub measurements: usize,
    /// Weighted cost at the first and last linearization.
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Smallest covariance eigenvalue before PSD enforcement.
    pub min_eigenvalue: f64,
}

/// Gain pieces for the current linearization.
struct Gain {
    /// `K z` as a full error-state vector.
    kz: ErrorState,
    /// `K H`, nonzero only in the six pose columns.
    kh: CovarianceMatrix,
}

fn gain(p: &CovarianceMatrix, eq: &NormalEquations) -> Option<Gain> {
    let p_cols: SMatrix<f64, STATE_DIM, 6> = p.fixed_columns::<6>(0).into_owned();
    let p_aa: Matrix6<f64> = p.fixed_view::<6, 6>(0, 0).into_owned();
    let g = (Matrix6::identity() + eq.hth * p_aa).try_inverse()?;
    let kz = p_cols * (g * eq.htz);
    let mut kh = CovarianceMatrix::zeros();
    kh.fixed_columns_mut::<6>(0).copy_from(&(p_cols * (g * eq.hth)));
    Some(Gain { kz, kh })
}

/// Runs the iterated update, relinearizing through `linearize` at each
/// iterate. When the first linearization yields no residuals the prior is
/// returned untouched.
pub fn iterated_update<F>(
    prior: &StateVector,
    prior_cov: &CovarianceMatrix,
    config: &IterationConfig,
    linearize: F,
) -> UpdateOutcome
where
    F: FnMut(&StateVector) -> NormalEquations,
{
    iterated_update_from(prior, prior_cov, prior, config, linearize)
}

/// Same as [`iterated_update`] but starts iterating at `start` instead of the
/// prior mean. Without residuals the outcome carries `start` and the prior
/// covariance.
pub fn iterated_update_from<F>(
    prior: &StateVector,
    prior_cov: &CovarianceMatrix,
    start: &StateVector,
    config: &IterationConfig,
    mut linearize: F,
) -> UpdateOutcome
where
    F: FnMut(&StateVector) -> NormalEquations,
{
    let mut current = *start;
    let mut outcome = UpdateOutcome {
        state: *start,
        covariance: *prior_cov,
        converged: false,
        iterations: 0,
        measurements: 0,
        initial_cost: 0.0,
        final_cost: 0.0,
        min_eigenvalue: f64::NAN,
    };
    let mut last: Option<(CovarianceMatrix, CovarianceMatrix)> = None;

    for iter in 0..config.max_iters.max(1) {
        let eq = linearize(&current);
        if iter == 0 {
            outcome.initial_cost = eq.cost;
        }
        outcome.final_cost = eq.cost;
        outcome.measurements = eq.count;
        if eq.count == 0 {
            break;
        }
        let dx = current.boxminus(prior);
        let mut j_inv = CovarianceMatrix::identity();
        j_inv
            .fixed_view_mut::<3, 3>(block::ROT, block::ROT)
            .copy_from(&so3::right_jacobian(&dx.fixed_rows::<3>(block::ROT).into_owned()));
        let p = j_inv * prior_cov * j_inv.transpose();
        let Some(k) = gain(&p, &eq) else { break };
        let step = -k.kz - (CovarianceMatrix::identity() - k.kh) * (j_inv * dx);
        current = current.boxplus_unchecked(&step);
        outcome.iterations = iter + 1;
        last = Some((p, k.kh));
        if step.norm() < config.epsilon {
            outcome.converged = true;
            break;
        }
    }

    if let Some((p, kh)) = last {
        let mut cov = (CovarianceMatrix::identity() - kh) * p;
        outcome.min_eigenvalue = enforce_psd(&mut cov);
        outcome.state = current;
        outcome.covariance = cov;
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector, Vector3};

    #[test]
    fn no_residuals_is_identity() {
        let x = StateVector { position: Vector3::new(1.0, 2.0, 3.0), ..Default::default() };
        let p = CovarianceMatrix::identity() * 0.1;
        let out = iterated_update(&x, &p, &IterationConfig::default(), |_| NormalEquations::default());
        assert_eq!(out.state, x);
        assert_eq!(out.covariance, p);
        assert_eq!(out.iterations, 0);
    }

    /// Single iteration against the covariance-form EKF with an explicit
    /// m×m innovation inverse.
    #[test]
    fn single_iteration_matches_covariance_form() {
        let x = StateVector::default();
        let mut p = CovarianceMatrix::from_fn(|i, j| 0.01 * ((i * 7 + j * 3) % 5) as f64);
        p = p * p.transpose() + CovarianceMatrix::identity() * 0.05;
        let m = 9;
        let h = DMatrix::<f64>::from_fn(m, 18, |i, j| {
            if j < 6 {
                ((i * 13 + j * 5) % 7) as f64 * 0.3 - 0.8
            } else {
                0.0
            }
        });
        let z = DVector::<f64>::from_fn(m, |i, _| 0.01 * (i as f64) - 0.03);
        let w = DVector::<f64>::from_fn(m, |i, _| 1.0 / (0.01 + 0.001 * i as f64));

        let mut eq = NormalEquations::default();
        for i in 0..m {
            let row = Vector6::from_fn(|j, _| h[(i, j)]);
            eq.push(&row, z[i], w[i]);
        }
        let cfg = IterationConfig { epsilon: 0.0, max_iters: 1 };
        let out = iterated_update(&x, &p, &cfg, |_| eq);

        let pd = DMatrix::from_fn(18, 18, |i, j| p[(i, j)]);
        let r = DMatrix::from_diagonal(&w.map(|v| 1.0 / v));
        let s = &h * &pd * h.transpose() + r;
        let k = &pd * h.transpose() * s.try_inverse().unwrap();
        let dx = -(&k * &z);
        let post = (DMatrix::identity(18, 18) - &k * &h) * &pd;

        let got = out.state.boxminus(&x);
        for i in 0..18 {
            assert!((got[i] - dx[i]).abs() < 1e-9, "state {i}: {} vs {}", got[i], dx[i]);
            for j in 0..18 {
                assert!((out.covariance[(i, j)] - post[(i, j)]).abs() < 1e-9);
            }
        }
    }
}
