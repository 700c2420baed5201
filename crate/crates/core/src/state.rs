//! Filter state on `SO(3) × ℝ¹⁵`, its tangent-space error, and IMU forward
//! propagation of state and covariance.
//!
//! The error state is ordered `(δθ, δp, δv, δb_w, δb_a, δg)`; every
//! Jacobian in the crate uses the offsets in [`block`]. Rotation errors are
//! right perturbations, `R ⊞ δθ = R · Exp(δθ)`.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::so3;

pub const STATE_DIM: usize = 18;
pub const NOISE_DIM: usize = 15;

/// Offsets of the 3-vector blocks inside [`ErrorState`].
pub mod block {
    pub const ROT: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
    pub const GRAV: usize = 15;
}

/// Tangent-space vector `(δθ, δp, δv, δb_w, δb_a, δg)`.
pub type ErrorState = SVector<f64, STATE_DIM>;
/// Covariance over [`ErrorState`] coordinates.
pub type CovarianceMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
/// Process-noise covariance over `(n_w, n_a, n_bw, n_ba, n_g)`.
pub type ProcessNoiseMatrix = SMatrix<f64, NOISE_DIM, NOISE_DIM>;
pub type NoiseVector = SVector<f64, NOISE_DIM>;

/// Longest accepted gap between consecutive IMU samples.
pub const MAX_PROPAGATION_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// rad/s, body frame.
    pub angular_velocity: Vector3<f64>,
    /// m/s², body frame, specific force.
    pub linear_acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// World-from-IMU orientation.
    pub rotation: Rotation3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl Default for StateVector {
    fn default() -> Self {
        Self {
            rotation: Rotation3::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

fn block3(v: &ErrorState, at: usize) -> Vector3<f64> {
    v.fixed_rows::<3>(at).into_owned()
}

impl StateVector {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|v| v.is_finite())
            && [self.position, self.velocity, self.gyro_bias, self.accel_bias, self.gravity]
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// `x ⊞ d`.
    pub fn boxplus(&self, d: &ErrorState) -> Result<StateVector> {
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite error-state increment".into()));
        }
        Ok(self.boxplus_unchecked(d))
    }

    pub(crate) fn boxplus_unchecked(&self, d: &ErrorState) -> StateVector {
        let dtheta = block3(d, block::ROT);
        let rotation = if dtheta == Vector3::zeros() {
            self.rotation
        } else {
            so3::renormalize(&(self.rotation * so3::exp(&dtheta)))
        };
        StateVector {
            rotation,
            position: self.position + block3(d, block::POS),
            velocity: self.velocity + block3(d, block::VEL),
            gyro_bias: self.gyro_bias + block3(d, block::BG),
            accel_bias: self.accel_bias + block3(d, block::BA),
            gravity: self.gravity + block3(d, block::GRAV),
        }
    }

    /// `self ⊟ other`, the tangent vector `d` with `other ⊞ d = self`.
    pub fn boxminus(&self, other: &StateVector) -> ErrorState {
        let mut d = ErrorState::zeros();
        d.fixed_rows_mut::<3>(block::ROT)
            .copy_from(&so3::log(&(other.rotation.inverse() * self.rotation)));
        d.fixed_rows_mut::<3>(block::POS).copy_from(&(self.position - other.position));
        d.fixed_rows_mut::<3>(block::VEL).copy_from(&(self.velocity - other.velocity));
        d.fixed_rows_mut::<3>(block::BG).copy_from(&(self.gyro_bias - other.gyro_bias));
        d.fixed_rows_mut::<3>(block::BA).copy_from(&(self.accel_bias - other.accel_bias));
        d.fixed_rows_mut::<3>(block::GRAV).copy_from(&(self.gravity - other.gravity));
        d
    }
}

/// Noise densities of the IMU model, all in continuous-time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// rad/s/√Hz
    pub gyro: f64,
    /// m/s²/√Hz
    pub accel: f64,
    /// rad/s²/√Hz
    pub gyro_bias_walk: f64,
    /// m/s³/√Hz
    pub accel_bias_walk: f64,
    /// Gravity random walk; zero keeps gravity fixed up to its prior.
    pub gravity_walk: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            gyro: 2e-3,
            accel: 2e-2,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
            gravity_walk: 0.0,
        }
    }
}

impl ProcessNoise {
    /// Covariance of the per-step noise vector for a step of `dt` seconds.
    ///
    /// [`propagate`] scales the noise by `dt` through `F_w`, so the
    /// discrete variance here is `σ²/dt`, giving `σ²·dt` in the state.
    pub fn discrete(&self, dt: f64) -> ProcessNoiseMatrix {
        let mut q = ProcessNoiseMatrix::zeros();
        let sig = [self.gyro, self.accel, self.gyro_bias_walk, self.accel_bias_walk, self.gravity_walk];
        for (b, s) in sig.iter().enumerate() {
            for i in 0..3 {
                q[(3 * b + i, 3 * b + i)] = s * s / dt;
            }
        }
        q
    }
}

/// One forward-Euler step `x ⊞ (dt · f(x, u, w))`.
///
/// `noise` is ordered `(n_w, n_a, n_bw, n_ba, n_g)`; pass zero for the
/// nominal prediction.
pub fn discrete_transition(
    x: &StateVector,
    u: &ImuSample,
    dt: f64,
    noise: &NoiseVector,
) -> StateVector {
    let n = |i: usize| noise.fixed_rows::<3>(3 * i).into_owned();
    let omega = u.angular_velocity - x.gyro_bias - n(0);
    let acc = u.linear_acceleration - x.accel_bias - n(1);
    let mut d = ErrorState::zeros();
    d.fixed_rows_mut::<3>(block::ROT).copy_from(&(omega * dt));
    d.fixed_rows_mut::<3>(block::POS).copy_from(&(x.velocity * dt));
    d.fixed_rows_mut::<3>(block::VEL)
        .copy_from(&((x.rotation * acc + x.gravity) * dt));
    d.fixed_rows_mut::<3>(block::BG).copy_from(&(n(2) * dt));
    d.fixed_rows_mut::<3>(block::BA).copy_from(&(n(3) * dt));
    d.fixed_rows_mut::<3>(block::GRAV).copy_from(&(n(4) * dt));
    x.boxplus_unchecked(&d)
}

/// Error-state transition `F_x̃` and noise Jacobian `F_w` of
/// [`discrete_transition`] at zero noise.
pub fn transition_jacobians(
    x: &StateVector,
    u: &ImuSample,
    dt: f64,
) -> (CovarianceMatrix, SMatrix<f64, STATE_DIM, NOISE_DIM>) {
    let omega_dt = (u.angular_velocity - x.gyro_bias) * dt;
    let acc = u.linear_acceleration - x.accel_bias;
    let r = x.rotation.matrix();
    let jr = so3::right_jacobian(&omega_dt);
    let eye = Matrix3::identity();

    let mut f = CovarianceMatrix::identity();
    f.fixed_view_mut::<3, 3>(block::ROT, block::ROT)
        .copy_from(so3::exp(&-omega_dt).matrix());
    f.fixed_view_mut::<3, 3>(block::ROT, block::BG).copy_from(&(-jr * dt));
    f.fixed_view_mut::<3, 3>(block::POS, block::VEL).copy_from(&(eye * dt));
    f.fixed_view_mut::<3, 3>(block::VEL, block::ROT)
        .copy_from(&(-r * so3::skew(&acc) * dt));
    f.fixed_view_mut::<3, 3>(block::VEL, block::BA).copy_from(&(-r * dt));
    f.fixed_view_mut::<3, 3>(block::VEL, block::GRAV).copy_from(&(eye * dt));

    let mut fw = SMatrix::<f64, STATE_DIM, NOISE_DIM>::zeros();
    fw.fixed_view_mut::<3, 3>(block::ROT, 0).copy_from(&(-jr * dt));
    fw.fixed_view_mut::<3, 3>(block::VEL, 3).copy_from(&(-r * dt));
    fw.fixed_view_mut::<3, 3>(block::BG, 6).copy_from(&(eye * dt));
    fw.fixed_view_mut::<3, 3>(block::BA, 9).copy_from(&(eye * dt));
    fw.fixed_view_mut::<3, 3>(block::GRAV, 12).copy_from(&(eye * dt));
    (f, fw)
}

/// Propagates state and covariance across one IMU interval.
pub fn propagate(
    x: &StateVector,
    p: &CovarianceMatrix,
    u: &ImuSample,
    dt: f64,
    q: &ProcessNoiseMatrix,
) -> Result<(StateVector, CovarianceMatrix)> {
    if !(dt > 0.0 && dt < MAX_PROPAGATION_DT) {
        return Err(Error::PropagationGap { dt, max: MAX_PROPAGATION_DT });
    }
    if !(u.angular_velocity.iter().chain(u.linear_acceleration.iter()).all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite IMU sample".into()));
    }
    let next = discrete_transition(x, u, dt, &NoiseVector::zeros());
    let (f, fw) = transition_jacobians(x, u, dt);
    let mut cov = f * p * f.transpose() + fw * q * fw.transpose();
    symmetrize(&mut cov);
    Ok((next, cov))
}

/// Restores exact symmetry in place.
pub fn symmetrize(p: &mut CovarianceMatrix) {
    for i in 0..STATE_DIM {
        for j in (i + 1)..STATE_DIM {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Symmetrizes and, if an eigenvalue fell below `-1e-9`, clamps the
/// spectrum at zero. Returns the smallest eigenvalue seen before clamping.
pub fn enforce_psd(p: &mut CovarianceMatrix) -> f64 {
    symmetrize(p);
    if p.cholesky().is_some() {
        return min_eigenvalue(p);
    }
    let eig = p.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-9 {
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        *p = eig.eigenvectors * CovarianceMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        symmetrize(p);
    }
    min
}

pub fn min_eigenvalue(p: &CovarianceMatrix) -> f64 {
    p.symmetric_eigen().eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sample(w: Vector3<f64>, a: Vector3<f64>) -> ImuSample {
        ImuSample { timestamp: 0.0, angular_velocity: w, linear_acceleration: a }
    }

    #[test]
    fn boxplus_zero_is_identity() {
        let x = StateVector {
            rotation: so3::exp(&Vector3::new(0.2, 0.1, -0.4)),
            position: Vector3::new(1.0, 2.0, 3.0),
            ..Default::default()
        };
        assert_eq!(x.boxplus(&ErrorState::zeros()).unwrap(), x);
        assert_eq!(x.boxminus(&x), ErrorState::zeros());
    }

    #[test]
    fn boxplus_quarter_turn() {
        let mut d = ErrorState::zeros();
        d[2] = PI / 2.0;
        let y = StateVector::default().boxplus(&d).unwrap();
        assert_relative_eq!(y.rotation * Vector3::x(), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn boxplus_rejects_non_finite() {
        let mut d = ErrorState::zeros();
        d[4] = f64::NAN;
        assert!(matches!(
            StateVector::default().boxplus(&d),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn roundtrip_at_0_3_rad() {
        let x = StateVector {
            rotation: so3::exp(&Vector3::new(-0.7, 0.3, 1.1)),
            velocity: Vector3::new(0.5, 0.0, -1.0),
            ..Default::default()
        };
        let mut d = ErrorState::from_fn(|i, _| 0.01 * (i as f64 + 1.0));
        let rot = Vector3::new(0.1, -0.2, 0.2);
        d.fixed_rows_mut::<3>(0).copy_from(&(rot * (0.3 / rot.norm())));
        let back = x.boxplus(&d).unwrap().boxminus(&x);
        assert!((back - d).norm() < 1e-9);
    }

    #[test]
    fn stationary_equilibrium() {
        let x = StateVector {
            rotation: so3::exp(&Vector3::new(0.3, -0.2, 0.9)),
            position: Vector3::new(1.0, -1.0, 0.5),
            ..Default::default()
        };
        let a = -(x.rotation.inverse() * x.gravity);
        let q = ProcessNoise::default().discrete(0.005);
        let (y, _) =
            propagate(&x, &CovarianceMatrix::identity(), &sample(Vector3::zeros(), a), 0.005, &q)
                .unwrap();
        assert!((y.position - x.position).norm() < 1e-12);
        assert!(y.velocity.norm() < 1e-12);
    }

    #[test]
    fn pure_integration_without_gravity() {
        let x = StateVector {
            velocity: Vector3::new(1.0, 0.0, 0.0),
            gravity: Vector3::zeros(),
            ..Default::default()
        };
        let q = ProcessNoise::default().discrete(0.01);
        let (y, _) = propagate(
            &x,
            &CovarianceMatrix::zeros(),
            &sample(Vector3::zeros(), Vector3::zeros()),
            0.01,
            &q,
        )
        .unwrap();
        assert_relative_eq!(y.position, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn propagation_gap_is_rejected() {
        let q = ProcessNoise::default().discrete(0.01);
        let u = sample(Vector3::zeros(), Vector3::zeros());
        let x = StateVector::default();
        let p = CovarianceMatrix::identity();
        for dt in [0.0, -0.01, 0.1, 0.5] {
            assert!(matches!(propagate(&x, &p, &u, dt, &q), Err(Error::PropagationGap { .. })));
        }
    }

    #[test]
    fn enforce_psd_clamps_negative_eigenvalues() {
        let mut p = CovarianceMatrix::identity();
        p[(3, 3)] = -1e-3;
        let min = enforce_psd(&mut p);
        assert!(min < -1e-9);
        assert!(min_eigenvalue(&p) >= -1e-12);
    }
}
