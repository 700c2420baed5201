use livo_core::so3;
use livo_core::state::{
    discrete_transition, enforce_psd, propagate, transition_jacobians, NoiseVector, ProcessNoise, NOISE_DIM,
    STATE_DIM,
};
use livo_core::{CovarianceMatrix, ErrorState, ImuSample, StateVector};
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| { let z: f64 = StandardNormal.sample(rng); s * z })
}

fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
    StateVector {
        rotation: so3::exp(&gauss3(rng, 1.0)),
        position: gauss3(rng, 5.0),
        velocity: gauss3(rng, 1.0),
        gyro_bias: gauss3(rng, 0.01),
        accel_bias: gauss3(rng, 0.05),
        gravity: Vector3::new(0.0, 0.0, -9.81) + gauss3(rng, 0.05),
    }
}

fn random_imu(rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample {
        timestamp: 0.0,
        angular_velocity: gauss3(rng, 1.0),
        linear_acceleration: gauss3(rng, 3.0) + Vector3::new(0.0, 0.0, 9.81),
    }
}

/// Central differences of the discrete transition in the error state.
fn numeric_fx(x: &StateVector, u: &ImuSample, dt: f64, h: f64) -> DMatrix<f64> {
    let base = discrete_transition(x, u, dt, &NoiseVector::zeros());
    let mut out = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for j in 0..STATE_DIM {
        let mut d = ErrorState::zeros();
        d[j] = h;
        let plus = discrete_transition(&x.boxplus(&d).unwrap(), u, dt, &NoiseVector::zeros()).boxminus(&base);
        let minus = discrete_transition(&x.boxplus(&-d).unwrap(), u, dt, &NoiseVector::zeros()).boxminus(&base);
        out.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    out
}

fn numeric_fw(x: &StateVector, u: &ImuSample, dt: f64, h: f64) -> DMatrix<f64> {
    let base = discrete_transition(x, u, dt, &NoiseVector::zeros());
    let mut out = DMatrix::zeros(STATE_DIM, NOISE_DIM);
    for j in 0..NOISE_DIM {
        let mut w = NoiseVector::zeros();
        w[j] = h;
        let plus = discrete_transition(x, u, dt, &w).boxminus(&base);
        let minus = discrete_transition(x, u, dt, &-w).boxminus(&base);
        out.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    out
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn transition_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = random_state(&mut rng);
        let u = random_imu(&mut rng);
        let dt = rng.random_range(0.002..0.05);
        let (f, fw) = transition_jacobians(&x, &u, dt);
        let f = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| f[(i, j)]);
        let fw = DMatrix::from_fn(STATE_DIM, NOISE_DIM, |i, j| fw[(i, j)]);
        worst.0 = worst.0.max(rel_err(&numeric_fx(&x, &u, dt, 1e-6), &f));
        worst.1 = worst.1.max(rel_err(&numeric_fw(&x, &u, dt, 1e-6), &fw));
    }
    assert!(worst.0 < 1e-5, "F_x relative error {}", worst.0);
    assert!(worst.1 < 1e-5, "F_w relative error {}", worst.1);
}

#[test]
fn covariance_stays_psd_over_ten_thousand_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = StateVector::default();
    let mut p = CovarianceMatrix::identity() * 1e-4;
    let noise = ProcessNoise::default();
    let dt = 0.005;
    let q = noise.discrete(dt);
    for k in 0..10_000 {
        let u = ImuSample {
            timestamp: k as f64 * dt,
            angular_velocity: Vector3::new(0.3 * (k as f64 * 0.01).sin(), 0.2, -0.1) + gauss3(&mut rng, 0.01),
            linear_acceleration: Vector3::new(0.5, 0.0, 9.81) + gauss3(&mut rng, 0.1),
        };
        let (nx, np) = propagate(&x, &p, &u, dt, &q).unwrap();
        x = nx;
        p = np;
        if k % 500 == 0 {
            // Periodically mimic an update so the covariance stays bounded.
            let mut pp = p * 0.9;
            enforce_psd(&mut pp);
            p = pp;
        }
        let asym = (p - p.transpose()).amax();
        assert!(asym <= 1e-9 * p.amax().max(1.0));
        let min = p.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-9, "step {k}: eigenvalue {min}");
    }
    assert!(x.is_finite());
}

#[test]
fn trace_increases_with_positive_definite_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = ProcessNoise { gravity_walk: 1e-4, ..Default::default() };
    for _ in 0..200 {
        let x = random_state(&mut rng);
        let u = random_imu(&mut rng);
        let dt = rng.random_range(0.001..0.05);
        let a = DMatrix::<f64>::from_fn(STATE_DIM, STATE_DIM, |_, _| rng.random_range(-0.1..0.1));
        let pd = &a * a.transpose() + DMatrix::identity(STATE_DIM, STATE_DIM) * 1e-6;
        let p = CovarianceMatrix::from_fn(|i, j| pd[(i, j)]);
        let (_, np) = propagate(&x, &p, &u, dt, &noise.discrete(dt)).unwrap();
        // F has unit diagonal blocks except the rotation block, which is a
        // rotation; compare against the noise-free propagation as well.
        let (f, _) = transition_jacobians(&x, &u, dt);
        let noiseless = f * p * f.transpose();
        assert!(np.trace() > noiseless.trace());
    }
}

fn state_strategy() -> impl Strategy<Value = StateVector> {
    let v3 = |s: f64| prop::array::uniform3(-s..s).prop_map(Vector3::from);
    (v3(1.7), v3(20.0), v3(3.0), v3(0.05), v3(0.2), v3(0.3)).prop_map(|(r, p, v, bg, ba, g)| StateVector {
        rotation: so3::exp(&r),
        position: p,
        velocity: v,
        gyro_bias: bg,
        accel_bias: ba,
        gravity: Vector3::new(0.0, 0.0, -9.81) + g,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn boxminus_is_antisymmetric(x in state_strategy(), y in state_strategy()) {
        let a = y.boxminus(&x);
        let b = x.boxminus(&y);
        prop_assert!((a.norm() - b.norm()).abs() < 1e-9 * (1.0 + a.norm()));
        for i in 3..STATE_DIM {
            prop_assert!((a[i] + b[i]).abs() < 1e-9 * (1.0 + a[i].abs()));
        }
    }

    #[test]
    fn boxplus_inverts_boxminus(x in state_strategy(), y in state_strategy()) {
        let d = y.boxminus(&x);
        let back = x.boxplus(&d).unwrap();
        prop_assert!(back.boxminus(&y).norm() < 1e-9);
        prop_assert!((back.rotation.matrix() * back.rotation.matrix().transpose()
            - nalgebra::Matrix3::identity()).amax() < 1e-12);
    }
}
