use livo_harness::metrics::{ate_rmse, associate, StageStats, TimedPosition};
use livo_harness::HarnessError;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn trajectory(n: usize) -> Vec<TimedPosition> {
    (0..n)
        .map(|i| {
            let s = i as f64 * 0.05;
            TimedPosition { timestamp: s, position: Vector3::new(3.0 * s.cos(), 2.0 * (0.7 * s).sin(), 0.2 * s) }
        })
        .collect()
}

fn moved(traj: &[TimedPosition], r: Rotation3<f64>, t: Vector3<f64>) -> Vec<TimedPosition> {
    traj.iter().map(|p| TimedPosition { timestamp: p.timestamp, position: r * p.position + t }).collect()
}

#[test]
fn identical_trajectories_have_zero_error() {
    let gt = trajectory(200);
    assert!(ate_rmse(&gt, &gt).unwrap() < 1e-12);
}

#[test]
fn isotropic_noise_gives_expected_rmse() {
    let gt = trajectory(20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let est: Vec<_> = gt
        .iter()
        .map(|p| {
            let n = Vector3::from_fn(|_, _| normal.sample(&mut rng));
            TimedPosition { timestamp: p.timestamp, position: p.position + n }
        })
        .collect();
    let expected = 0.1 * 3f64.sqrt();
    let ate = ate_rmse(&est, &gt).unwrap();
    assert!((ate - expected).abs() < 0.05 * expected, "{ate} vs {expected}");
}

#[test]
fn too_few_pairs_is_undefined() {
    let gt = trajectory(2);
    let err = ate_rmse(&gt, &gt).unwrap_err();
    assert!(matches!(err, HarnessError::Metric(_)));
    assert_eq!(err.category(), "metric-undefined");

    // Plenty of poses, but none close enough in time.
    let far: Vec<_> = trajectory(50).into_iter().map(|p| TimedPosition { timestamp: p.timestamp + 100.0, ..p }).collect();
    assert!(ate_rmse(&far, &trajectory(50)).is_err());
}

#[test]
fn association_picks_nearest_within_window() {
    let gt = trajectory(10);
    let est = vec![
        TimedPosition { timestamp: 0.104, position: Vector3::zeros() },
        TimedPosition { timestamp: 0.126, position: Vector3::zeros() },
        TimedPosition { timestamp: 0.3, position: Vector3::zeros() },
    ];
    let pairs = associate(&est, &gt);
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].1, gt[2].position);
    assert_eq!(pairs[1].1, gt[6].position);
}

#[test]
fn empty_stats_are_empty() {
    assert_eq!(StageStats::from_samples(&[]), StageStats::default());
    assert_eq!(StageStats::from_samples(&[]).count, 0);
}

#[test]
fn stats_match_known_values() {
    let s = StageStats::from_samples(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    let std = (32.0f64 / 7.0).sqrt();
    assert_eq!(s.count, 8);
    assert!((s.mean_ms - 5.0).abs() < 1e-12);
    assert!((s.std_ms - std).abs() < 1e-12);
    assert!((s.sem_ms - std / 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(StageStats::from_samples(&[3.5]).std_ms, 0.0);
}

proptest! {
    #[test]
    fn error_is_invariant_to_rigid_motion(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-50.0f64..50.0),
        seed in any::<u64>(),
    ) {
        prop_assume!(Vector3::from(axis).norm() > 0.1);
        let gt = trajectory(300);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.03).unwrap();
        let est: Vec<_> = gt.iter().map(|p| TimedPosition {
            timestamp: p.timestamp,
            position: p.position + Vector3::from_fn(|_, _| normal.sample(&mut rng)),
        }).collect();
        let r = Rotation3::new(Vector3::from(axis).normalize() * angle);
        let base = ate_rmse(&est, &gt).unwrap();
        let shifted = ate_rmse(&moved(&est, r, Vector3::from(t)), &gt).unwrap();
        prop_assert!((base - shifted).abs() < 1e-9);
        prop_assert!(ate_rmse(&moved(&gt, r, Vector3::from(t)), &gt).unwrap() < 1e-9);
    }
}
