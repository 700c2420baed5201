//! Rotation-group helpers shared by the state, LiDAR and visual modules.
//!
//! Perturbations are applied on the right: `R ⊞ δθ = R · Exp(δθ)`.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Below this angle the series expansions are used.
const SMALL_ANGLE: f64 = 1e-8;

/// Cross-product matrix `⌊v⌋×`, so that `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from an axis-angle vector.
pub fn exp(v: &Vector3<f64>) -> Rotation3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map, returning an angle in `[0, π]`.
///
/// At exactly π the axis is taken from the column of `R + I` with the
/// largest norm and its sign fixed so that the largest-magnitude component
/// is positive. The result is therefore a deterministic function of `R`.
pub fn log(r: &Rotation3<f64>) -> Vector3<f64> {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * vee.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-6 {
        // θ/(2 sin θ) ≈ 1/2 + θ²/12
        return vee * (0.5 + theta * theta / 12.0);
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * sin));
    }
    // Near π, (R + I)/2 ≈ a·aᵀ so every nonzero column is parallel to the axis.
    let sym = (m + Matrix3::identity()) * 0.5;
    let mut best = 0;
    let mut best_norm = -1.0;
    for c in 0..3 {
        let n = sym.column(c).norm();
        if n > best_norm {
            best_norm = n;
            best = c;
        }
    }
    let mut axis: Vector3<f64> = sym.column(best).into_owned() / best_norm;
    // Resolve sign from the antisymmetric part when it is informative.
    if vee.norm() > 1e-12 {
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else {
        let imax = axis.iamax();
        if axis[imax] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Right Jacobian of SO(3): `Exp(v + δ) ≈ Exp(v) Exp(Jr(v) δ)`.
pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2 < 1e-10 {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - k * ((1.0 - theta.cos()) / theta2)
        + k * k * ((theta - theta.sin()) / (theta2 * theta))
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2 < 1e-10 {
        return Matrix3::identity() + k * 0.5 + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + k * 0.5 + k * k * coeff
}

/// Projects a nearly-orthonormal matrix back onto SO(3).
pub fn renormalize(r: &Rotation3<f64>) -> Rotation3<f64> {
    let mut out = *r;
    out.renormalize();
    out
}

/// Rotation angle between two orientations, in radians.
pub fn angle_between(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    log(&(a.inverse() * b)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn exp_quarter_turn_maps_x_to_y() {
        let r = exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_inverts_exp() {
        for v in [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(1e-9, 0.0, 0.0),
            Vector3::new(0.0, 2.5, -1.0),
            Vector3::new(3.0, 0.1, 0.0),
        ] {
            assert_relative_eq!(log(&exp(&v)), v, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_at_pi_is_deterministic() {
        let r = exp(&Vector3::new(0.0, PI, 0.0));
        let a = log(&r);
        let b = log(&r);
        assert_eq!(a, b);
        assert_relative_eq!(a.norm(), PI, epsilon = 1e-6);
        assert_relative_eq!(exp(&a).matrix(), r.matrix(), epsilon = 1e-9);
        let neg = exp(&Vector3::new(0.0, -PI, 0.0));
        assert_relative_eq!(log(&neg)[1], PI, epsilon = 1e-6);
    }

    #[test]
    fn right_jacobian_first_order() {
        let v = Vector3::new(0.4, -0.3, 0.8);
        let d = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = exp(&(v + d));
        let rhs = exp(&v) * exp(&(right_jacobian(&v) * d));
        assert_relative_eq!(lhs.matrix(), rhs.matrix(), epsilon = 1e-11);
        assert_relative_eq!(
            right_jacobian(&v) * right_jacobian_inv(&v),
            Matrix3::identity(),
            epsilon = 1e-12
        );
    }
}
