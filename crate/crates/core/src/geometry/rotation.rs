use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Result, SabrError};

/// Rotation about the camera z axis (in-plane for a wall facing the camera).
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Max-norm deviation from orthonormality and |det − 1|.
pub fn rotation_defect(r: &Matrix3<f64>) -> (f64, f64) {
    let e = r * r.transpose() - Matrix3::identity();
    (e.amax(), (r.determinant() - 1.0).abs())
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let (o, d) = rotation_defect(r);
    o < tol && d <= tol
}

/// Nearest proper rotation. The polar factor comes from the scaled Newton
/// iteration `X ← (γX + X⁻ᵀ/γ)/2`; when `det M < 0` it is composed with the
/// reflection across the weakest singular direction.
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SabrError::NumericInput(
            "rotation block has non-finite entries".into(),
        ));
    }
    let eig = SymmetricEigen::new(m.transpose() * m);
    let (imin, lmin) = eig.eigenvalues.argmin();
    let sigma_min = lmin.max(0.0).sqrt();
    if sigma_min < 1e-8 {
        return Err(SabrError::DegenerateRotation(sigma_min));
    }
    let mut x = *m;
    for it in 0..100 {
        let inv = x
            .try_inverse()
            .ok_or(SabrError::DegenerateRotation(sigma_min))?;
        let gamma = if it < 20 {
            (inv.norm() / x.norm()).sqrt()
        } else {
            1.0
        };
        let next = (x * gamma + inv.transpose() / gamma) * 0.5;
        let step = (next - x).amax();
        x = next;
        if step < 1e-15 && it >= 1 {
            break;
        }
    }
    if m.determinant() < 0.0 {
        let v = eig.eigenvectors.column(imin).normalize();
        x *= Matrix3::identity() - v * v.transpose() * 2.0;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    fn polar_svd(m: &Matrix3<f64>) -> Matrix3<f64> {
        let svd = m.svd(true, true);
        svd.u.unwrap() * svd.v_t.unwrap()
    }

    fn random_rotation(rng: &mut RngStream) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.normal());
        let q = a.qr().q();
        if q.determinant() < 0.0 {
            -q
        } else {
            q
        }
    }

    #[test]
    fn fixed_point_and_scale_removal() {
        let i = Matrix3::identity();
        assert_eq!(orthonormalize(&i).unwrap(), i);
        let r = orthonormalize(&(i * 2.0)).unwrap();
        assert!((r - i).amax() < 1e-15);
    }

    #[test]
    fn perturbed_rotation_matches_polar_oracle() {
        let mut rng = RngStream::new(5);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let noisy = r + Matrix3::from_fn(|_, _| 1e-2 * rng.uniform_range(-1.0, 1.0));
            let out = orthonormalize(&noisy).unwrap();
            let oracle = polar_svd(&noisy);
            assert!((out - oracle).amax() < 1e-8);
            assert!((out - r).norm() < 2e-2);
            let (o, d) = rotation_defect(&out);
            assert!(o < 1e-10 && d < 1e-10);
            let again = orthonormalize(&out).unwrap();
            assert!((again - out).amax() < 1e-12);
        }
    }

    #[test]
    fn reflection_is_repaired_to_proper_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let r = orthonormalize(&m).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            orthonormalize(&m),
            Err(SabrError::DegenerateRotation(_))
        ));
    }
}
