//! Coefficient reflections used to turn half-space problems into whole-space
//! ones.

use std::sync::Arc;

use super::{EllipticOperator, Mat, ScalarField, VectorField};
use crate::error::{Error, Result};

fn reflect(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    y[0] = -y[0];
    y
}

/// Extends an operator given on `x¹ ≥ 0` to the whole space.
///
/// `a^{11}`, `a^{jk}` (`j, k ≥ 2`), `bʲ` (`j ≥ 2`) and `c` are extended
/// evenly; `a^{1j} = a^{j1}` (`j ≥ 2`) and `b¹` oddly. On the plane `x¹ = 0`
/// the odd entries are set to zero so the extension keeps the exact parity
/// that odd and even grid functions need. Zeroing the off-diagonal block of
/// a symmetric matrix keeps its spectrum inside the original bounds, so the
/// result carries the same `δ` and `K`.
pub fn extend_odd_even(op: &EllipticOperator) -> EllipticOperator {
    let a = op.a_field().clone();
    let a_hat: super::MatrixField = Arc::new(move |x: &[f64]| {
        if x[0] > 0.0 {
            return a(x);
        }
        let mut m = a(&reflect(x));
        let d = m.nrows();
        for j in 1..d {
            if x[0] == 0.0 {
                m[(0, j)] = 0.0;
                m[(j, 0)] = 0.0;
            } else {
                m[(0, j)] = -m[(0, j)];
                m[(j, 0)] = -m[(j, 0)];
            }
        }
        m
    });
    let mut out = EllipticOperator::new(op.dim(), a_hat, op.delta(), op.k_bound()).expect("same constants");
    if let Some(b) = op.b_field().cloned() {
        let b_hat: VectorField = Arc::new(move |x: &[f64]| {
            if x[0] > 0.0 {
                return b(x);
            }
            let mut v = b(&reflect(x));
            v[0] = if x[0] == 0.0 { 0.0 } else { -v[0] };
            v
        });
        out = out.with_drift(b_hat);
    }
    if let Some(c) = op.c_field().cloned() {
        let c_hat: ScalarField = Arc::new(move |x: &[f64]| c(&[&[x[0].abs()], &x[1..]].concat()));
        out = out.with_potential(c_hat);
    }
    out
}

fn check_ell(ell: &[f64]) -> Result<()> {
    if ell.is_empty() || (ell[0] - 1.0).abs() > 1e-14 {
        return Err(Error::invalid(format!(
            "oblique vector must be normalised to ell^1 = 1, got {:?}",
            ell.first()
        )));
    }
    Ok(())
}

/// The shear reflection `φ(x) = (−x¹, x′ − 2ℓ′x¹)`; an involution.
pub fn phi_map(ell: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_ell(ell)?;
    if ell.len() != x.len() {
        return Err(Error::invalid("phi_map: ell and x have different lengths"));
    }
    Ok(phi_unchecked(ell, x))
}

fn phi_unchecked(ell: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    y.push(-x[0]);
    for j in 1..x.len() {
        y.push(x[j] - 2.0 * ell[j] * x[0]);
    }
    y
}

/// Jacobian `J_{jr} = ∂φʲ/∂xʳ` of [`phi_map`].
pub fn phi_jacobian(ell: &[f64]) -> Result<Mat> {
    check_ell(ell)?;
    let d = ell.len();
    let mut j = Mat::identity(d, d);
    j[(0, 0)] = -1.0;
    for k in 1..d {
        j[(k, 0)] = -2.0 * ell[k];
    }
    Ok(j)
}

/// Spectral norm of the Jacobian.
pub fn phi_jacobian_norm(ell: &[f64]) -> Result<f64> {
    let j = phi_jacobian(ell)?;
    Ok(j.singular_values().max())
}

/// Whole-space operator for the oblique-derivative reduction: the original
/// coefficients on `x¹ ≥ 0` and their pull-back through `φ` on `x¹ < 0`,
/// `ā = J a(φ(x)) Jᵀ`, `b̄ = J b(φ(x))`, `c̄ = c(φ(x))`.
///
/// The declared constants become `δ/‖J‖²` and `‖J‖K`.
pub fn oblique_transform(op: &EllipticOperator, ell: &[f64]) -> Result<EllipticOperator> {
    let jac = phi_jacobian(ell)?;
    if ell.len() != op.dim() {
        return Err(Error::invalid("oblique vector dimension does not match the operator"));
    }
    let norm = jac.singular_values().max();
    let ell: Arc<[f64]> = ell.into();

    let a = op.a_field().clone();
    let (jl, el) = (jac.clone(), ell.clone());
    let a_hat: super::MatrixField = Arc::new(move |x: &[f64]| {
        if x[0] >= 0.0 {
            a(x)
        } else {
            &jl * a(&phi_unchecked(&el, x)) * jl.transpose()
        }
    });
    let mut out = EllipticOperator::new(op.dim(), a_hat, op.delta() / (norm * norm), op.k_bound() * norm)?;

    if let Some(b) = op.b_field().cloned() {
        let (jl, el) = (jac.clone(), ell.clone());
        let b_hat: VectorField = Arc::new(move |x: &[f64]| {
            if x[0] >= 0.0 {
                b(x)
            } else {
                let v = nalgebra::DVector::from_vec(b(&phi_unchecked(&el, x)));
                (&jl * v).as_slice().to_vec()
            }
        });
        out = out.with_drift(b_hat);
    }
    if let Some(c) = op.c_field().cloned() {
        let el = ell.clone();
        let c_hat: ScalarField = Arc::new(move |x: &[f64]| if x[0] >= 0.0 { c(x) } else { c(&phi_unchecked(&el, x)) });
        out = out.with_potential(c_hat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{validate, CoefficientFamily, FamilyKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sin_offdiag_op() -> EllipticOperator {
        let a: super::super::MatrixField = Arc::new(|x: &[f64]| {
            Mat::from_row_slice(2, 2, &[2.0 + x[0].cos(), 0.5 * x[0].sin(), 0.5 * x[0].sin(), 2.0])
        });
        EllipticOperator::new(2, a, 0.3, 1.0)
            .unwrap()
            .with_drift(Arc::new(|x: &[f64]| vec![0.5 + 0.1 * x[0], 0.25]))
            .with_potential(Arc::new(|x: &[f64]| -0.5 - 0.1 * x[0].min(1.0)))
    }

    #[test]
    fn odd_even_parities() {
        let ext = extend_odd_even(&sin_offdiag_op());
        for t in [0.3, 1.1, 2.7] {
            let p = ext.a_at(&[t, 0.4]);
            let m = ext.a_at(&[-t, 0.4]);
            assert_eq!(m[(0, 1)], -p[(0, 1)]);
            assert!((m[(0, 1)] - 0.5 * (-t).sin()).abs() < 1e-15);
            assert_eq!(m[(0, 0)], p[(0, 0)]);
            assert_eq!(m[(1, 1)], p[(1, 1)]);
            assert_eq!(ext.b_at(&[-t, 0.4])[0], -ext.b_at(&[t, 0.4])[0]);
            assert_eq!(ext.b_at(&[-t, 0.4])[1], ext.b_at(&[t, 0.4])[1]);
            assert_eq!(ext.c_at(&[-t, 0.4]), ext.c_at(&[t, 0.4]));
        }
        assert_eq!(ext.a_at(&[0.0, 1.0])[(0, 1)], 0.0);
        assert_eq!(ext.b_at(&[0.0, 1.0])[0], 0.0);
    }

    #[test]
    fn extension_keeps_constants_on_random_samples() {
        let fam = CoefficientFamily { kind: FamilyKind::MeasurableX1, seed: 3, delta: 0.2, ..Default::default() };
        let op = fam.draw(3).unwrap();
        let ext = extend_odd_even(&op);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..1000).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let dirs: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let r = validate(&ext, &pts, &dirs).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(ext.delta(), op.delta());
    }

    #[test]
    fn phi_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let ell = vec![1.0, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let back = phi_map(&ell, &phi_map(&ell, &x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn phi_special_cases() {
        assert_eq!(phi_map(&[1.0, 0.0, 0.0], &[2.0, 3.0, 4.0]).unwrap(), vec![-2.0, 3.0, 4.0]);
        let t = 0.7;
        assert_eq!(phi_map(&[1.0, t], &[1.0, 0.0]).unwrap(), vec![-1.0, -2.0 * t]);
        assert!(matches!(phi_map(&[2.0, 0.0], &[1.0, 0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn oblique_identity_matches_hand_product() {
        let t = 0.6;
        let op = oblique_transform(&EllipticOperator::identity(2), &[1.0, t]).unwrap();
        let m = op.a_at(&[-0.5, 0.1]);
        let expect = [1.0, 2.0 * t, 2.0 * t, 4.0 * t * t + 1.0];
        for (v, e) in m.as_slice().iter().zip(expect) {
            assert!((v - e).abs() < 1e-14);
        }
        let id = oblique_transform(&EllipticOperator::identity(2), &[1.0, 0.0]).unwrap();
        assert_eq!(id.a_at(&[-1.0, 0.0]), Mat::identity(2, 2));
    }

    #[test]
    fn double_transform_returns_original() {
        let op = sin_offdiag_op();
        let ell = [1.0, -0.4];
        let j = phi_jacobian(&ell).unwrap();
        let once = oblique_transform(&op, &ell).unwrap();
        for x in [[0.5, 0.2], [1.7, -3.0], [0.01, 2.0]] {
            // pulling the x¹ < 0 coefficients back through φ once more
            let y = phi_map(&ell, &x).unwrap();
            let back = &j * once.a_at(&y) * j.transpose();
            assert!((back - op.a_at(&x)).abs().max() < 1e-13);
        }
    }

    #[test]
    fn oblique_constants_follow_jacobian_norm() {
        let ell = [1.0, 0.8];
        let op = sin_offdiag_op();
        let t = oblique_transform(&op, &ell).unwrap();
        let n = phi_jacobian_norm(&ell).unwrap();
        assert!((t.delta() - op.delta() / (n * n)).abs() < 1e-15);
        let pts: Vec<Vec<f64>> = (0..200).map(|i| vec![-3.0 + 0.03 * i as f64, 0.1 * i as f64]).collect();
        let dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, -2.0]];
        assert!(validate(&t, &pts, &dirs).unwrap().pass);
    }
}
