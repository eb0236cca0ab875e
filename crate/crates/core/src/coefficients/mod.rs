//! Coefficient fields `(a, b, c)` of `L u = a^{jk} u_{x^j x^k} + b^j u_{x^j} + c u`.

mod family;
mod transform;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gradient, mixed, BoxGrid, GridFunction, Rank, C64};

pub use family::{clamp_spectrum, CoefficientFamily, FamilyKind};
pub use transform::{extend_odd_even, oblique_transform, phi_jacobian, phi_jacobian_norm, phi_map};

pub type Mat = DMatrix<f64>;
pub type MatrixField = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A uniformly elliptic operator together with its declared constants:
/// `δ|ϑ|² ≤ a^{jk}ϑʲϑᵏ ≤ δ⁻¹|ϑ|²`, `|b|, |c| ≤ K`.
///
/// Absent `b` or `c` mean identically zero, which the spectral path relies on.
#[derive(Clone)]
pub struct EllipticOperator {
    dim: usize,
    a: MatrixField,
    b: Option<VectorField>,
    c: Option<ScalarField>,
    delta: f64,
    k_bound: f64,
}

impl fmt::Debug for EllipticOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllipticOperator")
            .field("dim", &self.dim)
            .field("delta", &self.delta)
            .field("k_bound", &self.k_bound)
            .field("has_b", &self.b.is_some())
            .field("has_c", &self.c.is_some())
            .finish()
    }
}

impl EllipticOperator {
    pub fn new(dim: usize, a: MatrixField, delta: f64, k_bound: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("operator dimension must be >= 2, got {dim}")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
        }
        if !(k_bound > 0.0) {
            return Err(Error::invalid(format!("K must be positive, got {k_bound}")));
        }
        Ok(EllipticOperator { dim, a, b: None, c: None, delta, k_bound })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, Arc::new(move |_| Mat::identity(dim, dim)), 1.0, 1.0).expect("identity is valid")
    }

    pub fn constant(a: Mat, delta: f64, k_bound: f64) -> Result<Self> {
        let dim = a.nrows();
        Self::new(dim, Arc::new(move |_| a.clone()), delta, k_bound)
    }

    pub fn with_drift(mut self, b: VectorField) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_potential(mut self, c: ScalarField) -> Self {
        self.c = Some(c);
        self
    }

    pub fn with_constants(mut self, delta: f64, k_bound: f64) -> Self {
        self.delta = delta;
        self.k_bound = k_bound;
        self
    }

    /// The principal part alone (`b = c = 0`).
    pub fn principal(&self) -> Self {
        EllipticOperator { b: None, c: None, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_bound(&self) -> f64 {
        self.k_bound
    }

    pub fn a_at(&self, x: &[f64]) -> Mat {
        (self.a)(x)
    }

    pub fn b_at(&self, x: &[f64]) -> Vec<f64> {
        self.b.as_ref().map_or_else(|| vec![0.0; self.dim], |b| b(x))
    }

    pub fn c_at(&self, x: &[f64]) -> f64 {
        self.c.as_ref().map_or(0.0, |c| c(x))
    }

    pub fn has_lower_order(&self) -> bool {
        self.b.is_some() || self.c.is_some()
    }

    pub(crate) fn a_field(&self) -> &MatrixField {
        &self.a
    }

    pub(crate) fn b_field(&self) -> Option<&VectorField> {
        self.b.as_ref()
    }

    pub(crate) fn c_field(&self) -> Option<&ScalarField> {
        self.c.as_ref()
    }

    /// Coefficients evaluated at every node of `grid`.
    pub fn sample(&self, grid: &BoxGrid) -> Result<SampledCoefficients> {
        if grid.dim() != self.dim {
            return Err(Error::invalid(format!(
                "operator is {}-d but grid is {}-d",
                self.dim,
                grid.dim()
            )));
        }
        let pts: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
        let a = pts.par_iter().map(|x| self.a_at(x)).collect();
        let b = self.b.as_ref().map(|b| pts.par_iter().map(|x| b(x)).collect());
        let c = self.c.as_ref().map(|c| pts.par_iter().map(|x| c(x)).collect());
        Ok(SampledCoefficients { a, b, c })
    }
}

/// Node-wise coefficient tables produced by [`EllipticOperator::sample`].
#[derive(Clone, Debug)]
pub struct SampledCoefficients {
    pub a: Vec<Mat>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    /// Extremes of `ϑᵀaϑ / |ϑ|²` over the sampled points and directions.
    pub min_rayleigh: f64,
    pub max_rayleigh: f64,
    /// Extremes of the eigenvalues of `a` over the sampled points.
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub symmetry_defect: f64,
    pub b_sup: f64,
    pub c_sup: f64,
    pub pass: bool,
}

/// Relative slack allowed when comparing against the declared constants.
const VALIDATION_SLACK: f64 = 1e-12;

/// Checks the ellipticity, symmetry and boundedness constants of `op` on
/// sampled points and directions.
pub fn validate(op: &EllipticOperator, points: &[Vec<f64>], directions: &[Vec<f64>]) -> Result<ValidationReport> {
    if points.is_empty() || directions.is_empty() {
        return Err(Error::invalid("validate needs nonempty point and direction samples"));
    }
    let d = op.dim();
    let mut r = ValidationReport {
        min_rayleigh: f64::INFINITY,
        max_rayleigh: f64::NEG_INFINITY,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        symmetry_defect: 0.0,
        b_sup: 0.0,
        c_sup: 0.0,
        pass: false,
    };
    for x in points {
        let a = op.a_at(x);
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::invalid(format!("a(x) is {}x{}, expected {d}x{d}", a.nrows(), a.ncols())));
        }
        r.symmetry_defect = r.symmetry_defect.max((&a - a.transpose()).abs().max());
        let sym = (&a + a.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        r.min_eigenvalue = r.min_eigenvalue.min(eig.min());
        r.max_eigenvalue = r.max_eigenvalue.max(eig.max());
        for th in directions {
            let v = nalgebra::DVector::from_column_slice(th);
            let n2 = v.norm_squared();
            if n2 == 0.0 {
                continue;
            }
            let q = (v.transpose() * &a * &v)[(0, 0)] / n2;
            r.min_rayleigh = r.min_rayleigh.min(q);
            r.max_rayleigh = r.max_rayleigh.max(q);
        }
        r.b_sup = op.b_at(x).iter().fold(r.b_sup, |m, v| m.max(v.abs()));
        r.c_sup = r.c_sup.max(op.c_at(x).abs());
    }
    let lo = op.delta() * (1.0 - VALIDATION_SLACK);
    let hi = (1.0 / op.delta()) * (1.0 + VALIDATION_SLACK);
    let k = op.k_bound() * (1.0 + VALIDATION_SLACK);
    r.pass = r.min_eigenvalue >= lo
        && r.max_eigenvalue <= hi
        && r.min_rayleigh >= lo
        && r.max_rayleigh <= hi
        && r.symmetry_defect <= 1e-12
        && r.b_sup <= k
        && r.c_sup <= k;
    Ok(r)
}

/// Grid nodes as a validation point set.
pub fn grid_points(grid: &BoxGrid) -> Vec<Vec<f64>> {
    (0..grid.len()).map(|i| grid.point(i)).collect()
}

/// `a^{jk}u_{x^jx^k} + bʲu_{x^j} + cu − λu` with the grid's stencils.
pub fn apply(op: &EllipticOperator, u: &GridFunction, lambda: f64) -> Result<GridFunction> {
    let coeffs = op.sample(u.grid())?;
    apply_sampled(&coeffs, u, lambda)
}

/// [`apply`] with coefficients already tabulated on `u`'s grid.
pub fn apply_sampled(coeffs: &SampledCoefficients, u: &GridFunction, lambda: f64) -> Result<GridFunction> {
    if u.rank() != Rank::Scalar {
        return Err(Error::invalid("apply needs a scalar field"));
    }
    let grid = u.grid();
    let d = grid.dim();
    if coeffs.a.len() != grid.len() || coeffs.a.first().is_some_and(|a| a.nrows() != d) {
        return Err(Error::invalid("coefficient table does not match the grid"));
    }
    let mut out = vec![C64::new(0.0, 0.0); grid.len()];
    for j in 0..d {
        for k in j..d {
            let ujk = mixed(u, j, k)?;
            for (i, o) in out.iter_mut().enumerate() {
                let a = &coeffs.a[i];
                let w = if j == k { a[(j, j)] } else { a[(j, k)] + a[(k, j)] };
                *o += ujk.values()[i] * w;
            }
        }
    }
    if let Some(b) = &coeffs.b {
        let g = gradient(u)?;
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..d {
                *o += g.component(j)[i] * b[i][j];
            }
        }
    }
    if let Some(c) = &coeffs.c {
        for (i, o) in out.iter_mut().enumerate() {
            *o += u.values()[i] * c[i];
        }
    }
    for (o, v) in out.iter_mut().zip(u.values()) {
        *o -= v * lambda;
    }
    GridFunction::scalar(u.grid_arc().clone(), out)
}

/// `‖apply(op, u, λ) − f‖₂ / ‖f‖₂` over nodes off the non-periodic edges,
/// where solvers impose boundary rows instead of the equation. Absolute when
/// `f` vanishes there.
pub fn interior_residual(op: &EllipticOperator, u: &GridFunction, f: &GridFunction, lambda: f64) -> Result<f64> {
    if !u.same_grid(f) {
        return Err(Error::invalid("solution and forcing live on different grids"));
    }
    let lu = apply(op, u, lambda)?;
    let grid = u.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.len() {
        if grid.is_edge(i) {
            continue;
        }
        num += (lu.values()[i] - f.values()[i]).norm_sqr();
        den += f.values()[i].norm_sqr();
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lp_norm, Axis, SubBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn box_grid(n: usize) -> Arc<BoxGrid> {
        Arc::new(BoxGrid::standard(2, (-6.0, 6.0), n + 1, (-6.0, 6.0), n).unwrap())
    }

    #[test]
    fn identity_passes_with_unit_quotients() {
        let op = EllipticOperator::identity(3);
        let pts = vec![vec![0.0; 3], vec![1.0, -2.0, 0.5]];
        let r = validate(&op, &pts, &random_directions(3, 50, 1)).unwrap();
        assert!(r.pass);
        assert!((r.min_rayleigh - 1.0).abs() < 1e-15 && (r.max_rayleigh - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_anisotropic_matrix_fails() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let op = EllipticOperator::constant(a, 0.6, 1.0).unwrap();
        let mut dirs = random_directions(2, 20, 2);
        dirs.push(vec![1.0, 0.0]);
        let r = validate(&op, &[vec![0.0, 0.0]], &dirs).unwrap();
        assert!(!r.pass);
        assert!((r.max_eigenvalue - 2.0).abs() < 1e-12);
        assert!((r.max_rayleigh - 2.0).abs() < 1e-12);
    }

    #[test]
    fn validate_flags_asymmetry_and_large_drift() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let op = EllipticOperator::constant(a, 0.5, 1.0).unwrap();
        assert!(!validate(&op, &[vec![0.0, 0.0]], &[vec![1.0, 1.0]]).unwrap().pass);
        let op = EllipticOperator::identity(2).with_drift(Arc::new(|_| vec![2.0, 0.0]));
        assert!(!validate(&op, &[vec![0.0, 0.0]], &[vec![1.0, 1.0]]).unwrap().pass);
        assert!(validate(&op, &[], &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn laplacian_of_half_square_norm_is_dimension() {
        let g = Arc::new(
            BoxGrid::new(vec![Axis::new(-1.0, 1.0, 9, false).unwrap(), Axis::new(-1.0, 1.0, 9, false).unwrap()])
                .unwrap(),
        );
        let u = GridFunction::from_real_fn(g, |x| (x[0] * x[0] + x[1] * x[1]) / 2.0);
        let lu = apply(&EllipticOperator::identity(2), &u, 0.0).unwrap();
        for v in lu.values() {
            assert!((v.re - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_field_maps_to_minus_lambda() {
        let u = GridFunction::from_real_fn(box_grid(16), |_| 1.0);
        let lu = apply(&EllipticOperator::identity(2), &u, 3.5).unwrap();
        for v in lu.values() {
            assert!((v.re + 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_residual_is_second_order() {
        let exact = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            (4.0 * r2 - 2.0 * 2.0 - 1.0) * (-r2).exp()
        };
        let mut errs = Vec::new();
        for n in [32usize, 64, 128] {
            let g = box_grid(n);
            let u = GridFunction::from_real_fn(g.clone(), |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
            let lu = apply(&EllipticOperator::identity(2), &u, 1.0).unwrap();
            let f = GridFunction::from_real_fn(g, exact);
            errs.push(lu.sub(&f).unwrap().max_abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn lambda_shift_is_exact() {
        let g = box_grid(16);
        let u = GridFunction::from_real_fn(g, |x| (x[0] * 0.3).sin() * (x[1] * PI / 6.0).cos());
        let op = EllipticOperator::constant(Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 0.4, 1.0)
            .unwrap()
            .with_drift(Arc::new(|x| vec![x[0].sin() * 0.5, 0.2]))
            .with_potential(Arc::new(|x| -0.5 * x[1].cos().abs()));
        let l0 = apply(&op, &u, 0.0).unwrap();
        let l2 = apply(&op, &u, 2.0).unwrap();
        let expect = l0.axpby(C64::new(1.0, 0.0), &u, C64::new(-2.0, 0.0)).unwrap();
        assert_eq!(l2.values(), expect.values());
    }

    #[test]
    fn apply_rejects_grid_mismatch() {
        let u = GridFunction::zeros(box_grid(8));
        assert!(apply(&EllipticOperator::identity(3), &u, 0.0).is_err());
    }

    #[test]
    fn interior_norm_of_residual_is_small() {
        let g = box_grid(64);
        let u = GridFunction::from_real_fn(g.clone(), |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let lu = apply(&EllipticOperator::identity(2), &u, 0.0).unwrap();
        let r = SubBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        assert!(lp_norm(&lu, 2.0, Some(&r)).unwrap() > 0.1);
    }
}
