//! Boundary-value problems on `x¹ > 0`, solved by extending data and
//! coefficients across the wall and calling the whole-space solver.
//!
//! Every problem lives on a half box `[0, X] × x′-box` whose `x′` axes are
//! periodic. The extended problem uses the full box `[−X, X] × x′-box` with
//! `2n − 1` nodes in `x¹`, so node `n − 1` sits exactly on the wall and the
//! nodes are exactly mirror-symmetric.

use std::sync::Arc;

use crate::coefficients::{
    apply, extend_odd_even, oblique_transform, EllipticOperator, MatrixField, ScalarField, VectorField,
};
use crate::diagnostics::slobodeckij_seminorm;
use crate::error::{Error, Result};
use crate::grid::{diff, lp_norm, xprime_multiplier, Axis, BoxGrid, GridFunction, C64};
use crate::whole_space::{self, sobolev_norms};

#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    /// `u = 0` on the wall.
    Dirichlet,
    /// `u_{x¹} = 0` on the wall.
    Neumann,
    /// `ℓʲu_{x^j} = g` with `ℓ¹ > 0`.
    Oblique { ell: Vec<f64>, g: GridFunction },
    /// `ℓʲu_{x^j} + σu = g` with `ℓ¹ > 0`.
    Robin { ell: Vec<f64>, sigma: f64, g: GridFunction },
}

impl BoundaryCondition {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Oblique { .. } => "oblique",
            BoundaryCondition::Robin { .. } => "robin",
        }
    }
}

#[derive(Clone, Debug)]
pub struct HalfSpaceProblem {
    pub op: EllipticOperator,
    pub f: GridFunction,
    pub bc: BoundaryCondition,
    pub lambda: f64,
}

impl HalfSpaceProblem {
    pub fn new(op: EllipticOperator, f: GridFunction, bc: BoundaryCondition, lambda: f64) -> Result<Self> {
        check_half_grid(f.grid())?;
        if op.dim() != f.grid().dim() {
            return Err(Error::invalid("operator and grid dimensions differ"));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("half-space solves need lambda > 0, got {lambda}")));
        }
        match &bc {
            BoundaryCondition::Oblique { ell, g } | BoundaryCondition::Robin { ell, g, .. } => {
                check_ell(ell, op.dim())?;
                check_trace(g, f.grid())?;
            }
            _ => {}
        }
        if let BoundaryCondition::Robin { sigma, .. } = &bc {
            if !sigma.is_finite() {
                return Err(Error::invalid("Robin coefficient must be finite"));
            }
        }
        Ok(HalfSpaceProblem { op, f, bc, lambda })
    }

    pub fn grid(&self) -> &Arc<BoxGrid> {
        self.f.grid_arc()
    }
}

fn check_half_grid(g: &BoxGrid) -> Result<()> {
    let a = g.axis(0);
    if a.periodic || a.lo != 0.0 {
        return Err(Error::invalid(format!(
            "half-space grids need a non-periodic x¹ axis starting at 0, got [{}, {}]",
            a.lo, a.hi
        )));
    }
    if g.axes()[1..].iter().any(|a| !a.periodic) {
        return Err(Error::invalid("half-space grids need periodic x′ axes"));
    }
    Ok(())
}

fn check_ell(ell: &[f64], dim: usize) -> Result<()> {
    if ell.len() != dim {
        return Err(Error::invalid(format!("oblique vector has {} entries, expected {dim}", ell.len())));
    }
    if !(ell[0] > 0.0) || ell.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("oblique vector needs a positive finite first entry, got {ell:?}")));
    }
    Ok(())
}

fn check_trace(g: &GridFunction, half: &BoxGrid) -> Result<()> {
    if *g.grid() != half.trace() {
        return Err(Error::invalid("boundary data must be sampled on the wall grid of the half box"));
    }
    Ok(())
}

/// The mirror-symmetric full box `[−X, X]` built from a half box `[0, X]`.
pub fn full_grid(half: &BoxGrid) -> Result<Arc<BoxGrid>> {
    check_half_grid(half)?;
    let a = half.axis(0);
    let mut axes = vec![Axis::new(-a.hi, a.hi, 2 * a.n - 1, false)?];
    axes.extend_from_slice(&half.axes()[1..]);
    Ok(Arc::new(BoxGrid::new(axes)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Odd,
    Even,
}

/// Extends a half-box field to the full box. The odd extension sets the wall
/// row to zero; the even one keeps it.
pub fn extend(f: &GridFunction, parity: Parity) -> Result<GridFunction> {
    let full = full_grid(f.grid())?;
    let n = f.grid().axis(0).n;
    let stride = f.grid().strides()[0];
    let mut vals = vec![C64::new(0.0, 0.0); full.len()];
    for i in 0..n {
        for r in 0..stride {
            let v = f.values()[i * stride + r];
            let (up, down) = ((n - 1 + i) * stride + r, (n - 1 - i) * stride + r);
            match parity {
                Parity::Even => {
                    vals[up] = v;
                    vals[down] = v;
                }
                Parity::Odd if i == 0 => {}
                Parity::Odd => {
                    vals[up] = v;
                    vals[down] = -v;
                }
            }
        }
    }
    GridFunction::scalar(full, vals)
}

/// The `x¹ ≥ 0` rows of a full-box field, on `half`.
pub fn restrict(u: &GridFunction, half: Arc<BoxGrid>) -> Result<GridFunction> {
    let full = full_grid(&half)?;
    if u.grid() != full.as_ref() {
        return Err(Error::invalid("field is not on the full box of this half box"));
    }
    let off = (half.axis(0).n - 1) * half.strides()[0];
    GridFunction::scalar(half.clone(), u.values()[off..off + half.len()].to_vec())
}

/// `u(−x¹, x′)` on a full box.
pub fn reflect(u: &GridFunction) -> GridFunction {
    let g = u.grid();
    let (n, stride) = (g.axis(0).n, g.strides()[0]);
    let vals = (0..g.len())
        .map(|k| {
            let (i, r) = (k / stride, k % stride);
            u.values()[(n - 1 - i) * stride + r]
        })
        .collect();
    GridFunction::scalar(u.grid_arc().clone(), vals).expect("same grid")
}

/// `‖part of the wrong parity‖₂ / ‖u‖₂` for a full-box field: the even part
/// when `parity` is odd and vice versa. Zero for `u = 0`.
pub fn parity_defect(u: &GridFunction, parity: Parity) -> f64 {
    let r = reflect(u);
    let sign = match parity {
        Parity::Odd => 1.0,
        Parity::Even => -1.0,
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in u.values().iter().zip(r.values()) {
        num += (0.5 * (a + b * sign)).norm_sqr();
        den += a.norm_sqr();
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

// Phase of a real shift by `s` along an axis; the unpaired Nyquist slot of a
// real field can only carry the cosine part.
fn shift_factor(xi: f64, s: f64, nyquist: bool) -> C64 {
    if nyquist {
        C64::new((xi * s).cos(), 0.0)
    } else {
        C64::from_polar(1.0, xi * s)
    }
}

/// `u(φ(x))` on a full box, `φ(x) = (−x¹, x′ − 2ℓ′x¹)`: each row is read from
/// its mirror row and shifted spectrally in `x′`.
pub fn shear_pullback(u: &GridFunction, ell: &[f64]) -> Result<GridFunction> {
    let g = u.grid();
    if ell.len() != g.dim() {
        return Err(Error::invalid("oblique vector dimension does not match the grid"));
    }
    let x1 = g.coords(0);
    xprime_multiplier(&reflect(u), |i0, mi| {
        let t = x1[i0];
        mi.xi
            .iter()
            .zip(&mi.nyquist)
            .zip(&ell[1..])
            .fold(C64::new(1.0, 0.0), |acc, ((&xi, &nq), &l)| acc * shift_factor(xi, -2.0 * l * t, nq))
    })
}

fn wall_row(u: &GridFunction) -> Result<GridFunction> {
    let stride = u.grid().strides()[0];
    GridFunction::scalar(Arc::new(u.grid().trace()), u.values()[..stride].to_vec())
}

fn broadcast(g: &GridFunction, half: Arc<BoxGrid>) -> GridFunction {
    let stride = half.strides()[0];
    let vals = (0..half.len()).map(|k| g.values()[k % stride]).collect();
    GridFunction::scalar(half, vals).expect("sizes match")
}

/// Smooth cutoff `η` with value, first and second derivative: `η ≡ 1` on
/// `(−∞, ½]`, `η ≡ 0` on `[1, ∞)`.
pub fn cutoff(s: f64) -> [f64; 3] {
    // ψ(t) = exp(−1/t) for t > 0, else 0, with its two derivatives
    let psi = |t: f64| -> [f64; 3] {
        if t <= 0.0 {
            return [0.0; 3];
        }
        let e = (-1.0 / t).exp();
        let (t2, t3) = (t * t, t * t * t);
        [e, e / t2, e * (1.0 / (t2 * t2) - 2.0 / t3)]
    };
    let [a0, a1, a2] = psi(2.0 - 2.0 * s);
    let [b0, b1, b2] = psi(2.0 * s - 1.0);
    let (a, da, dda) = (a0, -2.0 * a1, 4.0 * a2);
    let (b, db, ddb) = (b0, 2.0 * b1, 4.0 * b2);
    let sum = a + b;
    let ds = da + db;
    let num = da * b - a * db;
    let dnum = dda * b - a * ddb;
    [a / sum, num / (sum * sum), (dnum * sum - 2.0 * num * ds) / (sum * sum * sum)]
}

/// A field with zero trace and prescribed normal derivative on the wall.
#[derive(Clone, Debug)]
pub struct TraceLift {
    /// `v(x¹, x′) = x¹ η(√λ̄ x¹) (S_{x¹} g)(x′)` on the half box.
    pub v: GridFunction,
    pub g: GridFunction,
    /// `λ ∨ 1`.
    pub lambda_bar: f64,
    /// `v_{x¹}(0, ·)` from the closed form, `(S_0 g)(x′)`.
    pub wall_derivative: GridFunction,
    /// `v_{x¹}(0, ·)` from the one-sided second-order stencil.
    pub wall_derivative_stencil: GridFunction,
    /// `(‖v‖ₚ, ‖v_x‖ₚ, ‖v_xx‖ₚ)` on the half box.
    pub norms: [f64; 3],
    /// `λ‖v‖ₚ + √λ‖v_x‖ₚ + ‖v_xx‖ₚ`.
    pub lhs: f64,
}

/// Builds the trace lift of `g` on `half`. `S_t` multiplies the `x′` Fourier
/// coefficients by `exp(−t²|ξ|²/2)`, a Gaussian smoothing of width `t`.
///
/// The cutoff falls from 1 to 0 over an `x¹` interval of length
/// `1/(2√(λ∨1))`; reductions built on the lift are only accurate once that
/// interval spans several grid cells.
pub fn lift_trace(g: &GridFunction, half: Arc<BoxGrid>, lambda: f64, p: f64) -> Result<TraceLift> {
    check_half_grid(&half)?;
    check_trace(g, &half)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lift_trace needs lambda >= 0, got {lambda}")));
    }
    let lambda_bar = lambda.max(1.0);
    let x1 = half.coords(0);
    let smoothed = xprime_multiplier(&broadcast(g, half.clone()), |i0, mi| {
        let t = x1[i0];
        C64::new((-0.5 * t * t * mi.xi_norm_sqr()).exp(), 0.0)
    })?;
    let stride = half.strides()[0];
    let root = lambda_bar.sqrt();
    let vals: Vec<C64> = smoothed
        .values()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let t = x1[k / stride];
            s * (t * cutoff(root * t)[0])
        })
        .collect();
    let v = GridFunction::scalar(half.clone(), vals)?;
    let wall_derivative = wall_row(&smoothed)?;
    let wall_derivative_stencil = wall_row(&diff(&v, 0, 1)?)?;
    let norms = sobolev_norms(&v, p, None)?;
    let lhs = lambda * norms[0] + lambda.sqrt() * norms[1] + norms[2];
    Ok(TraceLift { v, g: g.clone(), lambda_bar, wall_derivative, wall_derivative_stencil, norms, lhs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to ten times the number of unknowns.
    pub maxiter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: whole_space::DEFAULT_TOL, maxiter: None }
    }
}

#[derive(Clone, Debug)]
pub struct HalfSpaceSolution {
    /// The solution on the half box.
    pub u: GridFunction,
    /// The solution of the extended whole-space problem.
    pub whole: GridFunction,
    /// Relative residual of the whole-space linear solve.
    pub residual: f64,
    pub iterations: usize,
    /// Wrong-parity fraction of `whole` (Dirichlet and Neumann only).
    pub symmetry_defect: Option<f64>,
    /// `max |u(0, ·)|`.
    pub wall_value: f64,
    /// Pointwise boundary-condition defect on the wall grid. Dirichlet uses
    /// the cubic extrapolation `3u₁ − 3u₂ + u₃` of the trace, since the wall
    /// node itself vanishes by symmetry.
    pub boundary_defect: GridFunction,
    /// `max_{x¹<0} |w(x) − u⁺(φ(x))|` (oblique and Robin only).
    pub mirror_defect: Option<f64>,
    pub lift: Option<TraceLift>,
}

impl HalfSpaceSolution {
    pub fn boundary_residual(&self, p: f64) -> Result<f64> {
        lp_norm(&self.boundary_defect, p, None)
    }

    pub fn boundary_sup(&self) -> f64 {
        self.boundary_defect.max_abs()
    }
}

fn whole_solve(op: &EllipticOperator, f: &GridFunction, lambda: f64, opts: &SolveOptions) -> Result<whole_space::Solution> {
    let maxiter = opts.maxiter.unwrap_or(10 * f.grid().len());
    whole_space::solve_problem_with(op, f, lambda, opts.tol, maxiter)
}

fn reflected(prob: &HalfSpaceProblem, parity: Parity, opts: &SolveOptions) -> Result<(whole_space::Solution, GridFunction)> {
    let op = extend_odd_even(&prob.op);
    let f = extend(&prob.f, parity)?;
    let sol = whole_solve(&op, &f, prob.lambda, opts)?;
    let u = restrict(&sol.u, prob.grid().clone())?;
    Ok((sol, u))
}

/// `Lu − λu = f` on `x¹ > 0`, `u = 0` on the wall, through the odd
/// extension.
pub fn solve_dirichlet(prob: &HalfSpaceProblem, opts: &SolveOptions) -> Result<HalfSpaceSolution> {
    if !matches!(prob.bc, BoundaryCondition::Dirichlet) {
        return Err(Error::invalid(format!("solve_dirichlet got a {} problem", prob.bc.name())));
    }
    let (sol, u) = reflected(prob, Parity::Odd, opts)?;
    let stride = u.grid().strides()[0];
    let uv = u.values();
    let defect: Vec<C64> =
        (0..stride).map(|r| uv[stride + r] * 3.0 - uv[2 * stride + r] * 3.0 + uv[3 * stride + r]).collect();
    Ok(HalfSpaceSolution {
        wall_value: wall_row(&u)?.max_abs(),
        boundary_defect: GridFunction::scalar(Arc::new(u.grid().trace()), defect)?,
        symmetry_defect: Some(parity_defect(&sol.u, Parity::Odd)),
        residual: sol.residual,
        iterations: sol.iterations,
        whole: sol.u,
        u,
        mirror_defect: None,
        lift: None,
    })
}

/// `Lu − λu = f` on `x¹ > 0`, `u_{x¹} = 0` on the wall, through the even
/// extension.
pub fn solve_neumann(prob: &HalfSpaceProblem, opts: &SolveOptions) -> Result<HalfSpaceSolution> {
    if !matches!(prob.bc, BoundaryCondition::Neumann) {
        return Err(Error::invalid(format!("solve_neumann got a {} problem", prob.bc.name())));
    }
    let (sol, u) = reflected(prob, Parity::Even, opts)?;
    Ok(HalfSpaceSolution {
        wall_value: wall_row(&u)?.max_abs(),
        boundary_defect: wall_row(&diff(&u, 0, 1)?)?,
        symmetry_defect: Some(parity_defect(&sol.u, Parity::Even)),
        residual: sol.residual,
        iterations: sol.iterations,
        whole: sol.u,
        u,
        mirror_defect: None,
        lift: None,
    })
}

/// Divides `ℓ` and `g` by `ℓ¹`.
pub fn normalize_oblique(ell: &[f64], g: &GridFunction) -> Result<(Vec<f64>, GridFunction)> {
    check_ell(ell, ell.len().max(1))?;
    let l1 = ell[0];
    Ok((ell.iter().map(|v| v / l1).collect(), g.scale(C64::new(1.0 / l1, 0.0))))
}

/// `ℓʲu_{x^j}(0, ·)` with the one-sided stencil in `x¹`.
fn oblique_trace(u: &GridFunction, ell: &[f64]) -> Result<GridFunction> {
    let mut acc = wall_row(&diff(u, 0, 1)?)?.scale(C64::new(ell[0], 0.0));
    for (j, &l) in ell.iter().enumerate().skip(1) {
        if l != 0.0 {
            acc = acc.axpby(C64::new(1.0, 0.0), &wall_row(&diff(u, j, 1)?)?, C64::new(l, 0.0))?;
        }
    }
    Ok(acc)
}

/// `Lu − λu = f` on `x¹ > 0` with `ℓʲu_{x^j} = g` on the wall.
///
/// With `φ` the shear reflection and `v` the trace lift of the normalised
/// `g`, solves `L̂w − λw = f̂` on the full box, where `L̂` is the pulled-back
/// operator and `f̂ = f − 2(Lv − λv)` on `x¹ ≥ 0`, `f̂ = f∘φ` on `x¹ < 0`;
/// then `u = w + 2v`.
pub fn solve_oblique(prob: &HalfSpaceProblem, opts: &SolveOptions) -> Result<HalfSpaceSolution> {
    let BoundaryCondition::Oblique { ell, g } = &prob.bc else {
        return Err(Error::invalid(format!("solve_oblique got a {} problem", prob.bc.name())));
    };
    let (ell, g) = normalize_oblique(ell, g)?;
    let half = prob.grid().clone();
    let op_hat = oblique_transform(&prob.op, &ell)?;
    let lift = lift_trace(&g, half.clone(), prob.lambda, 2.0)?;

    let lv = apply(&prob.op, &lift.v, prob.lambda)?;
    let upper = prob.f.axpby(C64::new(1.0, 0.0), &lv, C64::new(-2.0, 0.0))?;
    let lower = shear_pullback(&extend(&prob.f, Parity::Even)?, &ell)?;
    let n = half.axis(0).n;
    let stride = half.strides()[0];
    let split = (n - 1) * stride;
    let mut fhat = lower.values()[..split].to_vec();
    fhat.extend_from_slice(upper.values());
    let fhat = GridFunction::scalar(lower.grid_arc().clone(), fhat)?;

    let sol = whole_solve(&op_hat, &fhat, prob.lambda, opts)?;
    let w_half = restrict(&sol.u, half.clone())?;
    let u = w_half.axpby(C64::new(1.0, 0.0), &lift.v, C64::new(2.0, 0.0))?;

    let mirrored = shear_pullback(&extend(&u, Parity::Even)?, &ell)?;
    let mirror = sol.u.values()[..split]
        .iter()
        .zip(&mirrored.values()[..split])
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let defect = oblique_trace(&u, &ell)?.sub(&g)?;
    Ok(HalfSpaceSolution {
        wall_value: wall_row(&u)?.max_abs(),
        boundary_defect: defect,
        symmetry_defect: None,
        residual: sol.residual,
        iterations: sol.iterations,
        whole: sol.u,
        u,
        mirror_defect: Some(mirror),
        lift: Some(lift),
    })
}

/// Robin data moved into the operator by the substitution `u = h v`,
/// `h(x¹) = exp(−σ x¹ χ(x¹))` with `χ(t) = η((1 + t)/2)`: flat and equal to 1
/// at the wall, zero beyond 1, with the transition spread over `[0, 1]` to
/// keep `h″/h` small.
#[derive(Clone, Debug)]
pub struct RobinReduction {
    /// Oblique problem for `v`, with `L̄φ = h⁻¹L(hφ)` and forcing `f/h`.
    pub problem: HalfSpaceProblem,
    /// Normalised Robin coefficient (divided by `ℓ¹`).
    pub sigma: f64,
    /// `sup |h′/h|` and `sup |h″/h|`.
    pub weight_sup: [f64; 2],
    /// Declared `K` of the reduced operator.
    pub k_bar: f64,
}

/// `(h, h′, h″)` at `t` for the Robin weight with coefficient `sigma`.
pub fn robin_weight(sigma: f64, t: f64) -> [f64; 3] {
    let [e0, e1, e2] = cutoff(0.5 * (1.0 + t));
    let (c0, c1, c2) = (e0, 0.5 * e1, 0.25 * e2);
    let q = c0 + t * c1;
    let dq = 2.0 * c1 + t * c2;
    let h = (-sigma * t * c0).exp();
    [h, -sigma * q * h, (sigma * sigma * q * q - sigma * dq) * h]
}

impl RobinReduction {
    pub fn weight(&self, t: f64) -> [f64; 3] {
        robin_weight(self.sigma, t)
    }

    /// `u = h v`.
    pub fn recover(&self, v: &GridFunction) -> Result<GridFunction> {
        if v.grid() != self.problem.grid().as_ref() {
            return Err(Error::invalid("field is not on the problem's grid"));
        }
        let x1 = v.grid().coords(0);
        let stride = v.grid().strides()[0];
        let vals = v.values().iter().enumerate().map(|(k, z)| z * self.weight(x1[k / stride])[0]).collect();
        GridFunction::scalar(v.grid_arc().clone(), vals)
    }
}

pub fn robin_reduce(prob: &HalfSpaceProblem) -> Result<RobinReduction> {
    let BoundaryCondition::Robin { ell, sigma, g } = &prob.bc else {
        return Err(Error::invalid(format!("robin_reduce got a {} problem", prob.bc.name())));
    };
    let sigma = sigma / ell[0];
    let (ell, g) = normalize_oblique(ell, g)?;
    let op = &prob.op;
    let d = op.dim();

    let samples = 20_001;
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for k in 0..samples {
        let [h, h1, h2] = robin_weight(sigma, k as f64 / (samples - 1) as f64);
        s1 = s1.max((h1 / h).abs());
        s2 = s2.max((h2 / h).abs());
    }
    let (delta, k) = (op.delta(), op.k_bound());
    let k_bar = k + 2.0 * s1 / delta + s2 / delta + k * s1;

    let a: MatrixField = op.a_field().clone();
    let b_old = op.b_field().cloned();
    let c_old = op.c_field().cloned();
    let (a2, b2) = (a.clone(), b_old.clone());
    let b_bar: VectorField = Arc::new(move |x: &[f64]| {
        let [h, h1, _] = robin_weight(sigma, x[0]);
        let m = a2(x);
        let mut b = b2.as_ref().map_or_else(|| vec![0.0; d], |f| f(x));
        for (j, bj) in b.iter_mut().enumerate() {
            *bj += 2.0 * m[(j, 0)] * h1 / h;
        }
        b
    });
    let c_bar: ScalarField = Arc::new(move |x: &[f64]| {
        let [h, h1, h2] = robin_weight(sigma, x[0]);
        let b1 = b_old.as_ref().map_or(0.0, |f| f(x)[0]);
        let c = c_old.as_ref().map_or(0.0, |f| f(x));
        c + (a(x)[(0, 0)] * h2 + b1 * h1) / h
    });
    let mut reduced = EllipticOperator::new(d, op.a_field().clone(), delta, k_bar)?;
    if sigma != 0.0 || op.b_field().is_some() {
        reduced = reduced.with_drift(b_bar);
    }
    if sigma != 0.0 || op.c_field().is_some() {
        reduced = reduced.with_potential(c_bar);
    }
    let x1 = prob.grid().coords(0);
    let stride = prob.grid().strides()[0];
    let fvals = prob.f.values().iter().enumerate().map(|(k, z)| z / robin_weight(sigma, x1[k / stride])[0]).collect();
    let f = GridFunction::scalar(prob.grid().clone(), fvals)?;
    let problem = HalfSpaceProblem::new(reduced, f, BoundaryCondition::Oblique { ell, g }, prob.lambda)?;
    Ok(RobinReduction { problem, sigma, weight_sup: [s1, s2], k_bar })
}

/// Robin problem through [`robin_reduce`], [`solve_oblique`] and `u = hv`.
pub fn solve_robin(prob: &HalfSpaceProblem, opts: &SolveOptions) -> Result<HalfSpaceSolution> {
    let red = robin_reduce(prob)?;
    let mut sol = solve_oblique(&red.problem, opts)?;
    let BoundaryCondition::Oblique { ell, g } = &red.problem.bc else { unreachable!() };
    let u = red.recover(&sol.u)?;
    let trace = oblique_trace(&u, ell)?;
    let wall = wall_row(&u)?;
    sol.boundary_defect = trace.axpby(C64::new(1.0, 0.0), &wall, C64::new(red.sigma, 0.0))?.sub(g)?;
    sol.wall_value = wall.max_abs();
    sol.u = u;
    Ok(sol)
}

/// Dispatches on the boundary condition.
pub fn solve(prob: &HalfSpaceProblem, opts: &SolveOptions) -> Result<HalfSpaceSolution> {
    match prob.bc {
        BoundaryCondition::Dirichlet => solve_dirichlet(prob, opts),
        BoundaryCondition::Neumann => solve_neumann(prob, opts),
        BoundaryCondition::Oblique { .. } => solve_oblique(prob, opts),
        BoundaryCondition::Robin { .. } => solve_robin(prob, opts),
    }
}

/// `(λ‖u‖ₚ + √λ‖u_x‖ₚ + ‖u_xx‖ₚ) / (‖f‖ₚ + (λ∨1)^{s/2}‖g‖ₚ + [g]_s)` on
/// the half box, `s = 1 − 1/p`.
pub fn oblique_estimate_ratio(u: &GridFunction, f: &GridFunction, g: &GridFunction, lambda: f64, p: f64) -> Result<f64> {
    if !u.same_grid(f) {
        return Err(Error::invalid("solution and forcing live on different grids"));
    }
    check_trace(g, u.grid())?;
    let s = 1.0 - 1.0 / p;
    let fnorm = lp_norm(f, p, None)?;
    let gnorm = lp_norm(g, p, None)?;
    let semi = if s > 0.0 && gnorm > 0.0 { slobodeckij_seminorm(g, s, p)? } else { 0.0 };
    let den = fnorm + lambda.max(1.0).powf(0.5 * s) * gnorm + semi;
    if !(den > 0.0) {
        return Err(Error::invalid("oblique_estimate_ratio needs nonzero data"));
    }
    let [n0, n1, n2] = sobolev_norms(u, p, None)?;
    Ok((lambda * n0 + lambda.sqrt() * n1 + n2) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Mat;
    use crate::manufactured::{Manufactured, Profile};
    use crate::whole_space::apriori_ratio;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn half(n1: usize, m: usize) -> Arc<BoxGrid> {
        Arc::new(BoxGrid::standard(2, (0.0, 4.0), n1, (-PI, PI), m).unwrap())
    }

    fn smooth_op() -> EllipticOperator {
        let a: MatrixField = Arc::new(|x: &[f64]| {
            let off = 0.4 + 0.3 * x[0].sin() * x[1].cos();
            Mat::from_row_slice(2, 2, &[2.0 + x[0].cos(), off, off, 1.5 + 0.5 * x[1].sin()])
        });
        EllipticOperator::new(2, a, 0.2, 2.0)
            .unwrap()
            .with_drift(Arc::new(|x: &[f64]| vec![0.3 * x[1].cos(), 0.2]))
            .with_potential(Arc::new(|x: &[f64]| -0.5 - 0.2 * x[0].sin()))
    }

    fn bump() -> Profile {
        Profile::PeriodicBump { center: 0.3, period: 2.0 * PI, kappa: 1.0 }
    }

    fn manufactured(first: Profile) -> Manufactured {
        Manufactured::new(vec![first, bump()])
    }

    fn exact_error(u: &GridFunction, m: &Manufactured) -> f64 {
        let exact = m.sample(u.grid_arc().clone()).unwrap();
        u.sub(&exact).unwrap().max_abs()
    }

    fn trig(grid: Arc<BoxGrid>, k: f64, phase: f64) -> GridFunction {
        GridFunction::from_real_fn(grid, |x| (k * x[0] + phase).sin() + 0.5)
    }

    #[test]
    fn full_grid_is_exactly_mirror_symmetric() {
        let full = full_grid(&BoxGrid::standard(2, (0.0, 3.0), 41, (-PI, PI), 8).unwrap()).unwrap();
        let a = full.axis(0);
        assert_eq!(a.n, 81);
        assert_eq!(a.coord(40), 0.0);
        for i in 0..a.n {
            assert_eq!(a.coord(i), -a.coord(a.n - 1 - i));
        }
        assert!(full_grid(&BoxGrid::standard(2, (-1.0, 3.0), 41, (-PI, PI), 8).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn extension_restricts_back(seed in 0u64..1000, odd in any::<bool>()) {
            let g = half(9, 6);
            let f = GridFunction::from_real_fn(g.clone(), |x| ((seed as f64 + 1.0) * x[0] + x[1]).cos());
            let parity = if odd { Parity::Odd } else { Parity::Even };
            let e = extend(&f, parity).unwrap();
            let back = restrict(&e, g.clone()).unwrap();
            let stride = g.strides()[0];
            for k in 0..g.len() {
                if k >= stride || !odd {
                    prop_assert_eq!(back.values()[k], f.values()[k]);
                } else {
                    prop_assert_eq!(back.values()[k].norm(), 0.0);
                }
            }
            let twice = reflect(&reflect(&e));
            prop_assert_eq!(twice.values(), e.values());
            prop_assert!(parity_defect(&e, parity) == 0.0);
        }
    }

    #[test]
    fn cutoff_is_flat_then_vanishes_with_matching_derivatives() {
        assert_eq!(cutoff(-1.0), [1.0, 0.0, 0.0]);
        assert_eq!(cutoff(0.5), [1.0, 0.0, 0.0]);
        assert_eq!(cutoff(1.0), [0.0, 0.0, 0.0]);
        let h = 1e-5;
        for k in 1..40 {
            let s = 0.5 + k as f64 / 80.0;
            let [v, d1, d2] = cutoff(s);
            assert!((0.0..=1.0).contains(&v));
            let (p, m) = (cutoff(s + h)[0], cutoff(s - h)[0]);
            assert!(((p - m) / (2.0 * h) - d1).abs() < 1e-5 * (1.0 + d1.abs()), "d1 at {s}");
            assert!(((p - 2.0 * v + m) / (h * h) - d2).abs() < 1e-3 * (1.0 + d2.abs()), "d2 at {s}");
        }
    }

    #[test]
    fn shear_pullback_is_an_involution() {
        let g = half(33, 32);
        let f = extend(&manufactured(Profile::Gaussian { center: 0.5, width: 1.0 }).sample(g).unwrap(), Parity::Even).unwrap();
        let ell = [1.0, 0.35];
        let twice = shear_pullback(&shear_pullback(&f, &ell).unwrap(), &ell).unwrap();
        assert!(twice.sub(&f).unwrap().max_abs() < 1e-10);
        // a pure x¹ reflection when ℓ′ = 0
        let plain = shear_pullback(&f, &[1.0, 0.0]).unwrap();
        assert!(plain.sub(&reflect(&f)).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = half(17, 8);
        let zero = GridFunction::zeros(g.clone());
        let gz = GridFunction::zeros(Arc::new(g.trace()));
        for bc in [
            BoundaryCondition::Dirichlet,
            BoundaryCondition::Neumann,
            BoundaryCondition::Oblique { ell: vec![1.0, 0.4], g: gz.clone() },
            BoundaryCondition::Robin { ell: vec![1.0, 0.4], sigma: 0.7, g: gz.clone() },
        ] {
            let prob = HalfSpaceProblem::new(smooth_op(), zero.clone(), bc, 2.0).unwrap();
            let sol = solve(&prob, &SolveOptions::default()).unwrap();
            assert_eq!(sol.u.max_abs(), 0.0);
        }
        let lift = lift_trace(&gz, g, 1.0, 2.0).unwrap();
        assert_eq!(lift.v.max_abs(), 0.0);
        assert_eq!(lift.lhs, 0.0);
    }

    #[test]
    fn dirichlet_recovers_odd_manufactured_solution() {
        let m = manufactured(Profile::OddGaussian { width: 1.0 });
        let mut errs = Vec::new();
        for (n1, m1) in [(33, 16), (65, 32)] {
            let g = half(n1, m1);
            let f = m.forcing(&smooth_op(), 3.0, g).unwrap();
            let prob = HalfSpaceProblem::new(smooth_op(), f, BoundaryCondition::Dirichlet, 3.0).unwrap();
            let sol = solve_dirichlet(&prob, &SolveOptions::default()).unwrap();
            assert!(sol.symmetry_defect.unwrap() <= 1e-8);
            assert!(sol.wall_value <= 1e-10);
            errs.push((exact_error(&sol.u, &m), sol.boundary_sup()));
        }
        assert!(errs[1].0 < 0.35 * errs[0].0 && errs[1].0 < 5e-3, "{errs:?}");
        assert!(errs[1].1 < 0.5 * errs[0].1, "{errs:?}");
    }

    #[test]
    fn neumann_recovers_even_manufactured_solution() {
        let m = manufactured(Profile::Gaussian { center: 0.0, width: 1.0 });
        let mut errs = Vec::new();
        for (n1, m1) in [(33, 16), (65, 32)] {
            let g = half(n1, m1);
            let f = m.forcing(&smooth_op(), 3.0, g).unwrap();
            let prob = HalfSpaceProblem::new(smooth_op(), f, BoundaryCondition::Neumann, 3.0).unwrap();
            let sol = solve_neumann(&prob, &SolveOptions::default()).unwrap();
            assert!(sol.symmetry_defect.unwrap() <= 1e-8);
            errs.push((exact_error(&sol.u, &m), sol.boundary_sup()));
        }
        assert!(errs[1].0 < 0.35 * errs[0].0, "{errs:?}");
        assert!(errs[1].1 < 0.5 * errs[0].1, "{errs:?}");
        assert!(matches!(
            solve_neumann(
                &HalfSpaceProblem::new(smooth_op(), GridFunction::zeros(half(9, 8)), BoundaryCondition::Dirichlet, 1.0).unwrap(),
                &SolveOptions::default()
            ),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn lift_of_constant_data_is_the_cutoff_profile() {
        let g = half(65, 16);
        let one = GridFunction::from_real_fn(Arc::new(g.trace()), |_| 1.0);
        for lambda in [0.25, 1.0, 9.0] {
            let lift = lift_trace(&one, g.clone(), lambda, 2.0).unwrap();
            let root = lambda.max(1.0).sqrt();
            let expect = GridFunction::from_real_fn(g.clone(), |x| x[0] * cutoff(root * x[0])[0]);
            assert!(lift.v.sub(&expect).unwrap().max_abs() < 1e-14);
            assert!(lift.wall_derivative.sub(&one).unwrap().max_abs() < 1e-14);
            assert!(lift.lhs.is_finite() && lift.lhs > 0.0);
        }
    }

    #[test]
    fn lift_matches_wall_data() {
        let mut stencil_err = Vec::new();
        for n1 in [65, 129] {
            let g = half(n1, 32);
            let data = GridFunction::from_real_fn(Arc::new(g.trace()), |x| x[0].sin());
            let lift = lift_trace(&data, g.clone(), 4.0, 2.0).unwrap();
            let stride = g.strides()[0];
            assert!(lift.v.values()[..stride].iter().all(|v| v.norm() == 0.0));
            assert!(lift.wall_derivative.sub(&data).unwrap().max_abs() < 1e-10);
            stencil_err.push(lift.wall_derivative_stencil.sub(&data).unwrap().max_abs());
        }
        let order = (stencil_err[0] / stencil_err[1]).log2();
        assert!(order > 1.8, "one-sided wall derivative order {order}");
        assert!(lift_trace(&GridFunction::zeros(Arc::new(half(9, 8).trace())), half(9, 8), -1.0, 2.0).is_err());
    }

    #[test]
    fn oblique_recovers_manufactured_solution() {
        let m = manufactured(Profile::Gaussian { center: 0.5, width: 1.0 });
        let ell = vec![1.0, 0.3];
        let mut rows = Vec::new();
        for n1 in [33, 65] {
            let g = half(n1, 32);
            let f = m.forcing(&smooth_op(), 3.0, g.clone()).unwrap();
            let data = GridFunction::from_real_fn(Arc::new(g.trace()), |x| {
                let grad = m.gradient(&[0.0, x[0]]);
                grad[0] + 0.3 * grad[1]
            });
            let prob = HalfSpaceProblem::new(smooth_op(), f, BoundaryCondition::Oblique { ell: ell.clone(), g: data }, 3.0).unwrap();
            let sol = solve_oblique(&prob, &SolveOptions::default()).unwrap();
            rows.push((exact_error(&sol.u, &m), sol.boundary_residual(2.0).unwrap(), sol.mirror_defect.unwrap()));
        }
        assert!(rows[1].0 < 0.5 * rows[0].0 && rows[1].0 < 2e-2, "{rows:?}");
        assert!(rows[1].1 < 0.6 * rows[0].1, "{rows:?}");
        assert!(rows[1].2 < rows[0].2 && rows[1].2 < 5e-2, "{rows:?}");
    }

    #[test]
    fn oblique_scaling_of_ell_is_normalised_away() {
        let g = half(17, 16);
        let f = trig(g.clone(), 1.3, 0.2).map(|v| v * (-1.0));
        let data = GridFunction::from_real_fn(Arc::new(g.trace()), |x| x[0].cos());
        let base = HalfSpaceProblem::new(smooth_op(), f.clone(), BoundaryCondition::Oblique { ell: vec![1.0, 0.3], g: data.clone() }, 2.0).unwrap();
        let scaled = HalfSpaceProblem::new(
            smooth_op(),
            f,
            BoundaryCondition::Oblique { ell: vec![2.0, 0.6], g: data.scale(C64::new(2.0, 0.0)) },
            2.0,
        )
        .unwrap();
        let opts = SolveOptions { tol: 1e-12, maxiter: None };
        let (a, b) = (solve_oblique(&base, &opts).unwrap(), solve_oblique(&scaled, &opts).unwrap());
        assert!(a.u.sub(&b.u).unwrap().max_abs() < 1e-9);
        let bad = HalfSpaceProblem { bc: BoundaryCondition::Oblique { ell: vec![-1.0, 0.3], g: data }, ..base };
        assert!(matches!(solve_oblique(&bad, &opts), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn normal_oblique_agrees_with_neumann() {
        let m = manufactured(Profile::Gaussian { center: 0.0, width: 1.0 });
        let mut gaps = Vec::new();
        for n1 in [17, 33] {
            let g = half(n1, 16);
            let f = m.forcing(&smooth_op(), 3.0, g.clone()).unwrap();
            let zero = GridFunction::zeros(Arc::new(g.trace()));
            let neu = solve_neumann(&HalfSpaceProblem::new(smooth_op(), f.clone(), BoundaryCondition::Neumann, 3.0).unwrap(), &SolveOptions::default()).unwrap();
            let obl = solve_oblique(
                &HalfSpaceProblem::new(smooth_op(), f, BoundaryCondition::Oblique { ell: vec![1.0, 0.0], g: zero }, 3.0).unwrap(),
                &SolveOptions::default(),
            )
            .unwrap();
            gaps.push(neu.u.sub(&obl.u).unwrap().max_abs());
        }
        // the even solution has a vanishing discrete mixed derivative on the
        // wall, so the zeroed wall coefficients make no difference at all
        assert!(gaps.iter().all(|&g| g < 1e-8), "{gaps:?}");
    }

    fn robin_problem(sigma: f64, g: Arc<BoxGrid>) -> HalfSpaceProblem {
        let data = GridFunction::from_real_fn(Arc::new(g.trace()), |x| 0.5 * x[0].cos());
        HalfSpaceProblem::new(
            smooth_op(),
            trig(g, 0.9, 0.1),
            BoundaryCondition::Robin { ell: vec![1.0, 0.25], sigma, g: data },
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn robin_with_zero_sigma_is_the_identity_reduction() {
        let g = half(17, 8);
        let prob = robin_problem(0.0, g.clone());
        let red = robin_reduce(&prob).unwrap();
        assert_eq!(red.weight_sup, [0.0, 0.0]);
        assert_eq!(red.k_bar, prob.op.k_bound());
        assert_eq!(red.problem.f.values(), prob.f.values());
        for i in 0..g.len() {
            let x = g.point(i);
            assert_eq!(red.problem.op.a_at(&x), prob.op.a_at(&x));
            assert_eq!(red.problem.op.b_at(&x), prob.op.b_at(&x));
            assert_eq!(red.problem.op.c_at(&x), prob.op.c_at(&x));
        }
    }

    #[test]
    fn robin_weight_has_the_prescribed_wall_slope() {
        for sigma in [-1.5, 0.3, 2.0] {
            let [h, h1, _] = robin_weight(sigma, 0.0);
            assert_eq!(h, 1.0);
            assert!((h1 + sigma * h).abs() < 1e-15);
            assert_eq!(robin_weight(sigma, 1.5), [1.0, 0.0, 0.0]);
            assert_eq!(robin_weight(sigma, -0.5), [(0.5 * sigma).exp(), -sigma * (0.5 * sigma).exp(), sigma * sigma * (0.5 * sigma).exp()]);
            let hh = 1e-5;
            for t in [0.2, 0.6, 0.8] {
                let [v, d1, d2] = robin_weight(sigma, t);
                let (p, m) = (robin_weight(sigma, t + hh)[0], robin_weight(sigma, t - hh)[0]);
                assert!(((p - m) / (2.0 * hh) - d1).abs() < 1e-6 * (1.0 + d1.abs()));
                assert!(((p - 2.0 * v + m) / (hh * hh) - d2).abs() < 1e-3 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn reduced_operator_satisfies_the_product_rule() {
        let g = half(17, 8);
        let sigma = 1.3;
        let red = robin_reduce(&robin_problem(sigma, g)).unwrap();
        let op = smooth_op();
        let v = Manufactured::new(vec![Profile::Wave { k: 1.7, phase: 0.3 }, Profile::Gaussian { center: 0.2, width: 0.9 }]);
        for k in 0..50 {
            let x = [k as f64 / 40.0, -1.0 + 0.07 * k as f64];
            let [h, h1, h2] = robin_weight(sigma, x[0]);
            let (v0, dv, hv) = (v.value(&x), v.gradient(&x), v.hessian(&x));
            // derivatives of w = h v by the product rule, then L w directly
            let dw = [h1 * v0 + h * dv[0], h * dv[1]];
            let hw = [
                [h2 * v0 + 2.0 * h1 * dv[0] + h * hv[0][0], h1 * dv[1] + h * hv[0][1]],
                [h1 * dv[1] + h * hv[1][0], h * hv[1][1]],
            ];
            let (a, b, c) = (op.a_at(&x), op.b_at(&x), op.c_at(&x));
            let mut lw = c * h * v0;
            for j in 0..2 {
                lw += b[j] * dw[j];
                for l in 0..2 {
                    lw += a[(j, l)] * hw[j][l];
                }
            }
            let rhs = h * (v.forcing_at(&red.problem.op, 0.0, &x));
            assert!((lw - rhs).abs() < 1e-10 * (1.0 + lw.abs()), "at {x:?}: {lw} vs {rhs}");
        }
        let k = op.k_bound();
        let [s1, s2] = red.weight_sup;
        assert!(s1 >= sigma && red.k_bar >= k + s2 / op.delta());
    }

    #[test]
    fn robin_recovers_manufactured_solution() {
        let m = manufactured(Profile::Gaussian { center: 0.5, width: 1.0 });
        let (ell, sigma) = ([1.0, 0.25], 0.8);
        let mut errs = Vec::new();
        for n1 in [65, 129] {
            let g = half(n1, 32);
            let f = m.forcing(&smooth_op(), 3.0, g.clone()).unwrap();
            let data = GridFunction::from_real_fn(Arc::new(g.trace()), |x| {
                let p = [0.0, x[0]];
                let grad = m.gradient(&p);
                ell[0] * grad[0] + ell[1] * grad[1] + sigma * m.value(&p)
            });
            let prob = HalfSpaceProblem::new(smooth_op(), f, BoundaryCondition::Robin { ell: ell.to_vec(), sigma, g: data }, 3.0).unwrap();
            let sol = solve_robin(&prob, &SolveOptions::default()).unwrap();
            errs.push((exact_error(&sol.u, &m), sol.boundary_sup()));
        }
        assert!(errs[1].0 < 0.7 * errs[0].0 && errs[1].0 < 2e-2, "{errs:?}");
        assert!(errs[1].1 < 0.7 * errs[0].1, "{errs:?}");
    }

    #[test]
    fn estimate_ratio_edge_cases() {
        let g = half(17, 16);
        let f = trig(g.clone(), 1.0, 0.0);
        let zero_g = GridFunction::zeros(Arc::new(g.trace()));
        assert_eq!(oblique_estimate_ratio(&GridFunction::zeros(g.clone()), &f, &zero_g, 2.0, 2.0).unwrap(), 0.0);
        let u = trig(g.clone(), 0.7, 0.4);
        let r = oblique_estimate_ratio(&u, &f, &zero_g, 2.0, 3.0).unwrap();
        assert!((r - apriori_ratio(&u, &f, 2.0, 3.0, None).unwrap()).abs() < 1e-14);
        let zf = GridFunction::zeros(g.clone());
        assert!(matches!(oblique_estimate_ratio(&u, &zf, &zero_g, 2.0, 2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn problem_validation() {
        let g = half(9, 8);
        let f = GridFunction::zeros(g.clone());
        let wrong = GridFunction::zeros(Arc::new(half(9, 6).trace()));
        assert!(HalfSpaceProblem::new(smooth_op(), f.clone(), BoundaryCondition::Oblique { ell: vec![1.0, 0.0], g: wrong }, 1.0).is_err());
        let gz = GridFunction::zeros(Arc::new(g.trace()));
        assert!(HalfSpaceProblem::new(smooth_op(), f.clone(), BoundaryCondition::Oblique { ell: vec![0.0, 1.0], g: gz.clone() }, 1.0).is_err());
        assert!(HalfSpaceProblem::new(smooth_op(), f.clone(), BoundaryCondition::Dirichlet, 0.0).is_err());
        let whole = Arc::new(BoxGrid::standard(2, (-1.0, 1.0), 9, (-PI, PI), 8).unwrap());
        assert!(HalfSpaceProblem::new(smooth_op(), GridFunction::zeros(whole), BoundaryCondition::Dirichlet, 1.0).is_err());
    }
}
