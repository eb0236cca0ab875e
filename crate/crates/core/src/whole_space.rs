//! Finite-difference solver for general coefficients on the box.
//!
//! The assembled stencil is the one [`apply`](crate::coefficients::apply)
//! uses at nodes off the non-periodic edges; edge nodes carry homogeneous
//! Dirichlet rows.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coefficients::{EllipticOperator, SampledCoefficients};
use crate::error::{Error, Result};
use crate::grid::{gradient, hessian, lp_norm, BoxGrid, GridFunction, SubBox, C64};
use crate::krylov::{gmres, CsrMatrix, GmresOptions};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_RESTART: usize = 60;

#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub grid: Arc<BoxGrid>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<C64>,
    pub lambda: f64,
}

fn neighbour(grid: &BoxGrid, multi: &mut [usize], axis: usize, step: isize) -> Option<()> {
    let n = grid.axis(axis).n as isize;
    let i = multi[axis] as isize + step;
    let j = if grid.axis(axis).periodic {
        i.rem_euclid(n)
    } else if (0..n).contains(&i) {
        i
    } else {
        return None;
    };
    multi[axis] = j as usize;
    Some(())
}

fn offset(grid: &BoxGrid, base: &[usize], moves: &[(usize, isize)]) -> usize {
    let mut m = base.to_vec();
    for &(axis, step) in moves {
        neighbour(grid, &mut m, axis, step).expect("stencil stays on the grid off the edges");
    }
    grid.flat(&m)
}

fn stencil_row(grid: &BoxGrid, coeffs: &SampledCoefficients, lambda: f64, i: usize) -> Vec<(usize, C64)> {
    let d = grid.dim();
    let multi = grid.multi(i);
    let a = &coeffs.a[i];
    let mut row: Vec<(usize, C64)> = Vec::with_capacity(1 + 2 * d + 2 * d * (d - 1));
    let re = |v: f64| C64::new(v, 0.0);
    let mut diag = -lambda;
    for j in 0..d {
        let h = grid.spacing(j);
        let w = a[(j, j)] / (h * h);
        row.push((offset(grid, &multi, &[(j, 1)]), re(w)));
        row.push((offset(grid, &multi, &[(j, -1)]), re(w)));
        diag -= 2.0 * w;
        for k in j + 1..d {
            let w = (a[(j, k)] + a[(k, j)]) / (4.0 * h * grid.spacing(k));
            for (sj, sk, sign) in [(1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)] {
                row.push((offset(grid, &multi, &[(j, sj), (k, sk)]), re(sign * w)));
            }
        }
    }
    if let Some(b) = &coeffs.b {
        for j in 0..d {
            let w = b[i][j] / (2.0 * grid.spacing(j));
            row.push((offset(grid, &multi, &[(j, 1)]), re(w)));
            row.push((offset(grid, &multi, &[(j, -1)]), re(-w)));
        }
    }
    if let Some(c) = &coeffs.c {
        diag += c[i];
    }
    row.push((i, re(diag)));
    row
}

/// Assembles `L − λ` on `grid` with a zero right-hand side.
pub fn assemble(op: &EllipticOperator, grid: Arc<BoxGrid>, lambda: f64) -> Result<SparseSystem> {
    let coeffs = op.sample(&grid)?;
    let rows: Vec<Vec<(usize, C64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if grid.is_edge(i) {
                vec![(i, C64::new(1.0, 0.0))]
            } else {
                stencil_row(&grid, &coeffs, lambda, i)
            }
        })
        .collect();
    let matrix = CsrMatrix::from_rows(rows);
    Ok(SparseSystem { rhs: vec![C64::new(0.0, 0.0); grid.len()], grid, matrix, lambda })
}

impl SparseSystem {
    /// Sets the right-hand side to `f` off the edges and to zero on them.
    pub fn with_rhs(mut self, f: &GridFunction) -> Result<Self> {
        if f.grid() != self.grid.as_ref() {
            return Err(Error::invalid("right-hand side lives on a different grid"));
        }
        self.rhs = (0..self.grid.len())
            .map(|i| if self.grid.is_edge(i) { C64::new(0.0, 0.0) } else { f.values()[i] })
            .collect();
        Ok(self)
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); u.len()];
        self.matrix.matvec(u, &mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: GridFunction,
    pub residual: f64,
    pub iterations: usize,
}

pub fn solve(system: &SparseSystem, tol: f64, maxiter: usize) -> Result<Solution> {
    let out = gmres(&system.matrix, &system.rhs, GmresOptions { tol, maxiter, restart: DEFAULT_RESTART })?;
    Ok(Solution {
        u: GridFunction::scalar(system.grid.clone(), out.x)?,
        residual: out.residual,
        iterations: out.iterations,
    })
}

/// Assembles and solves `Lu − λu = f` with the default tolerance and
/// iteration cap `10 · dim`.
pub fn solve_problem(op: &EllipticOperator, f: &GridFunction, lambda: f64) -> Result<Solution> {
    solve_problem_with(op, f, lambda, DEFAULT_TOL, 10 * f.grid().len())
}

pub fn solve_problem_with(op: &EllipticOperator, f: &GridFunction, lambda: f64, tol: f64, maxiter: usize) -> Result<Solution> {
    let system = assemble(op, f.grid_arc().clone(), lambda)?.with_rhs(f)?;
    solve(&system, tol, maxiter)
}

/// `W²ₚ` norm triple `(‖u‖ₚ, ‖∇u‖ₚ, ‖D²u‖ₚ)` with the grid stencils.
pub fn sobolev_norms(u: &GridFunction, p: f64, region: Option<&SubBox>) -> Result<[f64; 3]> {
    Ok([lp_norm(u, p, region)?, lp_norm(&gradient(u)?, p, region)?, lp_norm(&hessian(u)?, p, region)?])
}

/// `(λ‖u‖ₚ + √λ‖∇u‖ₚ + ‖D²u‖ₚ) / ‖f‖ₚ`.
pub fn apriori_ratio(u: &GridFunction, f: &GridFunction, lambda: f64, p: f64, region: Option<&SubBox>) -> Result<f64> {
    let fnorm = lp_norm(f, p, region)?;
    if !(fnorm > 0.0) {
        return Err(Error::invalid("apriori_ratio needs a nonzero forcing"));
    }
    let [n0, n1, n2] = sobolev_norms(u, p, region)?;
    Ok((lambda * n0 + lambda.sqrt() * n1 + n2) / fnorm)
}
