//! Compressed sparse rows and restarted GMRES in complex arithmetic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::C64;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are
    /// summed and each row is sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, C64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(C64::new(0.0, 0.0), |e| e.1)).collect()
    }

    /// Row-parallel product; each row is summed sequentially, so the result
    /// does not depend on the thread count.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        });
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(C64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresOptions {
    pub tol: f64,
    pub maxiter: usize,
    pub restart: usize,
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    /// `‖b − Ax‖₂ / ‖b‖₂`, recomputed from the returned iterate.
    pub residual: f64,
    pub iterations: usize,
}

// Rotation (c, s) with c real mapping (a, b) to (r, 0).
fn givens(a: C64, b: C64) -> (f64, C64, C64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, C64::new(0.0, 0.0), a);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb, C64::new(nb, 0.0));
    }
    let t = na.hypot(nb);
    let phase = a / na;
    (na / t, phase * b.conj() / t, phase * t)
}

/// Right-preconditioned restarted GMRES with the Jacobi preconditioner.
pub fn gmres(a: &CsrMatrix, b: &[C64], opts: GmresOptions) -> Result<GmresOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!("GMRES tolerance must be positive, got {}", opts.tol)));
    }
    let n = a.n;
    let zero = C64::new(0.0, 0.0);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x: vec![zero; n], residual: 0.0, iterations: 0 });
    }
    let minv: Vec<C64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d.norm() > 0.0 { d.inv() } else { C64::new(1.0, 0.0) })
        .collect();
    let m = opts.restart.max(1);
    let mut x = vec![zero; n];
    let mut r = b.to_vec();
    let mut beta = bnorm;
    let mut iterations = 0;
    let mut w = vec![zero; n];
    let mut z = vec![zero; n];
    let target = opts.tol * bnorm;
    let mut best = (beta, x.clone());

    loop {
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![zero; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![zero; m];
        let mut g = vec![zero; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        while k < m && iterations < opts.maxiter {
            for (zi, (vi, mi)) in z.iter_mut().zip(basis[k].iter().zip(&minv)) {
                *zi = vi * mi;
            }
            a.matvec(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                h[i][k] = hij;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hij * vj;
                }
            }
            // one reorthogonalisation pass keeps the basis orthonormal
            for (i, v) in basis.iter().enumerate() {
                let corr = dot(v, &w);
                h[i][k] += corr;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= corr * vj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = C64::new(hn, 0.0);
            for i in 0..k {
                let (c, s) = (cs[i], sn[i]);
                let (x0, x1) = (h[i][k], h[i + 1][k]);
                h[i][k] = x0 * c + s * x1;
                h[i + 1][k] = -s.conj() * x0 + x1 * c;
            }
            let (c, s, rr) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = rr;
            h[k + 1][k] = zero;
            let gk = g[k];
            g[k] = gk * c;
            g[k + 1] = -s.conj() * gk;
            iterations += 1;
            k += 1;
            if g[k].norm() <= target || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution for the k × k triangle
        let mut y = vec![zero; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![zero; n];
        for (yj, v) in y.iter().zip(&basis) {
            for (u, vi) in update.iter_mut().zip(v) {
                *u += yj * vi;
            }
        }
        for ((xi, ui), mi) in x.iter_mut().zip(&update).zip(&minv) {
            *xi += ui * mi;
        }
        a.matvec(&x, &mut w);
        for ((ri, bi), wi) in r.iter_mut().zip(b).zip(&w) {
            *ri = bi - wi;
        }
        beta = norm(&r);
        if beta < best.0 {
            best = (beta, x.clone());
        }
        if beta <= target {
            return Ok(GmresOutcome { x, residual: beta / bnorm, iterations });
        }
        if iterations >= opts.maxiter || beta == 0.0 {
            return Err(Error::NonConvergence { iterations, residual: best.0 / bnorm });
        }
    }
}
