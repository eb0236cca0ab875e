//! Ball averages, maximal and sharp functions, the Slobodeckij seminorm of
//! boundary data, and empirical checks of the sharp-function inequality and
//! the interior `L_p` estimate.
//!
//! Suprema over `r > 0` are maxima over a finite radius ladder, so computed
//! maximal and sharp functions are lower bounds of the true ones.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{apply, EllipticOperator};
use crate::error::{Error, Result};
use crate::grid::{hessian, lp_norm, BoxGrid, GridFunction, C64};
use crate::vmo::vmo_modulus;

pub const LADDER_RATIO: f64 = 1.5;

/// Geometric radii `2h, 3h, 4.5h, …` up to half the shortest box side, `h`
/// the coarsest spacing.
pub fn radius_ladder(grid: &BoxGrid) -> Vec<f64> {
    let h = (0..grid.dim()).map(|j| grid.spacing(j)).fold(0.0, f64::max);
    let top = grid.axes().iter().map(|a| 0.5 * a.length()).fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    let mut r = 2.0 * h;
    while r <= top * (1.0 + 1e-12) {
        out.push(r);
        r *= LADDER_RATIO;
    }
    out
}

/// Nodes whose centres lie in the closed ball `B_r(x)`; periodic axes wrap.
/// The flag is set when the ball leaves the box across a non-periodic side.
pub fn ball_nodes(grid: &BoxGrid, x: &[f64], r: f64) -> (Vec<usize>, bool) {
    let d = grid.dim();
    let mut clipped = false;
    // per axis: (node index, signed offset from x)
    let mut ranges: Vec<Vec<(usize, f64)>> = Vec::with_capacity(d);
    for (j, a) in grid.axes().iter().enumerate() {
        let h = grid.spacing(j);
        let lo = ((x[j] - r - a.lo) / h).ceil() as i64;
        let hi = ((x[j] + r - a.lo) / h).floor() as i64;
        let mut v = Vec::new();
        if a.periodic {
            let n = a.n as i64;
            for k in lo..=hi.min(lo + n - 1) {
                v.push((k.rem_euclid(n) as usize, a.lo + k as f64 * h - x[j]));
            }
        } else {
            if x[j] - r < a.lo - 1e-12 || x[j] + r > a.hi + 1e-12 {
                clipped = true;
            }
            for k in lo.max(0)..=hi.min(a.n as i64 - 1) {
                v.push((k as usize, a.coord(k as usize) - x[j]));
            }
        }
        ranges.push(v);
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    if ranges.iter().any(|v| v.is_empty()) {
        return (out, clipped);
    }
    let strides = grid.strides();
    loop {
        let mut dist = 0.0;
        let mut flat = 0;
        for j in 0..d {
            let (k, off) = ranges[j][idx[j]];
            dist += off * off;
            flat += k * strides[j];
        }
        if dist <= r * r * (1.0 + 1e-12) {
            out.push(flat);
        }
        let mut j = d;
        loop {
            if j == 0 {
                return (out, clipped);
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < ranges[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BallValue {
    pub value: f64,
    /// Some ball left the box and was averaged over its intersection.
    pub clipped: bool,
}

fn over_ladder(g: &GridFunction, x: &[f64], radii: &[f64], stat: impl Fn(&GridFunction, &[usize]) -> f64) -> Result<BallValue> {
    if radii.is_empty() {
        return Err(Error::invalid("the radius ladder is empty"));
    }
    if x.len() != g.grid().dim() {
        return Err(Error::invalid("sample point dimension does not match the grid"));
    }
    let mut best = BallValue { value: 0.0, clipped: false };
    for &r in radii {
        let (nodes, clipped) = ball_nodes(g.grid(), x, r);
        if nodes.is_empty() {
            continue;
        }
        best.clipped |= clipped;
        best.value = best.value.max(stat(g, &nodes));
    }
    Ok(best)
}

/// `max_r ⨍_{B_r(x)} |g|` over `radii`; vector fields use the pointwise
/// Euclidean magnitude.
pub fn maximal_fn(g: &GridFunction, x: &[f64], radii: &[f64]) -> Result<BallValue> {
    over_ladder(g, x, radii, |g, nodes| nodes.iter().map(|&i| g.magnitude_at(i)).sum::<f64>() / nodes.len() as f64)
}

/// `max_r ⨍_{B_r(x)} |g − (g)_{B_r(x)}|` over `radii`.
pub fn sharp_fn(g: &GridFunction, x: &[f64], radii: &[f64]) -> Result<BallValue> {
    over_ladder(g, x, radii, |g, nodes| {
        let count = nodes.len() as f64;
        let means: Vec<C64> =
            g.components().iter().map(|c| nodes.iter().map(|&i| c[i]).sum::<C64>() / count).collect();
        nodes
            .iter()
            .map(|&i| g.components().iter().zip(&means).map(|(c, m)| (c[i] - m).norm_sqr()).sum::<f64>().sqrt())
            .sum::<f64>()
            / count
    })
}

/// `[g]_s = (∬ |g(x′) − g(y′)|^p / |x′ − y′|^{m + sp})^{1/p}` on an
/// `m`-dimensional wall grid, as a double sum over distinct nodes with
/// cell-volume weights and minimum-image distances on periodic axes.
pub fn slobodeckij_seminorm(g: &GridFunction, s: f64, p: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("smoothness s must lie in (0, 1), got {s}")));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p must be >= 1, got {p}")));
    }
    let grid = g.grid();
    let m = grid.dim() as f64;
    let power = 0.5 * (m + s * p);
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let axes = grid.axes();
    // per-row partial sums are added in index order so the result does not
    // depend on the thread count
    let rows: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..grid.len() {
                if i == j {
                    continue;
                }
                let diff = g.values()[i] - g.values()[j];
                if diff.norm() == 0.0 {
                    continue;
                }
                let mut d2 = 0.0;
                for (k, a) in axes.iter().enumerate() {
                    let mut t = (points[i][k] - points[j][k]).abs();
                    if a.periodic {
                        t = t.min(a.length() - t);
                    }
                    d2 += t * t;
                }
                acc += diff.norm().powf(p) / d2.powf(power);
            }
            acc
        })
        .collect();
    let total: f64 = rows.iter().sum();
    let vol = grid.cell_volume();
    Ok((total * vol * vol).powf(1.0 / p))
}

/// Exponents and sample points of the sharp-function inequality
/// `(u_{xx′})^# ≤ N ω(R)^α M(|u_xx|^{2μ})^β + N M(|L₀u|²)^{1/(d+2)} M(|u_xx|²)^{d/(2d+4)}`.
#[derive(Clone, Debug, Serialize)]
pub struct SharpCheckConfig {
    /// Scale `R` at which the coefficients' mean oscillation is taken.
    pub r_vmo: f64,
    pub mu: f64,
    /// Conjugate exponent, `1/μ + 1/ν = 1`.
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    pub sample_points: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    /// Precomputed oscillation modulus at `r_vmo`; estimated when absent.
    pub modulus: Option<f64>,
    pub vmo_samples: usize,
    pub seed: u64,
}

impl SharpCheckConfig {
    pub fn new(dim: usize, r_vmo: f64, mu: f64, sample_points: Vec<Vec<f64>>, radii: Vec<f64>) -> Result<Self> {
        if !(mu > 1.0) {
            return Err(Error::invalid(format!("mu must exceed 1, got {mu}")));
        }
        let nu = mu / (mu - 1.0);
        let cfg = SharpCheckConfig {
            r_vmo,
            mu,
            nu,
            alpha: 1.0 / (nu * (dim as f64 + 2.0)),
            beta: 0.5 / mu,
            dim,
            sample_points,
            radii,
            modulus: None,
            vmo_samples: 256,
            seed: 0,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// `μ` for an `L_p` chain that needs `p > 2μ`: 2 when `p > 4`, else just
    /// below `p/2`. No `μ > 1` works when `p <= 2`; the pointwise inequality
    /// still holds there, so the default 2 is returned.
    pub fn mu_for(p: f64) -> f64 {
        if p > 4.0 || p <= 2.0 {
            2.0
        } else {
            0.5 * p * (1.0 - 1e-3)
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.r_vmo > 0.0) {
            return Err(Error::invalid(format!("R must be positive, got {}", self.r_vmo)));
        }
        if !(self.mu > 1.0) || (1.0 / self.mu + 1.0 / self.nu - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mu and nu must be conjugate exponents"));
        }
        let d = self.dim as f64;
        if (self.alpha - 1.0 / (self.nu * (d + 2.0))).abs() > 1e-12 || (self.beta - 0.5 / self.mu).abs() > 1e-12 {
            return Err(Error::invalid("alpha and beta do not match mu, nu and d"));
        }
        if self.radii.is_empty() || self.sample_points.is_empty() {
            return Err(Error::invalid("sharp check needs radii and sample points"));
        }
        if self.sample_points.iter().any(|x| x.len() != self.dim) {
            return Err(Error::invalid("sample point dimension does not match"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SharpPoint {
    pub x: Vec<f64>,
    pub lhs: f64,
    pub term1: f64,
    pub term2: f64,
    /// `lhs / (term1 + term2)`; 0 when `lhs = 0`, infinite when only the
    /// right side vanishes.
    pub n: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SharpReport {
    pub points: Vec<SharpPoint>,
    pub modulus: f64,
    pub n_max: f64,
}

impl SharpReport {
    pub fn n_finite(&self) -> bool {
        self.n_max.is_finite()
    }
}

/// Empirical constant of the sharp-function inequality at each sample point.
/// The left side is the largest sharp function among the second derivatives
/// `u_{x^j x^k}` with `k ≥ 2`; only the principal part of `op` is used.
pub fn sharp_inequality_check(u: &GridFunction, op: &EllipticOperator, cfg: &SharpCheckConfig) -> Result<SharpReport> {
    cfg.check()?;
    let grid = u.grid_arc().clone();
    let d = grid.dim();
    if d != cfg.dim || op.dim() != d {
        return Err(Error::invalid("dimensions of u, op and config differ"));
    }
    let modulus = match cfg.modulus {
        Some(m) => m,
        None => {
            let radii = [cfg.r_vmo, 0.5 * cfg.r_vmo, 0.25 * cfg.r_vmo];
            vmo_modulus(&*op.a_field().clone(), cfg.r_vmo, &cfg.sample_points, &radii, cfg.vmo_samples, cfg.seed)?.value
        }
    };
    let hess = hessian(u)?;
    let mixed: Vec<GridFunction> = (0..d)
        .flat_map(|j| (1..d).map(move |k| (j, k)))
        .filter(|&(j, k)| j <= k)
        .map(|(j, k)| hess.component_field(j * d + k))
        .collect();
    let l0u = apply(&op.principal(), u, 0.0)?;
    let mags = hess.magnitudes();
    let pow_field = |vals: Vec<f64>| GridFunction::scalar(grid.clone(), vals.into_iter().map(|v| C64::new(v, 0.0)).collect());
    let hess_2mu = pow_field(mags.iter().map(|m| m.powf(2.0 * cfg.mu)).collect())?;
    let hess_sq = pow_field(mags.iter().map(|m| m * m).collect())?;
    let l0_sq = pow_field(l0u.values().iter().map(|v| v.norm_sqr()).collect())?;
    let dd = d as f64;

    let points: Vec<SharpPoint> = cfg
        .sample_points
        .par_iter()
        .map(|x| -> Result<SharpPoint> {
            let mut lhs = 0.0f64;
            let mut clipped = false;
            for g in &mixed {
                let b = sharp_fn(g, x, &cfg.radii)?;
                lhs = lhs.max(b.value);
                clipped |= b.clipped;
            }
            let m2mu = maximal_fn(&hess_2mu, x, &cfg.radii)?;
            let msq = maximal_fn(&hess_sq, x, &cfg.radii)?;
            let ml0 = maximal_fn(&l0_sq, x, &cfg.radii)?;
            let term1 = if modulus > 0.0 { modulus.powf(cfg.alpha) * m2mu.value.powf(cfg.beta) } else { 0.0 };
            let term2 = ml0.value.powf(1.0 / (dd + 2.0)) * msq.value.powf(dd / (2.0 * dd + 4.0));
            let n = if lhs == 0.0 {
                0.0
            } else if term1 + term2 > 0.0 {
                lhs / (term1 + term2)
            } else {
                f64::INFINITY
            };
            Ok(SharpPoint { x: x.clone(), lhs, term1, term2, n, clipped: clipped || m2mu.clipped })
        })
        .collect::<Result<_>>()?;
    let n_max = points.iter().map(|p| p.n).fold(0.0, f64::max);
    Ok(SharpReport { points, modulus, n_max })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LpCheck {
    /// `‖u_xx‖ₚ / ‖L₀u‖ₚ`, absent when the quotient is undefined.
    pub ratio: Option<f64>,
    /// `L₀u = 0` although `u ≠ 0`.
    pub anomaly: bool,
}

/// `‖u_xx‖ₚ / ‖L₀u‖ₚ` with `L₀` the principal part of `op` and the pointwise
/// Frobenius norm of the Hessian.
pub fn lp_estimate_check(op: &EllipticOperator, u: &GridFunction, p: f64) -> Result<LpCheck> {
    let l0u = apply(&op.principal(), u, 0.0)?;
    let num = lp_norm(&hessian(u)?, p, None)?;
    let den = lp_norm(&l0u, p, None)?;
    if den > 0.0 {
        return Ok(LpCheck { ratio: Some(num / den), anomaly: false });
    }
    Ok(LpCheck { ratio: None, anomaly: u.max_abs() > 0.0 })
}
