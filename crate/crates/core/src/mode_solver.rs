//! Spectral solver for leading coefficients that depend on `x¹` only.
//!
//! After a Fourier transform in `x′` each frequency obeys the complex
//! two-point problem `𝖺ũ″ + 2i𝖻ũ′ − 𝖼ũ = f̃` on the `x¹` axis, which is
//! normalised by `𝖺` and discretised with central differences.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{interior_residual, EllipticOperator, Mat};
use crate::error::{Error, Result};
use crate::grid::{
    diff_lane, forward_modes, inverse_modes, lp_norm_lane, Axis, BoxGrid, GridFunction, ModeIndex,
    C64,
};

/// Largest variation in `x′` tolerated before coefficients count as
/// depending on `x′`.
pub const XPRIME_TOLERANCE: f64 = 1e-12;
/// Relative residual below which a mode solve is accepted.
pub const MODE_TOLERANCE: f64 = 1e-8;

/// Symbols standing in for `ξ` in the transformed operator.
///
/// `odd[j]` replaces `ξʲ` where a single `x′` derivative is taken and
/// `even_sq[j]` replaces `(ξʲ)²` for the pure second derivative. With
/// [`ModeSymbols::stencil`] these are the symbols of the grid's central
/// differences, so the mode solves reproduce the finite-difference operator
/// exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeSymbols {
    pub odd: Vec<f64>,
    pub even_sq: Vec<f64>,
}

impl ModeSymbols {
    pub fn exact(xi: &[f64]) -> Self {
        ModeSymbols { odd: xi.to_vec(), even_sq: xi.iter().map(|x| x * x).collect() }
    }

    /// `sin(ξh)/h` and `(2 − 2cos ξh)/h²`; the odd symbol vanishes at the
    /// Nyquist slot.
    pub fn stencil(xi: &[f64], h: &[f64], nyquist: &[bool]) -> Self {
        let odd = xi
            .iter()
            .zip(h)
            .zip(nyquist)
            .map(|((x, h), &nq)| if nq { 0.0 } else { (x * h).sin() / h })
            .collect();
        let even_sq = xi.iter().zip(h).map(|(x, h)| (2.0 - 2.0 * (x * h).cos()) / (h * h)).collect();
        ModeSymbols { odd, even_sq }
    }

    pub fn xi_sq(&self) -> f64 {
        self.even_sq.iter().sum()
    }
}

/// Which symbols the whole-space driver uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum XprimeSymbol {
    Exact,
    #[default]
    Stencil,
}

/// Per-frequency data `(𝖺, 𝖻, 𝖼, f̃)` on the nodes of the `x¹` axis.
#[derive(Clone, Debug)]
pub struct ModeProblem {
    pub x1: Axis,
    pub symbols: ModeSymbols,
    pub lambda: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub f: Vec<C64>,
}

impl ModeProblem {
    pub fn xi_sq(&self) -> f64 {
        self.symbols.xi_sq()
    }

    pub fn b_hat(&self, i: usize) -> f64 {
        self.b[i] / self.a[i]
    }

    pub fn c_hat(&self, i: usize) -> f64 {
        self.c[i] / self.a[i]
    }

    pub fn g(&self, i: usize) -> C64 {
        self.f[i] / self.a[i]
    }
}

/// Samples `a` at every `x¹` node and every probe in `x′`, failing if the
/// values differ by more than [`XPRIME_TOLERANCE`].
pub fn x1_profile(op: &EllipticOperator, x1: &[f64], probes: &[Vec<f64>]) -> Result<Vec<Mat>> {
    if op.has_lower_order() {
        return Err(Error::invalid("the spectral path needs b = 0 and c = 0"));
    }
    let d = op.dim();
    x1.par_iter()
        .map(|&t| {
            let mut x = vec![0.0; d];
            x[0] = t;
            x[1..].copy_from_slice(&probes[0]);
            let base = op.a_at(&x);
            for p in &probes[1..] {
                x[1..].copy_from_slice(p);
                let var = (op.a_at(&x) - &base).abs().max();
                if var > XPRIME_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "coefficients depend on x′: variation {var:.3e} at x¹ = {t}"
                    )));
                }
            }
            Ok(base)
        })
        .collect()
}

fn default_probes(m: usize) -> Vec<Vec<f64>> {
    let offsets = [0.0, 0.731, -1.917, 3.305, -0.262, 7.77];
    offsets.iter().enumerate().map(|(i, &o)| (0..m).map(|j| o + 0.41 * (i * j) as f64).collect()).collect()
}

fn fields_from_profile(profile: &[Mat], symbols: &ModeSymbols, lambda: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = symbols.odd.len();
    let mut a = Vec::with_capacity(profile.len());
    let mut b = Vec::with_capacity(profile.len());
    let mut c = Vec::with_capacity(profile.len());
    for mat in profile {
        a.push(mat[(0, 0)]);
        b.push((0..m).map(|j| mat[(0, j + 1)] * symbols.odd[j]).sum());
        let mut cc = lambda;
        for j in 0..m {
            for k in 0..m {
                cc += if j == k {
                    mat[(j + 1, j + 1)] * symbols.even_sq[j]
                } else {
                    mat[(j + 1, k + 1)] * symbols.odd[j] * symbols.odd[k]
                };
            }
        }
        c.push(cc);
    }
    (a, b, c)
}

/// Builds the frequency-`ξ` problem with the exact symbols.
pub fn assemble_mode(op: &EllipticOperator, x1: &Axis, xi: &[f64], lambda: f64, f: Vec<C64>) -> Result<ModeProblem> {
    assemble_mode_with(op, x1, ModeSymbols::exact(xi), lambda, f)
}

pub fn assemble_mode_with(
    op: &EllipticOperator,
    x1: &Axis,
    symbols: ModeSymbols,
    lambda: f64,
    f: Vec<C64>,
) -> Result<ModeProblem> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if symbols.odd.len() + 1 != op.dim() || symbols.even_sq.len() + 1 != op.dim() {
        return Err(Error::invalid("frequency vector must have d - 1 entries"));
    }
    if f.len() != x1.n {
        return Err(Error::invalid(format!("rhs has {} entries, x¹ axis has {}", f.len(), x1.n)));
    }
    let nodes: Vec<f64> = (0..x1.n).map(|i| x1.coord(i)).collect();
    let profile = x1_profile(op, &nodes, &default_probes(op.dim() - 1))?;
    let (a, b, c) = fields_from_profile(&profile, &symbols, lambda);
    Ok(ModeProblem { x1: x1.clone(), symbols, lambda, a, b, c, f })
}

/// Worst margins of the four coercivity inequalities; each is non-negative
/// when the inequality holds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoercivityReport {
    /// `min(𝖺 − δ, δ⁻¹ − 𝖺)`
    pub a_margin: f64,
    /// `δ⁻¹|ξ| − |𝖻|`
    pub b_margin: f64,
    /// `min(𝖼 − δ|ξ|² − λ, δ⁻¹(|ξ|² + λ) − 𝖼)`
    pub c_margin: f64,
    /// `𝖺𝖼 − 𝖻² − δ²(|ξ|² + λ)`
    pub det_margin: f64,
    pub pass: bool,
}

const COERCIVITY_SLACK: f64 = 1e-12;

pub fn check_coercivity(mp: &ModeProblem, delta: f64) -> CoercivityReport {
    let xs = mp.xi_sq();
    let xn = xs.sqrt();
    let lam = mp.lambda;
    let mut r = CoercivityReport {
        a_margin: f64::INFINITY,
        b_margin: f64::INFINITY,
        c_margin: f64::INFINITY,
        det_margin: f64::INFINITY,
        pass: false,
    };
    // margins are compared against round-off of the largest term involved
    let mut ok = true;
    for i in 0..mp.a.len() {
        let (a, b, c) = (mp.a[i], mp.b[i], mp.c[i]);
        let am = (a - delta).min(1.0 / delta - a);
        let bm = xn / delta - b.abs();
        let cm = (c - delta * xs - lam).min((xs + lam) / delta - c);
        let dm = a * c - b * b - delta * delta * (xs + lam);
        let scale = 1.0 + a.abs() + c.abs() / delta + a * c.abs() + b * b;
        ok &= am >= -COERCIVITY_SLACK * scale
            && bm >= -COERCIVITY_SLACK * scale
            && cm >= -COERCIVITY_SLACK * scale
            && dm >= -COERCIVITY_SLACK * scale;
        r.a_margin = r.a_margin.min(am);
        r.b_margin = r.b_margin.min(bm);
        r.c_margin = r.c_margin.min(cm);
        r.det_margin = r.det_margin.min(dm);
    }
    r.pass = ok;
    r
}

#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub u: Vec<C64>,
    /// `sup|ũ″ + 2i b̂ ũ′ − ĉ ũ − g̃|` over interior nodes relative to
    /// `sup|g̃|` (absolute when `g̃ = 0`).
    pub residual: f64,
    /// `(N₁, N₂)` energy ratios.
    pub energy: (f64, f64),
}

fn thomas(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Option<Vec<C64>> {
    let n = diag.len();
    let mut cp = vec![C64::new(0.0, 0.0); n];
    let mut dp = vec![C64::new(0.0, 0.0); n];
    let mut prev_c = C64::new(0.0, 0.0);
    let mut prev_d = C64::new(0.0, 0.0);
    for i in 0..n {
        let l = if i > 0 { lower[i] } else { C64::new(0.0, 0.0) };
        let piv = diag[i] - l * prev_c;
        let scale = diag[i].norm() + l.norm() + upper[i].norm();
        if !(piv.norm() > 1e-14 * scale) || !piv.re.is_finite() || !piv.im.is_finite() {
            return None;
        }
        prev_c = upper[i] / piv;
        prev_d = (rhs[i] - l * prev_d) / piv;
        cp[i] = prev_c;
        dp[i] = prev_d;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let next = dp[i + 1];
        dp[i] -= cp[i] * next;
    }
    Some(dp)
}

// Tridiagonal elimination with partial pivoting (one extra superdiagonal of
// fill); `lower[0]` and `upper[n-1]` are ignored.
fn pivoted(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Result<Vec<C64>> {
    let n = diag.len();
    let zero = C64::new(0.0, 0.0);
    let dl: Vec<C64> = lower[1..].to_vec();
    let mut d = diag.to_vec();
    let mut du: Vec<C64> = upper[..n - 1].to_vec();
    let mut du2 = vec![zero; n.saturating_sub(2)];
    let mut b = rhs.to_vec();
    let abs1 = |z: C64| z.re.abs() + z.im.abs();
    for k in 0..n - 1 {
        if dl[k] == zero {
            if d[k] == zero {
                return Err(Error::SingularSystem(format!("zero pivot at row {k}")));
            }
        } else if abs1(d[k]) >= abs1(dl[k]) {
            let mult = dl[k] / d[k];
            d[k + 1] -= mult * du[k];
            let bk = b[k];
            b[k + 1] -= mult * bk;
        } else {
            let mult = d[k] / dl[k];
            d[k] = dl[k];
            let temp = d[k + 1];
            d[k + 1] = du[k] - mult * temp;
            if k + 1 < n - 1 {
                du2[k] = du[k + 1];
                du[k + 1] = -mult * du2[k];
            }
            du[k] = temp;
            let bk = b[k];
            b[k] = b[k + 1];
            b[k + 1] = bk - mult * b[k + 1];
        }
    }
    if d[n - 1] == zero {
        return Err(Error::SingularSystem(format!("zero pivot at row {}", n - 1)));
    }
    b[n - 1] /= d[n - 1];
    if n > 1 {
        let bn = b[n - 1];
        b[n - 2] = (b[n - 2] - du[n - 2] * bn) / d[n - 2];
    }
    for k in (0..n.saturating_sub(2)).rev() {
        let (b1, b2) = (b[k + 1], b[k + 2]);
        b[k] = (b[k] - du[k] * b1 - du2[k] * b2) / d[k];
    }
    Ok(b)
}

/// Solves the normalised two-point problem with homogeneous Dirichlet values
/// at both ends of the `x¹` axis.
pub fn solve_mode(mp: &ModeProblem) -> Result<ModeSolution> {
    let n = mp.x1.n;
    if mp.x1.periodic {
        return Err(Error::invalid("the x¹ axis of a mode problem must be non-periodic"));
    }
    let h = mp.x1.spacing();
    let m = n - 2;
    let ih2 = 1.0 / (h * h);
    let mut lower = vec![C64::new(0.0, 0.0); m];
    let mut diag = vec![C64::new(0.0, 0.0); m];
    let mut upper = vec![C64::new(0.0, 0.0); m];
    let mut rhs = vec![C64::new(0.0, 0.0); m];
    for r in 0..m {
        let i = r + 1;
        let bh = mp.b_hat(i) / h;
        lower[r] = C64::new(ih2, -bh);
        diag[r] = C64::new(-2.0 * ih2 - mp.c_hat(i), 0.0);
        upper[r] = C64::new(ih2, bh);
        rhs[r] = mp.g(i);
    }
    let interior = match thomas(&lower, &diag, &upper, &rhs) {
        Some(x) => x,
        None => pivoted(&lower, &diag, &upper, &rhs)?,
    };
    let mut u = vec![C64::new(0.0, 0.0); n];
    u[1..n - 1].copy_from_slice(&interior);
    let residual = mode_residual(mp, &u);
    let mut sol = ModeSolution { u, residual, energy: (0.0, 0.0) };
    sol.energy = energy_check(&sol, mp)?;
    Ok(sol)
}

fn mode_residual(mp: &ModeProblem, u: &[C64]) -> f64 {
    let n = u.len();
    let h = mp.x1.spacing();
    let mut worst = 0.0f64;
    let mut gmax = 0.0f64;
    for i in 1..n - 1 {
        let upp = (u[i + 1] - u[i] * 2.0 + u[i - 1]) / (h * h);
        let up = (u[i + 1] - u[i - 1]) / (2.0 * h);
        let g = mp.g(i);
        let r = upp + C64::new(0.0, 2.0 * mp.b_hat(i)) * up - u[i] * mp.c_hat(i) - g;
        worst = worst.max(r.norm());
        gmax = gmax.max(g.norm());
    }
    if gmax > 0.0 {
        worst / gmax
    } else {
        worst
    }
}

fn lane_derivative(u: &[C64], h: f64, order: u8) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); u.len()];
    diff_lane(u, &mut out, 0, 1, u.len(), h, false, order);
    out
}

/// Energy ratios `N₁ = [(|ξ|²+λ)∫|ũ′|² + (|ξ|⁴+λ|ξ|²+λ²)∫|ũ|²] / ∫|f̃|²` and
/// `N₂ = ∫|ũ″|² / ∫|f̃|²`.
pub fn energy_check(sol: &ModeSolution, mp: &ModeProblem) -> Result<(f64, f64)> {
    if !(sol.residual <= MODE_TOLERANCE) {
        return Err(Error::invalid(format!("mode residual {:.3e} above tolerance", sol.residual)));
    }
    let h = mp.x1.spacing();
    let sq = |v: &[C64]| lp_norm_lane(v, h, 2.0).powi(2);
    let f2 = sq(&mp.f);
    let u2 = sq(&sol.u);
    if f2 == 0.0 {
        if u2 == 0.0 {
            return Ok((0.0, 0.0));
        }
        return Err(Error::invalid("zero forcing with a nonzero mode solution"));
    }
    let (xs, lam) = (mp.xi_sq(), mp.lambda);
    let up2 = sq(&lane_derivative(&sol.u, h, 1));
    let upp2 = sq(&lane_derivative(&sol.u, h, 2));
    let n1 = ((xs + lam) * up2 + (xs * xs + lam * xs + lam * lam) * u2) / f2;
    Ok((n1, upp2 / f2))
}

#[derive(Clone, Debug)]
pub struct IntegratingFactor {
    pub phi: Vec<f64>,
    pub rho: Vec<C64>,
    /// `max_i ||ρ_i| − |ũ_i||`
    pub modulus_defect: f64,
}

/// `φ′ = b̂` with `φ(0) = 0` by cumulative trapezoid sums, and `ρ = ũe^{iφ}`.
/// When `0` lies between nodes the anchor is placed by linear interpolation
/// of the cumulative sum; outside the axis it is the left end.
pub fn integrating_factor(mp: &ModeProblem, sol: &ModeSolution) -> IntegratingFactor {
    let n = mp.x1.n;
    let h = mp.x1.spacing();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * h * (mp.b_hat(i - 1) + mp.b_hat(i));
    }
    let lo = mp.x1.lo;
    let hi = mp.x1.coord(n - 1);
    let anchor = if lo <= 0.0 && 0.0 <= hi {
        let s = -lo / h;
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        if w == 0.0 {
            cum[i]
        } else {
            (1.0 - w) * cum[i] + w * cum[i + 1]
        }
    } else {
        0.0
    };
    let phi: Vec<f64> = cum.iter().map(|c| c - anchor).collect();
    let rho: Vec<C64> = sol.u.iter().zip(&phi).map(|(u, p)| u * C64::new(0.0, *p).exp()).collect();
    let modulus_defect = rho.iter().zip(&sol.u).map(|(r, u)| (r.norm() - u.norm()).abs()).fold(0.0, f64::max);
    IntegratingFactor { phi, rho, modulus_defect }
}

/// Per-frequency record of a whole-space spectral solve.
#[derive(Clone, Debug, Serialize)]
pub struct ModeRecord {
    pub slots: Vec<usize>,
    pub xi: Vec<f64>,
    pub residual: f64,
    pub n1: f64,
    pub n2: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralSolution {
    pub u: GridFunction,
    /// `‖apply(op, u, λ) − f‖₂ / ‖f‖₂` over rows not on the `x¹` ends.
    pub residual: f64,
    pub modes: Vec<ModeRecord>,
}

/// Solves `Lu − λu = f` for `x¹`-only coefficients on a grid with a
/// non-periodic first axis and periodic `x′` axes, one mode at a time.
pub fn solve_whole_space_x1(
    op: &EllipticOperator,
    f: &GridFunction,
    lambda: f64,
    symbols: XprimeSymbol,
) -> Result<SpectralSolution> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("whole-space solves need lambda > 0, got {lambda}")));
    }
    let grid: &BoxGrid = f.grid();
    if grid.axis(0).periodic || grid.axes()[1..].iter().any(|a| !a.periodic) {
        return Err(Error::invalid("spectral solves need a non-periodic x¹ axis and periodic x′ axes"));
    }
    if op.dim() != grid.dim() {
        return Err(Error::invalid("operator and grid dimensions differ"));
    }
    let d = grid.dim();
    let n1 = grid.axis(0).n;
    let x1_nodes = grid.coords(0);
    let trace = grid.trace();
    let mut probes: Vec<Vec<f64>> = (0..trace.len()).map(|i| trace.point(i)).collect();
    if d == 2 {
        probes = (0..grid.axis(1).n).map(|k| vec![grid.axis(1).coord(k)]).collect();
    }
    let profile = x1_profile(op, &x1_nodes, &probes)?;

    let axes: Vec<usize> = (1..d).collect();
    let hat = forward_modes(f, &axes)?;
    let stride = grid.strides()[0];
    let hs: Vec<f64> = (1..d).map(|j| grid.spacing(j)).collect();

    let results: Vec<(Vec<C64>, ModeRecord)> = (0..stride)
        .into_par_iter()
        .map(|rest| -> Result<(Vec<C64>, ModeRecord)> {
            let mi = ModeIndex::of(grid, &grid.multi(rest));
            let sym = match symbols {
                XprimeSymbol::Stencil => ModeSymbols::stencil(&mi.xi, &hs, &mi.nyquist),
                XprimeSymbol::Exact => {
                    let mut s = ModeSymbols::exact(&mi.xi);
                    for (o, &nq) in s.odd.iter_mut().zip(&mi.nyquist) {
                        if nq {
                            *o = 0.0;
                        }
                    }
                    s
                }
            };
            let lane: Vec<C64> = (0..n1).map(|i| hat.values()[i * stride + rest]).collect();
            let (a, b, c) = fields_from_profile(&profile, &sym, lambda);
            let mp = ModeProblem { x1: grid.axis(0).clone(), symbols: sym, lambda, a, b, c, f: lane };
            let sol = solve_mode(&mp)?;
            let rec = ModeRecord { slots: mi.slots, xi: mi.xi, residual: sol.residual, n1: sol.energy.0, n2: sol.energy.1 };
            Ok((sol.u, rec))
        })
        .collect::<Result<_>>()?;

    let mut vals = vec![C64::new(0.0, 0.0); grid.len()];
    let mut modes = Vec::with_capacity(stride);
    for (rest, (lane, rec)) in results.into_iter().enumerate() {
        for (i, v) in lane.into_iter().enumerate() {
            vals[i * stride + rest] = v;
        }
        modes.push(rec);
    }
    let u = inverse_modes(&GridFunction::scalar(f.grid_arc().clone(), vals)?, &axes)?;
    let residual = interior_residual(op, &u, f, lambda)?;
    Ok(SpectralSolution { u, residual, modes })
}

/// Convenience for tests and bindings: a grid with `x¹ ∈ [-x1, x1]` and
/// periodic `x′ ∈ [−π, π)`.
pub fn spectral_grid(dim: usize, x1: f64, n1: usize, nprime: usize) -> Result<Arc<BoxGrid>> {
    Ok(Arc::new(BoxGrid::standard(dim, (-x1, x1), n1, (-std::f64::consts::PI, std::f64::consts::PI), nprime)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientFamily, FamilyKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis(x: f64, n: usize) -> Axis {
        Axis::new(-x, x, n, false).unwrap()
    }

    fn x1_op(seed: u64, delta: f64, dim: usize) -> EllipticOperator {
        CoefficientFamily { kind: FamilyKind::MeasurableX1, seed, delta, ..Default::default() }.draw(dim).unwrap()
    }

    #[test]
    fn identity_fields() {
        let ax = axis(4.0, 33);
        let mp = assemble_mode(&EllipticOperator::identity(3), &ax, &[1.5, -2.0], 0.5, vec![C64::new(0.0, 0.0); 33])
            .unwrap();
        assert!(mp.a.iter().all(|&a| a == 1.0));
        assert!(mp.b.iter().all(|&b| b == 0.0));
        assert!(mp.c.iter().all(|&c| (c - 6.75).abs() < 1e-15));
    }

    #[test]
    fn single_offdiagonal_term() {
        let a: crate::coefficients::MatrixField =
            Arc::new(|x: &[f64]| Mat::from_row_slice(2, 2, &[1.0, 0.3 * x[0].sin(), 0.3 * x[0].sin(), 1.0]));
        let op = EllipticOperator::new(2, a, 0.5, 1.0).unwrap();
        let ax = axis(2.0, 17);
        let mp = assemble_mode(&op, &ax, &[2.5], 0.0, vec![C64::new(0.0, 0.0); 17]).unwrap();
        for i in 0..17 {
            assert!((mp.b[i] - 0.3 * ax.coord(i).sin() * 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn assemble_rejects_xprime_dependence_and_negative_lambda() {
        let a: crate::coefficients::MatrixField = Arc::new(|x: &[f64]| Mat::identity(2, 2) * (2.0 + x[1].sin()));
        let op = EllipticOperator::new(2, a, 0.3, 1.0).unwrap();
        let ax = axis(1.0, 9);
        let f = vec![C64::new(0.0, 0.0); 9];
        assert!(matches!(assemble_mode(&op, &ax, &[1.0], 1.0, f.clone()), Err(Error::InvalidArgument(_))));
        assert!(assemble_mode(&EllipticOperator::identity(2), &ax, &[1.0], -1.0, f.clone()).is_err());
        let drift = EllipticOperator::identity(2).with_drift(Arc::new(|_| vec![0.1, 0.0]));
        assert!(assemble_mode(&drift, &ax, &[1.0], 1.0, f).is_err());
    }

    #[test]
    fn identity_coercivity_is_sharp() {
        let ax = axis(1.0, 9);
        for lam in [0.0, 5.0] {
            let mp =
                assemble_mode(&EllipticOperator::identity(2), &ax, &[1.7], lam, vec![C64::new(0.0, 0.0); 9]).unwrap();
            let r = check_coercivity(&mp, 1.0);
            assert!(r.pass);
            assert!(r.det_margin.abs() < 1e-13);
        }
    }

    // the quadratic (𝖺 − δ)t² + 2𝖻t + (𝖼 − λ − δ|ξ|²) is non-negative for all
    // t exactly when its discriminant is non-positive
    fn discriminant_oracle(mp: &ModeProblem, delta: f64) -> bool {
        (0..mp.a.len()).all(|i| {
            let qa = mp.a[i] - delta;
            let qc = mp.c[i] - mp.lambda - delta * mp.xi_sq();
            let disc = mp.b[i] * mp.b[i] - qa * qc;
            disc <= 1e-12 * (1.0 + mp.b[i] * mp.b[i] + qa.abs() * qc.abs()) && qa >= -1e-12 && qc >= -1e-12
        })
    }

    #[test]
    fn random_draws_are_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ax = axis(4.0, 65);
        for seed in 0..40 {
            let op = x1_op(seed, 0.2, 3);
            let xi = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            for symbols in [ModeSymbols::exact(&xi), ModeSymbols::stencil(&xi, &[0.3, 0.2], &[false, false])] {
                let mp = assemble_mode_with(&op, &ax, symbols, rng.random_range(0.0..10.0), vec![C64::new(0.0, 0.0); 65])
                    .unwrap();
                assert!(check_coercivity(&mp, 0.2).pass);
                assert!(discriminant_oracle(&mp, 0.2));
            }
        }
    }

    #[test]
    fn constant_coefficient_closed_form_converges() {
        let (k, xi, lam) = (1.5, 2.0, 1.0);
        let denom = k * k + xi * xi + lam;
        let mut errs = Vec::new();
        for n in [201usize, 401, 801] {
            let ax = axis(20.0, n);
            let env = |t: f64| (-(t / 6.0).powi(2)).exp();
            // smooth compactly decaying data keeps the truncation negligible
            let exact = |t: f64| C64::new(0.0, k * t).exp() * env(t);
            let f: Vec<C64> = (0..n)
                .map(|i| {
                    let t = ax.coord(i);
                    let e = env(t);
                    let ep = -2.0 * t / 36.0 * e;
                    let epp = (4.0 * t * t / 1296.0 - 2.0 / 36.0) * e;
                    let w = C64::new(0.0, k * t).exp();
                    w * (C64::new(epp, 2.0 * k * ep) - e * k * k) - exact(t) * (xi * xi + lam)
                })
                .collect();
            let mp = assemble_mode(&EllipticOperator::identity(2), &ax, &[xi], lam, f).unwrap();
            let sol = solve_mode(&mp).unwrap();
            assert!(sol.residual < 1e-10);
            let err = (0..n).map(|i| (sol.u[i] - exact(ax.coord(i))).norm()).fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "{errs:?}");
        }
        let _ = denom;
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let op = x1_op(2, 0.2, 2);
        let ax = axis(3.0, 41);
        let mp = assemble_mode(&op, &ax, &[0.7], 1.0, vec![C64::new(0.0, 0.0); 41]).unwrap();
        let sol = solve_mode(&mp).unwrap();
        assert!(sol.u.iter().all(|v| *v == C64::new(0.0, 0.0)));
        assert_eq!(sol.energy, (0.0, 0.0));
    }

    #[test]
    fn pivoted_fallback_matches_thomas() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let lower: Vec<C64> = (0..n).map(|_| c()).collect();
        let upper: Vec<C64> = (0..n).map(|_| c()).collect();
        let diag: Vec<C64> = (0..n).map(|_| c() + C64::new(4.0, 0.0)).collect();
        let rhs: Vec<C64> = (0..n).map(|_| c()).collect();
        let a = thomas(&lower, &diag, &upper, &rhs).unwrap();
        let b = pivoted(&lower, &diag, &upper, &rhs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-13);
        }
        // a zero leading pivot defeats plain elimination
        let mut d2 = diag.clone();
        d2[0] = C64::new(0.0, 0.0);
        assert!(thomas(&lower, &d2, &upper, &rhs).is_none());
        let x = pivoted(&lower, &d2, &upper, &rhs).unwrap();
        for i in 0..n {
            let mut r = d2[i] * x[i] - rhs[i];
            if i > 0 {
                r += lower[i] * x[i - 1];
            }
            if i + 1 < n {
                r += upper[i] * x[i + 1];
            }
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_energy_closed_form() {
        // u = e^{ikt} is reproduced on a periodic-like setting through the
        // closed form of the energy ratio
        let (k, xi, lam): (f64, f64, f64) = (1.0, 1.5, 2.0);
        let xs = xi * xi;
        let expect = ((xs + lam) * k * k + (xs * xs + lam * xs + lam * lam)) / (k * k + xs + lam).powi(2);
        assert!(expect <= 1.0);
        let n = 4001;
        let ax = axis(60.0, n);
        let env = |t: f64| (-(t / 20.0).powi(2)).exp();
        let f: Vec<C64> = (0..n)
            .map(|i| {
                let t = ax.coord(i);
                C64::new(0.0, k * t).exp() * env(t) * (-(k * k + xs + lam))
            })
            .collect();
        let mp = assemble_mode(&EllipticOperator::identity(2), &ax, &[xi], lam, f).unwrap();
        let sol = solve_mode(&mp).unwrap();
        assert!((sol.energy.0 - expect).abs() < 2e-2 * expect, "{} vs {expect}", sol.energy.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn conjugate_symmetry(seed in 0u64..500, xi in -4.0f64..4.0, lam in 0.1f64..8.0) {
            let op = x1_op(seed, 0.25, 2);
            let ax = axis(3.0, 61);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<C64> = (0..61).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let fc: Vec<C64> = f.iter().map(|v| v.conj()).collect();
            let s1 = solve_mode(&assemble_mode(&op, &ax, &[xi], lam, f).unwrap()).unwrap();
            let s2 = solve_mode(&assemble_mode(&op, &ax, &[-xi], lam, fc).unwrap()).unwrap();
            let scale = s1.u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in s1.u.iter().zip(&s2.u) {
                prop_assert!((a - b.conj()).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn integrating_factor_is_unimodular(seed in 0u64..500, xi in -4.0f64..4.0) {
            let op = x1_op(seed, 0.25, 2);
            let ax = axis(3.0, 61);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let f: Vec<C64> = (0..61).map(|_| C64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
            let mp = assemble_mode(&op, &ax, &[xi], 1.0, f).unwrap();
            let sol = solve_mode(&mp).unwrap();
            let fac = integrating_factor(&mp, &sol);
            let scale = sol.u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            prop_assert!(fac.modulus_defect <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn integrating_factor_special_cases() {
        let ax = axis(2.0, 21);
        let f: Vec<C64> = (0..21).map(|i| C64::new((i as f64).sin(), 0.0)).collect();
        let mp = assemble_mode(&EllipticOperator::identity(2), &ax, &[1.0], 1.0, f.clone()).unwrap();
        let sol = solve_mode(&mp).unwrap();
        let fac = integrating_factor(&mp, &sol);
        assert!(fac.phi.iter().all(|&p| p == 0.0));
        assert_eq!(fac.rho, sol.u);

        let beta = 0.35;
        let a: crate::coefficients::MatrixField =
            Arc::new(move |_: &[f64]| Mat::from_row_slice(2, 2, &[1.0, beta, beta, 1.0]));
        let op = EllipticOperator::new(2, a, 0.5, 1.0).unwrap();
        let mp = assemble_mode(&op, &ax, &[1.0], 1.0, f).unwrap();
        let sol = solve_mode(&mp).unwrap();
        let fac = integrating_factor(&mp, &sol);
        for i in 0..21 {
            assert!((fac.phi[i] - beta * ax.coord(i)).abs() < 1e-14);
        }
    }

    #[test]
    fn whole_space_gaussian_second_order() {
        let mut errs = Vec::new();
        for (n1, np) in [(81usize, 32usize), (161, 64)] {
            let g = spectral_grid(2, 8.0, n1, np).unwrap();
            let exact = |x: &[f64]| (-(x[0] * x[0]) - 2.0 * (1.0 - x[1].cos())).exp();
            let m = crate::manufactured::Manufactured::new(vec![
                crate::manufactured::Profile::Gaussian { center: 0.0, width: 1.0 },
                crate::manufactured::Profile::PeriodicBump {
                    center: 0.0,
                    period: 2.0 * std::f64::consts::PI,
                    kappa: 2.0,
                },
            ]);
            let f = m.forcing(&EllipticOperator::identity(2), 1.0, g.clone()).unwrap();
            let sol = solve_whole_space_x1(&EllipticOperator::identity(2), &f, 1.0, XprimeSymbol::Stencil).unwrap();
            assert!(sol.u.max_imag() < 1e-10);
            let u = GridFunction::from_real_fn(g, exact);
            errs.push(sol.u.sub(&u).unwrap().max_abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn whole_space_zero_and_lambda_checks() {
        let g = spectral_grid(3, 3.0, 17, 8).unwrap();
        let f = GridFunction::zeros(g);
        let op = x1_op(1, 0.3, 3);
        let sol = solve_whole_space_x1(&op, &f, 2.0, XprimeSymbol::Stencil).unwrap();
        assert_eq!(sol.u.max_abs(), 0.0);
        assert!(solve_whole_space_x1(&op, &f, 0.0, XprimeSymbol::Stencil).is_err());
    }

    #[test]
    fn stencil_symbols_reproduce_the_difference_operator() {
        let g = spectral_grid(3, 3.0, 25, 8).unwrap();
        let op = x1_op(4, 0.3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals = (0..g.len())
            .map(|i| if g.is_edge(i) { C64::new(0.0, 0.0) } else { C64::new(rng.random_range(-1.0..1.0), 0.0) })
            .collect();
        let f = GridFunction::scalar(g, vals).unwrap();
        let sol = solve_whole_space_x1(&op, &f, 1.5, XprimeSymbol::Stencil).unwrap();
        assert!(sol.residual < 1e-11, "{}", sol.residual);
        assert!(sol.u.max_imag() < 1e-10);
        let exact = solve_whole_space_x1(&op, &f, 1.5, XprimeSymbol::Exact).unwrap();
        assert!(exact.residual > 1e-6);
    }
}
