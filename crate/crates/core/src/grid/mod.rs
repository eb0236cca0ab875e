//! Truncated computational boxes and the fields sampled on them.
//!
//! A [`BoxGrid`] is a tensor grid over `[lo, hi]` per axis. Periodic axes
//! exclude the right endpoint (`h = L / n`); non-periodic axes include both
//! endpoints (`h = L / (n - 1)`). Values are stored row-major with axis 0
//! (the `x¹` direction) varying slowest.

mod diff;
mod fourier;
mod io;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diff::{diff, diff_lane, gradient, hessian, mixed};
pub use fourier::{forward_modes, inverse_modes, xprime_multiplier, ModeIndex};
pub use io::{read_binary, write_binary, write_csv};

pub type C64 = Complex64;

/// One coordinate direction of a [`BoxGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize, periodic: bool) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::invalid(format!("axis extent [{lo}, {hi}] is empty")));
        }
        if n < 4 {
            return Err(Error::invalid(format!("axis needs at least 4 points, got {n}")));
        }
        Ok(Axis { lo, hi, n, periodic })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            self.length() / self.n as f64
        } else {
            self.length() / (self.n - 1) as f64
        }
    }

    /// Node coordinate. Non-periodic axes are laid out from both ends so that
    /// an axis symmetric about 0 has exactly antisymmetric nodes and, for odd
    /// `n`, a node exactly at 0.
    pub fn coord(&self, i: usize) -> f64 {
        let h = self.spacing();
        if self.periodic || 2 * i < self.n - 1 {
            self.lo + i as f64 * h
        } else if 2 * i == self.n - 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.hi - (self.n - 1 - i) as f64 * h
        }
    }

    /// Signed wave number of DFT slot `k` (FFT ordering).
    pub fn wavenumber(&self, k: usize) -> i64 {
        let n = self.n as i64;
        let k = k as i64;
        if k <= n / 2 {
            k
        } else {
            k - n
        }
    }

    /// Angular frequency `2πk / L` of DFT slot `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.wavenumber(k) as f64 / self.length()
    }

    /// True for the unpaired Nyquist slot of an even-length periodic axis.
    pub fn is_nyquist(&self, k: usize) -> bool {
        self.n % 2 == 0 && k == self.n / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxGrid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl BoxGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.len() < 2 {
            return Err(Error::invalid(format!(
                "a computational box needs dimension >= 2, got {}",
                axes.len()
            )));
        }
        Self::from_axes(axes)
    }

    /// Convenience constructor: `x¹` non-periodic on `x1`, every other axis
    /// periodic on `xprime`.
    pub fn standard(dim: usize, x1: (f64, f64), n1: usize, xprime: (f64, f64), nprime: usize) -> Result<Self> {
        let mut axes = vec![Axis::new(x1.0, x1.1, n1, false)?];
        for _ in 1..dim {
            axes.push(Axis::new(xprime.0, xprime.1, nprime, true)?);
        }
        Self::new(axes)
    }

    fn from_axes(axes: Vec<Axis>) -> Result<Self> {
        for a in &axes {
            Axis::new(a.lo, a.hi, a.n, a.periodic)?;
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].n;
        }
        let len = axes.iter().map(|a| a.n).product();
        Ok(BoxGrid { axes, strides, len })
    }

    /// The grid on the wall `x¹ = const` (axes `1..d`). For `d = 2` this is a
    /// one-dimensional grid, the only way a grid with a single axis is built.
    pub fn trace(&self) -> BoxGrid {
        Self::from_axes(self.axes[1..].to_vec()).expect("sub-axes of a valid grid are valid")
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    /// Quadrature weight of one node (rectangle rule).
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Axis::length).product()
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (i, s) in self.strides.iter().enumerate() {
            out[i] = flat / s;
            flat %= s;
        }
        out
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let a = &self.axes[axis];
        (0..a.n).map(|i| a.coord(i)).collect()
    }

    /// Index along `axis` of the node closest to `x`, clamped to the grid.
    pub fn nearest_index(&self, axis: usize, x: f64) -> usize {
        let a = &self.axes[axis];
        let i = ((x - a.lo) / a.spacing()).round();
        i.clamp(0.0, (a.n - 1) as f64) as usize
    }

    /// Start offsets of every 1-D lane running along `axis`.
    pub fn lane_starts(&self, axis: usize) -> Vec<usize> {
        let n = self.axes[axis].n;
        let s = self.strides[axis];
        let outer = self.len / (n * s);
        let mut starts = Vec::with_capacity(outer * s);
        for o in 0..outer {
            for i in 0..s {
                starts.push(o * n * s + i);
            }
        }
        starts
    }

    /// True when the node lies on the end of a non-periodic axis.
    pub fn is_edge(&self, flat: usize) -> bool {
        self.multi(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&i, a)| !a.periodic && (i == 0 || i + 1 == a.n))
    }
}

/// Closed coordinate sub-box used to restrict norms.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SubBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        SubBox { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo - SLACK && v <= hi + SLACK)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Matrix => dim * dim,
        }
    }
}

/// A field sampled on a [`BoxGrid`]. Matrix components are stored row-major
/// (`component j * d + k`).
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<BoxGrid>,
    rank: Rank,
    components: Vec<Vec<C64>>,
}

impl GridFunction {
    pub fn new(grid: Arc<BoxGrid>, rank: Rank, components: Vec<Vec<C64>>) -> Result<Self> {
        let expected = rank.components(grid.dim());
        if components.len() != expected {
            return Err(Error::invalid(format!(
                "{rank:?} field on a {}-d grid needs {expected} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        if let Some(bad) = components.iter().find(|c| c.len() != grid.len()) {
            return Err(Error::invalid(format!(
                "component has {} values, grid has {} nodes",
                bad.len(),
                grid.len()
            )));
        }
        Ok(GridFunction { grid, rank, components })
    }

    pub fn scalar(grid: Arc<BoxGrid>, values: Vec<C64>) -> Result<Self> {
        Self::new(grid, Rank::Scalar, vec![values])
    }

    pub fn zeros(grid: Arc<BoxGrid>) -> Self {
        let n = grid.len();
        GridFunction { grid, rank: Rank::Scalar, components: vec![vec![C64::new(0.0, 0.0); n]] }
    }

    pub fn from_fn(grid: Arc<BoxGrid>, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridFunction { grid, rank: Rank::Scalar, components: vec![values] }
    }

    pub fn from_real_fn(grid: Arc<BoxGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<BoxGrid> {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn components(&self) -> &[Vec<C64>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[C64] {
        &self.components[i]
    }

    pub fn into_components(self) -> Vec<Vec<C64>> {
        self.components
    }

    /// Scalar values. Panics on non-scalar fields.
    pub fn values(&self) -> &[C64] {
        assert_eq!(self.rank, Rank::Scalar, "values() on a {:?} field", self.rank);
        &self.components[0]
    }

    pub fn into_values(self) -> Vec<C64> {
        assert_eq!(self.rank, Rank::Scalar, "into_values() on a {:?} field", self.rank);
        self.components.into_iter().next().unwrap()
    }

    pub fn component_field(&self, i: usize) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            rank: Rank::Scalar,
            components: vec![self.components[i].clone()],
        }
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Euclidean (vector) or Frobenius (matrix) magnitude at one node.
    pub fn magnitude_at(&self, flat: usize) -> f64 {
        if self.rank == Rank::Scalar {
            return self.components[0][flat].norm();
        }
        self.components.iter().map(|c| c[flat].norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.magnitude_at(i)).collect()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            rank: self.rank,
            components: self.components.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> GridFunction {
        self.map(|v| v * s)
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: C64, other: &GridFunction, beta: C64) -> Result<GridFunction> {
        if !self.same_grid(other) || self.rank != other.rank {
            return Err(Error::invalid("axpby: grid or rank mismatch"));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| alpha * x + beta * y).collect())
            .collect();
        Ok(GridFunction { grid: self.grid.clone(), rank: self.rank, components })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.axpby(C64::new(1.0, 0.0), other, C64::new(-1.0, 0.0))
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.axpby(C64::new(1.0, 0.0), other, C64::new(1.0, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        self.components.iter().flatten().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.re).collect()
    }
}

/// Discrete `L_p` norm, `(Σ |u|^p ∏h)^{1/p}` over the nodes in `region`.
pub fn lp_norm(u: &GridFunction, p: f64, region: Option<&SubBox>) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("lp_norm needs p >= 1, got {p}")));
    }
    let grid = u.grid();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..grid.len() {
        if let Some(r) = region {
            if !r.contains(&grid.point(i)) {
                continue;
            }
        }
        count += 1;
        let m = u.magnitude_at(i);
        sum += if p == 2.0 { m * m } else { m.powf(p) };
    }
    if count == 0 {
        return Err(Error::invalid("lp_norm: region contains no grid nodes"));
    }
    Ok((sum * grid.cell_volume()).powf(1.0 / p))
}

/// Rectangle-rule `L_p` norm of a uniformly spaced 1-D sample.
pub fn lp_norm_lane(values: &[C64], h: f64, p: f64) -> f64 {
    let s: f64 = values.iter().map(|v| v.norm().powf(p)).sum();
    (s * h).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn periodic_2d(n: usize) -> Arc<BoxGrid> {
        Arc::new(
            BoxGrid::new(vec![
                Axis::new(0.0, 2.0 * PI, n, true).unwrap(),
                Axis::new(0.0, 2.0 * PI, n, true).unwrap(),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(Axis::new(1.0, 1.0, 8, true).is_err());
        assert!(Axis::new(0.0, 1.0, 3, false).is_err());
        assert!(BoxGrid::new(vec![Axis::new(0.0, 1.0, 8, false).unwrap()]).is_err());
    }

    #[test]
    fn spacing_follows_periodicity() {
        let p = Axis::new(0.0, 1.0, 10, true).unwrap();
        let q = Axis::new(0.0, 1.0, 11, false).unwrap();
        assert_eq!(p.spacing(), 0.1);
        assert_eq!(q.spacing(), 0.1);
        assert!((q.coord(10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_and_multi_roundtrip() {
        let g = BoxGrid::new(vec![
            Axis::new(0.0, 1.0, 5, false).unwrap(),
            Axis::new(0.0, 1.0, 4, true).unwrap(),
            Axis::new(0.0, 1.0, 6, true).unwrap(),
        ])
        .unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat(&g.multi(i)), i);
        }
        assert_eq!(g.strides(), &[24, 6, 1]);
    }

    #[test]
    fn norm_of_one_is_volume_power() {
        let g = periodic_2d(16);
        let u = GridFunction::from_real_fn(g.clone(), |_| 1.0);
        for p in [1.0, 2.0, 3.5] {
            let v = lp_norm(&u, p, None).unwrap();
            assert!((v - g.volume().powf(1.0 / p)).abs() < 1e-12 * v);
        }
        assert_eq!(lp_norm(&GridFunction::zeros(g), 2.0, None).unwrap(), 0.0);
    }

    #[test]
    fn norm_of_sine_is_sqrt_pi() {
        let g = Arc::new(
            BoxGrid::new(vec![
                Axis::new(0.0, 2.0 * PI, 64, true).unwrap(),
                Axis::new(0.0, 1.0, 4, true).unwrap(),
            ])
            .unwrap(),
        );
        let u = GridFunction::from_real_fn(g, |x| x[0].sin());
        assert!((lp_norm(&u, 2.0, None).unwrap() - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norm_rejects_bad_p_and_empty_region() {
        let g = periodic_2d(8);
        let u = GridFunction::zeros(g);
        assert!(lp_norm(&u, 0.5, None).is_err());
        let empty = SubBox::new(vec![100.0, 100.0], vec![101.0, 101.0]);
        assert!(lp_norm(&u, 2.0, Some(&empty)).is_err());
    }

    #[test]
    fn subbox_restricts_norm() {
        let g = periodic_2d(32);
        let u = GridFunction::from_real_fn(g.clone(), |_| 1.0);
        let h = g.spacing(0);
        // 8 nodes per axis in [0, 7h]
        let r = SubBox::new(vec![0.0, 0.0], vec![7.0 * h, 7.0 * h]);
        let v = lp_norm(&u, 1.0, Some(&r)).unwrap();
        assert!((v - 64.0 * h * h).abs() < 1e-12);
    }
}
