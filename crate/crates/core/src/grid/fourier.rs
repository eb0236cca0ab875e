use rustfft::{FftDirection, FftPlanner};

use super::{BoxGrid, GridFunction, C64};
use crate::error::{Error, Result};

fn check_axes(grid: &BoxGrid, axes: &[usize]) -> Result<()> {
    for &a in axes {
        if a >= grid.dim() {
            return Err(Error::invalid(format!("axis {a} out of range")));
        }
        if !grid.axis(a).periodic {
            return Err(Error::invalid(format!("axis {a} is not periodic; cannot take modes along it")));
        }
    }
    Ok(())
}

fn transform(u: &GridFunction, axes: &[usize], direction: FftDirection) -> Result<GridFunction> {
    let grid = u.grid();
    check_axes(grid, axes)?;
    let mut planner = FftPlanner::<f64>::new();
    let mut comps = u.components().to_vec();
    for &axis in axes {
        let n = grid.axis(axis).n;
        let stride = grid.strides()[axis];
        let fft = planner.plan_fft(n, direction);
        let scale = match direction {
            FftDirection::Forward => 1.0 / n as f64,
            FftDirection::Inverse => 1.0,
        };
        let starts = grid.lane_starts(axis);
        let mut lane = vec![C64::new(0.0, 0.0); n];
        for comp in comps.iter_mut() {
            for &s in &starts {
                for (i, v) in lane.iter_mut().enumerate() {
                    *v = comp[s + i * stride];
                }
                fft.process(&mut lane);
                for (i, v) in lane.iter().enumerate() {
                    comp[s + i * stride] = *v * scale;
                }
            }
        }
    }
    GridFunction::new(u.grid_arc().clone(), u.rank(), comps)
}

/// Fourier-series coefficients along the given periodic axes.
///
/// Normalised so that `u(x) = Σ_k û_k e^{i ξ_k (x - lo)}`: a constant field
/// maps to its value in slot 0 and `e^{i m x}` on `[0, 2π)` to a single unit
/// coefficient in slot `m`. Slot `k` of axis `a` has frequency
/// `grid.axis(a).frequency(k)`.
pub fn forward_modes(u: &GridFunction, axes: &[usize]) -> Result<GridFunction> {
    transform(u, axes, FftDirection::Forward)
}

pub fn inverse_modes(u: &GridFunction, axes: &[usize]) -> Result<GridFunction> {
    transform(u, axes, FftDirection::Inverse)
}

/// The `x′` part of a node's DFT slot.
#[derive(Clone, Debug)]
pub struct ModeIndex {
    pub slots: Vec<usize>,
    pub xi: Vec<f64>,
    pub nyquist: Vec<bool>,
}

impl ModeIndex {
    pub fn of(grid: &BoxGrid, multi: &[usize]) -> Self {
        let slots = multi[1..].to_vec();
        let xi = slots.iter().enumerate().map(|(j, &k)| grid.axis(j + 1).frequency(k)).collect();
        let nyquist = slots.iter().enumerate().map(|(j, &k)| grid.axis(j + 1).is_nyquist(k)).collect();
        ModeIndex { slots, xi, nyquist }
    }

    pub fn xi_norm_sqr(&self) -> f64 {
        self.xi.iter().map(|x| x * x).sum()
    }

    /// Linear index of this slot among the `x′` modes (row-major).
    pub fn linear(&self, grid: &BoxGrid) -> usize {
        self.slots
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &k)| acc * grid.axis(j + 1).n + k)
    }
}

/// Applies a Fourier multiplier in `x′` that may vary with the `x¹` index:
/// transforms along every axis but the first, multiplies node
/// `(i0, k′)` by `m(i0, k′)`, and transforms back.
pub fn xprime_multiplier(u: &GridFunction, m: impl Fn(usize, &ModeIndex) -> C64) -> Result<GridFunction> {
    let grid = u.grid();
    let axes: Vec<usize> = (1..grid.dim()).collect();
    let hat = forward_modes(u, &axes)?;
    let mut comps = hat.into_components();
    for i in 0..grid.len() {
        let multi = grid.multi(i);
        let factor = m(multi[0], &ModeIndex::of(grid, &multi));
        for c in comps.iter_mut() {
            c[i] *= factor;
        }
    }
    inverse_modes(&GridFunction::new(u.grid_arc().clone(), u.rank(), comps)?, &axes)
}
