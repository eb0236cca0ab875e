use super::{GridFunction, Rank, C64};
use crate::error::{Error, Result};

/// Second-order finite difference along one lane of `n` values spaced by
/// `stride` in `src`, written into the same positions of `dst`.
///
/// Interior nodes use central stencils, periodic lanes wrap, and the ends of
/// non-periodic lanes use second-order one-sided stencils.
pub fn diff_lane(src: &[C64], dst: &mut [C64], start: usize, stride: usize, n: usize, h: f64, periodic: bool, order: u8) {
    let at = |i: usize| src[start + i * stride];
    let inv = match order {
        1 => 1.0 / (2.0 * h),
        _ => 1.0 / (h * h),
    };
    for i in 0..n {
        let v = if periodic || (i > 0 && i + 1 < n) {
            let (l, r) = if periodic { ((i + n - 1) % n, (i + 1) % n) } else { (i - 1, i + 1) };
            match order {
                1 => (at(r) - at(l)) * inv,
                _ => (at(r) - at(i) * 2.0 + at(l)) * inv,
            }
        } else if i == 0 {
            match order {
                1 => (at(0) * -3.0 + at(1) * 4.0 - at(2)) * inv,
                _ => (at(0) * 2.0 - at(1) * 5.0 + at(2) * 4.0 - at(3)) * inv,
            }
        } else {
            let m = n - 1;
            match order {
                1 => (at(m) * 3.0 - at(m - 1) * 4.0 + at(m - 2)) * inv,
                _ => (at(m) * 2.0 - at(m - 1) * 5.0 + at(m - 2) * 4.0 - at(m - 3)) * inv,
            }
        };
        dst[start + i * stride] = v;
    }
}

/// Finite-difference derivative of a scalar field along `axis`.
pub fn diff(u: &GridFunction, axis: usize, order: u8) -> Result<GridFunction> {
    if u.rank() != Rank::Scalar {
        return Err(Error::invalid("diff needs a scalar field"));
    }
    let grid = u.grid();
    if axis >= grid.dim() {
        return Err(Error::invalid(format!("axis {axis} out of range for a {}-d grid", grid.dim())));
    }
    if order != 1 && order != 2 {
        return Err(Error::invalid(format!("derivative order must be 1 or 2, got {order}")));
    }
    let a = grid.axis(axis);
    let stride = grid.strides()[axis];
    let src = u.values();
    let mut dst = vec![C64::new(0.0, 0.0); src.len()];
    for start in grid.lane_starts(axis) {
        diff_lane(src, &mut dst, start, stride, a.n, a.spacing(), a.periodic, order);
    }
    GridFunction::scalar(u.grid_arc().clone(), dst)
}

/// `u_{x^j x^k}`: the order-2 stencil when `j == k`, otherwise two composed
/// first differences.
pub fn mixed(u: &GridFunction, j: usize, k: usize) -> Result<GridFunction> {
    if j == k {
        diff(u, j, 2)
    } else {
        diff(&diff(u, j, 1)?, k, 1)
    }
}

pub fn gradient(u: &GridFunction) -> Result<GridFunction> {
    let d = u.grid().dim();
    let comps = (0..d)
        .map(|j| diff(u, j, 1).map(GridFunction::into_values))
        .collect::<Result<Vec<_>>>()?;
    GridFunction::new(u.grid_arc().clone(), Rank::Vector, comps)
}

/// Full (symmetric) Hessian as a matrix-rank field.
pub fn hessian(u: &GridFunction) -> Result<GridFunction> {
    let d = u.grid().dim();
    let mut comps = vec![Vec::new(); d * d];
    for j in 0..d {
        for k in j..d {
            let v = mixed(u, j, k)?.into_values();
            if j != k {
                comps[k * d + j] = v.clone();
            }
            comps[j * d + k] = v;
        }
    }
    GridFunction::new(u.grid_arc().clone(), Rank::Matrix, comps)
}
