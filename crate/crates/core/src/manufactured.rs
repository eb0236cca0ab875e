//! Manufactured solutions: products of one-dimensional profiles with analytic
//! derivatives, and their exact forcing `f = Lu − λu`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::EllipticOperator;
use crate::error::{Error, Result};
use crate::grid::{BoxGrid, GridFunction, C64};

/// One-dimensional building block of a manufactured field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `exp(−(t − center)²/width²)`
    Gaussian { center: f64, width: f64 },
    /// `t · exp(−t²/width²)`
    OddGaussian { width: f64 },
    /// `exp(κ (cos(2π(t − center)/period) − 1))`, smooth and periodic
    PeriodicBump { center: f64, period: f64, kappa: f64 },
    /// `sin(k t + phase)`
    Wave { k: f64, phase: f64 },
    Constant,
}

impl Profile {
    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        match *self {
            Profile::Gaussian { center, width } => {
                let s = (t - center) / width;
                let e = (-s * s).exp();
                let d1 = -2.0 * s / width * e;
                let d2 = (4.0 * s * s - 2.0) / (width * width) * e;
                [e, d1, d2]
            }
            Profile::OddGaussian { width } => {
                let w2 = width * width;
                let e = (-t * t / w2).exp();
                [t * e, (1.0 - 2.0 * t * t / w2) * e, (4.0 * t * t * t / (w2 * w2) - 6.0 * t / w2) * e]
            }
            Profile::PeriodicBump { center, period, kappa } => {
                let om = 2.0 * PI / period;
                let th = om * (t - center);
                let e = (kappa * (th.cos() - 1.0)).exp();
                let d1 = -kappa * om * th.sin() * e;
                let d2 = (kappa * kappa * om * om * th.sin().powi(2) - kappa * om * om * th.cos()) * e;
                [e, d1, d2]
            }
            Profile::Wave { k, phase } => {
                let a = k * t + phase;
                [a.sin(), k * a.cos(), -k * k * a.sin()]
            }
            Profile::Constant => [1.0, 0.0, 0.0],
        }
    }
}

/// `u(x) = Π_j P_j(xʲ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manufactured {
    pub profiles: Vec<Profile>,
}

impl Manufactured {
    pub fn new(profiles: Vec<Profile>) -> Self {
        Manufactured { profiles }
    }

    /// The named solutions understood by configuration files, adapted to
    /// `grid`: a periodic bump on every periodic axis and a Gaussian on the
    /// others, with an `x¹` factor chosen by name.
    ///
    /// | name       | `x¹` factor                              |
    /// |------------|------------------------------------------|
    /// | `gaussian` | `exp(−(x¹)²)`                            |
    /// | `odd`      | `x¹ exp(−(x¹)²)`, vanishes on the wall   |
    /// | `even`     | `exp(−(x¹)²)`, zero wall derivative      |
    /// | `shifted`  | `exp(−(x¹ − ½)²)`, generic wall data     |
    /// | `x1_only`  | `exp(−(x¹)²)` with constant `x′` factor  |
    pub fn by_name(name: &str, grid: &BoxGrid) -> Result<Self> {
        let first = match name {
            "gaussian" | "even" | "x1_only" => Profile::Gaussian { center: 0.0, width: 1.0 },
            "odd" => Profile::OddGaussian { width: 1.0 },
            "shifted" => Profile::Gaussian { center: 0.5, width: 1.0 },
            other => {
                return Err(Error::config(
                    "manufactured",
                    format!("unknown manufactured solution {other:?} (expected gaussian, odd, even, shifted, x1_only)"),
                ))
            }
        };
        let mut profiles = vec![first];
        for ax in &grid.axes()[1..] {
            let mid = 0.5 * (ax.lo + ax.hi);
            profiles.push(if name == "x1_only" {
                Profile::Constant
            } else if ax.periodic {
                Profile::PeriodicBump { center: mid, period: ax.length(), kappa: 2.0 }
            } else {
                Profile::Gaussian { center: mid, width: 0.15 * ax.length() }
            });
        }
        Ok(Manufactured { profiles })
    }

    pub fn dim(&self) -> usize {
        self.profiles.len()
    }

    fn tables(&self, x: &[f64]) -> Vec<[f64; 3]> {
        self.profiles.iter().zip(x).map(|(p, &t)| p.eval(t)).collect()
    }

    fn product(t: &[[f64; 3]], orders: &[usize]) -> f64 {
        t.iter().zip(orders).map(|(v, &o)| v[o]).product()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tables(x).iter().map(|v| v[0]).product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = self.tables(x);
        let d = self.dim();
        (0..d)
            .map(|j| {
                let mut o = vec![0; d];
                o[j] = 1;
                Self::product(&t, &o)
            })
            .collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let t = self.tables(x);
        let d = self.dim();
        let mut h = vec![vec![0.0; d]; d];
        for j in 0..d {
            for k in 0..d {
                let mut o = vec![0; d];
                o[j] += 1;
                o[k] += 1;
                h[j][k] = Self::product(&t, &o);
            }
        }
        h
    }

    /// `a^{jk}u_{jk} + bʲu_j + cu − λu` evaluated analytically at `x`.
    pub fn forcing_at(&self, op: &EllipticOperator, lambda: f64, x: &[f64]) -> f64 {
        let a = op.a_at(x);
        let h = self.hessian(x);
        let g = self.gradient(x);
        let b = op.b_at(x);
        let d = self.dim();
        let mut f = 0.0;
        for j in 0..d {
            for k in 0..d {
                f += a[(j, k)] * h[j][k];
            }
            f += b[j] * g[j];
        }
        f + (op.c_at(x) - lambda) * self.value(x)
    }

    pub fn sample(&self, grid: Arc<BoxGrid>) -> Result<GridFunction> {
        self.check_dim(&grid)?;
        Ok(GridFunction::from_real_fn(grid, |x| self.value(x)))
    }

    pub fn forcing(&self, op: &EllipticOperator, lambda: f64, grid: Arc<BoxGrid>) -> Result<GridFunction> {
        self.check_dim(&grid)?;
        if op.dim() != grid.dim() {
            return Err(Error::invalid("operator and grid dimensions differ"));
        }
        Ok(GridFunction::from_fn(grid, |x| C64::new(self.forcing_at(op, lambda, x), 0.0)))
    }

    fn check_dim(&self, grid: &BoxGrid) -> Result<()> {
        if grid.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "manufactured solution is {}-d but grid is {}-d",
                self.dim(),
                grid.dim()
            )));
        }
        Ok(())
    }
}
