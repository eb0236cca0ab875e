//! Seeded random coefficient families.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EllipticOperator, Mat, MatrixField, ScalarField, VectorField};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Identity,
    Constant,
    MeasurableX1,
    VmoOscillatory,
    CheckerboardX1,
}

/// Key-value description of a coefficient family.
///
/// | key           | meaning                                                   |
/// |---------------|-----------------------------------------------------------|
/// | `kind`        | `identity`, `constant`, `measurable_x1`, `vmo_oscillatory`, `checkerboard_x1` |
/// | `seed`        | RNG seed of the draw                                      |
/// | `delta`       | ellipticity constant δ ∈ (0, 1]                           |
/// | `epsilon`     | amplitude of the `x′` oscillation (`vmo_oscillatory`)     |
/// | `R0` / `r0`   | length scale of the `x′` oscillation                      |
/// | `K` / `k`     | bound on `b`, `c`                                          |
/// | `lower_order` | amplitude of the (x¹-dependent) `b`, `c`; 0 disables them |
/// | `pieces`      | number of constant pieces in `x¹`                          |
/// | `x1_extent`   | `[lo, hi]` range carrying the jumps                       |
/// | `jump_spacing`| reference spacing for jump placement                      |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFamily {
    pub kind: FamilyKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_one", alias = "R0")]
    pub r0: f64,
    #[serde(default = "default_one", alias = "K")]
    pub k: f64,
    #[serde(default)]
    pub lower_order: f64,
    #[serde(default = "default_pieces")]
    pub pieces: usize,
    #[serde(default = "default_extent")]
    pub x1_extent: [f64; 2],
    #[serde(default = "default_spacing")]
    pub jump_spacing: f64,
}

fn default_delta() -> f64 {
    0.2
}
fn default_one() -> f64 {
    1.0
}
fn default_pieces() -> usize {
    12
}
fn default_extent() -> [f64; 2] {
    [-4.0, 4.0]
}
fn default_spacing() -> f64 {
    0.125
}

impl Default for CoefficientFamily {
    fn default() -> Self {
        CoefficientFamily {
            kind: FamilyKind::Identity,
            seed: 0,
            delta: default_delta(),
            epsilon: 0.0,
            r0: 1.0,
            k: 1.0,
            lower_order: 0.0,
            pieces: default_pieces(),
            x1_extent: default_extent(),
            jump_spacing: default_spacing(),
        }
    }
}

/// Projects the spectrum of a symmetric matrix into `[lo, hi]`.
pub fn clamp_spectrum(m: &Mat, lo: f64, hi: f64) -> Mat {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    let q = &eig.eigenvectors;
    let r = q * Mat::from_diagonal(&vals) * q.transpose();
    (&r + r.transpose()) * 0.5
}

// Keeps clamped spectra strictly inside [δ, δ⁻¹] despite reconstruction
// round-off.
const CLAMP_MARGIN: f64 = 1e-9;

fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Mat {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut w = Mat::zeros(d, d);
    for j in 0..d {
        for k in j..d {
            let v: f64 = rng.sample(StandardNormal);
            w[(j, k)] = v;
            w[(k, j)] = v;
        }
    }
    let s = Mat::identity(d, d) * mid + w * (half / (2.0 * d as f64).sqrt());
    clamp_spectrum(&s, lo * (1.0 + CLAMP_MARGIN), hi * (1.0 - CLAMP_MARGIN))
}

/// Piecewise-constant matrix table in `x¹`, looked up with left-closed
/// intervals.
#[derive(Clone, Debug)]
pub(crate) struct PiecewiseTable {
    pub breaks: Vec<f64>,
    pub values: Vec<Mat>,
}

impl PiecewiseTable {
    pub fn at(&self, t: f64) -> &Mat {
        &self.values[self.breaks.partition_point(|&b| b <= t)]
    }
}

impl CoefficientFamily {
    pub fn from_toml(text: &str) -> Result<Self> {
        let fam: CoefficientFamily =
            toml::from_str(text).map_err(|e| Error::config("coefficients", e.message().to_string()))?;
        fam.check()?;
        Ok(fam)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config("coefficients.delta", format!("must lie in (0, 1], got {}", self.delta)));
        }
        if !(self.k > 0.0) {
            return Err(Error::config("coefficients.K", format!("must be positive, got {}", self.k)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("coefficients.epsilon", "must be non-negative"));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::config("coefficients.R0", "must be positive"));
        }
        if !(self.lower_order >= 0.0 && self.lower_order <= self.k) {
            return Err(Error::config("coefficients.lower_order", "must lie in [0, K]"));
        }
        if self.pieces == 0 {
            return Err(Error::config("coefficients.pieces", "must be at least 1"));
        }
        if !(self.x1_extent[0] < self.x1_extent[1]) || !(self.jump_spacing > 0.0) {
            return Err(Error::config("coefficients.x1_extent", "needs lo < hi and a positive jump_spacing"));
        }
        if self.kind == FamilyKind::VmoOscillatory && self.delta + self.epsilon >= 1.0 / self.delta - self.epsilon {
            return Err(Error::config(
                "coefficients.epsilon",
                format!("epsilon {} too large for delta {}", self.epsilon, self.delta),
            ));
        }
        Ok(())
    }

    /// Jump locations `lo + (m + 1/π)·spacing` for distinct random integers
    /// `m`. The irrational offset keeps them off every node of grids whose
    /// nodes sit at rational multiples of the spacing.
    fn breakpoints(&self, rng: &mut ChaCha8Rng, count: usize, regular: bool) -> Vec<f64> {
        let [lo, hi] = self.x1_extent;
        let slots = ((hi - lo) / self.jump_spacing).floor() as usize;
        let mut ms: Vec<usize> = if regular || count >= slots.saturating_sub(1) {
            let step = (slots / (count + 1)).max(1);
            (1..=count).map(|i| i * step).filter(|&m| m < slots).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < count {
                picked.insert(rng.random_range(1..slots));
            }
            picked.into_iter().collect()
        };
        ms.sort_unstable();
        ms.into_iter().map(|m| lo + (m as f64 + 1.0 / PI) * self.jump_spacing).collect()
    }

    fn table(&self, rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> PiecewiseTable {
        let breaks = self.breakpoints(rng, self.pieces - 1, false);
        let values = (0..=breaks.len()).map(|_| random_spd(rng, d, lo, hi)).collect();
        PiecewiseTable { breaks, values }
    }

    fn checkerboard(&self, rng: &mut ChaCha8Rng, d: usize) -> PiecewiseTable {
        let breaks = self.breakpoints(rng, self.pieces.max(2) - 1, true);
        let (lo, hi) = (self.delta * (1.0 + CLAMP_MARGIN), (1.0 / self.delta) * (1.0 - CLAMP_MARGIN));
        let rot = random_spd(rng, d, 0.5, 2.0).symmetric_eigen().eigenvectors;
        let mut diag_a = vec![hi; d];
        diag_a[0] = lo;
        let mut diag_b = vec![lo; d];
        diag_b[0] = hi;
        let build = |diag: Vec<f64>| {
            let m = &rot * Mat::from_diagonal(&nalgebra::DVector::from_vec(diag)) * rot.transpose();
            (&m + m.transpose()) * 0.5
        };
        let (ma, mb) = (build(diag_a), build(diag_b));
        let values = (0..=breaks.len()).map(|i| if i % 2 == 0 { ma.clone() } else { mb.clone() }).collect();
        PiecewiseTable { breaks, values }
    }

    /// Draws an operator of dimension `dim` satisfying the declared constants
    /// by construction.
    pub fn draw(&self, dim: usize) -> Result<EllipticOperator> {
        self.check()?;
        if dim < 2 {
            return Err(Error::invalid("family draws need dim >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (delta, k) = (self.delta, self.k);
        let margin_lo = delta * (1.0 + CLAMP_MARGIN);
        let margin_hi = (1.0 / delta) * (1.0 - CLAMP_MARGIN);
        let a: MatrixField = match self.kind {
            FamilyKind::Identity => Arc::new(move |_| Mat::identity(dim, dim)),
            FamilyKind::Constant => {
                let m = random_spd(&mut rng, dim, margin_lo, margin_hi);
                Arc::new(move |_| m.clone())
            }
            FamilyKind::MeasurableX1 => {
                let t = self.table(&mut rng, dim, margin_lo, margin_hi);
                Arc::new(move |x| t.at(x[0]).clone())
            }
            FamilyKind::CheckerboardX1 => {
                let t = self.checkerboard(&mut rng, dim);
                Arc::new(move |x| t.at(x[0]).clone())
            }
            FamilyKind::VmoOscillatory => {
                let eps = self.epsilon;
                let t = self.table(&mut rng, dim, margin_lo + eps, margin_hi - eps);
                let osc = OscillationField::draw(&mut rng, dim);
                let r0 = self.r0;
                Arc::new(move |x| t.at(x[0]) + osc.at(&x[1..], r0) * eps)
            }
        };
        let mut op = EllipticOperator::new(dim, a, delta, k)?;
        if self.lower_order > 0.0 {
            let amp = self.lower_order;
            let phases: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let b: VectorField = Arc::new(move |x| phases.iter().map(|p| amp * (x[0] + p).sin()).collect());
            let c: ScalarField = Arc::new(move |x| -0.5 * amp * (1.0 + x[0].cos()));
            op = op.with_drift(b).with_potential(c);
        }
        Ok(op)
    }
}

/// Smooth symmetric matrix field `B(y)` with spectral norm at most one and
/// period `2π` in each coordinate of `y`.
#[derive(Clone, Debug)]
struct OscillationField {
    dim: usize,
    phases: Vec<f64>,
}

impl OscillationField {
    fn draw(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let phases = (0..dim * dim * (dim - 1)).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        OscillationField { dim, phases }
    }

    fn at(&self, xprime: &[f64], r0: f64) -> Mat {
        let d = self.dim;
        let m = d - 1;
        let mut out = Mat::zeros(d, d);
        for j in 0..d {
            for k in j..d {
                let mut v = 0.0;
                for (q, y) in xprime.iter().enumerate() {
                    v += (y / r0 + self.phases[(j * d + k) * m + q]).cos();
                }
                // entries bounded by 1/d keep the Frobenius (hence spectral)
                // norm at most 1
                v /= (m * d) as f64;
                out[(j, k)] = v;
                out[(k, j)] = v;
            }
        }
        out
    }
}
