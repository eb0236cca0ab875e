//! Mean oscillation of the leading coefficients in the `x′` variables.
//!
//! For a cylinder `Q_r(x) = (x¹ − r, x¹ + r) × B′_r(x′)` the oscillation is
//! `r⁻¹|B′_r|⁻² ∫∫∫ |a(t, y′) − a(t, z′)| dy′ dz′ dt`, i.e. twice the mean of
//! the Frobenius distance over uniform `(t, y′, z′)`. The modulus at scale `R`
//! is the largest oscillation over cylinders of radius at most `R`; here the
//! sup runs over a sample of centres and radii, so it is a lower bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::Mat;
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 64;
const SHIFTS: usize = 8;
const PRIMES: [u8; 15] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47];

#[derive(Clone, Debug, PartialEq)]
pub struct Cylinder {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Cylinder {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() < 2 || !(radius > 0.0) {
            return Err(Error::invalid("a cylinder needs a centre in d >= 2 and a positive radius"));
        }
        Ok(Cylinder { center, radius })
    }
}

/// An estimate with its standard error over randomised QMC replicas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn frobenius_distance(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm()
}

/// Randomised quasi-Monte Carlo estimate of the oscillation over `q` with
/// `samples` points in total, split over eight Cranley–Patterson shifts of a
/// Halton sequence. Points of the ball are drawn by rejection from the
/// bounding cube.
pub fn osc_xprime<F>(a: &F, q: &Cylinder, samples: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Mat + Sync + ?Sized,
{
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!("osc_xprime needs at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let d = q.center.len();
    let m = d - 1;
    let qdim = 1 + 2 * m;
    if qdim > PRIMES.len() {
        return Err(Error::invalid("dimension too large for the Halton bases"));
    }
    let r = q.radius;
    let per_shift = samples.div_ceil(SHIFTS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..SHIFTS).map(|_| (0..qdim).map(|_| rng.random::<f64>()).collect()).collect();

    let means: Vec<f64> = shifts
        .par_iter()
        .map(|shift| {
            let mut sum = 0.0;
            let mut accepted = 0;
            let mut index = 1usize;
            let mut y = q.center.clone();
            let mut z = q.center.clone();
            while accepted < per_shift {
                let u: Vec<f64> = (0..qdim).map(|k| (halton::number(PRIMES[k], index) + shift[k]).fract()).collect();
                index += 1;
                let t = q.center[0] + r * (2.0 * u[0] - 1.0);
                let (mut ny, mut nz) = (0.0, 0.0);
                for j in 0..m {
                    let oy = r * (2.0 * u[1 + j] - 1.0);
                    let oz = r * (2.0 * u[1 + m + j] - 1.0);
                    ny += oy * oy;
                    nz += oz * oz;
                    y[1 + j] = q.center[1 + j] + oy;
                    z[1 + j] = q.center[1 + j] + oz;
                }
                if m > 1 && (ny > r * r || nz > r * r) {
                    continue;
                }
                y[0] = t;
                z[0] = t;
                sum += frobenius_distance(&a(&y), &a(&z));
                accepted += 1;
            }
            2.0 * sum / per_shift as f64
        })
        .collect();

    let n = means.len() as f64;
    let value = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value, stderr: (var / n).sqrt() })
}

/// Sampled modulus: the largest oscillation over all `(centre, radius)` pairs
/// with radius at most `r_max`.
pub fn vmo_modulus<F>(a: &F, r_max: f64, centers: &[Vec<f64>], radii: &[f64], samples: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Mat + Sync + ?Sized,
{
    if centers.is_empty() || radii.is_empty() {
        return Err(Error::invalid("vmo_modulus needs centres and radii"));
    }
    if let Some(r) = radii.iter().find(|&&r| r > r_max) {
        return Err(Error::invalid(format!("radius {r} exceeds R = {r_max}")));
    }
    let table = oscillation_table(a, centers, radii, samples, seed)?;
    Ok(table.into_iter().flatten().fold(Estimate { value: 0.0, stderr: 0.0 }, |best, e| {
        if e.value > best.value {
            e
        } else {
            best
        }
    }))
}

// table[i][c]: oscillation at radii[i] around centers[c]
fn oscillation_table<F>(a: &F, centers: &[Vec<f64>], radii: &[f64], samples: usize, seed: u64) -> Result<Vec<Vec<Estimate>>>
where
    F: Fn(&[f64]) -> Mat + Sync + ?Sized,
{
    radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            centers
                .par_iter()
                .enumerate()
                .map(|(c, x)| {
                    let s = seed.wrapping_add((i * centers.len() + c) as u64);
                    osc_xprime(a, &Cylinder::new(x.clone(), r)?, samples, s)
                })
                .collect()
        })
        .collect()
}

/// Sampled modulus at several scales together with the fitted envelope.
#[derive(Clone, Debug, Serialize)]
pub struct VmoReport {
    /// Decreasing scales `R₁ > … > R_m`.
    pub radii: Vec<f64>,
    pub modulus: Vec<f64>,
    pub stderr: Vec<f64>,
    pub omega_fit: Vec<f64>,
}

/// Evaluates the modulus at every scale in `scales`, using every radius of
/// `scales` not exceeding it. Sharing one oscillation table makes the result
/// non-decreasing in `R` exactly.
pub fn vmo_report<F>(a: &F, scales: &[f64], centers: &[Vec<f64>], samples: usize, seed: u64) -> Result<VmoReport>
where
    F: Fn(&[f64]) -> Mat + Sync + ?Sized,
{
    if scales.is_empty() {
        return Err(Error::invalid("vmo_report needs at least one scale"));
    }
    let mut radii = scales.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    radii.dedup();
    let table = oscillation_table(a, centers, &radii, samples, seed)?;
    let mut modulus = Vec::with_capacity(radii.len());
    let mut stderr = Vec::with_capacity(radii.len());
    for i in 0..radii.len() {
        let best = table[i..]
            .iter()
            .flatten()
            .fold(Estimate { value: 0.0, stderr: 0.0 }, |b, e| if e.value > b.value { *e } else { b });
        modulus.push(best.value);
        stderr.push(best.stderr);
    }
    let fit = fit_omega(&radii.iter().copied().zip(modulus.iter().copied()).collect::<Vec<_>>())?;
    let omega_fit = radii.iter().map(|&r| fit.eval(r)).collect();
    Ok(VmoReport { radii, modulus, stderr, omega_fit })
}

/// Monotone envelope of a modulus table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaFit {
    /// Increasing radii with the running maximum of the table.
    pub knots: Vec<(f64, f64)>,
    pub at_zero: f64,
}

impl OmegaFit {
    /// On `(R_i, R_{i+1}]` the envelope takes the value at `R_{i+1}`; beyond
    /// the largest radius it stays constant; below the smallest radius it is
    /// the straight line from `ω(0)` to the first knot.
    pub fn eval(&self, r: f64) -> f64 {
        let (r1, w1) = self.knots[0];
        if r <= 0.0 {
            return self.at_zero;
        }
        if r < r1 {
            return self.at_zero + (w1 - self.at_zero) * r / r1;
        }
        let i = self.knots.partition_point(|&(ri, _)| ri < r);
        self.knots[i.min(self.knots.len() - 1)].1
    }
}

/// Least non-decreasing step majorant of `(R, modulus)` pairs; independent of
/// the order of the table.
pub fn fit_omega(table: &[(f64, f64)]) -> Result<OmegaFit> {
    if table.is_empty() {
        return Err(Error::invalid("fit_omega needs a nonempty table"));
    }
    if table.iter().any(|&(r, m)| !(r > 0.0) || !(m >= 0.0)) {
        return Err(Error::invalid("fit_omega needs positive radii and non-negative moduli"));
    }
    let mut sorted = table.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    let mut run = 0.0f64;
    for (r, m) in sorted {
        run = run.max(m);
        match knots.last_mut() {
            Some(last) if last.0 == r => last.1 = run,
            _ => knots.push((r, run)),
        }
    }
    let at_zero = if knots.len() >= 2 {
        let ((r1, w1), (r2, w2)) = (knots[0], knots[1]);
        (w1 - (w2 - w1) / (r2 - r1) * r1).clamp(0.0, w1)
    } else {
        knots[0].1
    };
    Ok(OmegaFit { knots, at_zero })
}

/// A tensor grid of `per_axis^d` centres covering `[lo, hi]` per axis.
pub fn box_centers(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut i| {
            (0..d)
                .map(|j| {
                    let k = i % per_axis;
                    i /= per_axis;
                    lo[j] + (hi[j] - lo[j]) * (k as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}
