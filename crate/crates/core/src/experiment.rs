//! Experiment configuration and the runs behind each command-line
//! subcommand. Every run reads one TOML file, writes its CSV reports and
//! solution files into an output directory, and finishes with a JSON
//! manifest.
//!
//! ```toml
//! name = "smoke"
//! seeds = [0, 1]
//! lambdas = [4.0, 16.0]      # a single number is accepted too
//! p = [2.0, 4.0]
//! manufactured = "auto"      # or gaussian, odd, even, shifted, x1_only
//!
//! [coefficients]             # see CoefficientFamily; `seed` is overridden
//! kind = "vmo_oscillatory"
//! epsilon = 0.05
//!
//! [grid]
//! dim = 2
//! x1 = 4.0                   # whole box [-x1, x1], half box [0, x1]
//! n1 = 65
//! xprime = [-3.141592653589793, 3.141592653589793]
//! nprime = 32
//! refinements = 1            # extra levels, each halving every spacing
//!
//! [boundary]
//! kind = "oblique"           # dirichlet, neumann, oblique, robin
//! ell = [1.0, 0.3]
//! sigma = 0.5
//! g = "manufactured"         # or "zero"
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{CoefficientFamily, EllipticOperator, FamilyKind};
use crate::diagnostics::{radius_ladder, sharp_inequality_check, SharpCheckConfig};
use crate::error::{Error, Result};
use crate::grid::{lp_norm, read_binary, write_binary, BoxGrid, GridFunction};
use crate::halfspace::{self, oblique_estimate_ratio, BoundaryCondition, HalfSpaceProblem, SolveOptions};
use crate::manufactured::Manufactured;
use crate::mode_solver::{solve_whole_space_x1, XprimeSymbol};
use crate::vmo::{box_centers, vmo_report};
use crate::whole_space::{self, apriori_ratio, sobolev_norms};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Modes,
    Halfspace,
    Vmo,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Modes => "modes",
            Command::Halfspace => "halfspace",
            Command::Vmo => "vmo",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    #[default]
    Dirichlet,
    Neumann,
    Oblique,
    Robin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryData {
    /// `ℓ·∇u + σu` of the manufactured solution on the wall.
    #[default]
    Manufactured,
    Zero,
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dim: usize,
    pub x1: f64,
    pub n1: usize,
    pub xprime: [f64; 2],
    pub nprime: usize,
    pub refinements: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dim: 2, x1: 4.0, n1: 65, xprime: [-std::f64::consts::PI, std::f64::consts::PI], nprime: 32, refinements: 0 }
    }
}

impl GridSpec {
    /// `(n1, nprime)` at refinement `level`.
    pub fn sizes(&self, level: usize) -> (usize, usize) {
        ((self.n1 - 1) * (1 << level) + 1, self.nprime << level)
    }

    pub fn whole(&self, level: usize) -> Result<Arc<BoxGrid>> {
        let (n1, np) = self.sizes(level);
        Ok(Arc::new(BoxGrid::standard(self.dim, (-self.x1, self.x1), n1, (self.xprime[0], self.xprime[1]), np)?))
    }

    pub fn half(&self, level: usize) -> Result<Arc<BoxGrid>> {
        let (n1, np) = self.sizes(level);
        Ok(Arc::new(BoxGrid::standard(self.dim, (0.0, self.x1), n1, (self.xprime[0], self.xprime[1]), np)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub maxiter: Option<usize>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { tol: whole_space::DEFAULT_TOL, maxiter: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySpec {
    pub kind: BcKind,
    /// Defaults to the conormal `(1, 0, …, 0)`.
    pub ell: Vec<f64>,
    pub sigma: f64,
    pub g: BoundaryData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmoSpec {
    pub radii: Vec<f64>,
    pub centers_per_axis: usize,
    pub samples: usize,
}

impl Default for VmoSpec {
    fn default() -> Self {
        VmoSpec { radii: vec![1.0, 0.5, 0.25, 0.125], centers_per_axis: 3, samples: 512 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpSpec {
    pub points: usize,
    /// Scale of the coefficient oscillation in the first term.
    pub r: f64,
    /// Defaults to the largest admissible value for each `p`.
    pub mu: Option<f64>,
    pub vmo_samples: usize,
}

impl Default for SharpSpec {
    fn default() -> Self {
        SharpSpec { points: 20, r: 0.5, mu: None, vmo_samples: 256 }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_lambdas() -> Vec<f64> {
    vec![4.0]
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_manufactured() -> String {
    "auto".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds", deserialize_with = "one_or_many")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambdas", deserialize_with = "one_or_many")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_p", deserialize_with = "one_or_many")]
    pub p: Vec<f64>,
    #[serde(default = "default_manufactured")]
    pub manufactured: String,
    /// Forcing read from a binary grid file instead of a manufactured
    /// solution (`solve` only); relative paths resolve against the config.
    #[serde(default)]
    pub forcing_file: Option<PathBuf>,
    #[serde(default)]
    pub coefficients: CoefficientFamily,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub vmo: VmoSpec,
    #[serde(default)]
    pub sharp: SharpSpec,
}

const MANUFACTURED: [&str; 6] = ["auto", "gaussian", "odd", "even", "shifted", "x1_only"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::config("lambdas", "at least one lambda is required"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::config("lambdas", format!("lambda must be positive and finite, got {l}")));
        }
        if self.p.is_empty() {
            return Err(Error::config("p", "at least one exponent is required"));
        }
        if let Some(p) = self.p.iter().find(|p| !(**p >= 1.0 && p.is_finite())) {
            return Err(Error::config("p", format!("p must be a finite number >= 1, got {p}")));
        }
        if !MANUFACTURED.contains(&self.manufactured.as_str()) {
            return Err(Error::config("manufactured", format!("unknown solution {:?}, expected one of {MANUFACTURED:?}", self.manufactured)));
        }
        let g = &self.grid;
        if !(2..=3).contains(&g.dim) {
            return Err(Error::config("grid.dim", format!("dimension must be 2 or 3, got {}", g.dim)));
        }
        if !(g.x1 > 0.0 && g.x1.is_finite()) {
            return Err(Error::config("grid.x1", format!("half-width must be positive, got {}", g.x1)));
        }
        if g.n1 < 5 {
            return Err(Error::config("grid.n1", format!("need at least 5 nodes, got {}", g.n1)));
        }
        if g.nprime < 4 {
            return Err(Error::config("grid.nprime", format!("need at least 4 nodes, got {}", g.nprime)));
        }
        if !(g.xprime[0] < g.xprime[1]) || g.xprime.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("grid.xprime", format!("empty extent {:?}", g.xprime)));
        }
        if g.refinements > 4 {
            return Err(Error::config("grid.refinements", format!("at most 4 refinement levels, got {}", g.refinements)));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(Error::config("solver.tol", format!("tolerance must lie in (0, 1), got {}", self.solver.tol)));
        }
        if self.solver.maxiter == Some(0) {
            return Err(Error::config("solver.maxiter", "must be positive"));
        }
        let b = &self.boundary;
        if !b.ell.is_empty() {
            if b.ell.len() != g.dim {
                return Err(Error::config("boundary.ell", format!("needs {} entries, got {}", g.dim, b.ell.len())));
            }
            if !(b.ell[0] > 0.0) || b.ell.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("boundary.ell", format!("first entry must be positive, got {:?}", b.ell)));
            }
        }
        if !b.sigma.is_finite() {
            return Err(Error::config("boundary.sigma", "must be finite"));
        }
        let v = &self.vmo;
        if v.radii.is_empty() || v.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::config("vmo.radii", "radii must be positive and non-empty"));
        }
        if v.centers_per_axis == 0 {
            return Err(Error::config("vmo.centers_per_axis", "must be positive"));
        }
        if v.samples < crate::vmo::MIN_SAMPLES {
            return Err(Error::config("vmo.samples", format!("need at least {}", crate::vmo::MIN_SAMPLES)));
        }
        let s = &self.sharp;
        if s.points == 0 {
            return Err(Error::config("sharp.points", "must be positive"));
        }
        if !(s.r > 0.0) {
            return Err(Error::config("sharp.r", format!("must be positive, got {}", s.r)));
        }
        if let Some(mu) = s.mu {
            if !(mu > 1.0) {
                return Err(Error::config("sharp.mu", format!("must exceed 1, got {mu}")));
            }
        }
        if s.vmo_samples < crate::vmo::MIN_SAMPLES {
            return Err(Error::config("sharp.vmo_samples", format!("need at least {}", crate::vmo::MIN_SAMPLES)));
        }
        self.coefficients.check()
    }

    fn ell(&self) -> Vec<f64> {
        if self.boundary.ell.is_empty() {
            let mut e = vec![0.0; self.grid.dim];
            e[0] = 1.0;
            e
        } else {
            self.boundary.ell.clone()
        }
    }

    fn manufactured_name(&self, command: Command) -> &str {
        if self.manufactured != "auto" {
            return &self.manufactured;
        }
        match (command, self.boundary.kind) {
            (Command::Halfspace, BcKind::Dirichlet) => "odd",
            (Command::Halfspace, BcKind::Neumann) => "even",
            (Command::Halfspace, _) => "shifted",
            _ => "gaussian",
        }
    }

    fn operator(&self, seed: u64) -> Result<EllipticOperator> {
        CoefficientFamily { seed, ..self.coefficients.clone() }.draw(self.grid.dim)
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.solver.tol, maxiter: self.solver.maxiter }
    }
}

/// A CSV table with a header row; values are kept as text so that the
/// written bytes are exactly reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip text, in exponent form for very small or large
/// magnitudes.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e9).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn grid_label(g: &BoxGrid) -> String {
    g.sizes().iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

fn family_label(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::Identity => "identity",
        FamilyKind::Constant => "constant",
        FamilyKind::MeasurableX1 => "measurable_x1",
        FamilyKind::VmoOscillatory => "vmo_oscillatory",
        FamilyKind::CheckerboardX1 => "checkerboard_x1",
    }
}

/// Relative sup-norm distance to a manufactured solution.
fn relative_error(u: &GridFunction, m: &Manufactured) -> Result<f64> {
    let exact = m.sample(u.grid_arc().clone())?;
    let scale = exact.max_abs();
    Ok(u.sub(&exact)?.max_abs() / if scale > 0.0 { scale } else { 1.0 })
}

/// What a run produced, before it is written out.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub fields: Vec<(String, GridFunction)>,
}

fn forcing_for(cfg: &ExperimentConfig, op: &EllipticOperator, lambda: f64, grid: Arc<BoxGrid>, base: &Path, command: Command) -> Result<(GridFunction, Option<Manufactured>)> {
    if let Some(path) = &cfg.forcing_file {
        let path = if path.is_relative() { base.join(path) } else { path.clone() };
        let f = read_binary(File::open(&path).map_err(|e| Error::config("forcing_file", format!("{}: {e}", path.display())))?)?;
        if f.grid() != grid.as_ref() {
            return Err(Error::config("forcing_file", "forcing grid does not match the configured grid"));
        }
        return Ok((f, None));
    }
    let m = Manufactured::by_name(cfg.manufactured_name(command), &grid)?;
    Ok((m.forcing(op, lambda, grid)?, Some(m)))
}

fn run_solve(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let mut t = Table::new(
        "solve",
        &["seed", "lambda", "p", "grid", "norm_u", "norm_du", "norm_d2u", "rho", "residual", "iterations", "error"],
    );
    let maxiter = |g: &BoxGrid| cfg.solver.maxiter.unwrap_or(10 * g.len());
    for &seed in &cfg.seeds {
        let op = cfg.operator(seed)?;
        for level in 0..=cfg.grid.refinements {
            let grid = cfg.grid.whole(level)?;
            for (k, &lambda) in cfg.lambdas.iter().enumerate() {
                let (f, m) = forcing_for(cfg, &op, lambda, grid.clone(), base, Command::Solve)?;
                let sol = whole_space::solve_problem_with(&op, &f, lambda, cfg.solver.tol, maxiter(&grid))?;
                let err = m.as_ref().map(|m| relative_error(&sol.u, m)).transpose()?;
                for &p in &cfg.p {
                    let [n0, n1, n2] = sobolev_norms(&sol.u, p, None)?;
                    let rho = apriori_ratio(&sol.u, &f, lambda, p, None)?;
                    t.push(vec![
                        seed.to_string(),
                        num(lambda),
                        num(p),
                        grid_label(&grid),
                        num(n0),
                        num(n1),
                        num(n2),
                        num(rho),
                        num(sol.residual),
                        sol.iterations.to_string(),
                        opt(err),
                    ]);
                }
                out.fields.push((format!("solution_s{seed}_r{level}_l{k}.bin"), sol.u));
            }
        }
    }
    out.tables.push(t);
    Ok(out)
}

fn run_modes(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let d = cfg.grid.dim;
    let mut header: Vec<String> = ["seed", "lambda", "grid"].iter().map(|s| s.to_string()).collect();
    header.extend((2..=d).map(|j| format!("xi_{j}")));
    header.extend(["residual", "n1_emp", "n2_emp"].iter().map(|s| s.to_string()));
    let mut modes = Table { name: "modes".into(), header, rows: Vec::new() };
    let mut summary = Table::new("modes_summary", &["seed", "lambda", "grid", "residual", "max_n1", "max_n2", "error"]);
    for &seed in &cfg.seeds {
        let op = cfg.operator(seed)?;
        for level in 0..=cfg.grid.refinements {
            let grid = cfg.grid.whole(level)?;
            for (k, &lambda) in cfg.lambdas.iter().enumerate() {
                let (f, m) = forcing_for(cfg, &op, lambda, grid.clone(), base, Command::Modes)?;
                let sol = solve_whole_space_x1(&op, &f, lambda, XprimeSymbol::Stencil)?;
                let (mut n1, mut n2) = (0.0f64, 0.0f64);
                for rec in &sol.modes {
                    let mut row = vec![seed.to_string(), num(lambda), grid_label(&grid)];
                    row.extend(rec.xi.iter().map(|x| num(*x)));
                    row.extend([num(rec.residual), num(rec.n1), num(rec.n2)]);
                    modes.rows.push(row);
                    n1 = n1.max(rec.n1);
                    n2 = n2.max(rec.n2);
                }
                let err = m.as_ref().map(|m| relative_error(&sol.u, m)).transpose()?;
                summary.push(vec![seed.to_string(), num(lambda), grid_label(&grid), num(sol.residual), num(n1), num(n2), opt(err)]);
                out.fields.push((format!("modes_s{seed}_r{level}_l{k}.bin"), sol.u));
            }
        }
    }
    out.tables.push(modes);
    out.tables.push(summary);
    Ok(out)
}

fn boundary_condition(cfg: &ExperimentConfig, m: &Manufactured, half: &BoxGrid) -> BoundaryCondition {
    let ell = cfg.ell();
    let sigma = if cfg.boundary.kind == BcKind::Robin { cfg.boundary.sigma } else { 0.0 };
    let trace = Arc::new(half.trace());
    let g = match cfg.boundary.g {
        BoundaryData::Zero => GridFunction::zeros(trace),
        BoundaryData::Manufactured => GridFunction::from_real_fn(trace, |xp| {
            let x: Vec<f64> = std::iter::once(0.0).chain(xp.iter().copied()).collect();
            let grad = m.gradient(&x);
            ell.iter().zip(&grad).map(|(l, g)| l * g).sum::<f64>() + sigma * m.value(&x)
        }),
    };
    match cfg.boundary.kind {
        BcKind::Dirichlet => BoundaryCondition::Dirichlet,
        BcKind::Neumann => BoundaryCondition::Neumann,
        BcKind::Oblique => BoundaryCondition::Oblique { ell, g },
        BcKind::Robin => BoundaryCondition::Robin { ell, sigma, g },
    }
}

fn run_halfspace(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let mut t = Table::new(
        "halfspace",
        &[
            "bc",
            "seed",
            "lambda",
            "p",
            "grid",
            "boundary_residual",
            "boundary_sup",
            "rho",
            "norm_u",
            "norm_du",
            "norm_d2u",
            "error",
            "symmetry_defect",
            "mirror_defect",
            "residual",
            "iterations",
        ],
    );
    let name = cfg.manufactured_name(Command::Halfspace);
    for &seed in &cfg.seeds {
        let op = cfg.operator(seed)?;
        for level in 0..=cfg.grid.refinements {
            let half = cfg.grid.half(level)?;
            let m = Manufactured::by_name(name, &half)?;
            let bc = boundary_condition(cfg, &m, &half);
            for (k, &lambda) in cfg.lambdas.iter().enumerate() {
                let f = m.forcing(&op, lambda, half.clone())?;
                let prob = HalfSpaceProblem::new(op.clone(), f.clone(), bc.clone(), lambda)?;
                let sol = halfspace::solve(&prob, &cfg.solve_options())?;
                let err = relative_error(&sol.u, &m)?;
                for &p in &cfg.p {
                    let [n0, n1, n2] = sobolev_norms(&sol.u, p, None)?;
                    let rho = match &bc {
                        BoundaryCondition::Oblique { g, .. } | BoundaryCondition::Robin { g, .. } => oblique_estimate_ratio(&sol.u, &f, g, lambda, p)?,
                        _ => apriori_ratio(&sol.u, &f, lambda, p, None)?,
                    };
                    t.push(vec![
                        bc.name().into(),
                        seed.to_string(),
                        num(lambda),
                        num(p),
                        grid_label(&half),
                        num(sol.boundary_residual(p)?),
                        num(sol.boundary_sup()),
                        num(rho),
                        num(n0),
                        num(n1),
                        num(n2),
                        num(err),
                        opt(sol.symmetry_defect),
                        opt(sol.mirror_defect),
                        num(sol.residual),
                        sol.iterations.to_string(),
                    ]);
                }
                out.fields.push((format!("halfspace_s{seed}_r{level}_l{k}.bin"), sol.u));
            }
        }
    }
    out.tables.push(t);
    Ok(out)
}

fn run_vmo(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut t = Table::new("vmo", &["seed", "R", "modulus", "stderr", "omega_fit"]);
    let d = cfg.grid.dim;
    let mut lo = vec![-cfg.grid.x1];
    let mut hi = vec![cfg.grid.x1];
    lo.extend(std::iter::repeat_n(cfg.grid.xprime[0], d - 1));
    hi.extend(std::iter::repeat_n(cfg.grid.xprime[1], d - 1));
    let centers = box_centers(&lo, &hi, cfg.vmo.centers_per_axis);
    for &seed in &cfg.seeds {
        let op = cfg.operator(seed)?;
        let a = |x: &[f64]| op.a_at(x);
        let rep = vmo_report(&a, &cfg.vmo.radii, &centers, cfg.vmo.samples, seed)?;
        for i in 0..rep.radii.len() {
            t.push(vec![seed.to_string(), num(rep.radii[i]), num(rep.modulus[i]), num(rep.stderr[i]), num(rep.omega_fit[i])]);
        }
    }
    Ok(RunOutput { tables: vec![t], fields: Vec::new() })
}

/// Deterministic sample points in the inner half of the whole box.
pub fn interior_points(grid: &BoxGrid, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5a4e);
    (0..count)
        .map(|_| {
            grid.axes()
                .iter()
                .map(|a| {
                    let mid = 0.5 * (a.lo + a.hi);
                    let half = if a.periodic { 0.5 * a.length() } else { 0.25 * a.length() };
                    mid + half * (2.0 * rng.random::<f64>() - 1.0)
                })
                .collect()
        })
        .collect()
}

fn run_verify(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut t = Table::new(
        "estimates",
        &["family", "seed", "p", "lambda", "grid", "rho", "n_emp", "modulus", "residual", "error"],
    );
    let name = cfg.manufactured_name(Command::Verify);
    for &seed in &cfg.seeds {
        let op = cfg.operator(seed)?;
        for level in 0..=cfg.grid.refinements {
            let grid = cfg.grid.whole(level)?;
            let m = Manufactured::by_name(name, &grid)?;
            let points = interior_points(&grid, cfg.sharp.points, seed);
            let radii: Vec<f64> = radius_ladder(&grid).into_iter().filter(|&r| r <= 0.25 * cfg.grid.x1.min(0.5 * (cfg.grid.xprime[1] - cfg.grid.xprime[0]))).collect();
            let radii = if radii.is_empty() { radius_ladder(&grid)[..1].to_vec() } else { radii };
            for &lambda in &cfg.lambdas {
                let f = m.forcing(&op, lambda, grid.clone())?;
                let maxiter = cfg.solver.maxiter.unwrap_or(10 * grid.len());
                let sol = whole_space::solve_problem_with(&op, &f, lambda, cfg.solver.tol, maxiter)?;
                let err = relative_error(&sol.u, &m)?;
                for &p in &cfg.p {
                    let rho = apriori_ratio(&sol.u, &f, lambda, p, None)?;
                    let mu = cfg.sharp.mu.unwrap_or_else(|| SharpCheckConfig::mu_for(p));
                    let mut sc = SharpCheckConfig::new(grid.dim(), cfg.sharp.r, mu, points.clone(), radii.clone())?;
                    sc.vmo_samples = cfg.sharp.vmo_samples;
                    sc.seed = seed;
                    let rep = sharp_inequality_check(&sol.u, &op, &sc)?;
                    t.push(vec![
                        family_label(cfg.coefficients.kind).into(),
                        seed.to_string(),
                        num(p),
                        num(lambda),
                        grid_label(&grid),
                        num(rho),
                        num(rep.n_max),
                        num(rep.modulus),
                        num(sol.residual),
                        num(err),
                    ]);
                }
            }
        }
    }
    Ok(RunOutput { tables: vec![t], fields: Vec::new() })
}

/// Runs one command on a validated configuration. `base` resolves relative
/// paths inside the configuration.
pub fn execute(command: Command, cfg: &ExperimentConfig, base: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    match command {
        Command::Solve => run_solve(cfg, base),
        Command::Modes => {
            let c = &cfg.coefficients;
            if c.kind == FamilyKind::VmoOscillatory && c.epsilon > 0.0 {
                return Err(Error::config("coefficients.kind", "the modes command needs coefficients that depend on x¹ only"));
            }
            run_modes(cfg, base)
        }
        Command::Halfspace => run_halfspace(cfg),
        Command::Vmo => run_vmo(cfg),
        Command::Verify => run_verify(cfg),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Takes precedence over the configuration's `output_dir`.
    pub output_dir: Option<PathBuf>,
    pub bc: Option<BcKind>,
    /// Worker count, recorded in the manifest.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub load_s: f64,
    pub compute_s: f64,
    pub write_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_file: String,
    pub config_sha256: Option<String>,
    pub experiment: Option<String>,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Best residual reached by a solve that did not converge.
    pub residual: Option<f64>,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub timings: Timings,
}

/// Exit status: 0 success, 1 solver failure, 2 configuration error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub message: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub manifest: Manifest,
}

pub const DEFAULT_OUTPUT_DIR: &str = "nondiv-out";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads, runs and writes one experiment; never panics on bad input.
pub fn run(command: Command, config_path: &Path, opts: &RunOptions) -> RunReport {
    let start = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let mut manifest = Manifest {
        tool: "nondiv",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        config_file: config_path.display().to_string(),
        config_sha256: None,
        experiment: None,
        seeds: Vec::new(),
        threads: opts.threads,
        status: "ok",
        exit_code: 0,
        error: None,
        residual: None,
        outputs: Vec::new(),
        started_unix_s: started,
        timings: Timings::default(),
    };
    let fail = |mut manifest: Manifest, code: i32, msg: String, dir: Option<PathBuf>| {
        manifest.status = if code == 2 { "config_error" } else { "solver_failure" };
        manifest.exit_code = code;
        manifest.error = Some(msg.clone());
        manifest.timings.total_s = start.elapsed().as_secs_f64();
        if let Some(d) = &dir {
            if fs::create_dir_all(d).is_ok() {
                let _ = fs::write(d.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap_or_default());
            }
        }
        RunReport { exit_code: code, message: Some(msg), output_dir: dir, manifest }
    };

    let bytes = match fs::read(config_path) {
        Ok(b) => b,
        Err(e) => {
            let dir = opts.output_dir.clone();
            return fail(manifest, 2, format!("cannot read config {}: {e}", config_path.display()), dir);
        }
    };
    manifest.config_sha256 = Some(hex(&Sha256::digest(&bytes)));
    let parsed = std::str::from_utf8(&bytes)
        .map_err(|_| Error::config("config", "file is not valid UTF-8"))
        .and_then(ExperimentConfig::from_toml);
    let mut cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            let dir = opts.output_dir.clone();
            return fail(manifest, 2, e.to_string(), dir);
        }
    };
    if let Some(bc) = opts.bc {
        cfg.boundary.kind = bc;
    }
    manifest.experiment = Some(cfg.name.clone());
    manifest.seeds = cfg.seeds.clone();
    let dir = opts.output_dir.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    manifest.timings.load_s = start.elapsed().as_secs_f64();

    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let t0 = Instant::now();
    let output = match execute(command, &cfg, &base) {
        Ok(o) => o,
        Err(e) => {
            manifest.timings.compute_s = t0.elapsed().as_secs_f64();
            if let Error::NonConvergence { residual, .. } = &e {
                manifest.residual = Some(*residual);
            }
            return fail(manifest, exit_code(&e), e.to_string(), Some(dir));
        }
    };
    manifest.timings.compute_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let written = (|| -> Result<Vec<String>> {
        fs::create_dir_all(&dir)?;
        let mut names = Vec::new();
        for t in &output.tables {
            let name = format!("{}.csv", t.name);
            t.write(&dir.join(&name))?;
            names.push(name);
        }
        for (name, u) in &output.fields {
            write_binary(u, BufWriter::new(File::create(dir.join(name))?))?;
            names.push(name.clone());
        }
        Ok(names)
    })();
    match written {
        Ok(names) => manifest.outputs = names,
        Err(e) => return fail(manifest, 1, format!("writing outputs: {e}"), Some(dir)),
    }
    manifest.timings.write_s = t1.elapsed().as_secs_f64();
    manifest.timings.total_s = start.elapsed().as_secs_f64();
    if let Err(e) = fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap_or_default()) {
        return RunReport { exit_code: 1, message: Some(format!("writing manifest: {e}")), output_dir: Some(dir), manifest };
    }
    RunReport { exit_code: 0, message: None, output_dir: Some(dir), manifest }
}

/// Total number of data rows over the run's CSV files.
pub fn row_count(out: &RunOutput) -> usize {
    out.tables.iter().map(|t| t.rows.len()).sum()
}

/// `‖u‖ₚ` helper re-exported for callers assembling their own tables.
pub fn norm(u: &GridFunction, p: f64) -> Result<f64> {
    lp_norm(u, p, None)
}
