//! Steady states of the Gross-Pitaevskii equation: residual, Newton solves,
//! seeds, natural-parameter continuation in `mu` and the power curve `P(mu)`.
//!
//! 1D states are real and solved in real arithmetic. 2D states are stored as
//! complex fields and solved on the real block form `(U, V)`; the Jacobian is
//! singular along the phase direction `(-V, U)`, which is removed by bordering
//! the Newton system with that vector.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KreinError, Result};
use crate::grid::{laplacian, plaquette_vortices, potential_values, Field, FieldValues, Grid};
use crate::sparse::{SparseLu, SparseMatrix};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Smallest continuation step before a branch is declared terminated.
pub const MIN_D_MU: f64 = 1e-4;

/// `-1/2 Laplacian + V` as a sparse matrix.
pub fn single_particle_operator(grid: &Grid, omega: f64) -> Result<SparseMatrix> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(KreinError::InvalidArgument(format!("trap strength must be positive, got {omega}")));
    }
    let lap = laplacian(grid).matrix;
    let v = SparseMatrix::diagonal(&potential_values(grid, omega));
    Ok(lap.add(-0.5, &v, 1.0))
}

/// Which family a state belongs to; drives structural checks during continuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateLabel {
    Ground,
    DarkSoliton(usize),
    Vortex,
    VortexDipole,
    Unlabeled,
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateLabel::Ground => write!(f, "ground"),
            StateLabel::DarkSoliton(k) => write!(f, "{k}-dark-soliton"),
            StateLabel::Vortex => write!(f, "single-vortex"),
            StateLabel::VortexDipole => write!(f, "vortex-dipole"),
            StateLabel::Unlabeled => write!(f, "unlabeled"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryState {
    pub field: Field,
    pub mu: f64,
    pub omega: f64,
    /// Max-norm of the steady residual.
    pub residual_norm: f64,
    pub label: StateLabel,
    pub iterations: usize,
}

impl StationaryState {
    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn power(&self) -> f64 {
        self.field.power()
    }

    /// Whether the state still has the structure its label promises.
    pub fn holds_structure(&self) -> bool {
        structure_ok(&self.field, self.label)
    }
}

fn structure_ok(field: &Field, label: StateLabel) -> bool {
    let peak = field.max_abs();
    match label {
        StateLabel::Unlabeled => true,
        StateLabel::Ground => peak > 0.0,
        StateLabel::DarkSoliton(k) => peak > 0.0 && !field.is_complex() && sign_changes(&field.re(), 1e-6 * peak) == k,
        StateLabel::Vortex => {
            let v = plaquette_vortices_significant(field);
            peak > 0.0 && v.len() == 1 && v[0].2.abs() == 1
        }
        StateLabel::VortexDipole => {
            if peak == 0.0 || non_reality(field) < 1e-6 {
                return false;
            }
            let v = plaquette_vortices_significant(field);
            v.len() == 2 && v.iter().map(|c| c.2).sum::<i64>() == 0
        }
    }
}

/// Phase defects inside the bulk of the condensate (far-field phase noise where
/// the density has decayed to roundoff is ignored).
fn plaquette_vortices_significant(field: &Field) -> Vec<(f64, f64, i64)> {
    let grid = field.grid();
    let vals = field.to_complex();
    let peak = field.max_abs();
    let n = grid.n();
    let idx = |x: f64| -> usize {
        let c = (n as f64 - 1.0) / 2.0;
        ((x / grid.dx() + c).round().clamp(0.0, n as f64 - 1.0)) as usize
    };
    plaquette_vortices(field)
        .into_iter()
        .filter(|&(x, y, _)| {
            // density one cell away from the defect
            let (ix, iy) = (idx(x), idx(y));
            let ring = [(ix.saturating_sub(2), iy), ((ix + 2).min(n - 1), iy), (ix, iy.saturating_sub(2)), (ix, (iy + 2).min(n - 1))];
            ring.iter().map(|&(i, j)| vals[j * n + i].norm()).fold(f64::INFINITY, f64::min) > 1e-3 * peak
        })
        .collect()
}

/// `1 - |sum u^2| / sum |u|^2`: zero iff the field is real up to a global phase.
pub fn non_reality(field: &Field) -> f64 {
    let vals = field.to_complex();
    let s: Complex64 = vals.iter().map(|u| u * u).sum();
    let p: f64 = vals.iter().map(|u| u.norm_sqr()).sum();
    if p == 0.0 {
        0.0
    } else {
        1.0 - s.norm() / p
    }
}

/// Interior sign changes, ignoring samples with magnitude below `floor`.
pub fn sign_changes(values: &[f64], floor: f64) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in values {
        if v.abs() <= floor {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

/// `-1/2 Laplacian u + V u + |u|^2 u - mu u` at every node.
pub fn gp_residual(field: &Field, mu: f64, omega: f64) -> Result<Field> {
    let h0 = single_particle_operator(field.grid(), omega)?;
    Ok(residual_with(&h0, field, mu))
}

fn residual_with(h0: &SparseMatrix, field: &Field, mu: f64) -> Field {
    let grid = *field.grid();
    match field.values() {
        FieldValues::Real(u) => {
            let r = real_residual(h0, u, mu);
            Field::real(grid, r).expect("length preserved")
        }
        FieldValues::Complex(_) => {
            let (u, v) = (field.re(), field.im());
            let (ru, rv) = block_residual(h0, &u, &v, mu);
            Field::from_parts(grid, ru, rv).expect("length preserved")
        }
    }
}

fn real_residual(h0: &SparseMatrix, u: &[f64], mu: f64) -> Vec<f64> {
    let mut r = h0.matvec(u);
    for (r, &u) in r.iter_mut().zip(u) {
        *r += (u * u - mu) * u;
    }
    r
}

fn block_residual(h0: &SparseMatrix, u: &[f64], v: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ru = h0.matvec(u);
    let mut rv = h0.matvec(v);
    for i in 0..u.len() {
        let rho = u[i] * u[i] + v[i] * v[i] - mu;
        ru[i] += rho * u[i];
        rv[i] += rho * v[i];
    }
    (ru, rv)
}

fn max_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn two_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Newton's method with backtracking on the residual 2-norm.
pub fn newton_solve(seed: &Field, mu: f64, omega: f64, label: StateLabel, opts: NewtonOptions) -> Result<StationaryState> {
    let grid = *seed.grid();
    let h0 = single_particle_operator(&grid, omega)?;
    let mut x = match seed.values() {
        FieldValues::Real(u) => u.clone(),
        FieldValues::Complex(_) => {
            let mut x = seed.re();
            x.extend(seed.im());
            x
        }
    };
    let complex = seed.is_complex();
    let n = grid.len();
    let residual = |x: &[f64]| -> Vec<f64> {
        if complex {
            let (mut ru, rv) = block_residual(&h0, &x[..n], &x[n..], mu);
            ru.extend(rv);
            ru
        } else {
            real_residual(&h0, x, mu)
        }
    };

    let mut f = residual(&x);
    let mut iterations = 0;
    while max_norm(&f) > opts.tol {
        if iterations >= opts.max_iter {
            return Err(KreinError::NonConvergence {
                iterations,
                residual: max_norm(&f),
            });
        }
        iterations += 1;
        let step = if complex {
            bordered_step(&h0, &x, &f, mu)?
        } else {
            let jac = real_jacobian(&h0, &x, mu);
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            SparseLu::new(&jac)?.solve_checked(&rhs, 1e-8)?
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(KreinError::SingularJacobian("non-finite Newton step".into()));
        }
        let f0 = two_norm(&f);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(x, s)| x + alpha * s).collect();
            let ft = residual(&trial);
            let ft_norm = two_norm(&ft);
            if ft_norm <= (1.0 - 1e-4 * alpha) * f0 || max_norm(&ft) <= opts.tol {
                x = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
            if alpha < 1.0 / 1024.0 {
                return Err(KreinError::NonConvergence {
                    iterations,
                    residual: max_norm(&f),
                });
            }
        }
        log::trace!("newton mu={mu} iter={iterations} |F|={:.3e} alpha={alpha}", max_norm(&f));
    }

    let field = if complex {
        Field::from_parts(grid, x[..n].to_vec(), x[n..].to_vec())?
    } else {
        Field::real(grid, x)?
    };
    Ok(StationaryState {
        field,
        mu,
        omega,
        residual_norm: max_norm(&f),
        label,
        iterations,
    })
}

fn real_jacobian(h0: &SparseMatrix, u: &[f64], mu: f64) -> SparseMatrix {
    let d: Vec<f64> = u.iter().map(|u| 3.0 * u * u - mu).collect();
    h0.add(1.0, &SparseMatrix::diagonal(&d), 1.0)
}

/// Real-block Jacobian `[[A, B], [B, C]]` of the 2D residual; this is also the
/// linearization operator `L`.
pub(crate) fn block_jacobian(h0: &SparseMatrix, u: &[f64], v: &[f64], mu: f64) -> SparseMatrix {
    let n = u.len();
    let mut t = Vec::with_capacity(2 * h0.nnz() + 4 * n);
    for (i, j, val) in h0.triplets() {
        t.push((i, j, val));
        t.push((n + i, n + j, val));
    }
    for i in 0..n {
        let (a, b) = (u[i], v[i]);
        t.push((i, i, 3.0 * a * a + b * b - mu));
        t.push((n + i, n + i, a * a + 3.0 * b * b - mu));
        t.push((i, n + i, 2.0 * a * b));
        t.push((n + i, i, 2.0 * a * b));
    }
    SparseMatrix::from_triplets(2 * n, 2 * n, t)
}

/// Newton step for the 2D block system. The Jacobian is (nearly) singular along
/// the phase direction `p = (-V, U)`, so the component where `p` peaks is pinned
/// to zero and the step is then made orthogonal to `p`. Pinning keeps the matrix
/// sparse; a dense border row would ruin the fill of the factorization.
fn bordered_step(h0: &SparseMatrix, x: &[f64], f: &[f64], mu: f64) -> Result<Vec<f64>> {
    let n = x.len() / 2;
    let (u, v) = (&x[..n], &x[n..]);
    let jac = block_jacobian(h0, u, v, mu);
    let mut p: Vec<f64> = v.iter().map(|v| -v).collect();
    p.extend_from_slice(u);
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    if pp == 0.0 {
        return SparseLu::new(&jac)?.solve_checked(&rhs, 1e-8);
    }
    let (pin, pinned) = pin_component(&jac, &p);
    let mut rhs = rhs;
    rhs[pin] = 0.0;
    let mut step = SparseLu::new(&pinned)?.solve_checked(&rhs, 1e-8)?;
    let c = step.iter().zip(&p).map(|(s, p)| s * p).sum::<f64>() / pp;
    step.iter_mut().zip(&p).for_each(|(s, p)| *s -= c * p);
    Ok(step)
}

/// Replace row and column `k` of `a` by a scaled unit vector, where `k` is the
/// largest entry of `dir`. Returns `k` and the modified matrix.
pub(crate) fn pin_component(a: &SparseMatrix, dir: &[f64]) -> (usize, SparseMatrix) {
    let k = dir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let scale = a.norm_inf().max(1.0);
    let mut t: Vec<_> = a.triplets().into_iter().filter(|&(i, j, _)| i != k && j != k).collect();
    t.push((k, k, scale));
    (k, SparseMatrix::from_triplets(a.nrows(), a.ncols(), t))
}

/// `amplitude * H_k(sqrt(omega) x) * exp(-omega |x|^2 / 2)` with the physicists'
/// Hermite polynomial in `x`; in 2D the Gaussian is radial.
pub fn seed_gauss_hermite(k: usize, amplitude: f64, omega: f64, grid: &Grid) -> Result<Field> {
    if !(omega > 0.0) {
        return Err(KreinError::InvalidArgument(format!("trap strength must be positive, got {omega}")));
    }
    let s = omega.sqrt();
    let vals = grid
        .positions()
        .into_iter()
        .map(|(x, y)| amplitude * hermite(k, s * x) * (-0.5 * omega * (x * x + y * y)).exp())
        .collect();
    Field::real(*grid, vals)
}

/// Physicists' Hermite polynomial by the three-term recurrence.
pub fn hermite(k: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = 2.0 * x * h1 - 2.0 * j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn thomas_fermi(mu: f64, omega: f64, x: f64, y: f64) -> f64 {
    (mu - 0.5 * omega * omega * (x * x + y * y)).max(0.0).sqrt()
}

/// Unit-modulus-far-away phase defect of the given charge centred at `(x0, y0)`.
fn defect(charge: i32, healing: f64, x: f64, y: f64, x0: f64, y0: f64) -> Complex64 {
    let (dx, dy) = (x - x0, y - y0);
    let r = dx.hypot(dy);
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let phase = Complex64::new(dx / r, charge.signum() as f64 * dy / r);
    phase * (r / healing).tanh()
}

/// Thomas-Fermi envelope with a single phase defect at the origin.
pub fn seed_vortex(charge: i32, mu: f64, omega: f64, grid: &Grid) -> Result<Field> {
    if charge.abs() != 1 {
        return Err(KreinError::InvalidArgument(format!("vortex charge must be +-1, got {charge}")));
    }
    check_2d_seed(grid, mu, omega)?;
    let healing = 1.0 / mu.sqrt();
    let vals = grid
        .positions()
        .into_iter()
        .map(|(x, y)| thomas_fermi(mu, omega, x, y) * defect(charge, healing, x, y, 0.0, 0.0))
        .collect();
    Field::complex(*grid, vals)
}

/// Thomas-Fermi envelope with a `+1` defect at `(separation/2, 0)` and a `-1`
/// defect at `(-separation/2, 0)`.
pub fn seed_dipole(separation: f64, mu: f64, omega: f64, grid: &Grid) -> Result<Field> {
    if !(separation > 0.0) {
        return Err(KreinError::InvalidArgument(format!("dipole separation must be positive, got {separation}")));
    }
    check_2d_seed(grid, mu, omega)?;
    let healing = 1.0 / mu.sqrt();
    let a = 0.5 * separation;
    let vals = grid
        .positions()
        .into_iter()
        .map(|(x, y)| {
            thomas_fermi(mu, omega, x, y) * defect(1, healing, x, y, a, 0.0) * defect(-1, healing, x, y, -a, 0.0)
        })
        .collect();
    Field::complex(*grid, vals)
}

fn check_2d_seed(grid: &Grid, mu: f64, omega: f64) -> Result<()> {
    if grid.dim() != 2 {
        return Err(KreinError::InvalidArgument("phase-defect seeds need a 2D grid".into()));
    }
    if !(mu > 0.0 && omega > 0.0) {
        return Err(KreinError::InvalidArgument(format!("need mu > 0 and omega > 0, got mu={mu}, omega={omega}")));
    }
    grid.warn_if_small_box(mu, omega);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub mu: f64,
    pub power: f64,
    pub state: StationaryState,
}

/// States along a branch, ordered by continuation; `mu` is strictly monotone.
#[derive(Debug, Clone)]
pub struct Branch {
    pub label: StateLabel,
    pub omega: f64,
    pub d_mu: f64,
    pub seed: String,
    pub points: Vec<BranchPoint>,
}

impl Branch {
    pub fn mus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mu).collect()
    }

    pub fn state_at(&self, mu: f64) -> Option<&StationaryState> {
        self.points.iter().find(|p| (p.mu - mu).abs() <= 1e-12 * mu.abs().max(1.0)).map(|p| &p.state)
    }

    /// One directory: `point_XXXX.kgpf` field files plus `manifest.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
        let header = serde_json::json!({
            "branch": self.label,
            "omega": self.omega,
            "d_mu": self.d_mu,
            "seed": self.seed,
        });
        writeln!(manifest, "{header}")?;
        for (i, p) in self.points.iter().enumerate() {
            let file = format!("point_{i:04}.kgpf");
            p.state.field.save(&dir.join(&file))?;
            let rec = ManifestRecord {
                index: i,
                mu: p.mu,
                power: p.power,
                residual_norm: p.state.residual_norm,
                label: p.state.label,
                file,
            };
            writeln!(manifest, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Branch> {
        let text = fs::read_to_string(dir.join("manifest.jsonl"))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: serde_json::Value =
            serde_json::from_str(lines.next().ok_or_else(|| KreinError::Parse("empty manifest".into()))?)?;
        let label: StateLabel = serde_json::from_value(header["branch"].clone())?;
        let omega = header["omega"].as_f64().ok_or_else(|| KreinError::Parse("manifest lacks omega".into()))?;
        let d_mu = header["d_mu"].as_f64().unwrap_or(0.0);
        let seed = header["seed"].as_str().unwrap_or("").to_string();
        let mut points = Vec::new();
        for line in lines {
            let rec: ManifestRecord = serde_json::from_str(line)?;
            let field = Field::load(&dir.join(PathBuf::from(&rec.file)))?;
            points.push(BranchPoint {
                mu: rec.mu,
                power: rec.power,
                state: StationaryState {
                    field,
                    mu: rec.mu,
                    omega,
                    residual_norm: rec.residual_norm,
                    label: rec.label,
                    iterations: 0,
                },
            });
        }
        Ok(Branch {
            label,
            omega,
            d_mu,
            seed,
            points,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    index: usize,
    mu: f64,
    power: f64,
    residual_norm: f64,
    label: StateLabel,
    file: String,
}

/// Natural-parameter continuation through `mu_targets` (monotone, starting on
/// the seed's side). Steps are at most `d_mu_max`, halved on Newton failure or
/// loss of structure, with secant prediction from the last two accepted states.
pub fn continue_branch(seed: &StationaryState, mu_targets: &[f64], d_mu_max: f64, opts: NewtonOptions) -> Result<Branch> {
    if !(d_mu_max > 0.0) {
        return Err(KreinError::InvalidArgument("d_mu_max must be positive".into()));
    }
    let mut branch = Branch {
        label: seed.label,
        omega: seed.omega,
        d_mu: d_mu_max,
        seed: format!("{} at mu={}", seed.label, seed.mu),
        points: Vec::new(),
    };
    if mu_targets.is_empty() {
        return Ok(branch);
    }
    let dir = if mu_targets.len() > 1 {
        (mu_targets[mu_targets.len() - 1] - mu_targets[0]).signum()
    } else {
        (mu_targets[0] - seed.mu).signum()
    };
    for w in mu_targets.windows(2) {
        if (w[1] - w[0]) * dir <= 0.0 {
            return Err(KreinError::InvalidArgument("mu targets must be strictly monotone".into()));
        }
    }
    if (mu_targets[0] - seed.mu) * dir < -1e-12 {
        return Err(KreinError::InvalidArgument("first mu target lies behind the seed".into()));
    }

    let mut current = seed.clone();
    let mut previous: Option<StationaryState> = None;
    let mut step = d_mu_max;
    for &target in mu_targets {
        while (target - current.mu) * dir > 1e-13 {
            let h = step.min((target - current.mu).abs());
            let mu_next = if h == (target - current.mu).abs() { target } else { current.mu + dir * h };
            let guess = predict(&current, previous.as_ref(), mu_next);
            match newton_solve(&guess, mu_next, current.omega, current.label, opts) {
                Ok(s) if s.holds_structure() => {
                    log::debug!("branch {} accepted mu={mu_next:.6} ({} its)", s.label, s.iterations);
                    previous = Some(std::mem::replace(&mut current, s));
                    step = (step * 1.5).min(d_mu_max);
                }
                outcome => {
                    let reason = match outcome {
                        Ok(_) => "state lost its structure".to_string(),
                        Err(e) => e.to_string(),
                    };
                    step = 0.5 * h;
                    log::debug!("step to mu={mu_next:.6} failed ({reason}); halving to {step:.2e}");
                    if step < MIN_D_MU {
                        return Err(KreinError::BranchTermination {
                            last_mu: current.mu,
                            reason,
                        });
                    }
                }
            }
        }
        branch.points.push(BranchPoint {
            mu: target,
            power: current.power(),
            state: current.clone(),
        });
    }
    Ok(branch)
}

fn predict(current: &StationaryState, previous: Option<&StationaryState>, mu_next: f64) -> Field {
    match previous {
        Some(prev) if (current.mu - prev.mu).abs() > 0.0 => {
            let t = (mu_next - current.mu) / (current.mu - prev.mu);
            let grid = *current.field.grid();
            match (current.field.values(), prev.field.values()) {
                (FieldValues::Real(a), FieldValues::Real(b)) => {
                    Field::real(grid, a.iter().zip(b).map(|(a, b)| a + t * (a - b)).collect()).expect("same grid")
                }
                _ => {
                    // complex states: align the global phase before extrapolating
                    let a = current.field.to_complex();
                    let b = prev.field.to_complex();
                    let ov: Complex64 = b.iter().zip(&a).map(|(b, a)| b.conj() * a).sum();
                    let rot = if ov.norm() > 0.0 { ov / ov.norm() } else { Complex64::new(1.0, 0.0) };
                    Field::complex(grid, a.iter().zip(&b).map(|(a, b)| a + t * (a - rot * b)).collect()).expect("same grid")
                }
            }
        }
        _ => current.field.clone(),
    }
}

/// `dP/dmu` at `mu` from the quadratic through the three branch points nearest `mu`.
pub fn power_slope(branch: &Branch, mu: f64) -> Result<f64> {
    let pts = &branch.points;
    if pts.len() < 3 {
        return Err(KreinError::InvalidArgument("power slope needs at least three branch points".into()));
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.mu), hi.max(p.mu)));
    let tol = 1e-12 * mu.abs().max(1.0);
    if mu <= lo + tol || mu >= hi - tol {
        return Err(KreinError::InvalidArgument(format!("mu = {mu} is not interior to the branch [{lo}, {hi}]")));
    }
    let mut sorted: Vec<(f64, f64)> = pts.iter().map(|p| (p.mu, p.power)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // centre index: nearest point, kept away from the ends
    let nearest = sorted
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 .0 - mu).abs().total_cmp(&(b.1 .0 - mu).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let c = nearest.clamp(1, sorted.len() - 2);
    let [(x0, y0), (x1, y1), (x2, y2)] = [sorted[c - 1], sorted[c], sorted[c + 1]];
    // derivative of the Lagrange interpolant
    let d0 = y0 * ((mu - x1) + (mu - x2)) / ((x0 - x1) * (x0 - x2));
    let d1 = y1 * ((mu - x0) + (mu - x2)) / ((x1 - x0) * (x1 - x2));
    let d2 = y2 * ((mu - x0) + (mu - x1)) / ((x2 - x0) * (x2 - x1));
    Ok(d0 + d1 + d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize, dx: f64) -> Grid {
        Grid::new(1, n, dx).unwrap()
    }

    #[test]
    fn zero_field_has_zero_residual_and_is_fixed() {
        let g = grid1(64, 0.2);
        let z = Field::zeros(g, false);
        let r = gp_residual(&z, 1.3, 1.0).unwrap();
        assert_eq!(r.max_abs(), 0.0);
        let s = newton_solve(&z, 1.3, 1.0, StateLabel::Unlabeled, NewtonOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.field.max_abs(), 0.0);
    }

    #[test]
    fn residual_is_affine_in_mu() {
        let g = grid1(40, 0.3);
        let u = seed_gauss_hermite(2, 0.7, 1.0, &g).unwrap();
        let a = gp_residual(&u, 0.9, 1.0).unwrap().re();
        let b = gp_residual(&u, 1.15, 1.0).unwrap().re();
        for ((a, b), u) in a.iter().zip(&b).zip(u.re()) {
            assert!((b - a + 0.25 * u).abs() < 1e-13);
        }
    }

    #[test]
    fn hermite_recurrence() {
        assert_eq!(hermite(0, 0.3), 1.0);
        let x = 0.7f64;
        assert!((hermite(3, x) - (8.0 * x.powi(3) - 12.0 * x)).abs() < 1e-14);
        assert!((hermite(4, x) - (16.0 * x.powi(4) - 48.0 * x * x + 12.0)).abs() < 1e-13);
    }

    #[test]
    fn gauss_hermite_parity_and_zeros() {
        let g = grid1(200, 0.05);
        for k in 0..5 {
            let f = seed_gauss_hermite(k, 1.0, 1.0, &g).unwrap().re();
            let n = f.len();
            for i in 0..n {
                let expect = if k % 2 == 0 { f[i] } else { -f[i] };
                assert!((f[n - 1 - i] - expect).abs() < 1e-12);
            }
            assert_eq!(sign_changes(&f, 1e-12), k);
        }
    }

    #[test]
    fn vortex_seed_winds_once() {
        let g = Grid::new(2, 32, 0.5).unwrap();
        let f = seed_vortex(1, 1.0, 0.2, &g).unwrap();
        assert_eq!(crate::grid::winding_on_square(&f, 3.0), 1);
        let d = seed_dipole(3.0, 1.0, 0.2, &g).unwrap();
        assert_eq!(crate::grid::winding_on_square(&d, 7.0), 0);
    }

    #[test]
    fn power_slope_of_quadratic_is_exact() {
        let g = grid1(16, 0.5);
        let mk = |mu: f64| BranchPoint {
            mu,
            power: 3.0 * mu * mu + mu,
            state: StationaryState {
                field: Field::zeros(g, false),
                mu,
                omega: 1.0,
                residual_norm: 0.0,
                label: StateLabel::Unlabeled,
                iterations: 0,
            },
        };
        let b = Branch {
            label: StateLabel::Unlabeled,
            omega: 1.0,
            d_mu: 0.1,
            seed: String::new(),
            points: vec![mk(1.0), mk(1.2), mk(1.5), mk(1.7)],
        };
        assert!((power_slope(&b, 1.2).unwrap() - 8.2).abs() < 1e-10);
        assert!((power_slope(&b, 1.6).unwrap() - 10.6).abs() < 1e-10);
        assert!(power_slope(&b, 1.0).is_err());
        assert!(power_slope(&b, 2.0).is_err());
    }
}
