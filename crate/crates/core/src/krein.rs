//! The Krein matrix `K(z)` of the pencil `(R - zS)u = 0`.
//!
//! Write `u = sum_l a_l s_l + w` with `s_l` the negative eigenvectors of `S` and `w`
//! in `N(S)^perp`. Eliminating `w` leaves the `m x m` matrix
//!
//! ```text
//! K(z) = A - z diag(lambda_s) - C^T (R~ - z)^{-1} C,      A = s^T R s,
//! ```
//!
//! where `R~ = S_+^{-1/2} P R P S_+^{-1/2}` is the constrained operator conjugated by the
//! positive part of `S`. `R~` is diagonalized once, `R~ = W Theta W^T`, after which
//! the resolvent term is the sum `sum_k c_k c_k^T / (theta_k - z)` with
//! `c_k = W^T S_+^{1/2} P R s`. Every evaluation of `K` then costs `O(dim m^2)`,
//! which is what makes dense real-axis scans, contour residues and winding
//! searches affordable.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KreinError, Result};
use crate::linalg::{complex_det, complex_eigen, mat_mul, mirror_lower, sym_eigen};
use crate::pencil::{LinearPencil, NegativeSubspace};

/// Tolerances and sampling controls for the Krein computations.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KreinOptions {
    /// A pole whose residue has max entry at most this is removable.
    pub removable_tol: f64,
    /// Bisection target for `|r_j(z0)|`.
    pub zero_cross_tol: f64,
    /// Slopes with magnitude at most this are reported as near-degenerate.
    pub slope_tol: f64,
    /// Minimum eigenvector overlap accepted when pairing traces between samples.
    pub overlap_min: f64,
    /// Maximum number of local bisections of one sampling interval.
    pub max_refine: usize,
}

impl Default for KreinOptions {
    fn default() -> Self {
        KreinOptions {
            removable_tol: 1e-8,
            zero_cross_tol: 1e-10,
            slope_tol: 1e-6,
            overlap_min: 0.7,
            max_refine: 24,
        }
    }
}

/// Spectral representation of `K(z)`.
#[derive(Debug, Clone)]
pub struct KreinMatrix {
    m: usize,
    /// `s^T R s`, row-major.
    a: Vec<f64>,
    lambda_s: Vec<f64>,
    /// Eigenvalues of `R~`, ascending.
    theta: Vec<f64>,
    /// Row `k` is `c_k` (length `m`).
    c: Vec<f64>,
    /// `‖R~ W - W Theta‖_F`.
    backward_error: f64,
    /// `max |theta|`.
    theta_scale: f64,
    doubled: bool,
}

/// `K(z)` at one point.
#[derive(Debug, Clone, Serialize)]
pub struct KreinMatrixValue {
    pub z: Complex64,
    /// Row-major `m x m`.
    pub k: Vec<Complex64>,
    pub m: usize,
    /// Normwise backward error of the inner resolvent solve.
    pub solve_residual: f64,
}

impl KreinMatrixValue {
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.k[i * self.m + j]
    }

    /// `max |K - K^T| / max |K|`.
    pub fn asymmetry(&self) -> f64 {
        let big = self.k.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for i in 0..self.m {
            for j in 0..i {
                worst = worst.max((self.entry(i, j) - self.entry(j, i)).norm());
            }
        }
        if big == 0.0 {
            0.0
        } else {
            worst / big
        }
    }

    /// Largest off-diagonal entry over the largest diagonal entry.
    pub fn off_diagonal_ratio(&self) -> f64 {
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for i in 0..self.m {
            for j in 0..self.m {
                let v = self.entry(i, j).norm();
                if i == j {
                    diag = diag.max(v);
                } else {
                    off = off.max(v);
                }
            }
        }
        if diag == 0.0 {
            off
        } else {
            off / diag
        }
    }

    /// Largest diagonal spread `max_i |K_ii - K_00|` over the largest diagonal entry.
    pub fn diagonal_spread(&self) -> f64 {
        let d0 = self.entry(0, 0);
        let diag = (0..self.m).map(|i| self.entry(i, i).norm()).fold(0.0, f64::max);
        let spread = (0..self.m).map(|i| (self.entry(i, i) - d0).norm()).fold(0.0, f64::max);
        if diag == 0.0 {
            spread
        } else {
            spread / diag
        }
    }
}

impl KreinMatrix {
    /// Diagonalize `R~` and assemble the coupling vectors.
    pub fn new(pencil: &LinearPencil, neg: &NegativeSubspace) -> Result<Self> {
        let d = pencil.dim();
        let m = neg.dim();
        let eigs = pencil.s_inv_eigenvalues();
        let vecs = pencil.s_inv_vectors();
        let pos: Vec<usize> = (0..d).filter(|&i| eigs[i] > 0.0).collect();
        let p = pos.len();
        let rs = mat_mul(pencil.r.as_ref(), neg.s_basis.as_ref());
        let a_mat = mat_mul(neg.s_basis.transpose(), rs.as_ref());
        let mut a = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] = 0.5 * (a_mat[(i, j)] + a_mat[(j, i)]);
            }
        }
        let q_plus = Mat::from_fn(d, p, |i, j| vecs[(i, pos[j])]);
        let sqrt_l: Vec<f64> = pos.iter().map(|&i| eigs[i].sqrt()).collect();
        let mut rt = {
            let t = mat_mul(pencil.r.as_ref(), q_plus.as_ref());
            mat_mul(q_plus.transpose(), t.as_ref())
        };
        for j in 0..p {
            for i in j..p {
                rt[(i, j)] *= sqrt_l[i] * sqrt_l[j];
            }
        }
        mirror_lower(&mut rt);
        let (theta, w) = sym_eigen(rt.as_ref())?;
        // residual of the eigen-decomposition
        let rw = mat_mul(rt.as_ref(), w.as_ref());
        let mut be = 0.0;
        for j in 0..p {
            for i in 0..p {
                let r = rw[(i, j)] - w[(i, j)] * theta[j];
                be += r * r;
            }
        }
        drop(rw);
        drop(rt);
        let mut b = mat_mul(q_plus.transpose(), rs.as_ref());
        for i in 0..p {
            for j in 0..m {
                b[(i, j)] *= sqrt_l[i];
            }
        }
        let cm = mat_mul(w.transpose(), b.as_ref());
        let mut c = vec![0.0; p * m];
        for k in 0..p {
            for l in 0..m {
                c[k * m + l] = cm[(k, l)];
            }
        }
        let theta_scale = theta.iter().map(|t| t.abs()).fold(0.0, f64::max);
        Ok(KreinMatrix {
            m,
            a,
            lambda_s: neg.lambda_s.clone(),
            theta,
            c,
            backward_error: be.sqrt(),
            theta_scale,
            doubled: pencil.doubled(),
        })
    }

    /// Number of Krein eigenvalues, `n(S)`.
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn doubled(&self) -> bool {
        self.doubled
    }

    pub fn lambda_s(&self) -> &[f64] {
        &self.lambda_s
    }

    /// `s^T R s` (row-major).
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// `|c_k|^2`, the residue weight carried by the `k`-th eigenvalue of `R~`.
    pub fn weight(&self, k: usize) -> f64 {
        self.c[k * self.m..(k + 1) * self.m].iter().map(|v| v * v).sum()
    }

    /// `c_k`.
    pub fn coupling(&self, k: usize) -> &[f64] {
        &self.c[k * self.m..(k + 1) * self.m]
    }

    /// Backward error of the diagonalization of `R~`, relative to its norm.
    pub fn relative_backward_error(&self) -> f64 {
        self.backward_error / self.theta_scale.max(f64::MIN_POSITIVE)
    }

    fn distance_to_pole(&self, z: Complex64) -> f64 {
        // theta is sorted: binary search on Re z
        let i = self.theta.partition_point(|t| *t < z.re);
        let mut best = f64::INFINITY;
        for k in i.saturating_sub(1)..(i + 1).min(self.theta.len()) {
            best = best.min((z - self.theta[k]).norm());
        }
        best
    }

    /// `K(z)`.
    pub fn eval(&self, z: Complex64) -> Result<KreinMatrixValue> {
        let m = self.m;
        let dist = self.distance_to_pole(z);
        if !(dist > 4.0 * f64::EPSILON * (1.0 + z.norm())) {
            return Err(KreinError::InnerSolveSingular { z: format!("{z}") });
        }
        let mut k: Vec<Complex64> = self.a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for l in 0..m {
            k[l * m + l] -= z * self.lambda_s[l];
        }
        let mut xnorm2 = 0.0;
        let mut bnorm2 = 0.0;
        for (t, ck) in self.theta.iter().zip(self.c.chunks_exact(m)) {
            let f = 1.0 / (z - *t);
            let w: f64 = ck.iter().map(|v| v * v).sum();
            xnorm2 += w * f.norm_sqr();
            bnorm2 += w;
            for i in 0..m {
                let fi = f * ck[i];
                for j in 0..m {
                    k[i * m + j] += fi * ck[j];
                }
            }
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(KreinError::InnerSolveSingular { z: format!("{z}") });
        }
        let op = self.theta_scale + z.norm();
        let solve_residual = if bnorm2 == 0.0 {
            0.0
        } else {
            self.backward_error * xnorm2.sqrt() / (op * xnorm2.sqrt() + bnorm2.sqrt())
        };
        Ok(KreinMatrixValue { z, k, m, solve_residual })
    }

    /// `K(z)` for real `z`, real symmetric, row-major.
    pub fn eval_real(&self, z: f64) -> Result<Vec<f64>> {
        let m = self.m;
        if !(self.distance_to_pole(Complex64::new(z, 0.0)) > 4.0 * f64::EPSILON * (1.0 + z.abs())) {
            return Err(KreinError::InnerSolveSingular { z: format!("{z}") });
        }
        let mut k = self.a.clone();
        for l in 0..m {
            k[l * m + l] -= z * self.lambda_s[l];
        }
        for (t, ck) in self.theta.iter().zip(self.c.chunks_exact(m)) {
            let f = 1.0 / (z - t);
            for i in 0..m {
                let fi = f * ck[i];
                for j in 0..m {
                    k[i * m + j] += fi * ck[j];
                }
            }
        }
        Ok(k)
    }

    /// Krein eigenvalues at real `z` (ascending) with unit eigenvectors.
    pub fn eigen_real(&self, z: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let m = self.m;
        let k = self.eval_real(z)?;
        let km = Mat::from_fn(m, m, |i, j| k[i * m + j]);
        let (vals, vecs) = sym_eigen(km.as_ref())?;
        let vecs = (0..m).map(|j| (0..m).map(|i| vecs[(i, j)]).collect()).collect();
        Ok((vals, vecs))
    }

    /// Eigenvalues and eigenvectors of the complex symmetric `K(z)`.
    pub fn eigen_complex(&self, z: Complex64) -> Result<(Vec<Complex64>, Vec<Vec<Complex64>>)> {
        let v = self.eval(z)?;
        let m = self.m;
        let km = Mat::from_fn(m, m, |i, j| v.k[i * m + j]);
        let (vals, vecs) = complex_eigen(km.as_ref())?;
        let vecs = (0..m)
            .map(|j| {
                let col: Vec<Complex64> = (0..m).map(|i| vecs[(i, j)]).collect();
                let n = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                col.into_iter().map(|c| c / n).collect()
            })
            .collect();
        Ok((vals, vecs))
    }

    /// `det K(z)`.
    pub fn det(&self, z: Complex64) -> Result<Complex64> {
        let v = self.eval(z)?;
        let m = self.m;
        let km = Mat::from_fn(m, m, |i, j| v.k[i * m + j]);
        Ok(complex_det(km.as_ref()))
    }

    /// `det K(z)` and `d/dz log det K(z) = tr(K^{-1} K'(z))`.
    pub fn det_and_log_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        use faer::linalg::solvers::Solve;
        let m = self.m;
        let v = self.eval(z)?;
        let mut dk = vec![Complex64::new(0.0, 0.0); m * m];
        for l in 0..m {
            dk[l * m + l] -= self.lambda_s[l];
        }
        for (t, ck) in self.theta.iter().zip(self.c.chunks_exact(m)) {
            let f = -1.0 / ((z - *t) * (z - *t));
            for i in 0..m {
                let fi = f * ck[i];
                for j in 0..m {
                    dk[i * m + j] += fi * ck[j];
                }
            }
        }
        let km = Mat::from_fn(m, m, |i, j| v.k[i * m + j]);
        let dkm = Mat::from_fn(m, m, |i, j| dk[i * m + j]);
        let lu = km.partial_piv_lu();
        let x = lu.solve(&dkm);
        let tr: Complex64 = (0..m).map(|i| x[(i, i)]).sum();
        Ok((complex_det(km.as_ref()), tr))
    }

    /// Every complex zero of `K` has `Im z` at most this: from `Im <v, K v> = 0`,
    /// `sum_k |c_k^T v|^2 / |theta_k - z|^2 = -<v, diag(lambda_s) v>`.
    pub fn imag_bound(&self) -> f64 {
        let cnorm2: f64 = self.c.iter().map(|v| v * v).sum();
        let lmin = self.lambda_s.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        if self.m == 0 {
            0.0
        } else {
            (cnorm2 / lmin).sqrt()
        }
    }

    /// No zero of `K` has real part below this: left of every pole the resolvent
    /// term is negative semidefinite and `-z diag(lambda_s)` eventually dominates `A`.
    pub fn real_lower_bound(&self) -> Result<f64> {
        let m = self.m;
        if m == 0 {
            return Ok(0.0);
        }
        let am = Mat::from_fn(m, m, |i, j| self.a[i * m + j]);
        let (ev, _) = sym_eigen(am.as_ref())?;
        let amax = ev.last().copied().unwrap_or(0.0).max(0.0);
        let lmin = self.lambda_s.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        let theta_min = self.theta.first().copied().unwrap_or(0.0);
        Ok(theta_min.min(-amax / lmin))
    }
}

/// `K(z)` with its inner-solve accuracy; fails inside the solver tolerance of a pole
/// or when the solve residual exceeds `1e-8`.
pub fn krein_matrix(km: &KreinMatrix, z: Complex64) -> Result<KreinMatrixValue> {
    let v = km.eval(z)?;
    if v.solve_residual > 1e-8 {
        return Err(KreinError::InnerSolveSingular {
            z: format!("{z} (solve residual {:.2e})", v.solve_residual),
        });
    }
    Ok(v)
}

/// Eigenvalues of `R~`, ascending.
pub fn pole_candidates(km: &KreinMatrix) -> Vec<f64> {
    km.theta.clone()
}

/// A cluster of numerically coincident eigenvalues of `R~`.
#[derive(Debug, Clone, Serialize)]
pub struct PoleCluster {
    pub z: f64,
    pub indices: Vec<usize>,
    /// `sum |c_k|^2` over the cluster.
    pub weight: f64,
}

/// Group the pole candidates in `[lo, hi]` whose spacing is below `rel_tol (1 + |theta|)`.
pub fn pole_clusters(km: &KreinMatrix, lo: f64, hi: f64, rel_tol: f64) -> Vec<PoleCluster> {
    let mut out: Vec<PoleCluster> = Vec::new();
    for (k, &t) in km.theta.iter().enumerate() {
        if t < lo || t > hi {
            continue;
        }
        match out.last_mut() {
            Some(cl) if (t - km.theta[*cl.indices.last().unwrap()]).abs() <= rel_tol * (1.0 + t.abs()) => {
                cl.indices.push(k);
                cl.weight += km.weight(k);
                cl.z = cl.indices.iter().map(|&i| km.theta[i]).sum::<f64>() / cl.indices.len() as f64;
            }
            _ => out.push(PoleCluster {
                z: t,
                indices: vec![k],
                weight: km.weight(k),
            }),
        }
    }
    out
}

const CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signature {
    /// Positive slope at a positive zero: contributes one to `k_i^-`.
    Negative,
    Positive,
    /// Slope below `slope_tol`.
    NearDegenerate,
    /// Zero on the negative axis (real eigenvalue pair).
    NotApplicable,
}

impl Signature {
    /// `+1`, `-1` or `0` for export.
    pub fn as_int(self) -> i32 {
        match self {
            Signature::Positive => 1,
            Signature::Negative => -1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KreinZero {
    pub z: f64,
    pub trace: usize,
    pub slope: f64,
    pub signature: Signature,
    /// `|r_j(z)|` at the refined zero.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TracePole {
    pub z: f64,
    /// Traces that jump from `-inf` to `+inf` across the pole.
    pub traces: Vec<usize>,
    pub weight: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct KreinTrace {
    pub z: Vec<f64>,
    /// `r[j][i]` is trace `j` at `z[i]`.
    pub r: Vec<Vec<f64>>,
    /// `pairing[i][j]`: index (ascending order) of the eigenvalue of `K(z[i])` on trace `j`.
    pub pairing: Vec<Vec<usize>>,
    /// True for samples that straddle a pole.
    pub pole_adjacent: Vec<bool>,
    pub poles: Vec<TracePole>,
    /// Genuine pole clusters in the window that no trace diverged at.
    pub undetected_poles: Vec<f64>,
    pub zeros: Vec<KreinZero>,
    pub window: (f64, f64),
}

impl KreinTrace {
    /// Trace values as CSV: `z, r_1..r_m, pole_flag`.
    pub fn to_csv(&self) -> String {
        let m = self.r.len();
        let mut s = String::from("z");
        for j in 0..m {
            s.push_str(&format!(",r_{}", j + 1));
        }
        s.push_str(",pole_flag\n");
        for i in 0..self.z.len() {
            s.push_str(&format!("{:.17e}", self.z[i]));
            for j in 0..m {
                s.push_str(&format!(",{:.17e}", self.r[j][i]));
            }
            s.push_str(&format!(",{}\n", u8::from(self.pole_adjacent[i])));
        }
        s
    }

    /// Zeros with positive slope on the positive axis.
    pub fn negative_signature_zeros(&self) -> impl Iterator<Item = &KreinZero> {
        self.zeros.iter().filter(|z| z.signature == Signature::Negative)
    }
}

struct Sample {
    z: f64,
    vals: Vec<f64>,
    vecs: Vec<Vec<f64>>,
    /// `(cluster, is_left_end)` for samples bracketing a pole cluster.
    bracket: Option<(usize, bool)>,
}

impl Sample {
    fn pole_adjacent(&self) -> bool {
        self.bracket.is_some()
    }
}

fn straddles_pole(a: &Sample, b: &Sample) -> bool {
    matches!((a.bracket, b.bracket), (Some((ca, true)), Some((cb, false))) if ca == cb)
}

fn eval_sample(km: &KreinMatrix, z: f64, bracket: Option<(usize, bool)>) -> Result<Sample> {
    let (vals, vecs) = km.eigen_real(z)?;
    Ok(Sample { z, vals, vecs, bracket })
}

fn overlap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs()
}

/// Assignment `perm[j]` = new index for previous trace `j` maximizing total overlap.
fn best_assignment(prev: &[Vec<f64>], next: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let m = prev.len();
    let o: Vec<Vec<f64>> = prev.iter().map(|p| next.iter().map(|q| overlap(p, q)).collect()).collect();
    let mut best: (f64, Vec<usize>) = (-1.0, (0..m).collect());
    if m <= 7 {
        let mut perm: Vec<usize> = (0..m).collect();
        permute(&mut perm, 0, &mut |p| {
            let s: f64 = (0..m).map(|j| o[j][p[j]]).sum();
            if s > best.0 {
                best = (s, p.to_vec());
            }
        });
    } else {
        let mut used = vec![false; m];
        let mut perm = vec![0; m];
        for j in 0..m {
            let k = (0..m).filter(|k| !used[*k]).max_by(|a, b| o[j][*a].total_cmp(&o[j][*b])).unwrap();
            used[k] = true;
            perm[j] = k;
        }
        best.1 = perm;
    }
    let ov = (0..m).map(|j| o[j][best.1[j]]).collect();
    (best.1, ov)
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Whether the trace pairing between two samples is trustworthy: every low-overlap
/// trace must sit in a numerically degenerate cluster at both samples.
fn pairing_ok(a: &Sample, b: &Sample, perm: &[usize], ov: &[f64], overlap_min: f64) -> bool {
    let degenerate = |s: &Sample, i: usize| {
        let v = s.vals[i];
        s.vals
            .iter()
            .enumerate()
            .any(|(k, w)| k != i && (w - v).abs() <= 1e-8 * (1.0 + v.abs()))
    };
    (0..perm.len()).all(|j| ov[j] >= overlap_min || (degenerate(a, j) && degenerate(b, perm[j])))
}

/// Sample the Krein eigenvalues on `[z_min, z_max]`, pair them into continuous traces,
/// locate the poles they diverge at and refine every sign change into a zero.
pub fn trace_krein_eigenvalues(km: &KreinMatrix, z_min: f64, z_max: f64, n_samples: usize, opts: &KreinOptions) -> Result<KreinTrace> {
    if !(z_min < z_max) || n_samples < 100 {
        return Err(KreinError::InvalidArgument(format!(
            "trace window [{z_min}, {z_max}] with {n_samples} samples (need z_min < z_max and at least 100)"
        )));
    }
    let m = km.size();
    let width = z_max - z_min;
    let clusters = pole_clusters(km, z_min, z_max, CLUSTER_TOL);
    let eta = 1e-9 * width.max(1.0);
    let mut points: Vec<(f64, Option<(usize, bool)>)> = (0..n_samples)
        .map(|i| (z_min + width * i as f64 / (n_samples - 1) as f64, None))
        .filter(|(z, _)| clusters.iter().all(|c| (z - c.z).abs() > 4.0 * eta + (c.z - km.theta[c.indices[0]]).abs()))
        .collect();
    for (ci, c) in clusters.iter().enumerate() {
        let lo = km.theta[c.indices[0]] - eta;
        let hi = km.theta[*c.indices.last().unwrap()] + eta;
        if lo > z_min && hi < z_max {
            points.push((lo, Some((ci, true))));
            points.push((hi, Some((ci, false))));
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    let evaluated: Vec<Result<Sample>> = points.par_iter().map(|&(z, adj)| eval_sample(km, z, adj)).collect();
    let mut samples: Vec<Sample> = evaluated.into_iter().collect::<Result<_>>()?;

    if m == 0 {
        return Ok(KreinTrace {
            pole_adjacent: samples.iter().map(|s| s.pole_adjacent()).collect(),
            z: samples.iter().map(|s| s.z).collect(),
            r: Vec::new(),
            pairing: vec![Vec::new(); samples.len()],
            poles: Vec::new(),
            undetected_poles: Vec::new(),
            zeros: Vec::new(),
            window: (z_min, z_max),
        });
    }

    // pair consecutive samples, refining intervals where eigenvectors rotate quickly
    let mut order: Vec<Vec<usize>> = vec![(0..m).collect()];
    let mut i = 0;
    let mut depth = vec![0usize; samples.len()];
    while i + 1 < samples.len() {
        let prev_vecs: Vec<Vec<f64>> = order[i].iter().map(|&k| samples[i].vecs[k].clone()).collect();
        let (perm, ov) = best_assignment(&prev_vecs, &samples[i + 1].vecs);
        let prev_perm: Vec<usize> = order[i].clone();
        let across = straddles_pole(&samples[i], &samples[i + 1]);
        let a_sorted = Sample {
            z: samples[i].z,
            vals: prev_perm.iter().map(|&k| samples[i].vals[k]).collect(),
            vecs: Vec::new(),
            bracket: None,
        };
        if !across && !pairing_ok(&a_sorted, &samples[i + 1], &perm, &ov, opts.overlap_min) && depth[i] < opts.max_refine {
            let zm = 0.5 * (samples[i].z + samples[i + 1].z);
            let s = eval_sample(km, zm, None)?;
            samples.insert(i + 1, s);
            let d = depth[i] + 1;
            depth[i] = d;
            depth.insert(i + 1, d);
            continue;
        }
        if !across && !pairing_ok(&a_sorted, &samples[i + 1], &perm, &ov, opts.overlap_min) {
            log::warn!(
                "trace pairing unresolved near z = {:.6e} (overlaps {:?})",
                samples[i].z,
                ov
            );
        }
        order.push(perm);
        i += 1;
    }

    let n = samples.len();
    let r: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| samples[i].vals[order[i][j]]).collect()).collect();

    // poles: traces flipping sign across a pole bracket
    let mut poles = Vec::new();
    let mut undetected = Vec::new();
    for (ci, c) in clusters.iter().enumerate() {
        let Some(i) = samples.iter().position(|s| s.bracket == Some((ci, true))) else {
            continue;
        };
        let traces: Vec<usize> = (0..m).filter(|&j| r[j][i] < 0.0 && r[j][i + 1] > 0.0).collect();
        if c.weight > opts.removable_tol && traces.is_empty() {
            undetected.push(c.z);
        }
        if !traces.is_empty() {
            poles.push(TracePole {
                z: c.z,
                traces,
                weight: c.weight,
                multiplicity: c.indices.len(),
            });
        }
    }

    // zeros: sign changes away from pole brackets
    let mut zeros = Vec::new();
    for j in 0..m {
        for i in 0..n - 1 {
            if straddles_pole(&samples[i], &samples[i + 1]) {
                continue;
            }
            let (ra, rb) = (r[j][i], r[j][i + 1]);
            if ra == 0.0 || (ra < 0.0) != (rb < 0.0) {
                let va = samples[i].vecs[order[i][j]].clone();
                let zero = refine_zero(km, samples[i].z, samples[i + 1].z, ra, rb, va, j, opts)?;
                zeros.push(zero);
            }
        }
    }
    // a trace can dip through zero and back between two samples (two nearby zeros of
    // opposite slope, as just before a collision); probe every local minimum of |r_j|
    for j in 0..m {
        for i in 1..n - 1 {
            if straddles_pole(&samples[i - 1], &samples[i]) || straddles_pole(&samples[i], &samples[i + 1]) {
                continue;
            }
            let (ra, rb, rc) = (r[j][i - 1], r[j][i], r[j][i + 1]);
            let s = rb.signum();
            if rb == 0.0 || ra.signum() != s || rc.signum() != s || !(s * rb < s * ra && s * rb <= s * rc) {
                continue;
            }
            let v = samples[i].vecs[order[i][j]].clone();
            if let Some((zm, rm, vm)) = dip_through_zero(km, samples[i - 1].z, samples[i + 1].z, s, v)? {
                let va = samples[i - 1].vecs[order[i - 1][j]].clone();
                zeros.push(refine_zero(km, samples[i - 1].z, zm, ra, rm, va, j, opts)?);
                zeros.push(refine_zero(km, zm, samples[i + 1].z, rm, rc, vm, j, opts)?);
            }
        }
    }
    zeros.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.trace.cmp(&b.trace)));

    Ok(KreinTrace {
        z: samples.iter().map(|s| s.z).collect(),
        pole_adjacent: samples.iter().map(|s| s.pole_adjacent()).collect(),
        r,
        pairing: order,
        poles,
        undetected_poles: undetected,
        zeros,
        window: (z_min, z_max),
    })
}

/// Eigenvalue of `K(z)` whose eigenvector overlaps most with `v`.
fn follow(km: &KreinMatrix, z: f64, v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (vals, vecs) = km.eigen_real(z)?;
    let k = (0..vals.len())
        .max_by(|a, b| overlap(v, &vecs[*a]).total_cmp(&overlap(v, &vecs[*b])))
        .unwrap_or(0);
    Ok((vals[k], vecs[k].clone()))
}

/// Golden-section search for the minimum of `sign * r(z)` on `[a, b]`, following the
/// trace through its eigenvector. Returns the point if the trace changes sign there.
fn dip_through_zero(km: &KreinMatrix, mut a: f64, mut b: f64, sign: f64, v: Vec<f64>) -> Result<Option<(f64, f64, Vec<f64>)>> {
    const G: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - G * (b - a);
    let mut x2 = a + G * (b - a);
    let (mut f1, mut v1) = follow(km, x1, &v)?;
    let (mut f2, mut v2) = follow(km, x2, &v)?;
    for _ in 0..100 {
        if sign * f1.min(sign * f2) < 0.0 || (b - a) <= 4.0 * f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if sign * f1 < sign * f2 {
            b = x2;
            (x2, f2, v2) = (x1, f1, v1.clone());
            x1 = b - G * (b - a);
            (f1, v1) = follow(km, x1, &v2)?;
        } else {
            a = x1;
            (x1, f1, v1) = (x2, f2, v2.clone());
            x2 = a + G * (b - a);
            (f2, v2) = follow(km, x2, &v1)?;
        }
    }
    let (x, f, vx) = if sign * f1 < sign * f2 { (x1, f1, v1) } else { (x2, f2, v2) };
    Ok((sign * f < 0.0).then_some((x, f, vx)))
}

#[allow(clippy::too_many_arguments)]
fn refine_zero(km: &KreinMatrix, mut a: f64, mut b: f64, mut ra: f64, rb: f64, mut va: Vec<f64>, trace: usize, opts: &KreinOptions) -> Result<KreinZero> {
    let mut rb = rb;
    for _ in 0..200 {
        if (b - a) <= 2.0 * f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let mid = 0.5 * (a + b);
        let (rm, vm) = follow(km, mid, &va)?;
        if rm.abs() <= opts.zero_cross_tol && (b - a) <= 1e-12 * (1.0 + mid.abs()) {
            a = mid;
            ra = rm;
            va = vm;
            break;
        }
        if (rm < 0.0) == (ra < 0.0) {
            a = mid;
            ra = rm;
            va = vm;
        } else {
            b = mid;
            rb = rm;
        }
    }
    let (z0, res) = if ra.abs() <= rb.abs() { (a, ra.abs()) } else { (b, rb.abs()) };
    let dist = km.distance_to_pole(Complex64::new(z0, 0.0));
    let h = (1e-6 * (1.0 + z0.abs())).min(0.25 * dist);
    let (rp, _) = follow(km, z0 + h, &va)?;
    let (rmn, _) = follow(km, z0 - h, &va)?;
    let slope = (rp - rmn) / (2.0 * h);
    let signature = if z0 < 0.0 {
        Signature::NotApplicable
    } else if slope.abs() <= opts.slope_tol {
        Signature::NearDegenerate
    } else if slope > 0.0 {
        Signature::Negative
    } else {
        Signature::Positive
    };
    Ok(KreinZero {
        z: z0,
        trace,
        slope,
        signature,
        residual: res,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidueVerdict {
    Removable,
    GenuinePole,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidueReport {
    pub z_p: f64,
    pub half_width: f64,
    pub increment: f64,
    pub nodes: usize,
    /// Row-major `m x m`.
    pub residue: Vec<Complex64>,
    pub max_entry: f64,
    pub verdict: ResidueVerdict,
    pub removable_tol: f64,
    /// `sum |c_k|^2` of the enclosed eigenvalues of `R~`, for comparison.
    pub spectral_weight: f64,
}

/// `(1/2 pi i) oint K(z) dz` over the square of half-width `half_width` centred on
/// `z_p`, by the trapezoidal rule with step at most `increment` and at least 1000
/// nodes. Without a half-width (or with one that would enclose another pole
/// candidate) the square extends half-way to the nearest other candidate.
pub fn residue(km: &KreinMatrix, z_p: f64, half_width: Option<f64>, increment: f64, removable_tol: f64) -> Result<ResidueReport> {
    if !(increment > 0.0) {
        return Err(KreinError::InvalidArgument("residue increment must be positive".into()));
    }
    let own = |t: f64| (t - z_p).abs() <= CLUSTER_TOL * (1.0 + z_p.abs()) + 1e-12;
    let nearest_other = km
        .theta
        .iter()
        .filter(|t| !own(**t))
        .map(|t| (t - z_p).abs())
        .fold(f64::INFINITY, f64::min);
    let limit = 0.5 * nearest_other;
    let h = match half_width {
        Some(h) if h > 0.0 && h < limit => h,
        Some(h) => {
            log::info!("residue half-width {h:.3e} reaches another pole candidate; shrinking to {limit:.3e}");
            limit
        }
        None => limit,
    };
    if !h.is_finite() {
        return Err(KreinError::InvalidArgument("no finite contour half-width for the residue".into()));
    }
    let per_side = ((2.0 * h / increment).ceil() as usize).max(250);
    let dz = 2.0 * h / per_side as f64;
    let corners = [
        Complex64::new(z_p - h, -h),
        Complex64::new(z_p + h, -h),
        Complex64::new(z_p + h, h),
        Complex64::new(z_p - h, h),
    ];
    let mut nodes = Vec::with_capacity(4 * per_side);
    for s in 0..4 {
        let (a, b) = (corners[s], corners[(s + 1) % 4]);
        for i in 0..per_side {
            nodes.push(a + (b - a) * (i as f64 / per_side as f64));
        }
    }
    let m = km.size();
    let vals: Vec<Result<KreinMatrixValue>> = nodes.par_iter().map(|&z| km.eval(z)).collect();
    let vals: Vec<KreinMatrixValue> = vals.into_iter().collect::<Result<_>>()?;
    let nn = nodes.len();
    let mut res = vec![Complex64::new(0.0, 0.0); m * m];
    for i in 0..nn {
        let j = (i + 1) % nn;
        let step = nodes[j] - nodes[i];
        for e in 0..m * m {
            res[e] += 0.5 * (vals[i].k[e] + vals[j].k[e]) * step;
        }
    }
    let scale = Complex64::new(0.0, 2.0 * PI);
    res.iter_mut().for_each(|v| *v /= scale);
    let max_entry = res.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let spectral_weight = km
        .theta
        .iter()
        .enumerate()
        .filter(|(_, t)| (**t - z_p).abs() < h)
        .map(|(k, _)| km.weight(k))
        .sum();
    Ok(ResidueReport {
        z_p,
        half_width: h,
        increment: dz,
        nodes: nn,
        residue: res,
        max_entry,
        verdict: if max_entry <= removable_tol {
            ResidueVerdict::Removable
        } else {
            ResidueVerdict::GenuinePole
        },
        removable_tol,
        spectral_weight,
    })
}

/// Axis-aligned rectangle in the `z` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Region {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Region {
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re.0, self.im.0),
            Complex64::new(self.re.1, self.im.0),
            Complex64::new(self.re.1, self.im.1),
            Complex64::new(self.re.0, self.im.1),
        ]
    }

    fn diameter(&self) -> f64 {
        (self.re.1 - self.re.0).hypot(self.im.1 - self.im.0)
    }

    fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re.0 - slack && z.re <= self.re.1 + slack && z.im >= self.im.0 - slack && z.im <= self.im.1 + slack
    }

    /// Halves across the long side of an elongated cell, quarters otherwise.
    fn split(&self) -> Vec<Region> {
        let (w, h) = (self.re.1 - self.re.0, self.im.1 - self.im.0);
        if w > 2.0 * h {
            let xm = 0.5 * (self.re.0 + self.re.1);
            vec![Region { re: (self.re.0, xm), im: self.im }, Region { re: (xm, self.re.1), im: self.im }]
        } else if h > 2.0 * w {
            let ym = 0.5 * (self.im.0 + self.im.1);
            vec![Region { re: self.re, im: (self.im.0, ym) }, Region { re: self.re, im: (ym, self.im.1) }]
        } else {
            self.quarters().to_vec()
        }
    }

    fn quarters(&self) -> [Region; 4] {
        let xm = 0.5 * (self.re.0 + self.re.1);
        let ym = 0.5 * (self.im.0 + self.im.1);
        [
            Region { re: (self.re.0, xm), im: (self.im.0, ym) },
            Region { re: (xm, self.re.1), im: (self.im.0, ym) },
            Region { re: (xm, self.re.1), im: (ym, self.im.1) },
            Region { re: (self.re.0, xm), im: (ym, self.im.1) },
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexZero {
    pub z: Complex64,
    pub multiplicity: usize,
    /// Smallest `|eigenvalue of K|` at the polished point.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexZeroSearch {
    pub region: Region,
    pub zeros: Vec<ComplexZero>,
    /// Winding number of `det K` around the whole region.
    pub total_winding: i64,
    pub unresolved: Vec<Region>,
}

impl ComplexZeroSearch {
    /// Zeros counted with multiplicity.
    pub fn count(&self) -> usize {
        self.zeros.iter().map(|z| z.multiplicity).sum()
    }
}

/// Winding number of `det K` along the boundary of `cell`. Segments are bisected
/// until the argument change between neighbours is below `pi/4` and the step is
/// short against the local scale `1/|d log det K / dz|`, which keeps the walk from
/// stepping over a zero or pole lying close to the contour (a double zero there
/// turns the argument by a full `2 pi`, invisible to the first test alone).
pub fn winding_number(km: &KreinMatrix, cell: &Region) -> Result<i64> {
    let c = cell.corners();
    let mut total = 0.0;
    for s in 0..4 {
        let (a, b) = (c[s], c[(s + 1) % 4]);
        let segs = 16;
        let mut prev = contour_point(km, a)?;
        for i in 1..=segs {
            let z = a + (b - a) * (i as f64 / segs as f64);
            let cur = contour_point(km, z)?;
            total += arg_change(km, prev, cur, 0)?;
            prev = cur;
        }
    }
    let w = total / (2.0 * PI);
    let wr = w.round();
    if (w - wr).abs() > 0.05 {
        return Err(KreinError::Unresolved(format!("winding {w:.3} is not close to an integer")));
    }
    Ok(wr as i64)
}

/// `(z, det K(z), |d log det K / dz|)`.
type ContourPoint = (Complex64, Complex64, f64);

fn contour_point(km: &KreinMatrix, z: Complex64) -> Result<ContourPoint> {
    let (det, g) = km.det_and_log_derivative(z)?;
    Ok((z, det, g.norm()))
}

fn arg_change(km: &KreinMatrix, a: ContourPoint, b: ContourPoint, depth: usize) -> Result<f64> {
    if a.1 == Complex64::new(0.0, 0.0) || b.1 == Complex64::new(0.0, 0.0) {
        return Err(KreinError::Unresolved(format!("det K vanishes on a contour at {}", a.0)));
    }
    let d = (b.1 / a.1).arg();
    let h = (b.0 - a.0).norm();
    let smooth = d.abs() < PI / 4.0 && h * a.2.max(b.2) < PI / 4.0;
    if smooth || depth >= 60 {
        if !smooth {
            log::warn!("argument refinement cap reached near z = {}", a.0);
        }
        return Ok(d);
    }
    let mid = contour_point(km, 0.5 * (a.0 + b.0))?;
    Ok(arg_change(km, a, mid, depth + 1)? + arg_change(km, mid, b, depth + 1)?)
}

/// Zeros of `det K` in `region` (upper half plane) by winding numbers on a coarse
/// grid of cells, subdivided until each cell holds at most one zero or becomes
/// tiny, then polished by a secant iteration on the smallest Krein eigenvalue.
pub fn complex_zero_search(km: &KreinMatrix, region: Region, coarse: (usize, usize)) -> Result<ComplexZeroSearch> {
    if !(region.im.0 > 0.0) || region.re.0 >= region.re.1 || region.im.0 >= region.im.1 {
        return Err(KreinError::InvalidArgument(format!(
            "complex search region must be a nondegenerate rectangle in the upper half plane, got {region:?}"
        )));
    }
    if km.size() == 0 {
        return Ok(ComplexZeroSearch {
            region,
            zeros: Vec::new(),
            total_winding: 0,
            unresolved: Vec::new(),
        });
    }
    let total_winding = winding_number(km, &region)?;
    let (nx, ny) = (coarse.0.max(1), coarse.1.max(1));
    let dx = (region.re.1 - region.re.0) / nx as f64;
    let dy = (region.im.1 - region.im.0) / ny as f64;
    let cells: Vec<Region> = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| Region {
                re: (region.re.0 + i as f64 * dx, region.re.0 + (i + 1) as f64 * dx),
                im: (region.im.0 + j as f64 * dy, region.im.0 + (j + 1) as f64 * dy),
            })
        })
        .collect();
    let min_size = 1e-7 * region.diameter();
    let results: Vec<Result<(Vec<ComplexZero>, Vec<Region>)>> = cells.par_iter().map(|c| search_cell(km, *c, min_size, 0)).collect();
    let mut zeros = Vec::new();
    let mut unresolved = Vec::new();
    for r in results {
        let (z, u) = r?;
        zeros.extend(z);
        unresolved.extend(u);
    }
    let found: usize = zeros.iter().map(|z: &ComplexZero| z.multiplicity).sum();
    if found as i64 != total_winding && unresolved.is_empty() {
        unresolved.push(region);
    }
    zeros.sort_by(|a, b| a.z.re.total_cmp(&b.z.re));
    Ok(ComplexZeroSearch {
        region,
        zeros,
        total_winding,
        unresolved,
    })
}

fn search_cell(km: &KreinMatrix, cell: Region, min_size: f64, depth: usize) -> Result<(Vec<ComplexZero>, Vec<Region>)> {
    let w = match winding_number(km, &cell) {
        Ok(w) => w,
        Err(KreinError::Unresolved(msg)) => {
            log::warn!("cell {cell:?} unresolved: {msg}");
            return Ok((Vec::new(), vec![cell]));
        }
        Err(e) => return Err(e),
    };
    if w == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if w < 0 {
        return Ok((Vec::new(), vec![cell]));
    }
    let at_limit = cell.diameter() <= min_size || depth >= 40;
    if w == 1 || at_limit {
        let guess = Complex64::new(0.5 * (cell.re.0 + cell.re.1), 0.5 * (cell.im.0 + cell.im.1));
        if let Ok((z, res)) = polish_zero(km, guess, 0.1 * cell.diameter()) {
            if cell.contains(z, 1e-9 * cell.diameter()) {
                let zero = ComplexZero {
                    z,
                    multiplicity: w as usize,
                    residual: res,
                };
                return Ok((vec![zero], Vec::new()));
            }
        }
        if at_limit {
            return Ok((Vec::new(), vec![cell]));
        }
    }
    let mut zeros = Vec::new();
    let mut unresolved = Vec::new();
    for q in cell.split() {
        let (z, u) = search_cell(km, q, min_size, depth + 1)?;
        zeros.extend(z);
        unresolved.extend(u);
    }
    Ok((zeros, unresolved))
}

fn smallest_eigenvalue(km: &KreinMatrix, z: Complex64) -> Result<Complex64> {
    let (vals, _) = km.eigen_complex(z)?;
    Ok(vals.into_iter().min_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap())
}

/// Secant iteration on the smallest-magnitude eigenvalue of `K(z)`.
pub fn polish_zero(km: &KreinMatrix, guess: Complex64, step: f64) -> Result<(Complex64, f64)> {
    let mut z0 = guess;
    let mut z1 = guess + Complex64::new(step, 0.5 * step);
    let mut f0 = smallest_eigenvalue(km, z0)?;
    let mut f1 = smallest_eigenvalue(km, z1)?;
    for _ in 0..100 {
        let denom = f1 - f0;
        if denom.norm() == 0.0 {
            break;
        }
        let z2 = z1 - f1 * (z1 - z0) / denom;
        if !z2.is_finite() {
            break;
        }
        z0 = z1;
        f0 = f1;
        z1 = z2;
        f1 = smallest_eigenvalue(km, z1)?;
        if (z1 - z0).norm() <= 1e-14 * (1.0 + z1.norm()) || f1.norm() == 0.0 {
            break;
        }
    }
    if !z1.is_finite() {
        return Err(KreinError::Unresolved(format!("zero polishing from {guess} diverged")));
    }
    Ok((z1, f1.norm()))
}

/// Arguments of the Krein eigenvalues over a rectangular grid in the `z` plane.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseField {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// `args[j][iy * nx + ix]`, `NaN` where the node sits on a pole.
    pub args: Vec<Vec<f64>>,
}

impl PhaseField {
    /// Dense grid CSV: `re_z, im_z, arg_1..arg_m`.
    pub fn to_csv(&self) -> String {
        let m = self.args.len();
        let mut s = String::from("re_z,im_z");
        for j in 0..m {
            s.push_str(&format!(",arg_{}", j + 1));
        }
        s.push('\n');
        let nx = self.re.len();
        for (iy, y) in self.im.iter().enumerate() {
            for (ix, x) in self.re.iter().enumerate() {
                s.push_str(&format!("{x:.10e},{y:.10e}"));
                for a in &self.args {
                    s.push_str(&format!(",{:.10e}", a[iy * nx + ix]));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Phase portrait of the Krein eigenvalues on an `nx x ny` grid over `region`.
/// Eigenvalues are assigned to traces by eigenvector overlap with the left
/// neighbour (or the node below at the start of a row).
pub fn phase_field(km: &KreinMatrix, region: Region, nx: usize, ny: usize) -> Result<PhaseField> {
    let nx = nx.max(2);
    let ny = ny.max(2);
    let re: Vec<f64> = (0..nx).map(|i| region.re.0 + (region.re.1 - region.re.0) * i as f64 / (nx - 1) as f64).collect();
    let im: Vec<f64> = (0..ny).map(|j| region.im.0 + (region.im.1 - region.im.0) * j as f64 / (ny - 1) as f64).collect();
    let nodes: Vec<Complex64> = im.iter().flat_map(|&y| re.iter().map(move |&x| Complex64::new(x, y))).collect();
    let eig: Vec<Option<(Vec<Complex64>, Vec<Vec<Complex64>>)>> = nodes.par_iter().map(|&z| km.eigen_complex(z).ok()).collect();
    let m = km.size();
    let mut args = vec![vec![f64::NAN; nodes.len()]; m];
    let mut assigned: Vec<Option<Vec<Vec<Complex64>>>> = vec![None; nodes.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let idx = iy * nx + ix;
            let Some((vals, vecs)) = &eig[idx] else {
                continue;
            };
            let reference = if ix > 0 { assigned[idx - 1].as_ref() } else { None }.or(if iy > 0 { assigned[idx - nx].as_ref() } else { None });
            let perm: Vec<usize> = match reference {
                Some(refv) => {
                    let mut used = vec![false; m];
                    (0..m)
                        .map(|j| {
                            let k = (0..m)
                                .filter(|k| !used[*k])
                                .max_by(|a, b| cover(&refv[j], &vecs[*a]).total_cmp(&cover(&refv[j], &vecs[*b])))
                                .unwrap();
                            used[k] = true;
                            k
                        })
                        .collect()
                }
                None => {
                    let mut p: Vec<usize> = (0..m).collect();
                    p.sort_by(|a, b| vals[*a].re.total_cmp(&vals[*b].re));
                    p
                }
            };
            for j in 0..m {
                args[j][idx] = vals[perm[j]].arg();
            }
            assigned[idx] = Some(perm.iter().map(|&k| vecs[k].clone()).collect());
        }
    }
    Ok(PhaseField { re, im, args })
}

fn cover(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A hand-built Krein matrix: `m = 1`, `A = 1`, `lambda = -1`, poles at 1 and 2.
    fn toy() -> KreinMatrix {
        KreinMatrix {
            m: 1,
            a: vec![1.0],
            lambda_s: vec![-1.0],
            theta: vec![1.0, 2.0],
            c: vec![0.5, 0.0],
            backward_error: 0.0,
            theta_scale: 2.0,
            doubled: false,
        }
    }

    #[test]
    fn toy_values_and_bounds() {
        let km = toy();
        // K(z) = 1 + z - 0.25 / (1 - z)
        let z = Complex64::new(0.3, 0.1);
        let v = km.eval(z).unwrap();
        let expect = 1.0 + z - 0.25 / (1.0 - z);
        assert!((v.k[0] - expect).norm() < 1e-15);
        assert!(km.eval(Complex64::new(1.0, 0.0)).is_err());
        assert!(km.real_lower_bound().unwrap() <= -1.0);
        assert!((km.imag_bound() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn toy_trace_zero_and_pole() {
        let km = toy();
        let t = trace_krein_eigenvalues(&km, -3.0, 3.0, 400, &KreinOptions::default()).unwrap();
        // zeros of (1+z)(1-z) - 0.25 = 0 -> z = ±sqrt(0.75)
        let z: Vec<f64> = t.zeros.iter().map(|z| z.z).collect();
        assert_eq!(z.len(), 2, "{z:?}");
        assert!((z[0] + 0.75f64.sqrt()).abs() < 1e-9);
        assert!((z[1] - 0.75f64.sqrt()).abs() < 1e-9);
        assert_eq!(t.zeros[0].signature, Signature::NotApplicable);
        // K' = 1 - 0.25/(1-z)^2 at z = sqrt(.75): 1 - 0.25/0.0179 < 0
        assert_eq!(t.zeros[1].signature, Signature::Positive);
        assert_eq!(t.poles.len(), 1);
        assert!((t.poles[0].z - 1.0).abs() < 1e-12);
        assert!(t.undetected_poles.is_empty());
    }

    #[test]
    fn toy_residues() {
        let km = toy();
        let genuine = residue(&km, 1.0, None, 1e-3, 1e-8).unwrap();
        assert_eq!(genuine.verdict, ResidueVerdict::GenuinePole);
        // K ~ -0.25/(1 - z) = 0.25/(z - 1)
        assert!((genuine.residue[0] - Complex64::new(0.25, 0.0)).norm() < 1e-6);
        // the corners make the trapezoidal error O(dz^2)
        let coarse = residue(&km, 2.0, None, 1e-3, 1e-8).unwrap();
        let removable = residue(&km, 2.0, None, 1e-5, 1e-8).unwrap();
        assert!(removable.max_entry < 1e-3 * coarse.max_entry, "{} vs {}", removable.max_entry, coarse.max_entry);
        assert_eq!(removable.verdict, ResidueVerdict::Removable);
        assert!(genuine.nodes >= 1000 && removable.nodes >= 1000);
    }

    #[test]
    fn toy_has_no_complex_zero() {
        let km = toy();
        let region = Region { re: (-3.0, 3.0), im: (1e-6, 2.0) };
        let s = complex_zero_search(&km, region, (4, 2)).unwrap();
        assert_eq!(s.total_winding, 0);
        assert!(s.zeros.is_empty());
    }

    #[test]
    fn complex_pair_is_found() {
        // K(z) = 1 + z - 4 / (1 - z): zeros where (1+z)(1-z) = 4, i.e. z = ±i sqrt(3)
        let mut km = toy();
        km.c = vec![2.0, 0.0];
        let region = Region { re: (-2.0, 2.0), im: (1e-6, 3.0) };
        let s = complex_zero_search(&km, region, (3, 3)).unwrap();
        assert_eq!(s.total_winding, 1);
        assert_eq!(s.zeros.len(), 1);
        assert!((s.zeros[0].z - Complex64::new(0.0, 3f64.sqrt())).norm() < 1e-10);
        assert!(s.zeros[0].z.im <= km.imag_bound());
    }

    #[test]
    fn assignment_prefers_overlap() {
        let prev = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let next = vec![vec![0.1, 0.995], vec![0.995, -0.1]];
        let (perm, ov) = best_assignment(&prev, &next);
        assert_eq!(perm, vec![1, 0]);
        assert!(ov.iter().all(|o| *o > 0.9));
    }
}
