//! Hamiltonian linearization `JL` about a stationary state, symmetry kernels,
//! the `D` matrix, negative indices and a direct eigensolver oracle.
//!
//! Vectors live in the real block space `(Re, Im)` of length `2N`. Linear algebra
//! uses the Euclidean inner product; the quadrature weight `dx^dim` is a uniform
//! scalar and only enters quantities reported in physical units (`D`).
//!
//! On a square grid the rotation symmetry of a 2D state is broken at the level of
//! the truncation error, so the rotation kernel vector of `L` survives only as an
//! eigenvector with a small eigenvalue `eps`. When `|eps| <= zero_tol` that mode is
//! treated as the discrete remnant of the symmetry and `L` is replaced by
//! `L - eps x x^T`, which restores an exact kernel. Every downstream consumer
//! (the `D` matrix, the pencil and the direct oracle) sees the same corrected
//! operator, so the Krein and direct computations factor identical matrices.

use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{KreinError, Result};
use crate::grid::{rotation_generator, FieldValues};
use crate::linalg::{axpy, cdot, complex_eigen, dot, herm_eigenvalues, norm, orthonormalize, sym_eigenvalues, Complement};
use crate::sparse::{SparseLu, SparseMatrix};
use crate::stationary::{block_jacobian, single_particle_operator, StationaryState};

/// Eigenvalues with magnitude at most this are reported as numerically zero.
pub const DEFAULT_ZERO_TOL: f64 = 5e-3;
/// Kernel vectors with relative residual at most this are accepted.
pub const KERNEL_ACCEPT_TOL: f64 = 1e-6;
/// Kernel candidates with relative residual at least this are rejected.
pub const KERNEL_REJECT_TOL: f64 = 1e-4;
/// Above this size the direct oracle switches from dense QR to shift-invert Arnoldi.
pub const DENSE_ORACLE_MAX: usize = 4000;

/// `J (a, b) = (b, -a)` on a block vector.
pub fn apply_j(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out = x[n..].to_vec();
    out.extend(x[..n].iter().map(|v| -v));
    out
}

/// `J^{-1} (a, b) = (-b, a)`.
pub fn apply_j_inv(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out: Vec<f64> = x[n..].iter().map(|v| -v).collect();
    out.extend_from_slice(&x[..n]);
    out
}

/// Symmetric rank-one correction `-eps x x^T` with unit `x`.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryCorrection {
    pub name: String,
    pub eps: f64,
    #[serde(skip)]
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Linearization {
    state: StationaryState,
    canonical: bool,
    l: SparseMatrix,
    l_plus: SparseMatrix,
    l_minus: SparseMatrix,
    scale: f64,
    corrections: Vec<SymmetryCorrection>,
}

/// Build `L`, `L_+ = L` and `L_- = -JLJ` (2D), or the canonical pair
/// `L_+ = H + 3U^2`, `L_- = H + U^2` with `H = -1/2 Laplacian + V - mu` (1D).
pub fn assemble_linearization(state: &StationaryState) -> Result<Linearization> {
    let grid = state.grid();
    let h0 = single_particle_operator(grid, state.omega)?;
    let mu = state.mu;
    match (grid.dim(), state.field.values()) {
        (1, FieldValues::Real(u)) => {
            let lp = h0.add(1.0, &SparseMatrix::diagonal(&u.iter().map(|u| 3.0 * u * u - mu).collect::<Vec<_>>()), 1.0);
            let lm = h0.add(1.0, &SparseMatrix::diagonal(&u.iter().map(|u| u * u - mu).collect::<Vec<_>>()), 1.0);
            let l = SparseMatrix::block(&[vec![Some(&lp), None], vec![None, Some(&lm)]]);
            Ok(Linearization {
                scale: l.norm_inf(),
                state: state.clone(),
                canonical: true,
                l,
                l_plus: lp,
                l_minus: lm,
                corrections: Vec::new(),
            })
        }
        (1, FieldValues::Complex(_)) => Err(KreinError::InvalidArgument(
            "1D states must be real for the canonical linearization".into(),
        )),
        _ => {
            let (u, v) = (state.field.re(), state.field.im());
            let l = block_jacobian(&h0, &u, &v, mu);
            let n = u.len();
            // -JLJ = [[C, -B], [-B, A]] for L = [[A, B], [B, C]]
            let t = l
                .triplets()
                .into_iter()
                .map(|(i, j, val)| {
                    let (bi, bj) = (i / n, j / n);
                    let (ri, rj) = ((1 - bi) * n + i % n, (1 - bj) * n + j % n);
                    let sign = if bi == bj { 1.0 } else { -1.0 };
                    (ri, rj, sign * val)
                })
                .collect();
            let lm = SparseMatrix::from_triplets(2 * n, 2 * n, t);
            Ok(Linearization {
                scale: l.norm_inf(),
                state: state.clone(),
                canonical: false,
                l_plus: l.clone(),
                l_minus: lm,
                l,
                corrections: Vec::new(),
            })
        }
    }
}

impl Linearization {
    pub fn state(&self) -> &StationaryState {
        &self.state
    }

    /// True for the 1D canonical pathway.
    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    /// Sparse part of the full `2N x 2N` operator `L` (without symmetry corrections).
    pub fn l_sparse(&self) -> &SparseMatrix {
        &self.l
    }

    /// Size of `L` (twice the number of grid nodes).
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Size of `L_+` and `L_-`: `N` on the canonical path, `2N` otherwise.
    pub fn pencil_dim(&self) -> usize {
        self.l_plus.nrows()
    }

    /// Infinity norm of `L`, an upper bound on its spectral norm.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn corrections(&self) -> &[SymmetryCorrection] {
        &self.corrections
    }

    /// `L x`, including symmetry corrections.
    pub fn apply_l(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.l.matvec(x);
        for c in &self.corrections {
            let s = -c.eps * dot(&c.vector, x);
            axpy(s, &c.vector, &mut y);
        }
        y
    }

    fn minus_corrections(&self) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        self.corrections.iter().map(|c| (c.eps, apply_j_inv(&c.vector)))
    }

    pub fn apply_plus(&self, x: &[f64]) -> Vec<f64> {
        if self.canonical {
            self.l_plus.matvec(x)
        } else {
            self.apply_l(x)
        }
    }

    pub fn apply_minus(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.l_minus.matvec(x);
        for (eps, v) in self.minus_corrections() {
            let s = -eps * dot(&v, x);
            axpy(s, &v, &mut y);
        }
        y
    }

    /// `JL x`.
    pub fn apply_jl(&self, x: &[f64]) -> Vec<f64> {
        apply_j(&self.apply_l(x))
    }

    fn dense_with(&self, op: &SparseMatrix, corr: &[(f64, Vec<f64>)]) -> Mat<f64> {
        let mut m = op.to_dense();
        for (eps, v) in corr {
            for j in 0..v.len() {
                if v[j] == 0.0 {
                    continue;
                }
                for i in 0..v.len() {
                    m[(i, j)] -= eps * v[i] * v[j];
                }
            }
        }
        m
    }

    pub fn dense_plus(&self) -> Mat<f64> {
        if self.canonical {
            self.l_plus.to_dense()
        } else {
            self.dense_l()
        }
    }

    pub fn dense_minus(&self) -> Mat<f64> {
        let corr: Vec<_> = self.minus_corrections().collect();
        self.dense_with(&self.l_minus, &corr)
    }

    pub fn dense_l(&self) -> Mat<f64> {
        let corr: Vec<_> = self.corrections.iter().map(|c| (c.eps, c.vector.clone())).collect();
        self.dense_with(&self.l, &corr)
    }

    /// `‖op x‖ / (‖L‖ ‖x‖)`.
    fn relative(&self, y: &[f64], x: &[f64]) -> f64 {
        let nx = norm(x);
        if nx == 0.0 {
            return 0.0;
        }
        norm(y) / (self.scale * nx)
    }

    pub fn relative_residual_plus(&self, x: &[f64]) -> f64 {
        self.relative(&self.apply_plus(x), x)
    }

    pub fn relative_residual_minus(&self, x: &[f64]) -> f64 {
        self.relative(&self.apply_minus(x), x)
    }

    /// Solver for `(op - shift I) y = b` with op = `L` (`which = Full`) or `L_+`,
    /// corrections included through Woodbury updates.
    fn shifted_solver(&self, which: Which, shift: f64) -> Result<LowRankSolver> {
        let (base, corr): (&SparseMatrix, Vec<(f64, Vec<f64>)>) = match which {
            Which::Plus if self.canonical => (&self.l_plus, Vec::new()),
            Which::Plus | Which::Full => (&self.l, self.corrections.iter().map(|c| (c.eps, c.vector.clone())).collect()),
        };
        let shifted = if shift == 0.0 {
            base.clone()
        } else {
            base.add(1.0, &SparseMatrix::diagonal(&vec![-shift; base.nrows()]), 1.0)
        };
        LowRankSolver::new(&shifted, corr.into_iter().map(|(e, v)| (-e, v.clone(), v)).collect())
    }
}

#[derive(Clone, Copy)]
enum Which {
    Full,
    Plus,
}

/// Solves `(A + sum_k c_k u_k v_k^T) y = b` from a sparse LU of `A` (Woodbury).
pub(crate) struct LowRankSolver {
    lu: SparseLu,
    terms: Vec<(f64, Vec<f64>, Vec<f64>)>,
    /// `A^{-1} u_k`
    ainv_u: Vec<Vec<f64>>,
    /// LU-free capacitance matrix `C^{-1} + V^T A^{-1} U`, solved densely.
    cap: Mat<f64>,
}

impl LowRankSolver {
    pub(crate) fn new(a: &SparseMatrix, terms: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let lu = SparseLu::new(a)?;
        let ainv_u: Vec<Vec<f64>> = terms.iter().map(|(_, u, _)| lu.solve(u)).collect();
        let k = terms.len();
        let cap = Mat::from_fn(k, k, |i, j| dot(&terms[i].2, &ainv_u[j]) + if i == j { 1.0 / terms[i].0 } else { 0.0 });
        Ok(LowRankSolver { lu, terms, ainv_u, cap })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(b);
        let k = self.terms.len();
        if k == 0 {
            return y;
        }
        let rhs: Vec<f64> = self.terms.iter().map(|(_, _, v)| dot(v, &y)).collect();
        let w = small_solve(&self.cap, &rhs);
        for (j, wj) in w.iter().enumerate() {
            axpy(-wj, &self.ainv_u[j], &mut y);
        }
        y
    }
}

fn small_solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    use faer::linalg::solvers::Solve;
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

/// Symmetry-generated kernel candidate of `L`.
#[derive(Debug, Clone)]
pub struct KernelCandidate {
    pub name: &'static str,
    pub vector: Vec<f64>,
}

/// Phase vector `(-V, U)` and the rotation vector `(x d/dy - y d/dx)(U, V)` (2D),
/// or `U` itself as the candidate for `ker L_-` (1D).
pub fn symmetry_candidates(lin: &Linearization) -> Vec<KernelCandidate> {
    let field = &lin.state.field;
    if lin.canonical {
        return vec![KernelCandidate {
            name: "state",
            vector: field.re(),
        }];
    }
    let (u, v) = (field.re(), field.im());
    let mut phase: Vec<f64> = v.iter().map(|v| -v).collect();
    phase.extend_from_slice(&u);
    let rot = rotation_generator(field.grid());
    let mut r = rot.matvec(&u);
    r.extend(rot.matvec(&v));
    vec![
        KernelCandidate { name: "phase", vector: phase },
        KernelCandidate { name: "rotation", vector: r },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelVector {
    pub name: String,
    #[serde(skip)]
    pub vector: Vec<f64>,
    /// Relative residual of the analytic candidate (after orthogonalization).
    pub raw_residual: f64,
    /// Relative residual under the (corrected) operator.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedCandidate {
    pub name: String,
    pub residual: f64,
    pub reason: String,
}

/// Orthonormal bases of `ker L_+` and `ker L_-`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelBasis {
    pub plus: Vec<KernelVector>,
    pub minus: Vec<KernelVector>,
    pub rejected: Vec<RejectedCandidate>,
    pub corrections: Vec<SymmetryCorrection>,
    pub accept_tol: f64,
    pub reject_tol: f64,
}

impl KernelBasis {
    pub fn plus_vectors(&self) -> Vec<Vec<f64>> {
        self.plus.iter().map(|k| k.vector.clone()).collect()
    }

    pub fn minus_vectors(&self) -> Vec<Vec<f64>> {
        self.minus.iter().map(|k| k.vector.clone()).collect()
    }

    /// Largest `|<phi_+, phi_->|` over kernel pairs.
    pub fn cross_orthogonality(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.plus {
            for b in &self.minus {
                worst = worst.max(dot(&a.vector, &b.vector).abs());
            }
        }
        worst
    }

    pub fn max_residual(&self) -> f64 {
        self.plus.iter().chain(&self.minus).map(|k| k.residual).fold(0.0, f64::max)
    }
}

/// Kernel bases from the symmetry candidates, with a rank decision per candidate:
/// relative residual `<= accept_tol` accepts, `>= reject_tol` rejects and anything
/// in between is a [`KreinError::RankAmbiguity`]. A rotation candidate whose
/// nearest eigenvector of `L` has `|eps| <= zero_tol` is accepted after the
/// symmetry correction described in the module docs; the returned
/// linearization carries that correction.
pub fn kernel_basis(lin: &Linearization, zero_tol: f64) -> Result<(Linearization, KernelBasis)> {
    let (accept, reject) = (KERNEL_ACCEPT_TOL, KERNEL_REJECT_TOL);
    let mut out = lin.clone();
    out.corrections.clear();
    let mut basis = KernelBasis {
        plus: Vec::new(),
        minus: Vec::new(),
        rejected: Vec::new(),
        corrections: Vec::new(),
        accept_tol: accept,
        reject_tol: reject,
    };
    let candidates = symmetry_candidates(lin);

    if lin.canonical {
        // ker L_- = span{U}; L_+ is generically invertible.
        let c = &candidates[0];
        let nc = norm(&c.vector);
        if nc == 0.0 {
            return Err(KreinError::InvalidArgument("the zero state has no symmetry kernel".into()));
        }
        let v: Vec<f64> = c.vector.iter().map(|x| x / nc).collect();
        let res = out.relative_residual_minus(&v);
        classify_residual(c.name, res, accept, reject)?
            .map_err(|reason| KreinError::RankAmbiguity { candidate: format!("{} ({reason})", c.name), residual: res })?;
        basis.minus.push(KernelVector {
            name: c.name.into(),
            vector: v,
            raw_residual: res,
            residual: res,
        });
        return Ok((out, basis));
    }

    let vectors: Vec<Vec<f64>> = candidates.iter().map(|c| c.vector.clone()).collect();
    let ortho = orthonormalize(&vectors, 1e-12);
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for (c, (v, _)) in candidates.iter().zip(ortho) {
        let Some(mut v) = v else {
            basis.rejected.push(RejectedCandidate {
                name: c.name.into(),
                residual: 0.0,
                reason: "linearly dependent on accepted kernel vectors".into(),
            });
            continue;
        };
        // re-orthogonalize against vectors accepted so far (polishing can rotate them)
        for a in &accepted {
            let s = dot(a, &v);
            axpy(-s, a, &mut v);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let raw = out.relative_residual_plus(&v);
        match (classify_residual(c.name, raw, accept, reject), c.name) {
            (Ok(Ok(())), _) => {
                basis.plus.push(KernelVector {
                    name: c.name.into(),
                    vector: v.clone(),
                    raw_residual: raw,
                    residual: raw,
                });
                accepted.push(v);
                continue;
            }
            // the rotation candidate gets a second look below
            (_, "rotation") => {}
            (Ok(Err(reason)), _) => {
                basis.rejected.push(RejectedCandidate {
                    name: c.name.into(),
                    residual: raw,
                    reason,
                });
                continue;
            }
            (Err(e), _) => return Err(e),
        }
        // Broken continuous symmetry: look for the near-zero eigenvector of L.
        let (eps, x, overlap) = nearest_eigenvector(&out, &v, &accepted)?;
        log::debug!("rotation candidate: raw residual {raw:.3e}, eigenvalue {eps:.3e}, overlap {overlap:.6}");
        if overlap >= 0.9 && eps.abs() <= zero_tol {
            out.corrections.push(SymmetryCorrection {
                name: c.name.into(),
                eps,
                vector: x.clone(),
            });
            let res = out.relative_residual_plus(&x);
            if res > accept {
                return Err(KreinError::RankAmbiguity {
                    candidate: format!("{} after symmetry correction", c.name),
                    residual: res,
                });
            }
            basis.plus.push(KernelVector {
                name: c.name.into(),
                vector: x.clone(),
                raw_residual: raw,
                residual: res,
            });
            accepted.push(x);
        } else if overlap >= 0.9 && eps.abs() < 10.0 * zero_tol {
            return Err(KreinError::RankAmbiguity {
                candidate: format!("{} (nearest eigenvalue {eps:.3e})", c.name),
                residual: raw,
            });
        } else {
            basis.rejected.push(RejectedCandidate {
                name: c.name.into(),
                residual: raw,
                reason: format!("no eigenvector of L near zero matches it (eigenvalue {eps:.3e}, overlap {overlap:.3})"),
            });
        }
    }
    basis.corrections = out.corrections.clone();
    for k in &basis.plus {
        let m = apply_j_inv(&k.vector);
        let res = out.relative_residual_minus(&m);
        basis.minus.push(KernelVector {
            name: k.name.clone(),
            vector: m,
            raw_residual: k.raw_residual,
            residual: res,
        });
    }
    Ok((out, basis))
}

/// `Ok(Ok(()))` accept, `Ok(Err(..))` reject, `Err` ambiguous.
fn classify_residual(name: &str, res: f64, accept: f64, reject: f64) -> Result<std::result::Result<(), String>> {
    if res <= accept {
        Ok(Ok(()))
    } else if res >= reject {
        Ok(Err(format!("residual {res:.3e} >= {reject:.1e}")))
    } else {
        Err(KreinError::RankAmbiguity {
            candidate: name.into(),
            residual: res,
        })
    }
}

/// Inverse iteration for the eigenvector of `L` nearest zero on the complement
/// of `deflate`, started from `start`. Returns (eigenvalue, unit vector, |overlap with start|).
fn nearest_eigenvector(lin: &Linearization, start: &[f64], deflate: &[Vec<f64>]) -> Result<(f64, Vec<f64>, f64)> {
    let shift = 1e-9 * lin.scale;
    let solver = lin.shifted_solver(Which::Full, shift)?;
    let project = |x: &mut Vec<f64>| {
        for d in deflate {
            let s = dot(d, x);
            axpy(-s, d, x);
        }
        let nx = norm(x);
        x.iter_mut().for_each(|v| *v /= nx);
    };
    let mut x = start.to_vec();
    project(&mut x);
    let mut ev = f64::NAN;
    for _ in 0..40 {
        let mut y = solver.solve(&x);
        project(&mut y);
        let new_ev = dot(&y, &lin.apply_l(&y));
        x = y;
        if (new_ev - ev).abs() <= 1e-14 * lin.scale {
            ev = new_ev;
            break;
        }
        ev = new_ev;
    }
    let overlap = dot(&x, start).abs() / norm(start);
    Ok((ev, x, overlap))
}

/// The matrix `D_ij = <psi_i, L psi_j>` with `L psi_j = J^{-1} phi_j`, in the
/// weighted inner product. On the canonical path this is `<U, L_+^{-1} U>`,
/// which equals `P'(mu) / 2`.
#[derive(Debug, Clone, Serialize)]
pub struct DMatrix {
    pub d: Vec<Vec<f64>>,
    #[serde(skip)]
    pub psi: Vec<Vec<f64>>,
    pub negative: usize,
    pub asymmetry: f64,
}

pub fn d_matrix(lin: &Linearization, kernels: &KernelBasis) -> Result<DMatrix> {
    let w = lin.state.grid().weight();
    if lin.canonical {
        let u = lin.state.field.re();
        let solver = lin.shifted_solver(Which::Plus, 0.0)?;
        let psi = solver.solve(&u);
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(KreinError::SingularD("L_+ is singular; the generalized kernel is not solvable".into()));
        }
        let res = norm(&vec_sub(&lin.apply_plus(&psi), &u)) / norm(&u);
        if res > 1e-8 {
            return Err(KreinError::SingularD(format!("L_+ solve residual {res:.2e}")));
        }
        let d = w * dot(&u, &psi);
        if d == 0.0 {
            return Err(KreinError::SingularD("D = 0".into()));
        }
        return Ok(DMatrix {
            d: vec![vec![d]],
            psi: vec![psi],
            negative: usize::from(d < 0.0),
            asymmetry: 0.0,
        });
    }
    // Unnormalized symmetry vectors for physical scaling: phase vector uses the
    // state itself; corrected rotation modes keep unit norm.
    let phis = kernels.plus_vectors();
    let k = phis.len();
    let solver = lin.shifted_solver(Which::Full, 1e-10 * lin.scale)?;
    let shift = 1e-10 * lin.scale;
    let mut psis = Vec::with_capacity(k);
    for phi in &phis {
        let b = apply_j_inv(phi);
        // iterate (L - s) y' = b - s y toward the pseudo-inverse solution on ker(L)^perp
        let deflate = |x: &mut Vec<f64>| {
            for p in &phis {
                let s = dot(p, x);
                axpy(-s, p, x);
            }
        };
        let mut y = solver.solve(&b);
        deflate(&mut y);
        for _ in 0..6 {
            let rhs: Vec<f64> = b.iter().zip(&y).map(|(b, y)| b - shift * y).collect();
            let mut next = solver.solve(&rhs);
            deflate(&mut next);
            let change = norm(&vec_sub(&next, &y)) / norm(&next).max(f64::MIN_POSITIVE);
            y = next;
            if change < 1e-14 {
                break;
            }
        }
        let res = norm(&vec_sub(&lin.apply_l(&y), &b)) / norm(&b);
        if !(res <= 1e-6) {
            return Err(KreinError::SingularD(format!(
                "generalized kernel solve failed (relative residual {res:.2e}); the algebraic multiplicity of 0 exceeds twice the kernel dimension"
            )));
        }
        psis.push(y);
    }
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            d[i][j] = w * dot(&psis[i], &apply_j_inv(&phis[j]));
        }
    }
    let mut asym = 0.0f64;
    let dscale = d.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..k {
        for j in 0..i {
            asym = asym.max((d[i][j] - d[j][i]).abs() / dscale);
            let m = 0.5 * (d[i][j] + d[j][i]);
            d[i][j] = m;
            d[j][i] = m;
        }
    }
    let dm = Mat::from_fn(k, k, |i, j| d[i][j]);
    let eig = sym_eigenvalues(dm.as_ref())?;
    if eig.iter().any(|e| e.abs() <= 1e-12 * dscale) {
        return Err(KreinError::SingularD(format!("D has a (numerically) zero eigenvalue: {eig:?}")));
    }
    Ok(DMatrix {
        negative: eig.iter().filter(|e| **e < 0.0).count(),
        d,
        psi: psis,
        asymmetry: asym,
    })
}

fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// Negative eigenvalue count with the numerically-zero ones reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// Inertia of a symmetric matrix from its eigenvalues, with `[-zero_tol, zero_tol]` as zero.
pub fn inertia_of_eigenvalues(eigs: &[f64], zero_tol: f64) -> Inertia {
    Inertia {
        negative: eigs.iter().filter(|e| **e < -zero_tol).count(),
        zero: eigs.iter().filter(|e| e.abs() <= zero_tol).count(),
        positive: eigs.iter().filter(|e| **e > zero_tol).count(),
    }
}

/// Inertia of a dense symmetric matrix.
pub fn negative_index(a: &Mat<f64>, zero_tol: f64) -> Result<Inertia> {
    Ok(inertia_of_eigenvalues(&sym_eigenvalues(a.as_ref())?, zero_tol))
}

/// `n(L_+)` and `n(L_-)` on the canonical path, `n(L)` otherwise (as `plus`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OperatorIndices {
    pub plus: Inertia,
    pub minus: Option<Inertia>,
}

pub fn operator_indices(lin: &Linearization, zero_tol: f64) -> Result<OperatorIndices> {
    let plus = negative_index(&lin.dense_plus(), zero_tol)?;
    let minus = if lin.canonical {
        Some(negative_index(&lin.dense_minus(), zero_tol)?)
    } else {
        None
    };
    Ok(OperatorIndices { plus, minus })
}

/// Negative count of `L` compressed onto `S^perp`, `S = span{J^{-1} phi_j}`; equals
/// `n(L) - n(D)` (dense, meant for coarse grids).
pub fn constrained_negative_index(lin: &Linearization, kernels: &KernelBasis, zero_tol: f64) -> Result<Inertia> {
    let constraints: Vec<Vec<f64>> = if lin.canonical {
        // canonical block form: L = diag(L_+, L_-), kernel (0, U), J^{-1}(0, U) = (-U, 0)
        let n = lin.pencil_dim();
        kernels
            .minus
            .iter()
            .map(|k| {
                let mut v = k.vector.clone();
                v.extend(std::iter::repeat(0.0).take(n));
                v
            })
            .collect()
    } else {
        kernels.plus.iter().map(|k| apply_j_inv(&k.vector)).collect()
    };
    let ortho: Vec<Vec<f64>> = orthonormalize(&constraints, 1e-12).into_iter().filter_map(|(v, _)| v).collect();
    let comp = Complement::new(lin.dim(), &ortho);
    let reduced = comp.reduce(lin.dense_l());
    negative_index(&reduced, zero_tol)
}

#[derive(Debug, Clone)]
pub struct DirectEigen {
    pub lambda: Complex64,
    /// Unit right eigenvector of `JL`.
    pub vector: Vec<Complex64>,
    /// `‖JL v - lambda v‖ / ‖L‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    Dense,
    ShiftInvertArnoldi,
}

#[derive(Debug, Clone)]
pub struct DirectSpectrum {
    /// Computed eigenpairs, ordered by |lambda|.
    pub eigs: Vec<DirectEigen>,
    pub method: OracleMethod,
    pub shift: f64,
    /// Largest distance from a partner `-lambda` / `conj(lambda)` to the nearest computed eigenvalue.
    pub quartet_defect: f64,
}

impl DirectSpectrum {
    /// Eigenvalues with `|lambda| > zero_tol`.
    pub fn nonzero(&self, zero_tol: f64) -> impl Iterator<Item = &DirectEigen> {
        self.eigs.iter().filter(move |e| e.lambda.norm() > zero_tol)
    }

    pub fn zero_cluster(&self, zero_tol: f64) -> usize {
        self.eigs.iter().filter(|e| e.lambda.norm() <= zero_tol).count()
    }

    /// Eigenvectors whose eigenvalue lies within `tol` of `lambda`.
    pub fn eigenspace(&self, lambda: Complex64, tol: f64) -> Vec<Vec<Complex64>> {
        self.eigs.iter().filter(|e| (e.lambda - lambda).norm() <= tol).map(|e| e.vector.clone()).collect()
    }

    pub fn nearest(&self, lambda: Complex64) -> Option<&DirectEigen> {
        self.eigs.iter().min_by(|a, b| (a.lambda - lambda).norm().total_cmp(&(b.lambda - lambda).norm()))
    }
}

/// The `k_eigs` smallest-magnitude eigenvalues of `JL` (dense QR when `2N` is at most
/// [`DENSE_ORACLE_MAX`], shift-invert Arnoldi otherwise).
pub fn direct_spectrum(lin: &Linearization, k_eigs: usize) -> Result<DirectSpectrum> {
    let m = lin.dim();
    if k_eigs > m {
        return Err(KreinError::InvalidArgument(format!("requested {k_eigs} eigenvalues of a {m}x{m} operator")));
    }
    let mut spec = if m <= DENSE_ORACLE_MAX {
        dense_spectrum(lin, k_eigs)?
    } else {
        arnoldi_spectrum(lin, k_eigs)?
    };
    spec.quartet_defect = quartet_defect(&spec.eigs);
    Ok(spec)
}

fn dense_spectrum(lin: &Linearization, k: usize) -> Result<DirectSpectrum> {
    let l = lin.dense_l();
    let m = l.nrows();
    let h = m / 2;
    // JL rows: top = bottom half of L, bottom = -(top half of L)
    let jl = Mat::from_fn(m, m, |i, j| if i < h { l[(i + h, j)] } else { -l[(i - h, j)] });
    let jlc = Mat::from_fn(m, m, |i, j| Complex64::new(jl[(i, j)], 0.0));
    let (vals, vecs) = complex_eigen(jlc.as_ref())?;
    let mut eigs: Vec<DirectEigen> = (0..m)
        .map(|j| {
            let mut v: Vec<Complex64> = (0..m).map(|i| vecs[(i, j)]).collect();
            normalize_complex(&mut v);
            let residual = eig_residual(lin, vals[j], &v);
            DirectEigen {
                lambda: vals[j],
                vector: v,
                residual,
            }
        })
        .collect();
    eigs.sort_by(|a, b| a.lambda.norm().total_cmp(&b.lambda.norm()));
    eigs.truncate(k);
    Ok(DirectSpectrum {
        eigs,
        method: OracleMethod::Dense,
        shift: 0.0,
        quartet_defect: 0.0,
    })
}

fn normalize_complex(v: &mut [Complex64]) {
    let n = cdot(v, v).re.sqrt();
    if n > 0.0 {
        // fix the phase so the largest entry is real positive
        let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
        let ph = big.conj() / big.norm();
        v.iter_mut().for_each(|x| *x *= ph / n);
    }
}

fn eig_residual(lin: &Linearization, lambda: Complex64, v: &[Complex64]) -> f64 {
    let re: Vec<f64> = v.iter().map(|c| c.re).collect();
    let im: Vec<f64> = v.iter().map(|c| c.im).collect();
    let (a, b) = (lin.apply_jl(&re), lin.apply_jl(&im));
    let r: f64 = (0..v.len())
        .map(|i| (Complex64::new(a[i], b[i]) - lambda * v[i]).norm_sqr())
        .sum::<f64>()
        .sqrt();
    r / (lin.scale * cdot(v, v).re.sqrt())
}

fn quartet_defect(eigs: &[DirectEigen]) -> f64 {
    let vals: Vec<Complex64> = eigs.iter().map(|e| e.lambda).collect();
    let rmax = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for &l in &vals {
        // partners near the edge of the computed window may be cut off
        if l.norm() > 0.9 * rmax {
            continue;
        }
        let partners: &[Complex64] = if l.re.abs() > 1e-8 { &[-l, l.conj(), -l.conj()] } else { &[l.conj()] };
        for p in partners {
            let d = vals.iter().map(|v| (v - p).norm()).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}

/// Shift-invert Arnoldi on `JL` with full reorthogonalization; the subspace grows
/// until the `k` eigenvalues nearest the shift (outside the zero cluster) converge.
fn arnoldi_spectrum(lin: &Linearization, k: usize) -> Result<DirectSpectrum> {
    let m = lin.dim();
    // JL - sigma I as a sparse matrix plus the Woodbury terms of the corrections.
    let h = m / 2;
    let jl_sparse = {
        let t = lin
            .l
            .triplets()
            .into_iter()
            .map(|(i, j, v)| if i < h { (i + h, j, -v) } else { (i - h, j, v) })
            .collect();
        SparseMatrix::from_triplets(m, m, t)
    };
    // -eps (J x) x^T
    let terms: Vec<(f64, Vec<f64>, Vec<f64>)> = lin.corrections.iter().map(|c| (-c.eps, apply_j(&c.vector), c.vector.clone())).collect();
    // small, real and away from the exact zero eigenvalue; perturbed if the factorization fails
    let mut shift = 0.0123;
    let mut solver = None;
    for attempt in 0..4 {
        let a = jl_sparse.add(1.0, &SparseMatrix::diagonal(&vec![-shift; m]), 1.0);
        match LowRankSolver::new(&a, terms.clone()) {
            Ok(s) => {
                solver = Some(s);
                break;
            }
            Err(e) => {
                log::debug!("shift {shift} rejected ({e}); perturbing");
                shift *= 1.0 + 0.37 * (attempt + 1) as f64;
            }
        }
    }
    let solver = solver.ok_or_else(|| KreinError::EigenSolver("could not factor JL - sigma I".into()))?;
    let zero_tol = DEFAULT_ZERO_TOL;

    let mut dim = (3 * k + 40).min(m);
    let start: Vec<f64> = (0..m).map(|i| ((i as f64 + 1.0) * 0.7548776662466927).fract() - 0.5).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut hess: Vec<Vec<f64>> = Vec::new(); // column j has j+2 entries
    let mut v0 = start;
    let n0 = norm(&v0);
    v0.iter_mut().for_each(|x| *x /= n0);
    basis.push(v0);
    loop {
        while hess.len() < dim {
            let j = hess.len();
            let mut w = solver.solve(&basis[j]);
            let mut col = vec![0.0; j + 2];
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                    col[i] += c;
                }
            }
            let nw = norm(&w);
            col[j + 1] = nw;
            hess.push(col);
            if nw < 1e-14 {
                // invariant subspace; restart direction orthogonal to the basis
                let mut r: Vec<f64> = (0..m).map(|i| ((i as f64 + 7.0) * 0.5698402909980532).fract() - 0.5).collect();
                for _ in 0..2 {
                    for b in &basis {
                        let c = dot(b, &r);
                        axpy(-c, b, &mut r);
                    }
                }
                let nr = norm(&r);
                r.iter_mut().for_each(|x| *x /= nr);
                basis.push(r);
            } else {
                w.iter_mut().for_each(|x| *x /= nw);
                basis.push(w);
            }
        }
        let d = hess.len();
        let hm = Mat::from_fn(d, d, |i, j| Complex64::new(if i < hess[j].len() { hess[j][i] } else { 0.0 }, 0.0));
        let (theta, y) = complex_eigen(hm.as_ref())?;
        let mut cand: Vec<DirectEigen> = Vec::new();
        for (j, &t) in theta.iter().enumerate() {
            if t.norm() < 1e-300 {
                continue;
            }
            let lambda = shift + 1.0 / t;
            let mut v = vec![Complex64::new(0.0, 0.0); m];
            for (i, b) in basis.iter().take(d).enumerate() {
                let c = y[(i, j)];
                for (vk, bk) in v.iter_mut().zip(b) {
                    *vk += c * bk;
                }
            }
            normalize_complex(&mut v);
            cand.push(DirectEigen {
                lambda,
                residual: eig_residual(lin, lambda, &v),
                vector: v,
            });
        }
        cand.sort_by(|a, b| (a.lambda - shift).norm().total_cmp(&(b.lambda - shift).norm()));
        cand.truncate(k);
        let unconverged = cand.iter().filter(|e| e.lambda.norm() > zero_tol && e.residual > 1e-10).count();
        if unconverged == 0 || d >= m {
            if unconverged > 0 {
                return Err(KreinError::EigenSolver(format!("{unconverged} Ritz pairs failed to converge")));
            }
            cand.sort_by(|a, b| a.lambda.norm().total_cmp(&b.lambda.norm()));
            return Ok(DirectSpectrum {
                eigs: cand,
                method: OracleMethod::ShiftInvertArnoldi,
                shift,
                quartet_defect: 0.0,
            });
        }
        log::debug!("arnoldi: {unconverged} of {k} unconverged at dimension {d}; growing");
        dim = (d + d / 2).min(m);
    }
}

/// `k_i^-(lambda) = n(L restricted to the eigenspace)`: build the Hermitian matrix
/// `<z_i, L z_j>` over the supplied eigenvectors and count its negative eigenvalues.
pub fn signature_of_eigenvalue(lin: &Linearization, eigenspace: &[Vec<Complex64>]) -> Result<usize> {
    let d = eigenspace.len();
    if d == 0 {
        return Ok(0);
    }
    let lz: Vec<Vec<Complex64>> = eigenspace
        .iter()
        .map(|z| {
            let re: Vec<f64> = z.iter().map(|c| c.re).collect();
            let im: Vec<f64> = z.iter().map(|c| c.im).collect();
            lin.apply_l(&re).into_iter().zip(lin.apply_l(&im)).map(|(a, b)| Complex64::new(a, b)).collect()
        })
        .collect();
    let t = Mat::from_fn(d, d, |i, j| {
        let a = cdot(&eigenspace[i], &lz[j]);
        let b = cdot(&eigenspace[j], &lz[i]).conj();
        0.5 * (a + b)
    });
    let eigs = herm_eigenvalues(t.as_ref())?;
    let big = eigs.iter().map(|e| e.abs()).fold(0.0, f64::max);
    Ok(eigs.iter().filter(|e| **e < -1e-8 * big.max(f64::MIN_POSITIVE)).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid};
    use crate::stationary::StateLabel;

    fn zero_state(dim: usize, n: usize, dx: f64, mu: f64) -> StationaryState {
        let g = Grid::new(dim, n, dx).unwrap();
        StationaryState {
            field: Field::zeros(g, dim == 2),
            mu,
            omega: 1.0,
            residual_norm: 0.0,
            label: StateLabel::Unlabeled,
            iterations: 0,
        }
    }

    #[test]
    fn j_is_canonical() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(apply_j(&x), vec![3.0, 4.0, -1.0, -2.0]);
        assert_eq!(apply_j(&apply_j(&x)), x.iter().map(|v| -v).collect::<Vec<_>>());
        assert_eq!(apply_j_inv(&apply_j(&x)), x);
        // skew: <x, Jx> = 0
        assert_eq!(dot(&x, &apply_j(&x)), 0.0);
    }

    #[test]
    fn zero_state_below_linear_threshold_is_positive_definite() {
        // lowest eigenvalue of -1/2 Laplacian + V is omega/2 in 1D, omega in 2D
        for (dim, n, dx, mu) in [(1usize, 120usize, 0.1, 0.4), (2, 24, 0.5, 0.9)] {
            let lin = assemble_linearization(&zero_state(dim, n, dx, mu)).unwrap();
            let e = sym_eigenvalues(lin.dense_l().as_ref()).unwrap();
            assert!(e[0] > 0.0, "smallest eigenvalue {}", e[0]);
        }
    }

    #[test]
    fn minus_operator_is_conjugated_plus() {
        let g = Grid::new(2, 8, 0.7).unwrap();
        let pos = g.positions();
        let u: Vec<Complex64> = pos.iter().map(|&(x, y)| Complex64::new(x, 0.5 * y) * (-0.1 * (x * x + y * y)).exp()).collect();
        let st = StationaryState {
            field: Field::complex(g, u).unwrap(),
            mu: 0.7,
            omega: 0.3,
            residual_norm: 0.0,
            label: StateLabel::Unlabeled,
            iterations: 0,
        };
        let lin = assemble_linearization(&st).unwrap();
        assert_eq!(lin.l_sparse().max_asymmetry(), 0.0);
        let x: Vec<f64> = (0..lin.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        // -J L J x
        let expect: Vec<f64> = apply_j(&lin.apply_l(&apply_j(&x))).into_iter().map(|v| -v).collect();
        let got = lin.apply_minus(&x);
        for (a, b) in expect.iter().zip(&got) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_has_no_negative_index() {
        let i = Mat::<f64>::identity(5, 5);
        assert_eq!(negative_index(&i, 1e-3).unwrap(), Inertia { negative: 0, zero: 0, positive: 5 });
        assert_eq!(
            inertia_of_eigenvalues(&[-1.0, -1e-4, 0.0, 2e-3, 1.0], 5e-3),
            Inertia { negative: 1, zero: 3, positive: 1 }
        );
    }

    #[test]
    fn woodbury_solver_matches_dense() {
        let a = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 4.0), (1, 1, 3.0), (2, 2, 2.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let u = vec![1.0, 0.5, -1.0];
        let v = vec![0.2, 1.0, 0.3];
        let s = LowRankSolver::new(&a, vec![(0.7, u.clone(), v.clone())]).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = s.solve(&b);
        let mut ax = a.matvec(&x);
        let c = 0.7 * dot(&v, &x);
        axpy(c, &u, &mut ax);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
