//! The constrained self-adjoint pencil `(R - zS)u = 0`, its negative subspace
//! and the index bookkeeping that the Krein matrix is checked against.
//!
//! With `Pi` the orthogonal projection off the symmetry kernels, `R = Pi L_+ Pi` and
//! `S^{-1} = Pi L_- Pi`. Both are stored as dense matrices in an explicit
//! orthonormal basis of the constrained subspace. On the 2D path `L_+ = L` and
//! `L_- = -JLJ`, so every eigenvalue of the pencil is doubled; on the 1D path
//! the canonical pair is used and only `span{U}` is projected off.

use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{KreinError, Result};
use crate::linalg::{max_asymmetry, orthonormalize, sym_eigen, Complement};
use crate::linearize::{DMatrix, KernelBasis, Linearization, OperatorIndices};

#[derive(Debug, Clone)]
pub struct LinearPencil {
    basis: Complement,
    /// `Pi L_+ Pi` in the complement basis.
    pub r: Mat<f64>,
    /// `Pi L_- Pi` in the complement basis.
    pub s_inv: Mat<f64>,
    doubled: bool,
    kernel_dims: (usize, usize),
    cross_orthogonality: f64,
    /// Eigen-decomposition of `s_inv`, ascending.
    s_inv_eigs: Vec<f64>,
    s_inv_vecs: Mat<f64>,
}

impl LinearPencil {
    /// True on the 2D pathway, where the pencil doubles every eigenvalue.
    pub fn doubled(&self) -> bool {
        self.doubled
    }

    /// Dimension of the constrained subspace.
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.ambient()
    }

    /// `(dim ker L_+, dim ker L_-)` projected off.
    pub fn kernel_dims(&self) -> (usize, usize) {
        self.kernel_dims
    }

    pub fn cross_orthogonality(&self) -> f64 {
        self.cross_orthogonality
    }

    pub fn basis(&self) -> &Complement {
        &self.basis
    }

    /// Eigenvalues of `S^{-1}`, ascending.
    pub fn s_inv_eigenvalues(&self) -> &[f64] {
        &self.s_inv_eigs
    }

    pub(crate) fn s_inv_vectors(&self) -> &Mat<f64> {
        &self.s_inv_vecs
    }
}

/// Build `R` and `S^{-1}` on the complement of `ker L_+ + ker L_-` (2D) or of
/// `span{U}` (1D). Fails with [`KreinError::SingularPencil`] when `S^{-1}` has an
/// eigenvalue within `zero_tol` of zero.
pub fn build_pencil(lin: &Linearization, kernels: &KernelBasis, zero_tol: f64) -> Result<LinearPencil> {
    let cross = kernels.cross_orthogonality();
    if cross > 1e-8 {
        return Err(KreinError::InvalidArgument(format!(
            "ker L_+ and ker L_- are not orthogonal (max overlap {cross:.2e})"
        )));
    }
    let mut vectors = kernels.plus_vectors();
    vectors.extend(kernels.minus_vectors());
    let ortho = orthonormalize(&vectors, 1e-10);
    if ortho.iter().any(|(v, _)| v.is_none()) {
        return Err(KreinError::InvalidArgument("kernel vectors are linearly dependent".into()));
    }
    let ortho: Vec<Vec<f64>> = ortho.into_iter().filter_map(|(v, _)| v).collect();
    let basis = Complement::new(lin.pencil_dim(), &ortho);
    let r = basis.reduce(lin.dense_plus());
    let s_inv = basis.reduce(lin.dense_minus());
    debug_assert_eq!(max_asymmetry(r.as_ref()), 0.0);
    let (s_inv_eigs, s_inv_vecs) = sym_eigen(s_inv.as_ref())?;
    let smallest = s_inv_eigs.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
    if smallest <= zero_tol {
        return Err(KreinError::SingularPencil { smallest });
    }
    Ok(LinearPencil {
        basis,
        r,
        s_inv,
        doubled: !lin.is_canonical(),
        kernel_dims: (kernels.plus.len(), kernels.minus.len()),
        cross_orthogonality: cross,
        s_inv_eigs,
        s_inv_vecs,
    })
}

/// Orthonormal eigenvectors of `S` with negative eigenvalue (complement coordinates).
#[derive(Debug, Clone)]
pub struct NegativeSubspace {
    /// Columns are `s_l`.
    pub s_basis: Mat<f64>,
    /// `S s_l = lambda_l s_l`, all negative.
    pub lambda_s: Vec<f64>,
}

impl NegativeSubspace {
    pub fn dim(&self) -> usize {
        self.lambda_s.len()
    }
}

/// The negative eigenpairs of `S`, as reciprocals of those of `S^{-1}`.
pub fn negative_subspace(pencil: &LinearPencil) -> NegativeSubspace {
    let idx: Vec<usize> = (0..pencil.s_inv_eigs.len()).filter(|&i| pencil.s_inv_eigs[i] < 0.0).collect();
    let d = pencil.dim();
    let s_basis = Mat::from_fn(d, idx.len(), |i, j| pencil.s_inv_vecs[(i, idx[j])]);
    let lambda_s = idx.iter().map(|&i| 1.0 / pencil.s_inv_eigs[i]).collect();
    NegativeSubspace { s_basis, lambda_s }
}

/// `K_Ham` with its constituents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HamiltonianKreinIndex {
    pub k_ham: usize,
    pub canonical: bool,
    /// `n(L)` (2D) or `n(L_+)` (1D).
    pub n_l: usize,
    /// `n(L_-)` on the canonical path.
    pub n_l_minus: Option<usize>,
    /// `n(D)`; on the canonical path this is `n(P'(mu))`.
    pub n_d: usize,
    /// `|n(L_-) - (n(L_+) - n(P'))|`, a lower bound on the number of real
    /// unstable pairs (canonical path only).
    pub real_lower_bound: Option<usize>,
}

impl HamiltonianKreinIndex {
    /// Expected dimension of the negative subspace of `S`.
    pub fn expected_negative_dim(&self) -> usize {
        self.n_l_minus.unwrap_or(self.k_ham)
    }
}

/// `K_Ham = n(L) - n(D)` (2D) or `n(L_+) + n(L_-) - n(P')` (1D).
pub fn hamiltonian_krein_index(indices: &OperatorIndices, d: &DMatrix) -> Result<HamiltonianKreinIndex> {
    let n_l = indices.plus.negative;
    let n_d = d.negative;
    match indices.minus {
        None => {
            let k_ham = n_l.checked_sub(n_d).ok_or_else(|| {
                KreinError::InvalidArgument(format!("n(D) = {n_d} exceeds n(L) = {n_l}"))
            })?;
            Ok(HamiltonianKreinIndex {
                k_ham,
                canonical: false,
                n_l,
                n_l_minus: None,
                n_d,
                real_lower_bound: None,
            })
        }
        Some(minus) => {
            let n_m = minus.negative;
            let reduced_plus = n_l.checked_sub(n_d).ok_or_else(|| {
                KreinError::InvalidArgument(format!("n(P') = {n_d} exceeds n(L_+) = {n_l}"))
            })?;
            Ok(HamiltonianKreinIndex {
                k_ham: reduced_plus + n_m,
                canonical: true,
                n_l,
                n_l_minus: Some(n_m),
                n_d,
                real_lower_bound: Some(n_m.abs_diff(reduced_plus)),
            })
        }
    }
}

/// `z = -lambda^2`.
pub fn map_eigenvalue(lambda: Complex64) -> Complex64 {
    -(lambda * lambda)
}

/// Inverse of [`map_eigenvalue`] on the branch `-pi/2 < arg(lambda) <= pi/2`.
pub fn map_z(z: Complex64) -> Complex64 {
    // avoid the signed zero of -0.0 selecting the lower branch on the positive axis
    let w = Complex64::new(-z.re, if z.im == 0.0 { 0.0 } else { -z.im });
    let l = w.sqrt();
    if l.re == 0.0 && l.im < 0.0 {
        -l
    } else {
        l
    }
}

/// `k_r + 2k_c + 2k_i^-` over the pencil: `2 K_Ham` when doubled, `K_Ham` otherwise.
pub fn pencil_index_expectation(k_ham: usize, doubled: bool) -> usize {
    if doubled {
        2 * k_ham
    } else {
        k_ham
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PencilSummary {
    pub ambient_dim: usize,
    pub reduced_dim: usize,
    pub kernel_plus: usize,
    pub kernel_minus: usize,
    pub doubled: bool,
    pub cross_orthogonality: f64,
    pub index: HamiltonianKreinIndex,
    /// `lambda_l` with `S s_l = lambda_l s_l`.
    pub s_negative: Vec<f64>,
}

pub fn pencil_summary(pencil: &LinearPencil, neg: &NegativeSubspace, index: &HamiltonianKreinIndex) -> PencilSummary {
    PencilSummary {
        ambient_dim: pencil.ambient_dim(),
        reduced_dim: pencil.dim(),
        kernel_plus: pencil.kernel_dims.0,
        kernel_minus: pencil.kernel_dims.1,
        doubled: pencil.doubled,
        cross_orthogonality: pencil.cross_orthogonality,
        index: *index,
        s_negative: neg.lambda_s.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::Inertia;

    fn inertia(negative: usize) -> Inertia {
        Inertia { negative, zero: 0, positive: 10 }
    }

    fn dmat(negative: usize) -> DMatrix {
        DMatrix {
            d: vec![vec![1.0]],
            psi: Vec::new(),
            negative,
            asymmetry: 0.0,
        }
    }

    #[test]
    fn eigenvalue_map_examples() {
        let z = map_eigenvalue(Complex64::new(0.0, 0.2));
        assert!((z - Complex64::new(0.04, 0.0)).norm() < 1e-15);
        assert!(map_eigenvalue(Complex64::new(0.3, 0.0)).re < 0.0);
        let l = map_z(Complex64::new(0.021, 0.09));
        assert!(l.re.abs() > 1e-3 && l.im.abs() > 1e-3);
        // positive real z maps to the upper imaginary axis, negative real z to the positive real axis
        assert_eq!(map_z(Complex64::new(0.04, 0.0)), Complex64::new(0.0, 0.2));
        assert_eq!(map_z(Complex64::new(0.04, -0.0)), Complex64::new(0.0, 0.2));
        assert_eq!(map_z(Complex64::new(-0.09, 0.0)), Complex64::new(0.3, 0.0));
    }

    #[test]
    fn index_bookkeeping() {
        let two_d = OperatorIndices { plus: inertia(3), minus: None };
        let k = hamiltonian_krein_index(&two_d, &dmat(1)).unwrap();
        assert_eq!(k.k_ham, 2);
        assert_eq!(k.expected_negative_dim(), 2);
        let canon = OperatorIndices { plus: inertia(3), minus: Some(inertia(3)) };
        let k = hamiltonian_krein_index(&canon, &dmat(0)).unwrap();
        assert_eq!(k.k_ham, 6);
        assert_eq!(k.real_lower_bound, Some(0));
        assert_eq!(k.expected_negative_dim(), 3);
        assert_eq!(pencil_index_expectation(2, true), 4);
        assert_eq!(pencil_index_expectation(6, false), 6);
        assert_eq!(pencil_index_expectation(0, true), 0);
    }
}
