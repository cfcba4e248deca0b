//! Dense linear-algebra helpers on top of `faer`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;

use crate::error::{KreinError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Eigen-decomposition of a symmetric matrix (lower triangle is read).
/// Eigenvalues ascending, eigenvectors in the columns.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| KreinError::EigenSolver(format!("{e:?}")))?;
    let vals = e.S().column_vector().iter().copied().collect();
    Ok((vals, e.U().to_owned()))
}

pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| KreinError::EigenSolver(format!("{e:?}")))
}

/// Eigenvalues of a Hermitian matrix.
pub fn herm_eigenvalues(a: MatRef<'_, Complex64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| KreinError::EigenSolver(format!("{e:?}")))
}

/// Eigenvalues and eigenvectors of a general complex matrix.
pub fn complex_eigen(a: MatRef<'_, Complex64>) -> Result<(Vec<Complex64>, Mat<Complex64>)> {
    let e = a.eigen().map_err(|e| KreinError::EigenSolver(format!("{e:?}")))?;
    let vals = e.S().column_vector().iter().copied().collect();
    Ok((vals, e.U().to_owned()))
}

pub fn complex_det(a: MatRef<'_, Complex64>) -> Complex64 {
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    a.determinant()
}

pub fn matmul_into(dst: &mut Mat<f64>, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst.as_mut(), Accum::Replace, lhs, rhs, 1.0, Par::Seq);
}

pub fn mat_mul(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(lhs.nrows(), rhs.ncols());
    matmul_into(&mut out, lhs, rhs);
    out
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let xm = MatRef::from_column_major_slice(x, x.len(), 1);
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, a, xm, 1.0, Par::Seq);
    out.col_as_slice(0).to_vec()
}

/// Copy the lower triangle onto the upper one, making the matrix exactly symmetric.
pub fn mirror_lower(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = a[(j, i)];
        }
    }
}

pub fn max_asymmetry(a: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Orthonormalize `vectors` with two passes of modified Gram-Schmidt.
/// Returns, for each input, the orthonormal vector and the relative norm that
/// survived projection against its predecessors (None if it collapsed below `drop_tol`).
pub fn orthonormalize(vectors: &[Vec<f64>], drop_tol: f64) -> Vec<(Option<Vec<f64>>, f64)> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for v in vectors {
        let n0 = norm(v);
        if n0 == 0.0 {
            out.push((None, 0.0));
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
        }
        let rel = norm(&w) / n0;
        if rel < drop_tol {
            out.push((None, rel));
        } else {
            let nw = norm(&w);
            w.iter_mut().for_each(|x| *x /= nw);
            basis.push(w.clone());
            out.push((Some(w), rel));
        }
    }
    out
}

/// Orthonormal basis of the complement of span{K} in R^dim, held implicitly as a
/// product of Householder reflectors `H = H_0 ... H_{k-1}`; the complement basis
/// is the trailing `dim - k` columns of `H`.
#[derive(Debug, Clone)]
pub struct Complement {
    dim: usize,
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Complement {
    /// `vectors` must be linearly independent.
    pub fn new(dim: usize, vectors: &[Vec<f64>]) -> Self {
        let mut cols: Vec<Vec<f64>> = vectors.to_vec();
        let mut reflectors = Vec::with_capacity(cols.len());
        for j in 0..cols.len() {
            let x = &cols[j];
            let alpha = norm(&x[j..]);
            let mut v = vec![0.0; dim];
            v[j..].copy_from_slice(&x[j..]);
            let sign = if x[j] >= 0.0 { 1.0 } else { -1.0 };
            v[j] += sign * alpha;
            let vv = dot(&v, &v);
            let tau = if vv == 0.0 { 0.0 } else { 2.0 / vv };
            for c in cols.iter_mut().skip(j) {
                let s = tau * dot(&v, c);
                axpy(-s, &v, c);
            }
            reflectors.push((v, tau));
        }
        Complement { dim, reflectors }
    }

    /// Dimension of the ambient space.
    pub fn ambient(&self) -> usize {
        self.dim
    }

    /// Dimension of the complement.
    pub fn dim(&self) -> usize {
        self.dim - self.reflectors.len()
    }

    pub fn codim(&self) -> usize {
        self.reflectors.len()
    }

    fn reflect(v: &[f64], tau: f64, x: &mut [f64]) {
        let s = tau * dot(v, x);
        axpy(-s, v, x);
    }

    /// Coordinates of the projection of `x` onto the complement.
    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (v, tau) in &self.reflectors {
            Self::reflect(v, *tau, &mut y);
        }
        y.split_off(self.codim())
    }

    /// Ambient vector with complement coordinates `y`.
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.codim()];
        x.extend_from_slice(y);
        for (v, tau) in self.reflectors.iter().rev() {
            Self::reflect(v, *tau, &mut x);
        }
        x
    }

    pub fn expand_complex(&self, y: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = y.iter().map(|c| c.re).collect();
        let im: Vec<f64> = y.iter().map(|c| c.im).collect();
        self.expand(&re)
            .into_iter()
            .zip(self.expand(&im))
            .map(|(a, b)| Complex64::new(a, b))
            .collect()
    }

    /// `C^T A C` for symmetric `A` given densely; consumes `a`.
    pub fn reduce(&self, mut a: Mat<f64>) -> Mat<f64> {
        let n = self.dim;
        assert_eq!(a.nrows(), n);
        for (v, tau) in &self.reflectors {
            // A <- (I - tau v v^T) A (I - tau v v^T) = A - v q^T - q v^T
            let av = mat_vec(a.as_ref(), v);
            let p: Vec<f64> = av.iter().map(|x| tau * x).collect();
            let k = 0.5 * tau * dot(v, &p);
            let q: Vec<f64> = p.iter().zip(v).map(|(p, v)| p - k * v).collect();
            for j in 0..n {
                let (vj, qj) = (v[j], q[j]);
                if vj == 0.0 && qj == 0.0 {
                    continue;
                }
                for i in j..n {
                    a[(i, j)] -= v[i] * qj + q[i] * vj;
                }
            }
            mirror_lower(&mut a);
        }
        let k = self.codim();
        a.submatrix(k, k, n - k, n - k).to_owned()
    }
}
