//! Compressed-row sparse matrices and the direct solvers built on them.

use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::Solve;
use faer::{Mat, MatRef};

use crate::error::{KreinError, Result};

/// Real sparse matrix in compressed-row form with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Assemble from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as (column, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `alpha * self + beta * other`, same shape.
    pub fn add(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> SparseMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (i, j, alpha * v))
            .collect();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, beta * v)));
        SparseMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn scale(&self, alpha: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    /// Largest |A_ij - A_ji| over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Maximum absolute row sum; an upper bound on the spectral norm of a symmetric matrix.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Place `blocks[r][c]` into a block matrix; `None` blocks are zero.
    pub fn block(blocks: &[Vec<Option<&SparseMatrix>>]) -> SparseMatrix {
        let row_sizes: Vec<usize> = blocks
            .iter()
            .map(|row| row.iter().flatten().next().expect("empty block row").nrows)
            .collect();
        let col_sizes: Vec<usize> = (0..blocks[0].len())
            .map(|c| {
                blocks
                    .iter()
                    .find_map(|row| row[c].map(|b| b.ncols))
                    .expect("empty block column")
            })
            .collect();
        let mut t = Vec::new();
        let mut r0 = 0;
        for (r, row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (c, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    t.extend(b.triplets().into_iter().map(|(i, j, v)| (r0 + i, c0 + j, v)));
                }
                c0 += col_sizes[c];
            }
            r0 += row_sizes[r];
        }
        SparseMatrix::from_triplets(
            row_sizes.iter().sum(),
            col_sizes.iter().sum(),
            t,
        )
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub(crate) fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| KreinError::SingularJacobian(format!("sparse assembly failed: {e:?}")))
    }
}

/// Sparse LU factorization with a residual-checked solve.
pub struct SparseLu {
    matrix: SparseMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    scale: f64,
}

impl SparseLu {
    pub fn new(matrix: &SparseMatrix) -> Result<Self> {
        assert_eq!(matrix.nrows(), matrix.ncols());
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| KreinError::SingularJacobian(format!("sparse LU failed: {e:?}")))?;
        Ok(SparseLu {
            scale: matrix.norm_inf().max(f64::MIN_POSITIVE),
            matrix: matrix.clone(),
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solve `A x = b`; fails if the solution is not finite or the relative
    /// residual exceeds `rel_tol`, which is how singularity shows up.
    pub fn solve_checked(&self, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
        let x = self.solve(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KreinError::SingularJacobian("non-finite solution".into()));
        }
        let ax = self.matrix.matvec(&x);
        let res = ax
            .iter()
            .zip(b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let xnorm = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let bnorm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let denom = (self.scale * xnorm + bnorm).max(f64::MIN_POSITIVE);
        if res / denom > rel_tol {
            return Err(KreinError::SingularJacobian(format!(
                "relative residual {:.2e} after LU solve",
                res / denom
            )));
        }
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = MatRef::from_column_major_slice(b, b.len(), 1);
        let x = self.lu.solve(rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_rows_sorted() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(1, 1, 1.0), (0, 1, 2.0), (1, 1, 3.0), (0, 0, 1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 1), 4.0);
        assert_eq!(a.row(0).collect::<Vec<_>>(), vec![(0, 1.0), (1, 2.0)]);
    }

    #[test]
    fn lu_solves_small_system() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (1, 2, -1.0), (2, 1, -1.0)],
        );
        let lu = SparseLu::new(&a).unwrap();
        let b = vec![1.0, 2.0, 3.0];
        let x = lu.solve_checked(&b, 1e-12).unwrap();
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = SparseLu::new(&a).and_then(|lu| lu.solve_checked(&[1.0, 0.0], 1e-10));
        assert!(res.is_err());
    }

    #[test]
    fn block_assembly_places_blocks() {
        let i2 = SparseMatrix::diagonal(&[1.0, 2.0]);
        let b = SparseMatrix::block(&[vec![None, Some(&i2)], vec![Some(&i2), None]]);
        assert_eq!(b.nrows(), 4);
        assert_eq!(b.get(0, 2), 1.0);
        assert_eq!(b.get(3, 1), 2.0);
        assert_eq!(b.get(0, 0), 0.0);
    }
}
