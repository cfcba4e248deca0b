//! Uniform tensor-product grids, finite-difference operators and discrete fields.
//!
//! Nodes sit at `x_i = (i - (n-1)/2) dx` on every axis, so for even `n` the
//! origin is a cell midpoint. 2D fields are stored row-major: the flat index of
//! node `(ix, iy)` is `iy * n + ix`.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KreinError, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    dx: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, dx: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(KreinError::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 8 {
            return Err(KreinError::InvalidGrid(format!("need at least 8 points per axis, got {n}")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(KreinError::InvalidGrid(format!("spacing must be positive, got {dx}")));
        }
        Ok(Grid { dim, n, dx })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a single node.
    pub fn weight(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    pub fn half_width(&self) -> f64 {
        (self.n as f64 - 1.0) * self.dx / 2.0
    }

    /// Coordinates along one axis.
    pub fn axis(&self) -> Vec<f64> {
        let c = (self.n as f64 - 1.0) / 2.0;
        (0..self.n).map(|i| (i as f64 - c) * self.dx).collect()
    }

    /// Cartesian position of every node (y = 0 in 1D).
    pub fn positions(&self) -> Vec<(f64, f64)> {
        let a = self.axis();
        match self.dim {
            1 => a.iter().map(|&x| (x, 0.0)).collect(),
            _ => {
                let mut out = Vec::with_capacity(self.len());
                for &y in &a {
                    for &x in &a {
                        out.push((x, y));
                    }
                }
                out
            }
        }
    }

    /// Whether the box comfortably contains the Thomas-Fermi radius `sqrt(2 mu)/omega`.
    pub fn contains_condensate(&self, mu: f64, omega: f64) -> bool {
        if mu <= 0.0 {
            return true;
        }
        self.half_width() >= 1.25 * (2.0 * mu).sqrt() / omega
    }

    pub(crate) fn warn_if_small_box(&self, mu: f64, omega: f64) {
        if !self.contains_condensate(mu, omega) {
            log::warn!(
                "box half-width {:.3} is less than 1.25 x Thomas-Fermi radius {:.3}",
                self.half_width(),
                (2.0 * mu).sqrt() / omega
            );
        }
    }
}

/// Sparse symmetric operator on scalar fields of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: SparseMatrix,
    pub symmetric: bool,
    /// Points per axis in the stencil (1 for diagonal operators).
    pub stencil_width: usize,
}

impl DiscreteOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

/// Centered second-difference Laplacian with zero Dirichlet closure.
pub fn laplacian(grid: &Grid) -> DiscreteOperator {
    let n = grid.n();
    let h2 = 1.0 / (grid.dx() * grid.dx());
    let mut t = Vec::new();
    let neighbours = |i: usize| -> Vec<usize> {
        let mut v = Vec::with_capacity(2);
        if i > 0 {
            v.push(i - 1);
        }
        if i + 1 < n {
            v.push(i + 1);
        }
        v
    };
    match grid.dim() {
        1 => {
            for i in 0..n {
                t.push((i, i, -2.0 * h2));
                for j in neighbours(i) {
                    t.push((i, j, h2));
                }
            }
        }
        _ => {
            for iy in 0..n {
                for ix in 0..n {
                    let k = iy * n + ix;
                    t.push((k, k, -4.0 * h2));
                    for jx in neighbours(ix) {
                        t.push((k, iy * n + jx, h2));
                    }
                    for jy in neighbours(iy) {
                        t.push((k, jy * n + ix, h2));
                    }
                }
            }
        }
    }
    DiscreteOperator {
        matrix: SparseMatrix::from_triplets(grid.len(), grid.len(), t),
        symmetric: true,
        stencil_width: 3,
    }
}

/// Nodal values of `omega^2 |x|^2 / 2`.
pub fn potential_values(grid: &Grid, omega: f64) -> Vec<f64> {
    grid.positions()
        .into_iter()
        .map(|(x, y)| 0.5 * omega * omega * (x * x + y * y))
        .collect()
}

/// Harmonic trap as a diagonal operator.
pub fn harmonic_potential(grid: &Grid, omega: f64) -> Result<DiscreteOperator> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(KreinError::InvalidArgument(format!("trap strength must be positive, got {omega}")));
    }
    Ok(DiscreteOperator {
        matrix: SparseMatrix::diagonal(&potential_values(grid, omega)),
        symmetric: true,
        stencil_width: 1,
    })
}

/// Centered first-difference operator along `axis` (0 = x, 1 = y), zero outside the box.
/// The matrix is exactly skew-symmetric.
pub fn first_difference(grid: &Grid, axis: usize) -> SparseMatrix {
    let n = grid.n();
    let c = 0.5 / grid.dx();
    let mut t = Vec::new();
    let stride = if axis == 0 { 1 } else { n };
    for k in 0..grid.len() {
        let i = if axis == 0 { k % n } else { k / n };
        if i > 0 {
            t.push((k, k - stride, -c));
        }
        if i + 1 < n {
            t.push((k, k + stride, c));
        }
    }
    SparseMatrix::from_triplets(grid.len(), grid.len(), t)
}

/// Discrete rotation generator `x d/dy - y d/dx` (2D only); exactly skew-symmetric.
pub fn rotation_generator(grid: &Grid) -> SparseMatrix {
    assert_eq!(grid.dim(), 2, "rotation generator needs a 2D grid");
    let pos = grid.positions();
    let dx = first_difference(grid, 0);
    let dy = first_difference(grid, 1);
    let mut t = Vec::new();
    for (k, &(x, y)) in pos.iter().enumerate() {
        t.extend(dy.row(k).map(|(j, v)| (k, j, x * v)));
        t.extend(dx.row(k).map(|(j, v)| (k, j, -y * v)));
    }
    SparseMatrix::from_triplets(grid.len(), grid.len(), t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValues {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Scalar field sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: FieldValues,
}

impl Field {
    pub fn real(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KreinError::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field {
            grid,
            values: FieldValues::Real(values),
        })
    }

    pub fn complex(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KreinError::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field {
            grid,
            values: FieldValues::Complex(values),
        })
    }

    pub fn from_parts(grid: Grid, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let v = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
        Field::complex(grid, v)
    }

    pub fn zeros(grid: Grid, complex: bool) -> Self {
        if complex {
            Field {
                grid,
                values: FieldValues::Complex(vec![Complex64::new(0.0, 0.0); grid.len()]),
            }
        } else {
            Field {
                grid,
                values: FieldValues::Real(vec![0.0; grid.len()]),
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &FieldValues {
        &self.values
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.values, FieldValues::Complex(_))
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn re(&self) -> Vec<f64> {
        match &self.values {
            FieldValues::Real(v) => v.clone(),
            FieldValues::Complex(v) => v.iter().map(|c| c.re).collect(),
        }
    }

    pub fn im(&self) -> Vec<f64> {
        match &self.values {
            FieldValues::Real(v) => vec![0.0; v.len()],
            FieldValues::Complex(v) => v.iter().map(|c| c.im).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        match &self.values {
            FieldValues::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            FieldValues::Complex(v) => v.clone(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_complex().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Discrete L2 norm squared, `<u, u>`.
    pub fn power(&self) -> f64 {
        self.to_complex().iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.weight()
    }

    pub fn scaled(&self, a: f64) -> Field {
        let values = match &self.values {
            FieldValues::Real(v) => FieldValues::Real(v.iter().map(|x| a * x).collect()),
            FieldValues::Complex(v) => FieldValues::Complex(v.iter().map(|x| x * a).collect()),
        };
        Field {
            grid: self.grid,
            values,
        }
    }

    /// Write header line then one value (or `re,im` pair) per line, row-major.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "dim={},n={},dx={:e},kind={}\n",
            self.grid.dim(),
            self.grid.n(),
            self.grid.dx(),
            if self.is_complex() { "complex" } else { "real" }
        );
        match &self.values {
            FieldValues::Real(v) => v.iter().for_each(|x| {
                let _ = writeln!(s, "{x:e}");
            }),
            FieldValues::Complex(v) => v.iter().for_each(|c| {
                let _ = writeln!(s, "{:e},{:e}", c.re, c.im);
            }),
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| KreinError::Parse("empty field file".into()))?;
        let (grid, complex) = parse_header(header)?;
        let mut re = Vec::with_capacity(grid.len());
        let mut im = Vec::with_capacity(grid.len());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let a = parse_f64(parts.next())?;
            re.push(a);
            if complex {
                im.push(parse_f64(parts.next())?);
            }
        }
        if complex {
            Field::from_parts(grid, re, im)
        } else {
            Field::real(grid, re)
        }
    }

    /// Little-endian binary layout: magic `KGPF`, version, dim, kind, pad,
    /// n (u32), dx (f64), then row-major values (re/im interleaved when complex).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 16 * self.len());
        out.extend_from_slice(b"KGPF");
        out.push(1);
        out.push(self.grid.dim() as u8);
        out.push(self.is_complex() as u8);
        out.push(0);
        out.extend_from_slice(&(self.grid.n() as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.dx().to_le_bytes());
        match &self.values {
            FieldValues::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            FieldValues::Complex(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != b"KGPF" {
            return Err(KreinError::Parse("not a field file".into()));
        }
        if bytes[4] != 1 {
            return Err(KreinError::Parse(format!("unsupported field version {}", bytes[4])));
        }
        let dim = bytes[5] as usize;
        let complex = bytes[6] != 0;
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dx = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let grid = Grid::new(dim, n, dx)?;
        let per = if complex { 2 } else { 1 };
        let body = &bytes[20..];
        if body.len() != 8 * per * grid.len() {
            return Err(KreinError::Parse("field payload has wrong length".into()));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if complex {
            let v = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Field::complex(grid, v)
        } else {
            Field::real(grid, vals)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if path.extension().is_some_and(|e| e == "csv") {
            f.write_all(self.to_csv().as_bytes())?;
        } else {
            f.write_all(&self.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        if path.extension().is_some_and(|e| e == "csv") {
            let mut s = String::new();
            for line in f.lines() {
                s.push_str(&line?);
                s.push('\n');
            }
            Field::from_csv(&s)
        } else {
            let mut b = Vec::new();
            f.read_to_end(&mut b)?;
            Field::from_bytes(&b)
        }
    }
}

fn parse_f64(s: Option<&str>) -> Result<f64> {
    let s = s.ok_or_else(|| KreinError::Parse("missing value".into()))?;
    s.trim().parse().map_err(|_| KreinError::Parse(format!("bad number `{s}`")))
}

fn parse_header(line: &str) -> Result<(Grid, bool)> {
    let (mut dim, mut n, mut dx, mut kind) = (None, None, None, None);
    for part in line.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| KreinError::Parse(format!("bad header entry `{part}`")))?;
        match k.trim() {
            "dim" => dim = v.trim().parse::<usize>().ok(),
            "n" => n = v.trim().parse::<usize>().ok(),
            "dx" => dx = v.trim().parse::<f64>().ok(),
            "kind" => kind = Some(v.trim() == "complex"),
            _ => {}
        }
    }
    match (dim, n, dx, kind) {
        (Some(d), Some(n), Some(dx), Some(c)) => Ok((Grid::new(d, n, dx)?, c)),
        _ => Err(KreinError::Parse(format!("incomplete field header `{line}`"))),
    }
}

/// `<u, v>` with the uniform product-rule weight, conjugate-linear in `u`.
pub fn inner_product(u: &Field, v: &Field) -> Result<Complex64> {
    if u.grid() != v.grid() {
        return Err(KreinError::GridMismatch);
    }
    let s: Complex64 = u
        .to_complex()
        .iter()
        .zip(v.to_complex())
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(s * u.grid().weight())
}

/// Total phase winding (in units of 2 pi) of a complex field around the
/// square loop of half-width `radius` centred at the origin, traversed
/// counter-clockwise through grid nodes.
pub fn winding_on_square(field: &Field, radius: f64) -> i64 {
    let grid = field.grid();
    assert_eq!(grid.dim(), 2);
    let n = grid.n();
    let axis = grid.axis();
    let lo = axis.iter().position(|&x| x >= -radius).unwrap_or(0);
    let hi = axis.iter().rposition(|&x| x <= radius).unwrap_or(n - 1);
    let v = field.to_complex();
    let at = |ix: usize, iy: usize| v[iy * n + ix];
    let mut loop_pts = Vec::new();
    for ix in lo..hi {
        loop_pts.push(at(ix, lo));
    }
    for iy in lo..hi {
        loop_pts.push(at(hi, iy));
    }
    for ix in (lo + 1..=hi).rev() {
        loop_pts.push(at(ix, hi));
    }
    for iy in (lo + 1..=hi).rev() {
        loop_pts.push(at(lo, iy));
    }
    total_winding(&loop_pts)
}

/// Phase singularities found by the winding around each elementary plaquette,
/// as (x, y, charge) at plaquette centres.
pub fn plaquette_vortices(field: &Field) -> Vec<(f64, f64, i64)> {
    let grid = field.grid();
    assert_eq!(grid.dim(), 2);
    let n = grid.n();
    let axis = grid.axis();
    let v = field.to_complex();
    let mut out = Vec::new();
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let corners = [
                v[iy * n + ix],
                v[iy * n + ix + 1],
                v[(iy + 1) * n + ix + 1],
                v[(iy + 1) * n + ix],
            ];
            let w = total_winding(&corners);
            if w != 0 {
                out.push((
                    0.5 * (axis[ix] + axis[ix + 1]),
                    0.5 * (axis[iy] + axis[iy + 1]),
                    w,
                ));
            }
        }
    }
    out
}

fn total_winding(pts: &[Complex64]) -> i64 {
    let mut acc = 0.0;
    for k in 0..pts.len() {
        let a = pts[k];
        let b = pts[(k + 1) % pts.len()];
        acc += (b * a.conj()).arg();
    }
    (acc / (2.0 * std::f64::consts::PI)).round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(3, 16, 0.5).is_err());
        assert!(Grid::new(1, 16, 0.0).is_err());
        assert!(Grid::new(1, 16, -1.0).is_err());
        assert!(Grid::new(2, 4, 0.5).is_err());
    }

    #[test]
    fn symmetric_layout() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        assert_eq!(g.axis(), vec![-3.5, -2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 3.5]);
        let g = Grid::new(1, 800, 0.025).unwrap();
        assert!((g.half_width() - 9.9875).abs() < 1e-12);
        let g = Grid::new(2, 48, 0.5).unwrap();
        assert_eq!(g.len(), 2304);
    }

    #[test]
    fn laplacian_on_constant_and_quadratic() {
        let g = Grid::new(1, 20, 0.3).unwrap();
        let lap = laplacian(&g);
        let ones = vec![1.0; 20];
        let r = lap.apply(&ones);
        assert!(r[1..19].iter().all(|v| v.abs() < 1e-12));
        let x2: Vec<f64> = g.axis().iter().map(|x| x * x).collect();
        let r = lap.apply(&x2);
        assert!(r[1..19].iter().all(|v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn laplacian_is_symmetric_and_kronecker_sum() {
        let g1 = Grid::new(1, 8, 0.7).unwrap();
        let g2 = Grid::new(2, 8, 0.7).unwrap();
        let l1 = laplacian(&g1).matrix.to_dense();
        let l2 = laplacian(&g2);
        assert_eq!(l2.matrix.max_asymmetry(), 0.0);
        let d2 = l2.matrix.to_dense();
        for a in 0..64 {
            for b in 0..64 {
                let (ax, ay, bx, by) = (a % 8, a / 8, b % 8, b / 8);
                let mut expect = 0.0;
                if ay == by {
                    expect += l1[(ax, bx)];
                }
                if ax == bx {
                    expect += l1[(ay, by)];
                }
                assert_eq!(d2[(a, b)], expect);
            }
        }
    }

    #[test]
    fn potential_values_match_formula() {
        let g = Grid::new(1, 9, 1.0).unwrap();
        let v = harmonic_potential(&g, 1.0).unwrap();
        // x = 2 is node 6
        assert!((v.matrix.get(6, 6) - 2.0).abs() < 1e-15);
        assert_eq!(v.matrix.get(4, 4), 0.0);
        assert!(harmonic_potential(&g, 0.0).is_err());
        let g = Grid::new(2, 9, 1.0).unwrap();
        let v = potential_values(&g, 0.2);
        // node (x=1, y=0)
        assert!((v[4 * 9 + 5] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn inner_product_basics() {
        let g = Grid::new(1, 10, 0.5).unwrap();
        let u = Field::real(g, vec![1.0; 10]).unwrap();
        assert!((inner_product(&u, &u).unwrap().re - 5.0).abs() < 1e-14);
        let other = Field::real(Grid::new(1, 10, 0.25).unwrap(), vec![1.0; 10]).unwrap();
        assert!(matches!(inner_product(&u, &other), Err(KreinError::GridMismatch)));
    }

    #[test]
    fn rotation_generator_is_skew() {
        let g = Grid::new(2, 10, 0.5).unwrap();
        let r = rotation_generator(&g);
        let rt = r.transpose();
        assert_eq!(r.add(1.0, &rt, 1.0).triplets().iter().map(|t| t.2.abs()).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g = Grid::new(2, 8, 0.375).unwrap();
        let vals: Vec<Complex64> = (0..64).map(|k| Complex64::new(k as f64 / 7.0, -1e-20 * k as f64)).collect();
        let f = Field::complex(g, vals).unwrap();
        assert_eq!(Field::from_csv(&f.to_csv()).unwrap(), f);
        assert_eq!(Field::from_bytes(&f.to_bytes()).unwrap(), f);
    }
}
