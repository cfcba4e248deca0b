//! Structural invariants of the discretization, linearization, pencil and Krein
//! matrix, as plain functions that panic on violation. The `invariants` test
//! target wraps each one in a `#[test]`; the acceptance harness runs them all.

use std::f64::consts::FRAC_PI_2;

use faer::linalg::solvers::Solve;
use faer::Mat;
use krein_core::grid::{inner_product, laplacian, Field, Grid};
use krein_core::krein::{pole_candidates, residue, KreinMatrix};
use krein_core::linalg::{dot, mat_mul, max_asymmetry, norm, sym_eigen};
use krein_core::linearize::{
    assemble_linearization, constrained_negative_index, direct_spectrum, operator_indices,
};
use krein_core::pencil::{map_eigenvalue, map_z};
use krein_core::stationary::sign_changes;
use krein_core::Complex64;
use proptest::prelude::*;

use super::{all, dark, one_dark, three_dark, vortex24, Fixture};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Real window worth probing: from the certified lower bound to just past the
/// fifth pole candidate.
fn probe_window(km: &KreinMatrix) -> (f64, f64) {
    let lb = km.real_lower_bound().unwrap();
    let poles = pole_candidates(km);
    let hi = poles.get(4).copied().unwrap_or(lb.abs() + 1.0);
    (lb - 1.0, hi)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn krein(f: &Fixture) -> KreinMatrix {
    KreinMatrix::new(&f.pencil, &f.neg).unwrap()
}

// ---------------------------------------------------------------------------
// grid

proptest! {
    #![proptest_config(config(24))]

    fn prop_laplacian_exactly_symmetric(n in 8usize..40, dx in 0.05f64..1.0, dim in 1usize..3) {
        let g = Grid::new(dim, n, dx).unwrap();
        prop_assert_eq!(laplacian(&g).matrix.max_asymmetry(), 0.0);
    }

    fn prop_laplacian_of_square_is_two(n in 8usize..200, dx in 0.01f64..1.0) {
        let g = Grid::new(1, n, dx).unwrap();
        let x2: Vec<f64> = g.axis().iter().map(|x| x * x).collect();
        let l = laplacian(&g).apply(&x2);
        let scale = x2.iter().fold(1.0f64, |a, b| a.max(*b)) / (dx * dx);
        for v in &l[1..n - 1] {
            prop_assert!((v - 2.0).abs() <= 64.0 * f64::EPSILON * scale);
        }
    }

    fn prop_inner_product_positive_definite(vals in prop::collection::vec(-5.0f64..5.0, 2 * 64)) {
        let g = Grid::new(2, 8, 0.3).unwrap();
        let (re, im) = vals.split_at(64);
        prop_assume!(re.iter().chain(im).any(|v| *v != 0.0));
        let f = Field::from_parts(g, re.to_vec(), im.to_vec()).unwrap();
        let p = inner_product(&f, &f).unwrap();
        prop_assert!(p.re > 0.0);
        prop_assert_eq!(p.im, 0.0);
    }

    fn prop_eigenvalue_map_round_trip(r in 1e-3f64..10.0, arg in (-FRAC_PI_2 + 1e-6)..=FRAC_PI_2) {
        let lambda = Complex64::from_polar(r, arg);
        let back = map_z(map_eigenvalue(lambda));
        prop_assert!((back - lambda).norm() <= 1e-14 * r.max(1.0));
    }
}

// ---------------------------------------------------------------------------
// Krein matrix

proptest! {
    #![proptest_config(config(32))]

    fn prop_krein_matrix_complex_symmetric(which in 0usize..3, t in 0.0f64..1.0, s in -1.0f64..1.0) {
        let f = all()[which];
        let km = krein(f);
        let (lo, hi) = probe_window(&km);
        let z = c(lo + t * (hi - lo), s * km.imag_bound().max(0.1));
        prop_assume!(z.im.abs() > 1e-9);
        let v = km.eval(z).unwrap();
        prop_assert!(v.asymmetry() <= 1e-10, "asymmetry {} at {z}", v.asymmetry());
    }

    fn prop_krein_matrix_conjugate_reflection(which in 0usize..3, t in 0.0f64..1.0, s in 0.01f64..1.0) {
        let f = all()[which];
        let km = krein(f);
        let (lo, hi) = probe_window(&km);
        let z = c(lo + t * (hi - lo), s * km.imag_bound().max(0.1));
        let up = km.eval(z).unwrap();
        let down = km.eval(z.conj()).unwrap();
        let scale = up.k.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in up.k.iter().zip(&down.k) {
            prop_assert!((a.conj() - b).norm() <= 1e-12 * scale);
        }
    }

    fn prop_krein_matrix_hermitian_on_real_axis(which in 0usize..3, t in 0.0f64..1.0) {
        let f = all()[which];
        let km = krein(f);
        let (lo, hi) = probe_window(&km);
        let x = lo + t * (hi - lo);
        let near = pole_candidates(&km).iter().map(|p| (p - x).abs()).fold(f64::INFINITY, f64::min);
        prop_assume!(near > 1e-9 * (1.0 + x.abs()));
        let (vals, _) = km.eigen_complex(c(x, 0.0)).unwrap();
        let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for v in &vals {
            prop_assert!(v.im.abs() <= 1e-9 * scale, "Im r = {} at z = {x}", v.im);
        }
    }
}

pub fn laplacian_exactly_symmetric() {
    prop_laplacian_exactly_symmetric();
}

pub fn laplacian_of_square_is_two() {
    prop_laplacian_of_square_is_two();
}

pub fn inner_product_positive_definite() {
    prop_inner_product_positive_definite();
}

pub fn eigenvalue_map_round_trip() {
    prop_eigenvalue_map_round_trip();
}

pub fn krein_matrix_complex_symmetric() {
    prop_krein_matrix_complex_symmetric();
}

pub fn krein_matrix_conjugate_reflection() {
    prop_krein_matrix_conjugate_reflection();
}

pub fn krein_matrix_hermitian_on_real_axis() {
    prop_krein_matrix_hermitian_on_real_axis();
}

pub fn krein_eigenvalues_negative_far_left() {
    for f in all() {
        let km = krein(f);
        let scale = f.neg.lambda_s.iter().map(|l| l.abs()).fold(0.0, f64::max);
        for z in [-10.0 * scale, -5.0, -50.0, -500.0] {
            let (vals, _) = km.eigen_real(z).unwrap();
            for r in vals {
                assert!(r / z > 0.0, "{}: r = {r} at z = {z}", f.cfg.name);
            }
        }
    }
}

/// Independent evaluation of `K(z)` as the Schur complement of `T^T (R - z S) T`
/// onto the negative subspace, with `S` formed by an explicit dense inverse and
/// `T = [s | Q]`, `Q` an orthonormal basis of the rest.
fn schur_krein(f: &Fixture, z: Complex64) -> Vec<Complex64> {
    let r = &f.pencil.r;
    let s_inv = &f.pencil.s_inv;
    let d = r.nrows();
    let m = f.neg.dim();
    let s = s_inv.partial_piv_lu().solve(&Mat::<f64>::identity(d, d));
    let (eigs, vecs) = sym_eigen(s_inv.as_ref()).unwrap();
    let rest: Vec<usize> = (0..d).filter(|&i| eigs[i] > 0.0).collect();
    assert_eq!(rest.len() + m, d);
    let t = Mat::from_fn(d, d, |i, j| if j < m { f.neg.s_basis[(i, j)] } else { vecs[(i, rest[j - m])] });
    let rt = mat_mul(t.transpose(), mat_mul(r.as_ref(), t.as_ref()).as_ref());
    let st = mat_mul(t.transpose(), mat_mul(s.as_ref(), t.as_ref()).as_ref());
    let block = |i: usize, j: usize| c(rt[(i, j)], 0.0) - z * st[(i, j)];
    let p = d - m;
    let m22 = Mat::from_fn(p, p, |i, j| block(m + i, m + j));
    let m21 = Mat::from_fn(p, m, |i, j| block(m + i, j));
    let x = m22.partial_piv_lu().solve(&m21);
    let mut k = vec![c(0.0, 0.0); m * m];
    for i in 0..m {
        for j in 0..m {
            let mut v = block(i, j);
            for l in 0..p {
                v -= block(i, m + l) * x[(l, j)];
            }
            k[i * m + j] = v;
        }
    }
    k
}

pub fn krein_matrix_matches_schur_complement() {
    for f in all() {
        let km = krein(f);
        let (lo, hi) = probe_window(&km);
        let poles = pole_candidates(&km);
        let mut zs = vec![c(0.3, 0.1), c(0.5 * (lo + hi), 0.2 * km.imag_bound().max(0.1)), c(lo, 0.0)];
        // midpoint between the first two distinct pole candidates
        if let Some(next) = poles.iter().find(|p| **p > poles[0] + 1e-6 * poles[0].abs().max(1e-3)) {
            zs.push(c(0.5 * (poles[0] + next), 0.0));
        }
        for z in zs {
            let got = km.eval(z).unwrap();
            let want = schur_krein(f, z);
            let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in got.k.iter().zip(&want) {
                assert!((a - b).norm() <= 1e-8 * scale, "{}: K({z}) entry {a} vs {b}", f.cfg.name);
            }
        }
    }
}

pub fn residue_without_pole_is_quadrature_noise() {
    let f = vortex24();
    let km = krein(f);
    let poles = pole_candidates(&km);
    // widest gap among the low poles
    let (a, b) = poles
        .windows(2)
        .take(10)
        .map(|w| (w[0], w[1]))
        .max_by(|x, y| (x.1 - x.0).total_cmp(&(y.1 - y.0)))
        .unwrap();
    let mid = 0.5 * (a + b);
    let rep = residue(&km, mid, Some(0.25 * (b - a)), 0.25 * (b - a) / 500.0, 1e-8).unwrap();
    assert!(rep.max_entry <= 1e-10, "residue {} at {mid}", rep.max_entry);
}

pub fn single_vortex_krein_matrix_is_scalar() {
    let km = krein(vortex24());
    assert_eq!(km.size(), 2);
    for z in [c(-0.02, 0.0), c(0.01, 0.0), c(0.3, 0.1), c(0.05, 0.02)] {
        let v = km.eval(z).unwrap();
        assert!(v.off_diagonal_ratio() <= 1e-10, "off-diagonal {} at {z}", v.off_diagonal_ratio());
        assert!(v.diagonal_spread() <= 1e-10, "diagonal spread {} at {z}", v.diagonal_spread());
    }
}

// ---------------------------------------------------------------------------
// linearization and pencil

pub fn direct_spectrum_has_quartet_symmetry() {
    for f in all() {
        let spec = direct_spectrum(&f.analysis.lin, 40).unwrap();
        let rmax = spec.eigs.iter().map(|e| e.lambda.norm()).fold(0.0, f64::max);
        let found = |mu: Complex64| spec.eigs.iter().any(|e| (e.lambda - mu).norm() <= 1e-6 * mu.norm().max(1.0));
        for e in spec.eigs.iter().filter(|e| e.lambda.norm() < 0.9 * rmax && e.lambda.norm() > 1e-2) {
            assert!(found(-e.lambda), "{}: -{} missing", f.cfg.name, e.lambda);
            assert!(found(e.lambda.conj()), "{}: conj {} missing", f.cfg.name, e.lambda);
        }
    }
}

pub fn kernel_vectors_are_orthonormal_with_small_residual() {
    for f in all() {
        let lin = &f.analysis.lin;
        let k = &f.analysis.kernels;
        let l_norm = lin.l_sparse().norm_inf();
        for (vecs, plus) in [(k.plus_vectors(), true), (k.minus_vectors(), false)] {
            for (i, v) in vecs.iter().enumerate() {
                for (j, w) in vecs.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(v, w) - want).abs() <= 1e-12);
                }
                let lv = if plus { lin.apply_plus(v) } else { lin.apply_minus(v) };
                assert!(norm(&lv) <= 1e-6 * l_norm, "{}: |L phi| = {}", f.cfg.name, norm(&lv));
            }
        }
        assert!(k.cross_orthogonality() <= 1e-8);
    }
}

pub fn kernel_dimensions() {
    let k = &vortex24().analysis.kernels;
    assert_eq!((k.plus.len(), k.minus.len()), (1, 1));
    for f in [one_dark(), three_dark()] {
        let k = &f.analysis.kernels;
        assert_eq!((k.plus.len(), k.minus.len()), (0, 1));
    }
}

pub fn reduced_matrices_symmetric() {
    for f in all() {
        let p = &f.pencil;
        assert_eq!(max_asymmetry(p.r.as_ref()), 0.0);
        assert_eq!(max_asymmetry(p.s_inv.as_ref()), 0.0);
        let m = f.neg.dim();
        let g = mat_mul(f.neg.s_basis.transpose(), f.neg.s_basis.as_ref());
        for i in 0..m {
            for j in 0..m {
                assert!((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-12);
            }
        }
        assert!(f.neg.lambda_s.iter().all(|l| *l < 0.0));
    }
}

/// The constrained negative count, from `L` projected onto the orthogonal
/// complement of `J^{-1} ker L`, equals `n(L) - n(D)` and `n(S)`.
pub fn constrained_index_identity() {
    for f in all() {
        let a = &f.analysis;
        let projected = constrained_negative_index(&a.lin, &a.kernels, f.cfg.tolerances.zero_tol).unwrap();
        let n_l = a.indices.plus.negative + a.indices.minus.map_or(0, |m| m.negative);
        assert_eq!(projected.negative, n_l - a.d.negative, "{}", f.cfg.name);
        assert_eq!(f.neg.dim(), a.index.expected_negative_dim(), "{}", f.cfg.name);
    }
    let v = &vortex24().analysis;
    assert_eq!(v.lin.state().grid().n(), 24);
    assert_eq!((v.index.n_l, v.index.n_d, v.index.k_ham), (2, 0, 2));
}

pub fn sturm_count_matches_minus_index() {
    for solitons in 1..=3 {
        let cfg = dark(solitons, solitons as f64 + 1.5, 300, 0.05);
        let state = krein_core::driver::state_at(&cfg, cfg.mu.unwrap()).unwrap();
        let u = state.field.re();
        let floor = 1e-8 * state.field.max_abs();
        let lin = assemble_linearization(&state).unwrap();
        let idx = operator_indices(&lin, cfg.tolerances.zero_tol).unwrap();
        assert_eq!(sign_changes(&u, floor), solitons);
        assert_eq!(idx.minus.unwrap().negative, solitons);
        assert_eq!(idx.plus.negative, solitons);
    }
}

pub fn d_matrix_is_half_power_slope() {
    let f = one_dark();
    let d = &f.analysis.d;
    assert_eq!(d.d.len(), 1);
    assert!(d.asymmetry <= 1e-10);
    let mu = f.cfg.mu.unwrap();
    let h = 1e-3;
    let p = |m: f64| krein_core::driver::state_at(&f.cfg, m).unwrap().power();
    let slope = (p(mu + h) - p(mu - h)) / (2.0 * h);
    assert!(slope > 0.0);
    assert!((d.d[0][0] - 0.5 * slope).abs() <= 0.01 * 0.5 * slope, "D = {} vs P'/2 = {}", d.d[0][0], 0.5 * slope);
}

/// Every check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("laplacian_exactly_symmetric", laplacian_exactly_symmetric),
    ("laplacian_of_square_is_two", laplacian_of_square_is_two),
    ("inner_product_positive_definite", inner_product_positive_definite),
    ("eigenvalue_map_round_trip", eigenvalue_map_round_trip),
    ("krein_matrix_complex_symmetric", krein_matrix_complex_symmetric),
    ("krein_matrix_conjugate_reflection", krein_matrix_conjugate_reflection),
    ("krein_matrix_hermitian_on_real_axis", krein_matrix_hermitian_on_real_axis),
    ("krein_eigenvalues_negative_far_left", krein_eigenvalues_negative_far_left),
    ("krein_matrix_matches_schur_complement", krein_matrix_matches_schur_complement),
    ("residue_without_pole_is_quadrature_noise", residue_without_pole_is_quadrature_noise),
    ("single_vortex_krein_matrix_is_scalar", single_vortex_krein_matrix_is_scalar),
    ("direct_spectrum_has_quartet_symmetry", direct_spectrum_has_quartet_symmetry),
    ("kernel_vectors_are_orthonormal_with_small_residual", kernel_vectors_are_orthonormal_with_small_residual),
    ("kernel_dimensions", kernel_dimensions),
    ("reduced_matrices_symmetric", reduced_matrices_symmetric),
    ("constrained_index_identity", constrained_index_identity),
    ("sturm_count_matches_minus_index", sturm_count_matches_minus_index),
    ("d_matrix_is_half_power_slope", d_matrix_is_half_power_slope),
];
