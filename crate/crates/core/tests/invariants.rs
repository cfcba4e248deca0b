//! Structural invariant suite: `cargo test -p krein-core --test invariants`.

mod common;

use common::invariants;

macro_rules! wrap {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                invariants::$name();
            }
        )*
    };
}

wrap!(
    laplacian_exactly_symmetric,
    laplacian_of_square_is_two,
    inner_product_positive_definite,
    eigenvalue_map_round_trip,
    krein_matrix_complex_symmetric,
    krein_matrix_conjugate_reflection,
    krein_matrix_hermitian_on_real_axis,
    krein_eigenvalues_negative_far_left,
    krein_matrix_matches_schur_complement,
    residue_without_pole_is_quadrature_noise,
    single_vortex_krein_matrix_is_scalar,
    direct_spectrum_has_quartet_symmetry,
    kernel_vectors_are_orthonormal_with_small_residual,
    kernel_dimensions,
    reduced_matrices_symmetric,
    constrained_index_identity,
    sturm_count_matches_minus_index,
    d_matrix_is_half_power_slope,
);
