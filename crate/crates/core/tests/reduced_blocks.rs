mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbm_core::basis::project_blocks;
use rbm_core::strategies::{apply_reorder, trim, Reordering};
use rbm_core::{BasisMode, Parameter, ReducedBasis, ReducedSolveMethod};

use common::{brute_residual, dense_operator, dense_rhs, max_abs_diff, problem, random_basis, random_parameter};

fn blocks_close(a: &rbm_core::ReducedSystem, b: &rbm_core::ReducedSystem, tol: f64) {
    assert_eq!(a.n(), b.n());
    for (x, y) in a.reduced_a().iter().zip(b.reduced_a()).chain(a.r1().iter().zip(b.r1())) {
        let scale = 1.0 + y.abs().max();
        assert!(
            max_abs_diff(x, y) <= tol * scale,
            "block differs by {}",
            max_abs_diff(x, y)
        );
    }
    for (x, y) in a.reduced_f().iter().zip(b.reduced_f()).chain(a.r2().iter().zip(b.r2())) {
        let scale = 1.0 + y.abs().max();
        assert!((x - y).abs().max() <= tol * scale);
    }
    assert_eq!(a.r4(), b.r4());
}

#[test]
fn blocks_match_dense_projection() {
    let dd = 8;
    let p = problem(dd, 1.0);
    let basis = random_basis(&p, 5, BasisMode::Orthonormal, 3);
    let v = basis.snapshots();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mu = random_parameter(&mut rng);
        let (a_v, f_v) = basis.system().assemble(&mu);
        let oracle_a = v.transpose() * dense_operator(dd, &mu) * v;
        let oracle_f = v.transpose() * dense_rhs(dd);
        assert!(max_abs_diff(&a_v, &oracle_a) <= 1e-10 * oracle_a.abs().max());
        assert!((f_v - oracle_f).abs().max() <= 1e-12);
    }
}

#[test]
fn incremental_growth_equals_from_scratch_projection() {
    let p = problem(8, 1.0);
    for mode in [BasisMode::Orthonormal, BasisMode::NormalizedOnly] {
        let grown = random_basis(&p, 6, mode, 11);
        let scratch = project_blocks(grown.snapshots(), p.operator(), p.rhs()).unwrap();
        blocks_close(grown.system(), &scratch, 1e-12);
    }
}

#[test]
fn r1_transpose_symmetry_is_exact() {
    let p = problem(8, 1.0);
    let basis = random_basis(&p, 4, BasisMode::NormalizedOnly, 5);
    let s = basis.system();
    for i in 0..s.s_a() {
        for j in 0..s.s_a() {
            assert_eq!(s.r1_block(j, i), &s.r1_block(i, j).transpose());
        }
    }
}

#[test]
fn orthonormal_mode_is_orthonormal() {
    let p = problem(10, 1.0);
    let basis = random_basis(&p, 7, BasisMode::Orthonormal, 2);
    let v = basis.snapshots();
    let gram = v.transpose() * v;
    assert!(max_abs_diff(&gram, &DMatrix::identity(7, 7)) < 1e-12);
}

#[test]
fn trimmed_blocks_equal_from_scratch_prefix_basis() {
    let dd = 8;
    let p = problem(dd, 1.0);
    let basis = random_basis(&p, 6, BasisMode::Orthonormal, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in 1..=6 {
        let view = trim(basis.system(), m).unwrap();
        let prefix = basis.snapshots().columns(0, m).into_owned();
        let scratch = project_blocks(&prefix, p.operator(), p.rhs()).unwrap();
        blocks_close(&view.system, &scratch, 0.0);
        let mu = random_parameter(&mut rng);
        let u = view.system.solve(&mu, ReducedSolveMethod::Lu).unwrap();
        let fast = view.system.residual_norm(&mu, &u);
        let rebuilt = scratch.residual_norm(&mu, &scratch.solve(&mu, ReducedSolveMethod::Lu).unwrap());
        assert!((fast - rebuilt).abs() <= 1e-10);
    }
    assert!(trim(basis.system(), 0).is_err());
    assert!(trim(basis.system(), 7).is_err());
}

#[test]
fn reorder_conjugation_matches_permuted_projection() {
    let p = problem(8, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        let n = rng.gen_range(1..=6);
        let basis = random_basis(&p, n, BasisMode::NormalizedOnly, trial);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let perm = Reordering::new(order.clone()).unwrap();
        let conj = apply_reorder(basis.system(), &perm).unwrap();
        let permuted_v = basis.snapshots().select_columns(&order);
        let scratch = project_blocks(&permuted_v, p.operator(), p.rhs()).unwrap();
        blocks_close(&conj, &scratch, 1e-12);
        let back = apply_reorder(&conj, &perm.inverse()).unwrap();
        assert_eq!(&back, basis.system());
        let moved = basis.permuted(&order).unwrap();
        assert_eq!(moved.params()[0], basis.params()[order[0]]);
    }
}

#[test]
fn pseudoinverse_handles_duplicate_snapshots() {
    let p = problem(8, 1.0);
    let basis = random_basis(&p, 2, BasisMode::NormalizedOnly, 1);
    // duplicate the first column by hand; prepare_column would reject it
    let col = basis.snapshots().column(0).into_owned();
    let border = basis.border_for(&col, &p);
    let dup = basis.appended(col, basis.params()[0], &border).unwrap();
    let mu = basis.params()[1];
    assert!(dup.system().solve(&mu, ReducedSolveMethod::Lu).is_err());
    let u = dup.system().solve(&mu, ReducedSolveMethod::Pseudoinverse).unwrap();
    assert!(dup.system().residual_norm(&mu, &u) < 1e-5);
}

#[test]
fn dependent_snapshot_is_rejected() {
    let p = problem(8, 1.0);
    let basis = random_basis(&p, 3, BasisMode::Orthonormal, 8);
    let again = p.snapshot(&basis.params()[1]).unwrap();
    assert!(matches!(
        basis.extend(&again, &p),
        Err(rbm_core::Error::DependentSnapshot { .. })
    ));
}

#[test]
fn empty_basis_residual_is_rhs_norm() {
    let p = problem(8, 1.0);
    let basis = ReducedBasis::empty(&p, BasisMode::Orthonormal).unwrap();
    let mu = Parameter::new(12.0, 1.0, 2.0).unwrap();
    let r = basis.system().residual_norm(&mu, &DVector::zeros(0));
    assert!((r - dense_rhs(8).norm()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fast_residual_matches_brute_force(
        seed in 0u64..1000,
        n in 1usize..=6,
        coeff_scale in 0.01f64..10.0,
        dd in prop::sample::select(vec![8usize, 12]),
    ) {
        let p = problem(dd, 1.0);
        let basis = random_basis(&p, n, BasisMode::Orthonormal, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mu = random_parameter(&mut rng);
        let u = DVector::from_fn(n, |_, _| coeff_scale * rng.gen_range(-1.0..1.0));
        let fast = basis.system().residual_norm(&mu, &u);
        let brute = brute_residual(dd, &mu, basis.snapshots(), &u);
        let fnorm = dense_rhs(dd).norm();
        prop_assert!((fast - brute).abs() <= 1e-6 * (1.0 + fnorm), "fast {fast} brute {brute}");
    }
}
