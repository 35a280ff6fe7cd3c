mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rbm_core::problem::assemble_problem;
use rbm_core::solver::{SolverConfig, SolverMethod};
use rbm_core::{Error, Parameter, QualitySpec};

use common::{dense_operator, dense_rhs, problem};

#[test]
fn sparse_assembly_matches_dense_stencil() {
    for dd in [2, 3, 5, 8] {
        let q = QualitySpec::new(dd, 1.0).unwrap();
        let (op, rhs) = assemble_problem(&q).unwrap();
        for mu in [
            Parameter::new(15.0, 10.0, 10.0).unwrap(),
            Parameter::new(10.0, -40.0, 40.0).unwrap(),
            Parameter::new(0.5, 0.0, 0.0).unwrap(),
        ] {
            let sparse = DMatrix::from(&op.evaluate(&mu));
            assert!((sparse - dense_operator(dd, &mu)).abs().max() < 1e-9, "D = {dd}");
        }
        assert_eq!(rhs.evaluate(&Parameter::new(1.0, 0.0, 0.0).unwrap()), dense_rhs(dd));
    }
}

#[test]
fn symmetric_without_advection() {
    let q = QualitySpec::new(6, 1.0).unwrap();
    let (op, _) = assemble_problem(&q).unwrap();
    let a = DMatrix::from(&op.evaluate(&Parameter::new(12.0, 0.0, 0.0).unwrap()));
    assert_eq!(a.clone(), a.transpose());
}

#[test]
fn snapshot_matches_dense_lu() {
    let p = problem(8, 1.0);
    for mu in [
        Parameter::new(15.0, 10.0, 10.0).unwrap(),
        Parameter::new(10.0, -40.0, -40.0).unwrap(),
    ] {
        let sol = p.snapshot(&mu).unwrap();
        let oracle = dense_operator(8, &mu).lu().solve(&dense_rhs(8)).unwrap();
        assert!((&sol.values - &oracle).norm() <= 1e-10 * oracle.norm());
        assert!(sol.relative_residual <= 1e-10);
    }
}

#[test]
fn iterative_solver_agrees_with_direct() {
    let mu = Parameter::new(12.0, 20.0, -5.0).unwrap();
    let direct = problem(24, 1.0).snapshot(&mu).unwrap();
    let iterative = problem(24, 1.0)
        .with_solver(SolverConfig {
            method: SolverMethod::Bicgstab,
            ..SolverConfig::default()
        })
        .snapshot(&mu)
        .unwrap();
    assert!((&direct.values - &iterative.values).norm() <= 1e-8 * direct.values.norm());
}

#[test]
fn invalid_inputs_rejected() {
    assert!(matches!(Parameter::new(0.0, 1.0, 1.0), Err(Error::InvalidParameter(_))));
    assert!(matches!(
        Parameter::new(f64::NAN, 1.0, 1.0),
        Err(Error::InvalidParameter(_))
    ));
    assert!(matches!(QualitySpec::new(1, 1.0), Err(Error::InvalidQuality(_))));
    assert!(matches!(QualitySpec::new(8, 0.0), Err(Error::InvalidQuality(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_is_affine_in_parameters(
        diff in 0.5f64..30.0, ax in -50.0f64..50.0, ay in -50.0f64..50.0,
        diff2 in 0.5f64..30.0, ax2 in -50.0f64..50.0, ay2 in -50.0f64..50.0,
    ) {
        let q = QualitySpec::new(5, 1.0).unwrap();
        let (op, _) = assemble_problem(&q).unwrap();
        let m1 = Parameter::new(diff, ax, ay).unwrap();
        let m2 = Parameter::new(diff2, ax2, ay2).unwrap();
        let sum = Parameter::new(diff + diff2, ax + ax2, ay + ay2).unwrap();
        // A(μ1) + A(μ2) = A(μ1 + μ2) + A_bc
        let lhs = DMatrix::from(&op.evaluate(&m1)) + DMatrix::from(&op.evaluate(&m2));
        let rhs = DMatrix::from(&op.evaluate(&sum)) + DMatrix::from(op.component(3));
        prop_assert!((lhs - rhs).abs().max() < 1e-9);
    }

    #[test]
    fn snapshots_certify_their_residual(diff in 10.0f64..20.0, ax in -40.0f64..40.0, ay in -40.0f64..40.0) {
        let mu = Parameter::new(diff, ax, ay).unwrap();
        let sol = problem(10, 1.0).snapshot(&mu).unwrap();
        let r = (dense_operator(10, &mu) * &sol.values - dense_rhs(10)).norm();
        prop_assert!(r <= 1e-10 * dense_rhs(10).norm());
        assert_relative_eq!(sol.values[0], 0.0);
    }
}
