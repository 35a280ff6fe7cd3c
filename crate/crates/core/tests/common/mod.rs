#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbm_core::{BasisMode, FullProblem, Parameter, QualitySpec, ReducedBasis};

/// Dense operator built node by node from the 5-point stencil, with no shared
/// code path to the sparse assembly.
pub fn dense_operator(dd: usize, mu: &Parameter) -> DMatrix<f64> {
    let d = dd * dd;
    let h = 1.0 / (dd - 1) as f64;
    let mut a = DMatrix::zeros(d, d);
    let inside = |x: i64, y: i64| x > 0 && y > 0 && x < dd as i64 - 1 && y < dd as i64 - 1;
    for y in 0..dd as i64 {
        for x in 0..dd as i64 {
            let row = (y * dd as i64 + x) as usize;
            if !inside(x, y) {
                a[(row, row)] = 1.0;
                continue;
            }
            a[(row, row)] = 4.0 * mu.diff / (h * h);
            let neighbours = [
                (x - 1, y, -mu.advx / (2.0 * h)),
                (x + 1, y, mu.advx / (2.0 * h)),
                (x, y - 1, -mu.advy / (2.0 * h)),
                (x, y + 1, mu.advy / (2.0 * h)),
            ];
            for (nx, ny, adv) in neighbours {
                if inside(nx, ny) {
                    let col = (ny * dd as i64 + nx) as usize;
                    a[(row, col)] += -mu.diff / (h * h) + adv;
                }
            }
        }
    }
    a
}

pub fn dense_rhs(dd: usize) -> DVector<f64> {
    DVector::from_fn(dd * dd, |i, _| {
        let (x, y) = (i % dd, i / dd);
        if x > 0 && y > 0 && x < dd - 1 && y < dd - 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// `‖A(μ) V u − f(μ)‖` with the dense oracle operator.
pub fn brute_residual(dd: usize, mu: &Parameter, v: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    (dense_operator(dd, mu) * (v * u) - dense_rhs(dd)).norm()
}

pub fn problem(dd: usize, max_res: f64) -> FullProblem {
    FullProblem::new(QualitySpec::new(dd, max_res).unwrap()).unwrap()
}

pub fn random_parameter(rng: &mut impl Rng) -> Parameter {
    Parameter::new(
        rng.gen_range(10.0..=20.0),
        rng.gen_range(-40.0..=40.0),
        rng.gen_range(-40.0..=40.0),
    )
    .unwrap()
}

/// Basis from snapshots at `n` random parameters (dependent draws are skipped).
pub fn random_basis(problem: &FullProblem, n: usize, mode: BasisMode, seed: u64) -> ReducedBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = ReducedBasis::empty(problem, mode).unwrap();
    let mut attempts = 0;
    while basis.n() < n {
        attempts += 1;
        assert!(attempts < 50 * (n + 1), "grid too small for {n} independent snapshots");
        let mu = random_parameter(&mut rng);
        let sol = problem.snapshot(&mu).unwrap();
        if let Ok(next) = basis.extend(&sol, problem) {
            basis = next;
        }
    }
    basis
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}
