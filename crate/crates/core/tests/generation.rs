mod common;

use proptest::prelude::*;
use rbm_core::generation::{greedy_generate, reorder_generate, reorder_residual, GreedyOptions, Range, ReorderOptions};
use rbm_core::strategies::residual_at;
use rbm_core::{BasisMode, Error, Parameter, Preset, TrainingSet, TrainingSpec};

use common::{brute_residual, problem};

fn small_grid() -> TrainingSet {
    TrainingSet::grid(
        &Range::new(10.0, 20.0, 5.0).unwrap(),
        &Range::new(0.0, 40.0, 10.0).unwrap(),
        &Range::new(0.0, 40.0, 10.0).unwrap(),
    )
    .unwrap()
}

#[test]
fn greedy_meets_max_res_on_every_training_parameter() {
    let p = problem(12, 1e-3);
    let train = small_grid();
    let generated = greedy_generate(&p, &train, None, &GreedyOptions::default()).unwrap();
    let basis = &generated.basis;
    for mu in train.parameters() {
        let u = basis.solve(mu).unwrap();
        let fast = residual_at(basis.system(), basis.mode(), mu).unwrap();
        assert!(fast <= 1e-3, "fast residual {fast} at {mu:?}");
        assert!(brute_residual(12, mu, basis.snapshots(), &u) <= 1e-3 + 1e-6);
    }
    assert!(generated.log.final_max_residual <= 1e-3);
    assert_eq!(generated.log.iterations.len(), basis.n());
}

#[test]
fn greedy_max_residual_sequence_is_non_increasing() {
    let p = problem(12, 1e-4);
    let generated = greedy_generate(&p, &small_grid(), None, &GreedyOptions::default()).unwrap();
    let seq = generated.log.max_residuals();
    assert!(seq.len() > 3);
    for w in seq.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{seq:?}");
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let p = problem(10, 1e-3);
    let train = small_grid();
    let run = |seed| {
        greedy_generate(
            &p,
            &train,
            None,
            &GreedyOptions {
                seed,
                ..GreedyOptions::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (run(4), run(4));
    assert_eq!(a.basis.identifier(), b.basis.identifier());
    assert_eq!(a.log, b.log);
    let c = run(5);
    if c.log.initial_index != a.log.initial_index {
        assert_ne!(c.basis.params()[0], a.basis.params()[0]);
    }
}

#[test]
fn single_parameter_training_set_gives_one_snapshot() {
    let p = problem(10, 1e-6);
    let mu = Parameter::new(14.0, 20.0, -3.0).unwrap();
    let train = TrainingSet::new(vec![mu]).unwrap();
    let generated = greedy_generate(&p, &train, None, &GreedyOptions::default()).unwrap();
    assert_eq!(generated.basis.n(), 1);
    assert_eq!(generated.basis.params(), &[mu]);
}

#[test]
fn continuing_a_basis_keeps_its_prefix() {
    let p = problem(10, 1e-4);
    let train = small_grid();
    let coarse = greedy_generate(&p.with_max_res(1e-1).unwrap(), &train, None, &GreedyOptions::default())
        .unwrap()
        .basis;
    let fine = greedy_generate(&p, &train, Some(coarse.clone()), &GreedyOptions::default())
        .unwrap()
        .basis;
    assert!(fine.n() >= coarse.n());
    assert_eq!(&fine.params()[..coarse.n()], coarse.params());
}

#[test]
fn iteration_cap_is_reported() {
    let p = problem(10, 1e-12);
    let opts = GreedyOptions {
        max_iterations: 2,
        ..GreedyOptions::default()
    };
    let err = greedy_generate(&p, &small_grid(), None, &opts).unwrap_err();
    assert!(matches!(err, Error::GenerationNonConvergence { iterations: 2, .. }));
}

#[test]
fn empty_training_specs_are_rejected() {
    assert!(TrainingSet::new(Vec::new()).is_err());
    assert!(Range::new(1.0, 0.0, 1.0).is_err());
    assert!(Range::new(0.0, 1.0, 0.0).is_err());
    assert!(TrainingSpec::preset(Preset::A, -1.0).build().is_err());
}

#[test]
fn reorder_generation_meets_its_postcondition() {
    let p = problem(12, 1e-3);
    let train = small_grid();
    let a = 2;
    let generated = reorder_generate(
        &p,
        &train,
        &ReorderOptions {
            a,
            ..ReorderOptions::default()
        },
    )
    .unwrap();
    let basis = &generated.basis;
    assert_eq!(basis.mode(), BasisMode::NormalizedOnly);
    let l = basis.n() as isize - a as isize;
    for mu in train.parameters() {
        assert!(reorder_residual(basis, l, mu).unwrap() <= 1e-3);
    }
    assert_eq!(generated.log.degenerate_margin, a >= basis.n());
}

#[test]
fn reorder_residual_of_empty_prefix_is_rhs_norm() {
    let p = problem(8, 1e-3);
    let basis = common::random_basis(&p, 3, BasisMode::NormalizedOnly, 1);
    let mu = Parameter::new(15.0, 0.0, 0.0).unwrap();
    let r = reorder_residual(&basis, -2, &mu).unwrap();
    assert!((r - common::dense_rhs(8).norm()).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn range_points_stay_inside_and_cover_endpoints(min in -50.0f64..50.0, span in 0.0f64..40.0, step in 0.5f64..10.0) {
        let range = Range::new(min, min + span, step).unwrap();
        let pts = range.points();
        prop_assert!(!pts.is_empty());
        prop_assert_eq!(pts[0], min);
        prop_assert!(pts.iter().all(|&x| x >= min && x <= min + span + 1e-9));
        prop_assert!(pts.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(min + span - pts.last().unwrap() < step);
    }

    #[test]
    fn preset_samples_stay_in_their_box(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for preset in Preset::ALL {
            let mu = preset.sample(&mut rng);
            let b = preset.bounds();
            for (x, (lo, hi)) in mu.to_array().into_iter().zip(b) {
                prop_assert!(x >= lo && x <= hi);
            }
        }
    }
}

#[test]
fn each_chosen_parameter_attains_the_logged_maximum() {
    let p = problem(12, 1e-4);
    let train = small_grid();
    let generated = greedy_generate(&p, &train, None, &GreedyOptions::default()).unwrap();
    let basis = &generated.basis;
    for record in generated.log.iterations.iter().filter(|r| r.skipped.is_empty()) {
        let Some(idx) = record.chosen else { continue };
        let prefix = basis.system().leading(record.n).unwrap();
        let at_chosen = residual_at(&prefix, basis.mode(), &train.parameters()[idx]).unwrap();
        let max = train
            .parameters()
            .iter()
            .map(|mu| residual_at(&prefix, basis.mode(), mu).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(at_chosen, max);
        assert_eq!(record.max_residual, max);
    }
}

#[test]
fn reorder_residual_matches_rebuilt_trimmed_basis() {
    use rbm_core::basis::project_blocks;
    use rbm_core::strategies::{find_reorder, solve_reduced};

    let p = problem(8, 1e-3);
    let basis = common::random_basis(&p, 4, BasisMode::NormalizedOnly, 11);
    let mu = Parameter::new(16.0, -12.0, 27.0).unwrap();
    let perm = find_reorder(basis.system(), basis.mode(), &mu).unwrap();
    let kept: Vec<usize> = perm.order[..3].to_vec();
    let columns = basis.snapshots().select_columns(&kept);
    let system = project_blocks(&columns, p.operator(), p.rhs()).unwrap();
    let oracle = solve_reduced(&system, BasisMode::NormalizedOnly, &mu)
        .unwrap()
        .residual_norm;
    let got = reorder_residual(&basis, 3, &mu).unwrap();
    assert!((got - oracle).abs() <= 1e-8 * oracle.max(1e-300));
    // the full-length case is the plain residual
    let full = reorder_residual(&basis, 4, &mu).unwrap();
    let plain = residual_at(basis.system(), basis.mode(), &mu).unwrap();
    assert!((full - plain).abs() <= 1e-8 * plain);
}
