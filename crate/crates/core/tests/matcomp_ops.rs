//! Integration checks of the matrix completion operators against independent
//! numerical oracles: finite differences for gradients, projected gradient
//! for the subproblem, bisection for the cubic, sampled secants for
//! convexity.

mod common;

use dcae::bregman::{audit_convexity, check_relative_convexity, subgradient_inequality_excess};
use dcae::data::synthesize;
use dcae::matcomp::{build_dc_problem, positive_cubic_root, FactorPair, MatcompInstance};
use dcae::{BregmanKernel, DcProblem, SubproblemOracle};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    bisect_cubic, fd_gradient, max_relative_error, model_value, projected_gradient_model_min,
    signed_vec_away_from_zero, uniform_vec,
};

fn medium_instance() -> MatcompInstance {
    let train = synthesize(8, 6, 2, 0.7, 0.05, 21).unwrap();
    MatcompInstance::new(train, 3, 0.1, 5.0).unwrap()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let inst = medium_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..10 {
        let x = uniform_vec(&mut rng, inst.dim(), -1.0, 1.0);
        let got = inst.loss_gradient_flat(&x);
        let want = fd_gradient(|z| inst.loss_value_flat(z), &x, 1e-6);
        let err = max_relative_error(&got, &want);
        assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn h_gradient_matches_finite_differences_off_the_kink() {
    let inst = medium_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10 {
        let x = signed_vec_away_from_zero(&mut rng, inst.dim(), 0.1, 2.0);
        let got = inst.penalty_h_gradient_flat(&x);
        let want = fd_gradient(|z| inst.penalty_h_value_flat(z), &x, 1e-6);
        let err = max_relative_error(&got, &want);
        assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn kernel_gradient_matches_finite_differences() {
    let inst = medium_instance();
    let kernel = *inst.kernel();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..10 {
        let x = uniform_vec(&mut rng, 12, -1.5, 1.5);
        let got = kernel.gradient(&x);
        let want = fd_gradient(|z| kernel.value(z), &x, 1e-6);
        let err = max_relative_error(&got, &want);
        assert!(err < 1e-6, "relative error {err}");
    }
}

proptest! {
    /// The DC split must reassemble exactly: penalty = lambda*theta*||z||_1 - h.
    #[test]
    fn penalty_split_identity(entries in prop::collection::vec(-3.0..3.0f64, 1..40)) {
        let train = synthesize(4, 3, 2, 1.0, 0.0, 7).unwrap();
        let inst = MatcompInstance::new(train, 2, 0.1, 5.0).unwrap();
        let l1: f64 = entries.iter().map(|v| v.abs()).sum::<f64>() * inst.l1_coefficient();
        let penalty = inst.penalty_value_flat(&entries);
        let h = inst.penalty_h_value_flat(&entries);
        prop_assert!((penalty - (l1 - h)).abs() <= 1e-12 * (1.0 + l1));
        // Both pieces are nonnegative and the penalty is bounded by both
        // lambda per entry and the l1 weight.
        prop_assert!(penalty >= 0.0 && h >= 0.0);
        prop_assert!(penalty <= 0.1 * entries.len() as f64 + 1e-12);
    }
}

#[test]
fn subproblem_matches_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for trial in 0..8 {
        let m = rng.random_range(2..=5);
        let n = rng.random_range(2..=5);
        let rank = rng.random_range(1..=2);
        let train = synthesize(m, n, 1, 1.0, 0.1, 300 + trial).unwrap();
        let inst = MatcompInstance::new(train, rank, 0.1, 5.0).unwrap();
        let linear = uniform_vec(&mut rng, inst.dim(), -3.0, 3.0);
        let parts: Vec<f64> = linear.iter().map(|&v| -v / inst.l_upper()).collect();
        let closed = inst.solve_subproblem_flat(&parts).unwrap();
        let numeric = projected_gradient_model_min(&inst, &linear, 20_000);
        let closed_val = model_value(&inst, &linear, &closed);
        let numeric_val = model_value(&inst, &linear, &numeric);
        let gap = closed_val - numeric_val;
        // The closed form must not lose to the numerical minimizer, and must
        // essentially tie it.
        assert!(gap <= 1e-8 * (1.0 + closed_val.abs()), "trial {trial}: gap {gap}");
        assert!(gap >= -1e-6 * (1.0 + closed_val.abs()), "trial {trial}: pg beat closed form by {}", -gap);
    }
}

#[test]
fn subproblem_satisfies_first_order_optimality() {
    let inst = medium_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let (problem, oracle) = build_dc_problem(inst);
    for _ in 0..10 {
        let linear = uniform_vec(&mut rng, problem.dim(), -4.0, 4.0);
        let x_plus = oracle.solve(&linear).unwrap();
        let probes: Vec<Vec<f64>> = (0..30)
            .map(|_| uniform_vec(&mut rng, problem.dim(), 0.0, 2.0))
            .collect();
        let excess = subgradient_inequality_excess(&problem, &linear, &x_plus, &probes);
        assert!(excess <= 1e-8, "excess {excess}");
    }
}

#[test]
fn cubic_root_agrees_with_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..100 {
        let a = rng.random_range(0.01..50.0);
        let b = rng.random_range(0.01..50.0);
        let newton = positive_cubic_root(a, b).unwrap();
        let upper = (1.0 / b).min((1.0 / a).cbrt());
        let bis = bisect_cubic(a, b, upper);
        assert!((newton - bis).abs() <= 1e-12 * (1.0 + bis), "a={a} b={b}: {newton} vs {bis}");
    }
}

#[test]
fn relative_smoothness_holds_at_iterate_scale() {
    // Convexity of phi - f and phi + f with L = l = 1 along random segments
    // at the scale the solver actually visits.
    let inst = medium_instance();
    let dim = inst.dim();
    let (problem, _) = build_dc_problem(inst);
    let sampler = |rng: &mut ChaCha8Rng| {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        (a, b)
    };
    let report = check_relative_convexity(&problem, sampler, 1000, 1e-9, 55);
    assert!(
        report.is_clean(),
        "upper {:?} lower {:?}",
        report.upper,
        report.lower
    );
}

#[test]
fn h_is_convex_along_random_segments() {
    let inst = medium_instance();
    let dim = inst.dim();
    let h = {
        let inst = inst.clone();
        move |z: &[f64]| inst.penalty_h_value_flat(z)
    };
    let sampler = |rng: &mut ChaCha8Rng| {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        (a, b)
    };
    let side = audit_convexity(h, sampler, 1000, 1e-9, 56);
    assert_eq!(side.violations, 0, "worst excess {}", side.worst_excess);
}

#[test]
fn predict_consistency_between_views() {
    // Factor-pair predictions must agree with the flat loss's internal
    // product on every observed cell.
    let inst = medium_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(58);
    let flat = uniform_vec(&mut rng, inst.dim(), 0.0, 1.0);
    let (m, rank, n) = inst.shape();
    let z = FactorPair::from_flat(m, rank, n, flat.clone()).unwrap();
    let mut loss_direct = 0.0;
    for e in inst.train().entries() {
        let resid = z.predict(e.row, e.col) - e.value;
        loss_direct += resid * resid;
    }
    let loss = inst.loss_value_flat(&flat);
    assert!((loss - 0.5 * loss_direct).abs() <= 1e-12 * (1.0 + loss));
}
