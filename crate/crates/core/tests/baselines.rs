//! LASSO and FastICA against independent oracles.

use demixgan::ica::{align_sources, correlation, fast_ica, mix_with, simulate_ica_mixing, IcaError, IcaOptions, MixingRule};
use demixgan::rng;
use demixgan::sensing::{lasso_objective, lasso_solve, make_gaussian_operator, select_lambda, SensingError};
use ndarray::{arr2, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

/// Cyclic coordinate descent on `‖Ax − y‖² + λ‖x‖₁` run to a fixed point.
fn coordinate_descent(a: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Array1<f64> {
    let p = a.ncols();
    let norms: Vec<f64> = (0..p).map(|j| a.column(j).dot(&a.column(j))).collect();
    let mut x = Array1::<f64>::zeros(p);
    let mut r = y.clone();
    for _ in 0..100_000 {
        let mut delta = 0.0f64;
        for j in 0..p {
            let col = a.column(j);
            let rho = 2.0 * (col.dot(&r) + norms[j] * x[j]);
            let new = if rho > lambda {
                (rho - lambda) / (2.0 * norms[j])
            } else if rho < -lambda {
                (rho + lambda) / (2.0 * norms[j])
            } else {
                0.0
            };
            let d = new - x[j];
            if d != 0.0 {
                r.scaled_add(-d, &col);
                x[j] = new;
                delta = delta.max(d.abs());
            }
        }
        if delta < 1e-15 {
            break;
        }
    }
    x
}

#[test]
fn lasso_matches_coordinate_descent() {
    for trial in 0..20u64 {
        let op = make_gaussian_operator::<f64>(20, 50, 100 + trial).unwrap();
        let mut r = rng::stream(trial, "lasso-instance");
        let y = Array1::from_shape_simple_fn(20, || r.random::<f64>() * 2.0 - 1.0);
        let lambda = 0.05 + 0.2 * r.random::<f64>();
        let oracle = coordinate_descent(&op.a, &y, lambda);
        let want = lasso_objective(op.a.view(), y.view(), oracle.view(), lambda);
        let got = lasso_solve(op.a.view(), y.view(), lambda, 5000).unwrap();
        assert!((got.objective - want).abs() <= 1e-6, "trial {trial}: {} vs {want}", got.objective);
        assert!(got.objective <= lasso_objective(op.a.view(), y.view(), Array1::zeros(50).view(), lambda));
    }
}

#[test]
fn lasso_rejects_bad_inputs() {
    let a = Array2::<f64>::eye(3);
    assert!(matches!(lasso_solve(a.view(), Array1::zeros(2).view(), 0.1, 10), Err(SensingError::DimMismatch(_))));
    assert!(matches!(lasso_solve(a.view(), Array1::zeros(3).view(), -0.1, 10), Err(SensingError::Invalid(_))));
}

#[test]
fn lambda_sweep_prefers_moderate_penalty_for_sparse_signals() {
    let op = make_gaussian_operator::<f64>(40, 60, 3).unwrap();
    let mut r = rng::stream(3, "sparse");
    let held: Vec<_> = (0..4)
        .map(|_| {
            let mut x = Array1::<f64>::zeros(60);
            for _ in 0..4 {
                x[r.random_range(0..60)] = r.random::<f64>() + 0.5;
            }
            let y = op.a.dot(&x);
            (x, y)
        })
        .collect();
    let grid = [1e-4, 1e-2, 1e2];
    let sweep = select_lambda(op.a.view(), &held, &grid, 2000).unwrap();
    assert_eq!(sweep.errors.len(), 3);
    assert!(sweep.best < 1e2);
    let min = sweep.errors.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(sweep.errors[sweep.grid.iter().position(|&g| g == sweep.best).unwrap()], min);
}

fn uniform_sources(p: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, "sources");
    Array2::from_shape_simple_fn((p, 2), || r.random::<f64>() * 2.0 - 1.0)
}

fn random_invertible(seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, "mixing");
    loop {
        let w = Array2::from_shape_simple_fn((2, 2), || r.random::<f64>() * 2.0 - 1.0);
        let det = w[[0, 0]] * w[[1, 1]] - w[[0, 1]] * w[[1, 0]];
        if det.abs() > 0.1 {
            break w;
        }
    }
}

#[test]
fn ica_separates_uniform_sources() {
    for trial in 0..20u64 {
        let x = uniform_sources(2000, trial);
        let y = mix_with(x.view(), random_invertible(trial).view()).unwrap();
        let res = fast_ica(y.view(), 2, &IcaOptions::default()).unwrap();
        let al = align_sources(res.sources.view(), x.view()).unwrap();
        assert!(al.correlations.iter().all(|&c| c >= 0.95), "trial {trial}: {:?}", al.correlations);
        for col in res.sources.axis_iter(Axis(1)) {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            assert!((var - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn ica_ignores_positive_column_scaling() {
    let x = uniform_sources(1500, 7);
    let y = mix_with(x.view(), random_invertible(7).view()).unwrap();
    let scaled = &y * &arr2(&[[3.0, 0.2]]);
    let a = fast_ica(y.view(), 2, &IcaOptions::default()).unwrap();
    let b = fast_ica(scaled.view(), 2, &IcaOptions::default()).unwrap();
    let al = align_sources(b.sources.view(), a.sources.view()).unwrap();
    assert!(al.correlations.iter().all(|&c| c > 0.999), "{:?}", al.correlations);
}

#[test]
fn ica_rejects_degenerate_observations() {
    let x = uniform_sources(100, 1);
    let dup = ndarray::concatenate![Axis(1), x.column(0).insert_axis(Axis(1)), x.column(0).insert_axis(Axis(1))];
    assert!(matches!(fast_ica(dup.view(), 2, &IcaOptions::default()), Err(IcaError::RankDeficient(_))));
    assert!(matches!(fast_ica(x.view(), 3, &IcaOptions::default()), Err(IcaError::DimMismatch(_))));
    assert!(simulate_ica_mixing(uniform_sources(10, 2).slice(ndarray::s![.., ..1]), 0, MixingRule::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixing_is_exact_and_bounded(seed in any::<u64>(), shifted in any::<bool>()) {
        let rule = if shifted { MixingRule::ShiftedNormal } else { MixingRule::TruncatedStandard };
        let x = uniform_sources(16, seed);
        let (y, w) = simulate_ica_mixing(x.view(), seed, rule).unwrap();
        prop_assert!(w.w.iter().all(|v| v.abs() <= rule.bound()));
        for i in 0..16 {
            for c in 0..2 {
                let want = x[[i, 0]] * w.w[[c, 0]] + x[[i, 1]] * w.w[[c, 1]];
                prop_assert!((y[[i, c]] - want).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn correlation_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
        let (a, b) = (Array1::from(a), Array1::from(b));
        let ab = correlation(a.view(), b.view());
        prop_assert!((ab - correlation(b.view(), a.view())).abs() < 1e-12);
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn lasso_never_worse_than_zero(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let op = make_gaussian_operator::<f64>(6, 9, seed).unwrap();
        let mut r = rng::stream(seed, "y");
        let y = Array1::from_shape_simple_fn(6, || r.random::<f64>());
        let res = lasso_solve(op.a.view(), y.view(), lambda, 50).unwrap();
        prop_assert!(res.objective <= y.dot(&y) + 1e-12);
        for w in res.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
