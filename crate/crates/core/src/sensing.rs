//! Gaussian measurement operators and the LASSO baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{rng, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// `m × p` matrix with i.i.d. Normal(0, 1/m) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator<T> {
    pub a: Array2<T>,
    pub seed: u64,
}

impl<T: Scalar> MeasurementOperator<T> {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn apply(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>, SensingError> {
        if x.len() != self.p() {
            return Err(SensingError::DimMismatch(format!("signal length {} vs p = {}", x.len(), self.p())));
        }
        Ok(self.a.dot(&x))
    }
}

pub fn make_gaussian_operator<T: Scalar>(m: usize, p: usize, seed: u64) -> Result<MeasurementOperator<T>, SensingError> {
    if m == 0 || p == 0 {
        return Err(SensingError::DimMismatch(format!("operator must be at least 1×1, got {m}×{p}")));
    }
    let mut r = rng::stream(seed, "measurement-operator");
    let std = (1.0 / m as f64).sqrt();
    let a = Array2::from_shape_simple_fn((m, p), || rng::normal(&mut r, std));
    Ok(MeasurementOperator { a, seed })
}

/// `‖Ax − y‖² + λ‖x‖₁`.
pub fn lasso_objective<T: Scalar>(a: ArrayView2<'_, T>, y: ArrayView1<'_, T>, x: ArrayView1<'_, T>, lambda: T) -> T {
    let r = a.dot(&x) - &y;
    r.dot(&r) + lambda * x.iter().map(|v| v.abs()).sum::<T>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoResult<T> {
    pub x: Array1<T>,
    pub objective: T,
    /// Objective after each outer iteration, starting with `x = 0`.
    pub trace: Vec<T>,
    /// Final Lipschitz estimate used for the step size.
    pub lipschitz: T,
}

fn soft<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration from the all-ones vector.
pub fn spectral_norm_sq<T: Scalar>(a: ArrayView2<'_, T>, iterations: usize) -> T {
    let mut v = Array1::from_elem(a.ncols(), T::one());
    let mut est = T::zero();
    for _ in 0..iterations {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        est = norm / v.dot(&v).sqrt();
        v = w / norm;
    }
    est
}

/// Monotone FISTA for `‖Ax − y‖² + λ‖x‖₁` starting at zero.
///
/// The step comes from a 20-step power-iteration estimate of `‖AᵀA‖`,
/// doubled whenever the quadratic upper bound fails.
pub fn lasso_solve<T: Scalar>(
    a: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    lambda: T,
    iterations: usize,
) -> Result<LassoResult<T>, SensingError> {
    if a.nrows() != y.len() {
        return Err(SensingError::DimMismatch(format!("A has {} rows, y has {}", a.nrows(), y.len())));
    }
    if !(lambda >= T::zero()) {
        return Err(SensingError::Invalid("lambda must be nonnegative".into()));
    }
    let two = T::lit(2.0);
    let smooth = |x: &Array1<T>| {
        let r = a.dot(x) - &y;
        (r.dot(&r), r)
    };
    let full = |x: &Array1<T>| smooth(x).0 + lambda * x.iter().map(|v| v.abs()).sum::<T>();

    let mut lip = (two * spectral_norm_sq(a, 20)).max(T::min_positive_value());
    let mut x = Array1::zeros(a.ncols());
    let mut x_prev = x.clone();
    let mut v = x.clone();
    let mut t = T::one();
    let mut obj = full(&x);
    let mut trace = vec![obj];
    for _ in 0..iterations {
        let (fv, rv) = smooth(&v);
        let grad = a.t().dot(&rv) * two;
        let z = loop {
            let z = (&v - &(&grad / lip)).mapv(|g| soft(g, lambda / lip));
            let d = &z - &v;
            let bound = fv + grad.dot(&d) + lip / two * d.dot(&d);
            if smooth(&z).0 <= bound * (T::one() + T::lit(1e-12)) + T::lit(1e-300) {
                break z;
            }
            lip = lip * two;
        };
        let fz = full(&z);
        let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / two;
        x_prev.assign(&x);
        if fz <= obj {
            x = z.clone();
            obj = fz;
        }
        v = &x + &((&z - &x) * (t / t_next)) + &((&x - &x_prev) * ((t - T::one()) / t_next));
        t = t_next;
        trace.push(obj);
    }
    Ok(LassoResult {
        x,
        objective: obj,
        trace,
        lipschitz: lip,
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Result of sweeping λ over a grid on held-out signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub grid: Vec<f64>,
    /// Mean per-coordinate squared reconstruction error for each λ.
    pub errors: Vec<f64>,
    pub best: f64,
}

/// Picks the λ with lowest mean squared error against known held-out
/// signals (`(truth, measurements)` pairs); ties go to the smaller λ.
pub fn select_lambda<T: Scalar>(
    a: ArrayView2<'_, T>,
    held_out: &[(Array1<T>, Array1<T>)],
    grid: &[f64],
    iterations: usize,
) -> Result<LambdaSweep, SensingError> {
    if grid.is_empty() || held_out.is_empty() {
        return Err(SensingError::Invalid("empty grid or held-out set".into()));
    }
    let mut errors = Vec::with_capacity(grid.len());
    for &lam in grid {
        let mut total = 0.0;
        for (truth, y) in held_out {
            let x = lasso_solve(a, y.view(), T::lit(lam), iterations)?.x;
            let d = &x - truth;
            total += d.dot(&d).as_f64() / truth.len() as f64;
        }
        errors.push(total / held_out.len() as f64);
    }
    let best_idx = (0..grid.len()).fold(0, |b, i| if errors[i] < errors[b] { i } else { b });
    Ok(LambdaSweep {
        grid: grid.to_vec(),
        best: grid[best_idx],
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};

    #[test]
    fn operator_variance_and_determinism() {
        let op = make_gaussian_operator::<f64>(100, 784, 5).unwrap();
        let mean_sq = op.a.iter().map(|v| v * v).sum::<f64>() / op.a.len() as f64;
        assert!((0.8 / 100.0..=1.2 / 100.0).contains(&mean_sq));
        assert_eq!(op, make_gaussian_operator::<f64>(100, 784, 5).unwrap());
        assert_ne!(op.a, make_gaussian_operator::<f64>(100, 784, 6).unwrap().a);
        assert_eq!(make_gaussian_operator::<f32>(1, 1, 0).unwrap().a.len(), 1);
        assert!(make_gaussian_operator::<f32>(0, 4, 0).is_err());
    }

    #[test]
    fn identity_reduces_to_soft_threshold() {
        let a = Array2::<f64>::eye(2);
        let res = lasso_solve(a.view(), arr1(&[1.0, 0.2]).view(), 0.5, 200).unwrap();
        assert!((res.x[0] - 0.75).abs() < 1e-12 && res.x[1] == 0.0);
        let zero = lasso_solve(a.view(), arr1(&[0.0, 0.0]).view(), 0.5, 10).unwrap();
        assert!(zero.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_never_increases() {
        let op = make_gaussian_operator::<f64>(20, 50, 9).unwrap();
        let y = Array1::from_shape_fn(20, |i| (i as f64 * 0.7).sin());
        let res = lasso_solve(op.a.view(), y.view(), 0.05, 300).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(res.objective <= lasso_objective(op.a.view(), y.view(), Array1::zeros(50).view(), 0.05));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e1, 5);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[4] - 10.0).abs() < 1e-12);
        assert!((g[2] - 0.1).abs() < 1e-12);
    }
}
