//! FastICA baseline and the linear mixing simulation it is compared on.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{rng, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum IcaError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("observations are rank deficient after centering (eigenvalue {0:e})")]
    RankDeficient(f64),
}

/// How mixing weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingRule {
    /// Standard normal truncated to `[-0.5, 0.5]`.
    #[default]
    TruncatedStandard,
    /// Normal with mean −0.5 and standard deviation 0.5, truncated at 2σ.
    ShiftedNormal,
}

impl MixingRule {
    /// Largest `|W_ij|` the rule can produce.
    pub fn bound(self) -> f64 {
        match self {
            Self::TruncatedStandard => 0.5,
            Self::ShiftedNormal => 1.5,
        }
    }

    fn draw<R: rand::Rng + ?Sized>(self, r: &mut R) -> f64 {
        match self {
            Self::TruncatedStandard => loop {
                let v: f64 = rng::normal(r, 1.0);
                if v.abs() <= 0.5 {
                    break v;
                }
            },
            Self::ShiftedNormal => -0.5 + rng::truncated_normal::<f64, _>(r, 0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix<T> {
    pub w: Array2<T>,
    pub seed: u64,
    pub rule: MixingRule,
}

pub fn draw_mixing_matrix<T: Scalar>(seed: u64, rule: MixingRule) -> MixingMatrix<T> {
    let mut r = rng::stream(seed, "ica-mixing");
    let w = Array2::from_shape_simple_fn((2, 2), || T::lit(rule.draw(&mut r)));
    MixingMatrix { w, seed, rule }
}

/// `Y = X · Wᵀ` for sources stored as columns of `X` (one row per pixel).
pub fn mix_with<T: Scalar>(x: ArrayView2<'_, T>, w: ArrayView2<'_, T>) -> Result<Array2<T>, IcaError> {
    if x.ncols() != w.ncols() {
        return Err(IcaError::DimMismatch(format!("X has {} columns, W has {}", x.ncols(), w.ncols())));
    }
    Ok(x.dot(&w.t()))
}

/// Draws `W` once and returns `(X·Wᵀ, W)` for a `p × 2` source matrix.
pub fn simulate_ica_mixing<T: Scalar>(
    x: ArrayView2<'_, T>,
    seed: u64,
    rule: MixingRule,
) -> Result<(Array2<T>, MixingMatrix<T>), IcaError> {
    if x.ncols() != 2 {
        return Err(IcaError::DimMismatch(format!("expected 2 source columns, got {}", x.ncols())));
    }
    let w = draw_mixing_matrix(seed, rule);
    Ok((mix_with(x, w.w.view())?, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult<T> {
    /// `p × k`, unit variance per column.
    pub sources: Array2<T>,
    /// `k × n`, applied to centered observations.
    pub unmixing: Array2<T>,
    pub iterations: usize,
    /// False when `max_iter` was hit; the last iterate is returned.
    pub converged: bool,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `(W Wᵀ)^{-1/2} W`.
fn sym_decorrelate(w: &Array2<f64>) -> Array2<f64> {
    let eig = SymmetricEigen::new(to_na(&w.dot(&w.t())));
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt()));
    let root = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    from_na(&root).dot(w)
}

/// Symmetric FastICA with the logcosh contrast on the columns of `y`.
pub fn fast_ica<T: Scalar>(y: ArrayView2<'_, T>, k: usize, opts: &IcaOptions) -> Result<IcaResult<T>, IcaError> {
    let (p, n) = y.dim();
    if k == 0 || k > n || p < 2 {
        return Err(IcaError::DimMismatch(format!("cannot extract {k} components from {p}×{n} observations")));
    }
    let y = y.mapv(|v| v.as_f64());
    let mean = y.mean_axis(Axis(0)).expect("non-empty");
    let x = &y - &mean;
    let cov = x.t().dot(&x) / p as f64;
    let eig = SymmetricEigen::new(to_na(&cov));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kth = eig.eigenvalues[order[k - 1]];
    if !(kth > 1e-12 * top.max(1e-300)) {
        return Err(IcaError::RankDeficient(kth));
    }
    let whitening = Array2::from_shape_fn((k, n), |(i, j)| {
        eig.eigenvectors[(j, order[i])] / eig.eigenvalues[order[i]].sqrt()
    });
    let z = x.dot(&whitening.t());

    let mut r = rng::stream(opts.seed, "fast-ica");
    let mut w = sym_decorrelate(&Array2::from_shape_simple_fn((k, k), || rng::normal::<f64, _>(&mut r, 1.0)));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let wx = z.dot(&w.t());
        let g = wx.mapv(f64::tanh);
        let g_prime_mean = g.mapv(|t| 1.0 - t * t).mean_axis(Axis(0)).expect("non-empty");
        let mut next = g.t().dot(&z) / p as f64;
        for (mut row, (&gp, old)) in next.outer_iter_mut().zip(g_prime_mean.iter().zip(w.outer_iter())) {
            row.scaled_add(-gp, &old);
        }
        let next = sym_decorrelate(&next);
        let change = next
            .outer_iter()
            .zip(w.outer_iter())
            .map(|(a, b)| (a.dot(&b).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fast_ica did not converge in {} sweeps", opts.max_iter);
    }
    let sources = z.dot(&w.t());
    let unmixing = w.dot(&whitening);
    Ok(IcaResult {
        sources: sources.mapv(T::lit),
        unmixing: unmixing.mapv(T::lit),
        iterations,
        converged,
    })
}

/// Pearson correlation of two equal-length vectors (0 if either is constant).
pub fn correlation<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> f64 {
    let a = a.mapv(|v| v.as_f64());
    let b = b.mapv(|v| v.as_f64());
    let a = &a - a.mean().unwrap_or(0.0);
    let b = &b - b.mean().unwrap_or(0.0);
    let denom = (a.dot(&a) * b.dot(&b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(&b) / denom
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(k - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// Matching of estimated sources to true sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[j]` is the estimated column matched to true column `j`.
    pub permutation: Vec<usize>,
    /// Sign of the correlation for each true column.
    pub signs: Vec<f64>,
    /// `|correlation|` for each true column.
    pub correlations: Vec<f64>,
}

/// Maximizes total `|correlation|` over all column permutations.
pub fn align_sources<T: Scalar>(estimated: ArrayView2<'_, T>, truth: ArrayView2<'_, T>) -> Result<Alignment, IcaError> {
    if estimated.dim() != truth.dim() {
        return Err(IcaError::DimMismatch(format!("{:?} vs {:?}", estimated.dim(), truth.dim())));
    }
    let k = truth.ncols();
    let corr = Array2::from_shape_fn((k, k), |(i, j)| correlation(estimated.column(i), truth.column(j)));
    let score = |p: &[usize]| p.iter().enumerate().map(|(j, &i)| corr[[i, j]].abs()).sum::<f64>();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(k) {
        let s = score(&p);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, p));
        }
    }
    let permutation = best.map(|(_, p)| p).unwrap_or_default();
    Ok(Alignment {
        signs: permutation.iter().enumerate().map(|(j, &i)| corr[[i, j]].signum()).collect(),
        correlations: permutation.iter().enumerate().map(|(j, &i)| corr[[i, j]].abs()).collect(),
        permutation,
    })
}

/// Least-squares affine fit `a·s + b` of an estimated source onto `target`.
pub fn fit_affine<T: Scalar>(s: ArrayView1<'_, T>, target: ArrayView1<'_, T>) -> Array1<T> {
    let sf = s.mapv(|v| v.as_f64());
    let tf = target.mapv(|v| v.as_f64());
    let (ms, mt) = (sf.mean().unwrap_or(0.0), tf.mean().unwrap_or(0.0));
    let ds = &sf - ms;
    let var = ds.dot(&ds);
    let a = if var > 0.0 { ds.dot(&(&tf - mt)) / var } else { 0.0 };
    sf.mapv(|v| T::lit(a * (v - ms) + mt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_sources(p: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "src");
        Array2::from_shape_simple_fn((p, 2), || r.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identity_mixing_is_noop_and_mix_is_linear() {
        let x = uniform_sources(50, 1);
        assert_eq!(mix_with(x.view(), Array2::eye(2).view()).unwrap(), x);
        let (y, w) = simulate_ica_mixing(x.view(), 3, MixingRule::TruncatedStandard).unwrap();
        for i in 0..50 {
            for c in 0..2 {
                let want = x[[i, 0]] * w.w[[c, 0]] + x[[i, 1]] * w.w[[c, 1]];
                assert!((y[[i, c]] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixing_weights_respect_truncation() {
        for rule in [MixingRule::TruncatedStandard, MixingRule::ShiftedNormal] {
            for seed in 0..200 {
                let w = draw_mixing_matrix::<f64>(seed, rule);
                assert!(w.w.iter().all(|v| v.abs() <= rule.bound()));
            }
        }
    }

    #[test]
    fn recovers_already_independent_sources() {
        let x = uniform_sources(2000, 5);
        let res = fast_ica(x.view(), 2, &IcaOptions::default()).unwrap();
        assert!(res.converged);
        let al = align_sources(res.sources.view(), x.view()).unwrap();
        assert!(al.correlations.iter().all(|&c| c >= 0.99), "{al:?}");
        for col in res.sources.columns() {
            let m = col.mean().unwrap();
            let var = col.mapv(|v| (v - m) * (v - m)).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_rejected() {
        let x = uniform_sources(100, 2);
        let mut y = x.clone();
        let c0 = y.column(0).to_owned();
        y.column_mut(1).assign(&(&c0 * 2.0));
        assert!(matches!(fast_ica(y.view(), 2, &IcaOptions::default()), Err(IcaError::RankDeficient(_))));
    }

    #[test]
    fn permutation_enumeration() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
