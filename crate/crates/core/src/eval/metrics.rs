use ndarray::{ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Scalar;

/// Images per batch in the per-pixel reconstruction error.
pub const ERROR_BATCH: usize = 16;

/// Mean over pixels of `(a − b)²`.
pub fn mse<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<T, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::ShapeMismatch(a.dim(), b.dim()));
    }
    let n = T::from_usize(a.len().max(1)).unwrap();
    let sum = Zip::from(&a).and(&b).fold(T::zero(), |acc, &x, &y| acc + (x - y) * (x - y));
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB for peak value 1.
pub fn psnr<T: Scalar>(mse_value: T) -> Result<T, EvalError> {
    if mse_value == T::zero() {
        return Err(EvalError::ZeroMse);
    }
    if !(mse_value > T::zero()) {
        return Err(EvalError::InvalidMse(mse_value.as_f64()));
    }
    Ok(T::lit(10.0) * (T::one() / mse_value).log10())
}

/// Total squared error over a 16-image batch divided by `16 · pixels`.
pub fn per_pixel_error<T: Scalar>(recon: ArrayView3<'_, T>, truth: ArrayView3<'_, T>) -> Result<T, EvalError> {
    for batch in [&recon, &truth] {
        if batch.len_of(Axis(0)) != ERROR_BATCH {
            return Err(EvalError::BatchSizeMismatch {
                expected: ERROR_BATCH,
                actual: batch.len_of(Axis(0)),
            });
        }
    }
    if recon.dim() != truth.dim() {
        let (_, h1, w1) = recon.dim();
        let (_, h2, w2) = truth.dim();
        return Err(EvalError::ShapeMismatch((h1, w1), (h2, w2)));
    }
    let total = Zip::from(&recon).and(&truth).fold(T::zero(), |acc, &x, &y| acc + (x - y) * (x - y));
    Ok(total / T::from_usize(recon.len()).unwrap())
}

/// Per-image and aggregate reconstruction quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: Vec<f64>,
    /// `None` where the reconstruction is exact.
    pub psnr: Vec<Option<f64>>,
    pub mean_mse: f64,
    pub mean_psnr: Option<f64>,
    pub per_pixel_error: Option<f64>,
    pub classifier_accuracy: Option<f64>,
    pub metadata: serde_json::Value,
}

impl MetricReport {
    /// Scores `estimates` against `truth` image by image.
    pub fn compare<T: Scalar>(estimates: ArrayView3<'_, T>, truth: ArrayView3<'_, T>) -> Result<Self, EvalError> {
        if estimates.len_of(Axis(0)) != truth.len_of(Axis(0)) {
            return Err(EvalError::LengthMismatch(estimates.len_of(Axis(0)), truth.len_of(Axis(0))));
        }
        let mut mses = Vec::new();
        for (e, t) in estimates.outer_iter().zip(truth.outer_iter()) {
            mses.push(mse(e, t)?.as_f64());
        }
        let psnrs: Vec<Option<f64>> = mses.iter().map(|&m| psnr(m).ok()).collect();
        let finite: Vec<f64> = psnrs.iter().flatten().copied().collect();
        let n = mses.len().max(1) as f64;
        let per_pixel = if estimates.len_of(Axis(0)) == ERROR_BATCH {
            Some(per_pixel_error(estimates, truth)?.as_f64())
        } else {
            None
        };
        Ok(Self {
            mean_mse: mses.iter().sum::<f64>() / n,
            mean_psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            mse: mses,
            psnr: psnrs,
            per_pixel_error: per_pixel,
            classifier_accuracy: None,
            metadata: serde_json::Value::Null,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    #[test]
    fn mse_basics() {
        let a = Array2::<f64>::ones((3, 4));
        let b = Array2::<f64>::zeros((3, 4));
        assert_eq!(mse(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(mse(a.view(), b.view()).unwrap(), 1.0);
        assert_eq!(mse(a.view(), b.view()).unwrap(), mse(b.view(), a.view()).unwrap());
        let c = Array2::<f64>::zeros((4, 3));
        assert!(matches!(mse(a.view(), c.view()), Err(EvalError::ShapeMismatch(..))));
    }

    #[test]
    fn psnr_of_unit_mse_is_zero_and_zero_mse_is_flagged() {
        assert_eq!(psnr(1.0f64).unwrap(), 0.0);
        assert!(matches!(psnr(0.0f64), Err(EvalError::ZeroMse)));
        assert!(matches!(psnr(-1.0f64), Err(EvalError::InvalidMse(_))));
    }

    #[test]
    fn single_pixel_error() {
        let truth = Array3::<f64>::zeros((16, 28, 28));
        let mut recon = truth.clone();
        assert_eq!(per_pixel_error(recon.view(), truth.view()).unwrap(), 0.0);
        recon[[5, 3, 7]] = 1.0;
        assert_eq!(per_pixel_error(recon.view(), truth.view()).unwrap(), 1.0 / (16.0 * 784.0));
        let short = Array3::<f64>::zeros((15, 28, 28));
        assert!(matches!(
            per_pixel_error(short.view(), short.view()),
            Err(EvalError::BatchSizeMismatch { expected: 16, actual: 15 })
        ));
    }
}
