//! Reconstruction metrics, sample grids and the digit-classifier probe.

pub mod classifier;
pub mod grid;
pub mod metrics;
pub mod orientation;

use thiserror::Error;

pub use classifier::{classify_accuracy, train_probe_classifier, ClassifierDescriptor, ClassifierTraining, ProbeClassifier};
pub use grid::{montage, read_gray, write_montage, write_sample_grid, GRID_SIDE};
pub use metrics::{mse, per_pixel_error, psnr, MetricReport, ERROR_BATCH};
pub use orientation::{component_purity, orientation, orientation_fractions, Orientation, Purity};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("PSNR is undefined for zero MSE")]
    ZeroMse,
    #[error("PSNR needs a positive MSE, got {0}")]
    InvalidMse(f64),
    #[error("expected a batch of {expected} images, got {actual}")]
    BatchSizeMismatch { expected: usize, actual: usize },
    #[error("collections differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("grid needs {expected} images, got {actual}")]
    BadCount { expected: usize, actual: usize },
    #[error("training set has no labels")]
    Unlabeled,
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
