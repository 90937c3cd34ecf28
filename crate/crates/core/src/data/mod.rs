//! Image datasets: IDX parsing, binarization, and mixture assembly.

pub mod idx;
pub mod synthetic;

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::{rng, Scalar};

pub use idx::{load_labeled, parse_idx, read_idx_file, write_idx_images, write_idx_labels, IdxData};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown IDX magic word {0:#010x}")]
    BadMagic(u32),
    #[error("IDX payload truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("pixel value {0} outside [0,1]")]
    PixelRange(f64),
    #[error("{labels} labels for {images} images")]
    LabelCount { images: usize, labels: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Ordered collection of same-shape grayscale images with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet<T> {
    /// `(count, height, width)`, every pixel in `[0,1]`.
    pub images: Array3<T>,
    pub labels: Option<Vec<u8>>,
}

impl<T: Scalar> ImageSet<T> {
    pub fn new(images: Array3<T>, labels: Option<Vec<u8>>) -> Result<Self, DataError> {
        if let Some(bad) = images.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(DataError::PixelRange(bad.as_f64()));
        }
        if let Some(l) = &labels {
            if l.len() != images.len_of(Axis(0)) {
                return Err(DataError::LabelCount {
                    images: images.len_of(Axis(0)),
                    labels: l.len(),
                });
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        let (_, h, w) = self.images.dim();
        (h, w)
    }

    pub fn image(&self, i: usize) -> ArrayView2<'_, T> {
        self.images.index_axis(Axis(0), i)
    }

    /// Subset in the given order (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// First `n` items (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Items whose label is in `classes`; unlabeled sets are returned whole.
    pub fn filter_classes(&self, classes: &[u8]) -> Self {
        match &self.labels {
            None => self.clone(),
            Some(l) => {
                let idx: Vec<usize> = (0..l.len()).filter(|&i| classes.contains(&l[i])).collect();
                self.select(&idx)
            }
        }
    }
}

/// Maps every pixel to 1 when `p >= threshold`, else 0.
pub fn binarize<T: Scalar>(set: &ImageSet<T>, threshold: T) -> ImageSet<T> {
    ImageSet {
        images: set
            .images
            .mapv(|p| if p >= threshold { T::one() } else { T::zero() }),
        labels: set.labels.clone(),
    }
}

/// Which source items were summed to form one mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub a: usize,
    pub b: usize,
    pub seed: u64,
}

/// Superposed observations `a[i] + b[j]`, left unclamped in `[0,2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSet<T> {
    pub mixtures: Array3<T>,
    pub provenance: Vec<Pairing>,
}

impl<T: Scalar> MixtureSet<T> {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        let (_, h, w) = self.mixtures.dim();
        (h, w)
    }
}

/// Forms `k` mixtures by uniform random pairing with replacement.
pub fn make_mixture_dataset<T: Scalar>(
    a: &ImageSet<T>,
    b: &ImageSet<T>,
    k: usize,
    seed: u64,
) -> Result<MixtureSet<T>, DataError> {
    if a.is_empty() || b.is_empty() {
        return Err(DataError::Empty);
    }
    if a.shape() != b.shape() {
        return Err(DataError::ShapeMismatch(a.shape(), b.shape()));
    }
    let (h, w) = a.shape();
    let mut rng = rng::stream(seed, "mixture-pairing");
    let provenance: Vec<Pairing> = (0..k)
        .map(|_| Pairing {
            a: rng.random_range(0..a.len()),
            b: rng.random_range(0..b.len()),
            seed,
        })
        .collect();
    let mut mixtures = Array3::zeros((k, h, w));
    for (i, p) in provenance.iter().enumerate() {
        let sum: Array2<T> = &a.image(p.a) + &b.image(p.b);
        mixtures.index_axis_mut(Axis(0), i).assign(&sum);
    }
    Ok(MixtureSet {
        mixtures,
        provenance,
    })
}

/// On-disk description of a derived dataset: raw IDX sources plus the
/// pairing needed to rebuild mixtures exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSetManifest {
    pub format_version: u32,
    pub source_a: String,
    pub source_b: Option<String>,
    pub shape: (usize, usize),
    pub provenance: Vec<Pairing>,
}

/// Writes `source_a.idx`, optionally `source_b.idx`, and `manifest.json`.
pub fn save_derived_set<T: Scalar>(
    dir: &Path,
    a: &ImageSet<T>,
    b: Option<&ImageSet<T>>,
    provenance: &[Pairing],
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::Io(dir.display().to_string(), e))?;
    let io = |p: &Path, bytes: &[u8]| {
        write_atomic(p, bytes).map_err(|e| DataError::Io(p.display().to_string(), e))
    };
    io(&dir.join("source_a.idx"), &write_idx_images(&a.images))?;
    if let Some(b) = b {
        io(&dir.join("source_b.idx"), &write_idx_images(&b.images))?;
    }
    let manifest = DerivedSetManifest {
        format_version: 1,
        source_a: "source_a.idx".into(),
        source_b: b.map(|_| "source_b.idx".into()),
        shape: a.shape(),
        provenance: provenance.to_vec(),
    };
    io(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )
}

/// Rebuilds the mixtures recorded by [`save_derived_set`].
pub fn load_derived_mixtures<T: Scalar>(dir: &Path) -> Result<MixtureSet<T>, DataError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| DataError::Io(path.display().to_string(), e))?;
    let manifest: DerivedSetManifest = serde_json::from_str(&text)?;
    let a = load_labeled::<T>(&dir.join(&manifest.source_a), None)?;
    let b = match &manifest.source_b {
        Some(name) => load_labeled::<T>(&dir.join(name), None)?,
        None => a.clone(),
    };
    let (h, w) = manifest.shape;
    let mut mixtures = Array3::zeros((manifest.provenance.len(), h, w));
    for (i, p) in manifest.provenance.iter().enumerate() {
        let sum: Array2<T> = &a.image(p.a) + &b.image(p.b);
        mixtures.index_axis_mut(Axis(0), i).assign(&sum);
    }
    Ok(MixtureSet {
        mixtures,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(img: Array2<f64>) -> ImageSet<f64> {
        let (h, w) = img.dim();
        ImageSet::new(img.into_shape_with_order((1, h, w)).unwrap(), None).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let set = single(array![[0.7, 0.5], [0.49, 0.0]]);
        let out = binarize(&set, 0.5);
        assert_eq!(out.image(0), array![[1.0, 1.0], [0.0, 0.0]]);
        let zeros = single(Array2::zeros((3, 3)));
        assert_eq!(binarize(&zeros, 0.5), zeros);
    }

    #[test]
    fn binarize_is_idempotent() {
        let set = single(array![[0.1, 0.9, 0.5], [0.3, 0.6, 1.0]]);
        let once = binarize(&set, 0.5);
        assert_eq!(binarize(&once, 0.5), once);
    }

    #[test]
    fn rejects_out_of_range_pixels_and_label_mismatch() {
        assert!(matches!(
            ImageSet::new(Array3::from_elem((1, 2, 2), 1.5f32), None),
            Err(DataError::PixelRange(_))
        ));
        assert!(matches!(
            ImageSet::new(Array3::<f32>::zeros((2, 2, 2)), Some(vec![1])),
            Err(DataError::LabelCount { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn zero_sources_give_zero_mixtures() {
        let z = single(Array2::zeros((4, 4)));
        let m = make_mixture_dataset(&z, &z, 3, 11).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.mixtures.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singleton_sources_force_pairing() {
        let i = single(array![[1.0, 0.0], [0.5, 1.0]]);
        let j = single(array![[1.0, 0.25], [0.0, 1.0]]);
        let m = make_mixture_dataset(&i, &j, 5, 3).unwrap();
        for k in 0..5 {
            assert_eq!(m.mixtures.index_axis(Axis(0), k), array![[2.0, 0.25], [0.5, 2.0]]);
        }
    }

    #[test]
    fn shape_mismatch_and_empty_rejected() {
        let a = single(Array2::zeros((2, 2)));
        let b = single(Array2::zeros((3, 3)));
        assert!(matches!(
            make_mixture_dataset(&a, &b, 1, 0),
            Err(DataError::ShapeMismatch(..))
        ));
        let empty = ImageSet::new(Array3::<f64>::zeros((0, 2, 2)), None).unwrap();
        assert!(matches!(make_mixture_dataset(&a, &empty, 1, 0), Err(DataError::Empty)));
    }

    #[test]
    fn pairing_is_seed_deterministic_and_exact() {
        let a = ImageSet::new(Array3::from_shape_fn((5, 3, 3), |(n, i, j)| ((n + i * j) % 4) as f64 / 4.0), None).unwrap();
        let b = ImageSet::new(Array3::from_shape_fn((7, 3, 3), |(n, i, j)| ((n * i + j) % 3) as f64 / 3.0), None).unwrap();
        let m1 = make_mixture_dataset(&a, &b, 1000, 42).unwrap();
        let m2 = make_mixture_dataset(&a, &b, 1000, 42).unwrap();
        assert_eq!(m1, m2);
        let m3 = make_mixture_dataset(&a, &b, 1000, 43).unwrap();
        assert_ne!(m1.provenance, m3.provenance);
        for (i, p) in m1.provenance.iter().enumerate() {
            let expect = &a.image(p.a) + &b.image(p.b);
            assert_eq!(m1.mixtures.index_axis(Axis(0), i), expect);
        }
    }

    #[test]
    fn derived_set_rebuilds_mixtures() {
        let dir = tempfile::tempdir().unwrap();
        let a = ImageSet::new(Array3::from_shape_fn((4, 2, 2), |(n, i, _)| ((n + i) % 2) as f32), None).unwrap();
        let b = ImageSet::new(Array3::from_shape_fn((3, 2, 2), |(n, _, j)| ((n * j) % 2) as f32), None).unwrap();
        let m = make_mixture_dataset(&a, &b, 9, 5).unwrap();
        save_derived_set(dir.path(), &a, Some(&b), &m.provenance).unwrap();
        let back = load_derived_mixtures::<f32>(dir.path()).unwrap();
        assert_eq!(back, m);
    }
}
