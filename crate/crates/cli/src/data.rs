//! Builds the datasets a subcommand needs from the `[data]` section.

use std::path::Path;

use demixgan::corruption::{rotate, CorruptionSpec};
use demixgan::data::{load_labeled, make_mixture_dataset, ImageSet, Pairing};
use demixgan::rng;
use ndarray::{Array3, Axis};

use crate::config::{Component, DataConfig};
use crate::CliError;

pub type Images = ImageSet<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }

    fn mnist_prefix(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "t10k",
        }
    }
}

/// Labeled MNIST split from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Images, CliError> {
    let p = split.mnist_prefix();
    let images = dir.join(format!("{p}-images-idx3-ubyte"));
    let labels = dir.join(format!("{p}-labels-idx1-ubyte"));
    if !images.exists() {
        return Err(CliError::ConfigInvalid(format!(
            "MNIST files not found in {} (set data.mnist_dir or MNIST_DIR)",
            dir.display()
        )));
    }
    Ok(load_labeled(&images, Some(&labels))?)
}

/// `n` images of one component. `tag` separates the streams of the two
/// components.
pub fn component_images(
    data: &DataConfig,
    component: &Component,
    split: Split,
    n: usize,
    seed: u64,
    tag: &str,
) -> Result<Images, CliError> {
    let name = format!("{}-{tag}", split.name());
    if let Some(source) = component.synthetic() {
        return Ok(source.generate(n, data.shape, seed, &name)?);
    }
    let Component::Mnist { classes } = component else {
        unreachable!("non-synthetic components are MNIST")
    };
    if data.shape != (28, 28) {
        return Err(CliError::ConfigInvalid("data.shape must be [28, 28] for MNIST components".into()));
    }
    let mut set = load_mnist(&data.mnist_dir(), split)?;
    if !classes.is_empty() {
        set = set.filter_classes(classes);
    }
    if set.len() < n {
        return Err(CliError::ConfigInvalid(format!(
            "component `{tag}` has {} {} images, {n} requested",
            set.len(),
            split.name()
        )));
    }
    // A seeded subset so different seeds see different images.
    let mut idx: Vec<usize> = (0..set.len()).collect();
    use rand::seq::SliceRandom;
    idx.shuffle(&mut rng::stream(seed, &name));
    idx.truncate(n);
    Ok(set.select(&idx))
}

/// Adds one fresh corruption draw to each image.
pub fn corrupt(clean: &Array3<f32>, spec: &CorruptionSpec, seed: u64, stream: &str) -> Result<(Array3<f32>, Array3<f32>), CliError> {
    let (n, h, w) = clean.dim();
    let mut r = rng::stream(seed, stream);
    let mut noise = Array3::zeros((n, h, w));
    for mut slot in noise.axis_iter_mut(Axis(0)) {
        slot.assign(&spec.sample::<f32, _>((h, w), &mut r)?);
    }
    Ok((clean + &noise, noise))
}

/// Training mixtures `a + b`, with `b` optionally rotated.
pub fn train_mixtures(data: &DataConfig, seed: u64, rotation: u32) -> Result<Array3<f32>, CliError> {
    let n = data.train_count;
    let a = component_images(data, &data.a, Split::Train, n, seed, "a")?;
    let mut b = component_images(data, &data.b, Split::Train, n, seed, "b")?;
    if rotation != 0 {
        b = rotate_all(&b, rotation)?;
    }
    Ok(make_mixture_dataset(&a, &b, n, seed)?.mixtures)
}

pub fn rotate_all(set: &Images, degrees: u32) -> Result<Images, CliError> {
    let mut images = set.images.clone();
    for mut slot in images.axis_iter_mut(Axis(0)) {
        let turned = rotate(slot.view(), degrees)?;
        slot.assign(&turned);
    }
    Ok(ImageSet {
        images,
        labels: set.labels.clone(),
    })
}

/// Held-out pairs `(a_i, b_i)` and their sums.
pub struct TestPairs {
    pub a: Images,
    pub b: Images,
    pub mixtures: Array3<f32>,
    pub pairing: Vec<Pairing>,
}

pub fn test_pairs(data: &DataConfig, seed: u64) -> Result<TestPairs, CliError> {
    let n = data.test_count;
    let a = component_images(data, &data.a, Split::Test, n, seed, "a")?;
    let b = component_images(data, &data.b, Split::Test, n, seed, "b")?;
    let mixtures = &a.images + &b.images;
    let pairing = (0..n).map(|i| Pairing { a: i, b: i, seed }).collect();
    Ok(TestPairs { a, b, mixtures, pairing })
}
