//! Small synthetic component datasets used by smoke runs and tests.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::ImageSet;
use crate::corruption::{CorruptionError, CorruptionSpec};
use crate::{rng, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SyntheticSource {
    /// Images made of `count` distinct full-width rows.
    HorizontalLines { count: usize },
    /// Images made of `count` distinct full-height columns.
    VerticalLines { count: usize },
    /// Images made of `count` sinusoid traces with default ranges.
    Sines { count: usize },
}

impl SyntheticSource {
    fn spec(&self) -> CorruptionSpec {
        match *self {
            Self::HorizontalLines { count } => CorruptionSpec::lines_with(0, count),
            Self::VerticalLines { count } => CorruptionSpec::lines_with(count, 0),
            Self::Sines { count } => CorruptionSpec::sine(count),
        }
    }

    /// Generates `n` images from the stream `(seed, name)`.
    pub fn generate<T: Scalar>(
        &self,
        n: usize,
        shape: (usize, usize),
        seed: u64,
        name: &str,
    ) -> Result<ImageSet<T>, CorruptionError> {
        let spec = self.spec();
        let mut rng = rng::stream(seed, name);
        let mut images = Array3::zeros((n, shape.0, shape.1));
        for mut slot in images.axis_iter_mut(Axis(0)) {
            slot.assign(&spec.sample::<T, _>(shape, &mut rng)?);
        }
        Ok(ImageSet {
            images,
            labels: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_lines_have_flat_rows() {
        let set: ImageSet<f32> = SyntheticSource::HorizontalLines { count: 2 }
            .generate(10, (16, 16), 1, "h")
            .unwrap();
        for i in 0..set.len() {
            let img = set.image(i);
            let full_rows = img.rows().into_iter().filter(|r| r.iter().all(|&v| v == 1.0)).count();
            assert_eq!(full_rows, 2);
            assert_eq!(img.sum(), 32.0);
        }
    }
}
