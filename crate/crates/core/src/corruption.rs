//! Structured corruption components: random sinusoid traces and random
//! full-length lines, plus superposition and the rotation transform.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{rng, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum CorruptionError {
    #[error("{requested} {orientation} lines requested but the image has only {available}")]
    TooManyLines {
        orientation: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("rotation by {0} degrees is not supported (use 0, 10, 30, 60 or 90)")]
    UnsupportedAngle(u32),
    #[error("rotation needs a square image, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("invalid {0} range")]
    BadRange(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Sine,
    Lines,
}

/// Parameters of one corruption family.
///
/// For the sine kind `lc` is the number of curves. For the lines kind the
/// per-orientation counts are explicit; [`CorruptionSpec::lines`] sets
/// both from a single level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub lc: usize,
    pub n_vertical: usize,
    pub n_horizontal: usize,
    /// Fraction multiplying `h/4`.
    pub amplitude_range: (f64, f64),
    /// Cycles per image width.
    pub frequency_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self::sine(1)
    }
}

impl CorruptionSpec {
    pub fn sine(lc: usize) -> Self {
        Self {
            kind: CorruptionKind::Sine,
            lc,
            n_vertical: 0,
            n_horizontal: 0,
            amplitude_range: (0.5, 1.0),
            frequency_range: (1.0, 4.0),
            phase_range: (0.0, 2.0 * PI),
            seed: 0,
        }
    }

    pub fn lines(lc: usize) -> Self {
        Self {
            kind: CorruptionKind::Lines,
            lc,
            n_vertical: lc,
            n_horizontal: lc,
            ..Self::sine(0)
        }
    }

    /// Lines with independent per-orientation counts.
    pub fn lines_with(n_vertical: usize, n_horizontal: usize) -> Self {
        Self {
            lc: n_vertical.max(n_horizontal),
            n_vertical,
            n_horizontal,
            ..Self::lines(0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        let check = |name, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(CorruptionError::BadRange(name))
            }
        };
        check("amplitude", self.amplitude_range)?;
        check("frequency", self.frequency_range)?;
        check("phase", self.phase_range)
    }

    /// Draws one corruption image of the given shape.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(
        &self,
        shape: (usize, usize),
        rng: &mut R,
    ) -> Result<Array2<T>, CorruptionError> {
        match self.kind {
            CorruptionKind::Sine => Ok(gen_sine_corruption(shape, self, rng)),
            CorruptionKind::Lines => gen_line_corruption(shape, self, rng),
        }
    }

    /// Draws `n` images from the stream named `name` under this spec's seed.
    pub fn sample_many<T: Scalar>(
        &self,
        shape: (usize, usize),
        n: usize,
        name: &str,
    ) -> Result<Vec<Array2<T>>, CorruptionError> {
        let mut rng = rng::stream(self.seed, name);
        (0..n).map(|_| self.sample(shape, &mut rng)).collect()
    }
}

fn draw(rng: &mut (impl Rng + ?Sized), (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Renders `spec.lc` one-pixel-thick sinusoid traces spanning the full width.
pub fn gen_sine_corruption<T: Scalar, R: Rng + ?Sized>(
    (h, w): (usize, usize),
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Array2<T> {
    let mut img = Array2::zeros((h, w));
    if h == 0 || w == 0 {
        return img;
    }
    for _ in 0..spec.lc {
        let amp = draw(rng, spec.amplitude_range) * h as f64 / 4.0;
        let freq = draw(rng, spec.frequency_range);
        let phase = draw(rng, spec.phase_range);
        let center = rng.random_range(0..h) as f64;
        for x in 0..w {
            let y = center + amp * (2.0 * PI * freq * x as f64 / w as f64 + phase).sin();
            let row = y.round().clamp(0.0, (h - 1) as f64) as usize;
            img[[row, x]] = T::one();
        }
    }
    img
}

/// Sets `n_vertical` distinct columns and `n_horizontal` distinct rows to 1.
pub fn gen_line_corruption<T: Scalar, R: Rng + ?Sized>(
    (h, w): (usize, usize),
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<Array2<T>, CorruptionError> {
    if spec.n_vertical > w {
        return Err(CorruptionError::TooManyLines {
            orientation: "vertical",
            requested: spec.n_vertical,
            available: w,
        });
    }
    if spec.n_horizontal > h {
        return Err(CorruptionError::TooManyLines {
            orientation: "horizontal",
            requested: spec.n_horizontal,
            available: h,
        });
    }
    let mut img = Array2::zeros((h, w));
    for c in sample(rng, w, spec.n_vertical) {
        img.column_mut(c).fill(T::one());
    }
    for r in sample(rng, h, spec.n_horizontal) {
        img.row_mut(r).fill(T::one());
    }
    Ok(img)
}

/// Elementwise sum `x + n`, unclamped.
pub fn superpose<T: Scalar>(
    x: ArrayView2<'_, T>,
    n: ArrayView2<'_, T>,
) -> Result<Array2<T>, CorruptionError> {
    if x.dim() != n.dim() {
        return Err(CorruptionError::ShapeMismatch(x.dim(), n.dim()));
    }
    Ok(&x + &n)
}

pub const ROTATION_ANGLES: [u32; 5] = [0, 10, 30, 60, 90];

/// Counterclockwise rotation about the image center.
///
/// 0° and 90° are exact index permutations; the other supported angles
/// use bilinear interpolation with zero padding outside the source.
pub fn rotate<T: Scalar>(img: ArrayView2<'_, T>, degrees: u32) -> Result<Array2<T>, CorruptionError> {
    let (h, w) = img.dim();
    if h != w {
        return Err(CorruptionError::NotSquare((h, w)));
    }
    match degrees {
        0 => Ok(img.to_owned()),
        90 => Ok(Array2::from_shape_fn((h, w), |(r, c)| img[[c, w - 1 - r]])),
        10 | 30 | 60 => Ok(rotate_bilinear(img, (degrees as f64).to_radians())),
        other => Err(CorruptionError::UnsupportedAngle(other)),
    }
}

fn rotate_bilinear<T: Scalar>(img: ArrayView2<'_, T>, theta: f64) -> Array2<T> {
    let (h, w) = img.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (s, c) = theta.sin_cos();
    let at = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= h as isize || col >= w as isize {
            0.0
        } else {
            img[[r as usize, col as usize]].as_f64()
        }
    };
    Array2::from_shape_fn((h, w), |(r, col)| {
        // inverse map: source = R(-theta) * destination, y axis pointing up
        let x = col as f64 - cx;
        let y = cy - r as f64;
        let xs = c * x + s * y;
        let ys = -s * x + c * y;
        let src_c = cx + xs;
        let src_r = cy - ys;
        let r0 = src_r.floor();
        let c0 = src_c.floor();
        let fr = src_r - r0;
        let fc = src_c - c0;
        let (r0, c0) = (r0 as isize, c0 as isize);
        let v = at(r0, c0) * (1.0 - fr) * (1.0 - fc)
            + at(r0, c0 + 1) * (1.0 - fr) * fc
            + at(r0 + 1, c0) * fr * (1.0 - fc)
            + at(r0 + 1, c0 + 1) * fr * fc;
        T::lit(v)
    })
}
