//! Orientation detector for line-image components.

use ndarray::{ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Share of row-sum variance required to call an image horizontal (and of
/// column-sum variance to call it vertical).
pub const DOMINANCE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
    /// Blank, or no clear concentration of mass along either axis.
    Neither,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Compares how concentrated the row sums and the column sums are.
///
/// A horizontal line makes one row sum large and leaves the column sums
/// flat, so its row-sum variance dominates. Images with less total mass than
/// half a line are blank.
pub fn orientation<T: Scalar>(img: ArrayView2<'_, T>) -> Orientation {
    let (h, w) = img.dim();
    let total: f64 = img.iter().map(|v| v.as_f64()).sum();
    if total < 0.5 * h.min(w) as f64 {
        return Orientation::Neither;
    }
    let rows: Vec<f64> = img.sum_axis(Axis(1)).iter().map(|v| v.as_f64()).collect();
    let cols: Vec<f64> = img.sum_axis(Axis(0)).iter().map(|v| v.as_f64()).collect();
    let (vr, vc) = (variance(&rows), variance(&cols));
    if vr + vc <= 0.0 {
        return Orientation::Neither;
    }
    let share = vr / (vr + vc);
    if share >= DOMINANCE {
        Orientation::Horizontal
    } else if share <= 1.0 - DOMINANCE {
        Orientation::Vertical
    } else {
        Orientation::Neither
    }
}

/// Fractions of a batch detected as horizontal and as vertical.
pub fn orientation_fractions<T: Scalar>(images: ArrayView3<'_, T>) -> (f64, f64) {
    let n = images.len_of(Axis(0)).max(1) as f64;
    let (mut h, mut v) = (0usize, 0usize);
    for img in images.outer_iter() {
        match orientation(img) {
            Orientation::Horizontal => h += 1,
            Orientation::Vertical => v += 1,
            Orientation::Neither => {}
        }
    }
    (h as f64 / n, v as f64 / n)
}

/// How cleanly two generators split into the two orientations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    /// `(horizontal, vertical)` fractions of generator 1.
    pub g1: (f64, f64),
    pub g2: (f64, f64),
    /// Best over the two assignments of `min(share of G1 in its
    /// orientation, share of G2 in the other)`.
    pub purity: f64,
}

pub fn component_purity<T: Scalar>(g1: ArrayView3<'_, T>, g2: ArrayView3<'_, T>) -> Purity {
    let a = orientation_fractions(g1);
    let b = orientation_fractions(g2);
    Purity {
        g1: a,
        g2: b,
        purity: a.0.min(b.1).max(a.1.min(b.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array2, Array3};

    #[test]
    fn lines_blanks_and_crosses() {
        let mut h = Array2::<f64>::zeros((8, 8));
        h.row_mut(2).fill(1.0);
        assert_eq!(orientation(h.view()), Orientation::Horizontal);
        assert_eq!(orientation(h.t()), Orientation::Vertical);
        assert_eq!(orientation(Array2::<f64>::zeros((8, 8)).view()), Orientation::Neither);
        assert_eq!(orientation(Array2::<f64>::from_elem((8, 8), 0.5).view()), Orientation::Neither);
        let cross = &h + &h.t();
        assert_eq!(orientation(cross.view()), Orientation::Neither);
    }

    #[test]
    fn purity_of_perfect_and_blank_splits() {
        let mut g1 = Array3::<f32>::zeros((4, 6, 6));
        let mut g2 = Array3::<f32>::zeros((4, 6, 6));
        for k in 0..4 {
            g1.slice_mut(s![k, k, ..]).fill(1.0);
            g2.slice_mut(s![k, .., k]).fill(1.0);
        }
        assert_eq!(component_purity(g1.view(), g2.view()).purity, 1.0);
        assert_eq!(component_purity(g2.view(), g1.view()).purity, 1.0);
        assert_eq!(component_purity(g1.view(), g1.view()).purity, 0.0);
        let blank = Array3::<f32>::zeros((4, 6, 6));
        assert_eq!(component_purity(g1.view(), blank.view()).purity, 0.0);
    }
}
