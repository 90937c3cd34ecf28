use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use ndarray::{Array2, ArrayView3, Axis};

use super::EvalError;
use crate::data::idx::quantize;
use crate::io::write_atomic;
use crate::Scalar;

pub const GRID_SIDE: usize = 8;

/// Lays images out row-major on a `rows × cols` canvas; values are clamped
/// to `[0,1]` and quantized to 8 bits.
pub fn montage<T: Scalar>(images: ArrayView3<'_, T>, rows: usize, cols: usize) -> Result<GrayImage, EvalError> {
    let (n, h, w) = images.dim();
    if n != rows * cols {
        return Err(EvalError::BadCount {
            expected: rows * cols,
            actual: n,
        });
    }
    let mut canvas = GrayImage::new((cols * w) as u32, (rows * h) as u32);
    for (i, img) in images.axis_iter(Axis(0)).enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        for ((r, c), &v) in img.indexed_iter() {
            canvas.put_pixel((gc * w + c) as u32, (gr * h + r) as u32, image::Luma([quantize(v)]));
        }
    }
    Ok(canvas)
}

pub fn png_bytes(img: &GrayImage) -> Result<Vec<u8>, EvalError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes an 8×8 PNG montage of exactly 64 images.
pub fn write_sample_grid<T: Scalar>(images: ArrayView3<'_, T>, path: &Path) -> Result<(), EvalError> {
    write_montage(images, GRID_SIDE, GRID_SIDE, path)
}

pub fn write_montage<T: Scalar>(images: ArrayView3<'_, T>, rows: usize, cols: usize, path: &Path) -> Result<(), EvalError> {
    let bytes = png_bytes(&montage(images, rows, cols)?)?;
    write_atomic(path, &bytes).map_err(|e| EvalError::Io(path.display().to_string(), e))
}

/// Reads an 8-bit grayscale image back as `[0,1]` values.
pub fn read_gray(path: &Path) -> Result<Array2<f64>, EvalError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        img.get_pixel(c as u32, r as u32)[0] as f64 / 255.0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn zero_images_give_black_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_sample_grid(Array3::<f32>::zeros((64, 4, 5)).view(), &p).unwrap();
        let back = read_gray(&p).unwrap();
        assert_eq!(back.dim(), (32, 40));
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_sample_grid(Array3::<f32>::zeros((63, 2, 2)).view(), &dir.path().join("x.png")).unwrap_err();
        assert!(matches!(err, EvalError::BadCount { expected: 64, actual: 63 }));
    }

    #[test]
    fn placement_is_order_sensitive_and_quantization_bounded() {
        let imgs = Array3::from_shape_fn((64, 3, 3), |(n, r, c)| ((n * 9 + r * 3 + c) % 17) as f64 / 12.0 - 0.2);
        let mut rev = imgs.clone();
        rev.invert_axis(Axis(0));
        let a = png_bytes(&montage(imgs.view(), 8, 8).unwrap()).unwrap();
        let b = png_bytes(&montage(rev.view(), 8, 8).unwrap()).unwrap();
        assert_ne!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        write_sample_grid(imgs.view(), &p).unwrap();
        let back = read_gray(&p).unwrap();
        for n in 0..64 {
            for r in 0..3 {
                for c in 0..3 {
                    let want = imgs[[n, r, c]].clamp(0.0, 1.0);
                    let got = back[[(n / 8) * 3 + r, (n % 8) * 3 + c]];
                    assert!((want - got).abs() <= 1.0 / 255.0);
                }
            }
        }
    }
}
