//! Differentiable building blocks with explicit backward passes.
//!
//! Feature maps are `(batch, channels, height, width)`. Convolutions use
//! "same" padding and lower to a single GEMM over the whole batch.

use ndarray::{Array, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis, Dimension, Zip};

use super::TensorMap;
use crate::Scalar;

/// Geometry of a strided "same"-padded convolution from a large input
/// plane to a smaller output plane (and of its transpose, reversed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn same(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
        Self {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h,
            out_w,
        }
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Input coordinate touched by output `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

/// Unfolds patches into a `(C·k·k, N·out_h·out_w)` matrix.
pub fn im2col<T: Scalar>(x: ArrayView4<'_, T>, g: &ConvGeom) -> Array2<T> {
    let n = x.len_of(Axis(0));
    let cols = n * g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.patch_len() * cols];
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let plane = x.index_axis(Axis(0), b);
                    let plane = plane.index_axis(Axis(0), c);
                    for oy in 0..g.out_h {
                        let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else { continue };
                        let base = (b * g.out_h + oy) * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) {
                                dst[base + ox] = plane[[iy, ix]];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.patch_len(), cols), out).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters patch columns back onto `(N, C, H, W)`.
pub fn col2im<T: Scalar>(cols: ArrayView2<'_, T>, g: &ConvGeom, n: usize) -> Array4<T> {
    let mut out = Array4::zeros((n, g.channels, g.in_h, g.in_w));
    let k = g.kernel;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row((c * k + ky) * k + kx);
                for b in 0..n {
                    let mut plane = out.index_axis_mut(Axis(0), b);
                    let mut plane = plane.index_axis_mut(Axis(0), c);
                    for oy in 0..g.out_h {
                        let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else { continue };
                        let base = (b * g.out_h + oy) * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) {
                                plane[[iy, ix]] += row[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(N, C, H, W)` to `(C, N·H·W)`.
fn channels_first<T: Scalar>(x: ArrayView4<'_, T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    x.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

/// Row-major copy only when needed; matrix products may come back
/// column-major and reshapes require row-major storage.
pub(crate) fn standard<T: Scalar, D: Dimension>(a: Array<T, D>) -> Array<T, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// `(C, N·H·W)` to `(N, C, H, W)`.
fn batch_first<T: Scalar>(m: Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    standard(m).into_shape_with_order((c, n, h, w))
        .expect("contiguous")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

pub struct DenseCache<T> {
    input: Array2<T>,
}

/// `x · W + b` with `W` of shape `(in, out)`.
pub fn dense_forward<T: Scalar>(
    x: ArrayView2<'_, T>,
    w: ArrayView2<'_, T>,
    b: ArrayView1<'_, T>,
) -> (Array2<T>, DenseCache<T>) {
    let y = standard(x.dot(&w)) + &b;
    (y, DenseCache { input: x.to_owned() })
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    w: ArrayView2<'_, T>,
    dy: ArrayView2<'_, T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let dw = standard(cache.input.t().dot(&dy));
    let db = dy.sum_axis(Axis(0));
    let dx = standard(dy.dot(&w.t()));
    (dx, dw, db)
}

/// Input gradient only, for callers that hold the weights fixed.
pub fn dense_backward_input<T: Scalar>(w: ArrayView2<'_, T>, dy: ArrayView2<'_, T>) -> Array2<T> {
    standard(dy.dot(&w.t()))
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    geom: ConvGeom,
    batch: usize,
}

/// Strided convolution; `w` is `(out_c, in_c·k·k)`.
pub fn conv2d_forward<T: Scalar>(
    x: ArrayView4<'_, T>,
    w: ArrayView2<'_, T>,
    b: ArrayView1<'_, T>,
    kernel: usize,
    stride: usize,
) -> (Array4<T>, ConvCache<T>) {
    let (n, c, h, wd) = x.dim();
    let geom = ConvGeom::same(c, h, wd, kernel, stride);
    let cols = im2col(x, &geom);
    let mut y = w.dot(&cols);
    y += &b.insert_axis(Axis(1));
    let y = batch_first(y, n, geom.out_h, geom.out_w);
    (y, ConvCache { cols, geom, batch: n })
}

/// Returns `(dx, dW, db)`.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    w: ArrayView2<'_, T>,
    dy: ArrayView4<'_, T>,
) -> (Array4<T>, Array2<T>, Array1<T>) {
    let dy = channels_first(dy);
    let dw = standard(dy.dot(&cache.cols.t()));
    let db = dy.sum_axis(Axis(1));
    let dcols = w.t().dot(&dy);
    let dx = col2im(dcols.view(), &cache.geom, cache.batch);
    (dx, dw, db)
}

pub struct ConvTransposeCache<T> {
    input: Array2<T>,
    geom: ConvGeom,
    in_shape: (usize, usize, usize, usize),
}

/// Transposed convolution upsampling by `stride`; `w` is `(in_c, out_c·k·k)`.
/// Exactly the adjoint of [`conv2d_forward`] with the same geometry.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: ArrayView4<'_, T>,
    w: ArrayView2<'_, T>,
    b: ArrayView1<'_, T>,
    kernel: usize,
    stride: usize,
) -> (Array4<T>, ConvTransposeCache<T>) {
    let (n, c_in, h, wd) = x.dim();
    let out_c = b.len();
    let geom = ConvGeom::same(out_c, h * stride, wd * stride, kernel, stride);
    debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
    let input = channels_first(x);
    debug_assert_eq!(input.nrows(), c_in);
    let cols = w.t().dot(&input);
    let mut y = col2im(cols.view(), &geom, n);
    for mut sample in y.axis_iter_mut(Axis(0)) {
        for (mut plane, &bias) in sample.axis_iter_mut(Axis(0)).zip(b.iter()) {
            plane += bias;
        }
    }
    (
        y,
        ConvTransposeCache {
            input,
            geom,
            in_shape: (n, c_in, h, wd),
        },
    )
}

/// Returns `(dx, dW, db)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    cache: &ConvTransposeCache<T>,
    w: ArrayView2<'_, T>,
    dy: ArrayView4<'_, T>,
) -> (Array4<T>, Array2<T>, Array1<T>) {
    let (n, _, h, wd) = cache.in_shape;
    let dcols = im2col(dy, &cache.geom);
    let dx = batch_first(w.dot(&dcols), n, h, wd);
    let dw = standard(cache.input.dot(&dcols.t()));
    let db = dy.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1));
    (dx, dw, db)
}

/// Input gradient only, for callers that hold the weights fixed.
pub fn conv_transpose2d_backward_input<T: Scalar>(
    cache: &ConvTransposeCache<T>,
    w: ArrayView2<'_, T>,
    dy: ArrayView4<'_, T>,
) -> Array4<T> {
    let (n, _, h, wd) = cache.in_shape;
    batch_first(w.dot(&im2col(dy, &cache.geom)), n, h, wd)
}

pub struct BatchNormCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    gamma: Array1<T>,
}

/// Per-channel statistics of one training batch.
pub struct BatchStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

/// Training-mode batch normalization over `(N, H, W)` per channel.
pub fn batch_norm_train<T: Scalar>(
    x: ArrayView4<'_, T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    eps: T,
) -> (Array4<T>, BatchNormCache<T>, BatchStats<T>) {
    let (n, c, h, w) = x.dim();
    let count = T::from_usize(n * h * w).unwrap();
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ch in 0..c {
        let plane = x.index_axis(Axis(1), ch);
        let m = plane.sum() / count;
        let v = plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / count;
        mean[ch] = m;
        var[ch] = v;
    }
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = x.to_owned();
    for ch in 0..c {
        let (m, s) = (mean[ch], inv_std[ch]);
        xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|v| (v - m) * s);
    }
    let y = affine_channels(&xhat, gamma, beta);
    (
        y,
        BatchNormCache {
            xhat,
            inv_std,
            gamma: gamma.to_owned(),
        },
        BatchStats { mean, var },
    )
}

/// Inference-mode batch normalization with fixed statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: ArrayView4<'_, T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    mean: ArrayView1<'_, T>,
    var: ArrayView1<'_, T>,
    eps: T,
) -> Array4<T> {
    let mut y = x.to_owned();
    for ch in 0..y.len_of(Axis(1)) {
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * scale + shift);
    }
    y
}

fn affine_channels<T: Scalar>(x: &Array4<T>, gamma: ArrayView1<'_, T>, beta: ArrayView1<'_, T>) -> Array4<T> {
    let mut y = x.clone();
    for ch in 0..y.len_of(Axis(1)) {
        let (g, b) = (gamma[ch], beta[ch]);
        y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * g + b);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    dy: ArrayView4<'_, T>,
) -> (Array4<T>, Array1<T>, Array1<T>) {
    let (n, c, h, w) = dy.dim();
    let count = T::from_usize(n * h * w).unwrap();
    let mut dx = Array4::zeros(dy.raw_dim());
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        let sum_dy = dyc.sum();
        let sum_dy_xh = Zip::from(&dyc).and(&xh).fold(T::zero(), |acc, &d, &x| acc + d * x);
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = cache.gamma[ch] * cache.inv_std[ch] / count;
        Zip::from(dx.index_axis_mut(Axis(1), ch))
            .and(&dyc)
            .and(&xh)
            .for_each(|o, &d, &x| *o = k * (count * d - sum_dy - x * sum_dy_xh));
    }
    (dx, dgamma, dbeta)
}

/// Batch-norm behaviour during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics (returned for running-stat updates).
    Train,
    /// Normalize with running statistics; deterministic per image.
    Eval,
}

/// Either-mode batch-norm cache.
pub enum NormCache<T> {
    Train(BatchNormCache<T>),
    Eval { scale: Array1<T>, xhat: Array4<T> },
}

/// Batch norm of the layer prefixed `name` (e.g. `bn2`) in the given mode.
pub fn batch_norm<T: Scalar>(
    x: ArrayView4<'_, T>,
    p: &TensorMap<T>,
    name: &str,
    eps: T,
    mode: Mode,
) -> (Array4<T>, NormCache<T>, Option<BatchStats<T>>) {
    let gamma = p.vector(&format!("{name}.gamma"));
    let beta = p.vector(&format!("{name}.beta"));
    match mode {
        Mode::Train => {
            let (y, cache, stats) = batch_norm_train(x, gamma, beta, eps);
            (y, NormCache::Train(cache), Some(stats))
        }
        Mode::Eval => {
            let mean = p.vector(&format!("{name}.running_mean"));
            let var = p.vector(&format!("{name}.running_var"));
            let ones = Array1::ones(gamma.len());
            let zeros = Array1::zeros(gamma.len());
            let xhat = batch_norm_eval(x, ones.view(), zeros.view(), mean, var, eps);
            let y = affine_channels(&xhat, gamma, beta);
            let scale = Array1::from_shape_fn(gamma.len(), |c| gamma[c] / (var[c] + eps).sqrt());
            (y, NormCache::Eval { scale, xhat }, None)
        }
    }
}

/// Returns `(dx, dgamma, dbeta)` for either mode.
pub fn norm_backward<T: Scalar>(cache: &NormCache<T>, dy: ArrayView4<'_, T>) -> (Array4<T>, Array1<T>, Array1<T>) {
    match cache {
        NormCache::Train(bn) => batch_norm_backward(bn, dy),
        NormCache::Eval { scale, xhat } => {
            let c = scale.len();
            let mut dx = dy.to_owned();
            let mut dg = Array1::zeros(c);
            let mut db = Array1::zeros(c);
            for ch in 0..c {
                let dyc = dy.index_axis(Axis(1), ch);
                dg[ch] = Zip::from(&dyc).and(xhat.index_axis(Axis(1), ch)).fold(T::zero(), |a, &d, &x| a + d * x);
                db[ch] = dyc.sum();
                let s = scale[ch];
                dx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * s);
            }
            (dx, dg, db)
        }
    }
}

/// Input gradient only, for either mode.
pub fn norm_backward_input<T: Scalar>(cache: &NormCache<T>, dy: ArrayView4<'_, T>) -> Array4<T> {
    match cache {
        NormCache::Eval { scale, .. } => {
            let mut dx = dy.to_owned();
            for (ch, &s) in scale.iter().enumerate() {
                dx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * s);
            }
            dx
        }
        train => norm_backward(train, dy).0,
    }
}

/// Exponential moving average of batch statistics into `name`'s running buffers.
pub fn update_running<T: Scalar>(p: &mut TensorMap<T>, name: &str, stats: &BatchStats<T>, momentum: f64) {
    let m = T::lit(momentum);
    let one_m = T::one() - m;
    let mean = p.get_mut(&format!("{name}.running_mean"));
    mean.zip_mut_with(&stats.mean.view().into_dyn(), |r, &b| *r = m * *r + one_m * b);
    let var = p.get_mut(&format!("{name}.running_var"));
    var.zip_mut_with(&stats.var.view().into_dyn(), |r, &b| *r = m * *r + one_m * b);
}

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
}

/// 2×2 max pooling with stride 2 (odd trailing rows/cols dropped).
pub fn max_pool2_forward<T: Scalar>(x: ArrayView4<'_, T>) -> (Array4<T>, MaxPoolCache) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = (2 * oy + dy, 2 * ox + dx);
                        if x[[b, ch, cand.0, cand.1]] > x[[b, ch, best.0, best.1]] {
                            best = cand;
                        }
                    }
                    y[[b, ch, oy, ox]] = x[[b, ch, best.0, best.1]];
                    argmax.push(best.0 * w + best.1);
                }
            }
        }
    }
    (y, MaxPoolCache { argmax, in_dim: (n, c, h, w) })
}

pub fn max_pool2_backward<T: Scalar>(cache: &MaxPoolCache, dy: ArrayView4<'_, T>) -> Array4<T> {
    let (n, c, h, w) = cache.in_dim;
    let mut dx = Array4::zeros((n, c, h, w));
    for (((b, ch, _, _), &d), &pos) in dy.indexed_iter().zip(&cache.argmax) {
        dx[[b, ch, pos / w, pos % w]] += d;
    }
    dx
}

pub fn relu<T: Scalar>(v: T) -> T {
    v.max(T::zero())
}

pub fn relu_grad<T: Scalar>(pre: T) -> T {
    if pre > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn leaky_relu<T: Scalar>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

pub fn leaky_relu_grad<T: Scalar>(pre: T, slope: T) -> T {
    if pre > T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(v)`, stable for large |v|.
pub fn log_sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}
