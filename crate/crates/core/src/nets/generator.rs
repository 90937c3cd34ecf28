//! Two fully-connected layers with batch norm and ReLU, a reshape, and one
//! stride-2 transposed convolution with sigmoid output (not normalized).

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Ix4};

use super::layers::{self, BatchStats, ConvTransposeCache, DenseCache, Mode, NormCache};
use super::{zeros_tensor, ArchitectureDescriptor, NetError, NetworkParams, Role, TensorMap};
use crate::{rng, Scalar};

pub const INIT_STD: f64 = 0.02;

/// Normal(0, 0.02²) weights, zero biases, identity batch norm.
pub fn init_generator<T: Scalar>(
    arch: &ArchitectureDescriptor,
    seed: u64,
) -> Result<NetworkParams<T>, NetError> {
    arch.validate()?;
    let mut r = rng::stream(seed, "init-generator");
    let mut tensors = TensorMap::new();
    for (name, shape) in arch.generator_shapes() {
        let mut t = zeros_tensor::<T>(&shape);
        if name.ends_with("weight") {
            t.mapv_inplace(|_| rng::normal(&mut r, INIT_STD));
        } else if name.ends_with("gamma") || name.ends_with("running_var") {
            t.fill(T::one());
        }
        tensors.insert(name, t);
    }
    Ok(NetworkParams {
        arch: arch.clone(),
        role: Role::Generator,
        seed,
        tensors,
    })
}

/// Intermediate values needed by [`generator_backward`].
pub struct GenCache<T> {
    fc1: DenseCache<T>,
    bn1: NormCache<T>,
    normed1: Array2<T>,
    fc2: DenseCache<T>,
    bn2: NormCache<T>,
    normed2: Array2<T>,
    tconv: ConvTransposeCache<T>,
    out: Array3<T>,
    /// Batch statistics of `bn1` and `bn2` (train mode only).
    pub stats: Option<[BatchStats<T>; 2]>,
}

/// Batch norm over the features of a `(batch, features)` matrix.
fn norm_features<T: Scalar>(
    x: Array2<T>,
    p: &TensorMap<T>,
    name: &str,
    eps: T,
    mode: Mode,
) -> (Array2<T>, NormCache<T>, Option<BatchStats<T>>) {
    let (n, f) = x.dim();
    let x4 = x.into_shape_with_order((n, f, 1, 1)).expect("contiguous");
    let (y, cache, stats) = layers::batch_norm(x4.view(), p, name, eps, mode);
    (y.into_shape_with_order((n, f)).expect("contiguous"), cache, stats)
}

fn as_planes<T: Scalar>(d: &Array2<T>) -> Array4<T> {
    let (n, f) = d.dim();
    d.clone().into_shape_with_order((n, f, 1, 1)).expect("contiguous")
}

fn as_rows<T: Scalar>(d: Array4<T>) -> Array2<T> {
    let (n, f, _, _) = d.dim();
    d.into_shape_with_order((n, f)).expect("contiguous")
}

fn check_latent<T: Scalar>(params: &NetworkParams<T>, z: &ArrayView2<'_, T>) -> Result<(), NetError> {
    params.expect_role(Role::Generator)?;
    if z.ncols() != params.arch.latent_dim {
        return Err(NetError::DimMismatch {
            expected: format!("latent width {}", params.arch.latent_dim),
            actual: format!("{}", z.ncols()),
        });
    }
    Ok(())
}

/// Maps a `(batch, latent_dim)` matrix to `(batch, h, w)` images in (0,1),
/// normalizing with running statistics so each row is independent.
pub fn generator_forward<T: Scalar>(
    params: &NetworkParams<T>,
    z: ArrayView2<'_, T>,
) -> Result<Array3<T>, NetError> {
    generator_forward_cached(params, z, Mode::Eval).map(|(out, _)| out)
}

pub fn generator_forward_cached<T: Scalar>(
    params: &NetworkParams<T>,
    z: ArrayView2<'_, T>,
    mode: Mode,
) -> Result<(Array3<T>, GenCache<T>), NetError> {
    check_latent(params, &z)?;
    let arch = &params.arch;
    let p = &params.tensors;
    let n = z.nrows();
    let (ph, pw) = arch.gen_plane();
    let (h, w) = arch.image_shape;

    let eps = T::lit(arch.bn_eps);

    let (pre1, fc1) = layers::dense_forward(z, p.matrix("fc1.weight"), p.vector("fc1.bias"));
    let (normed1, bn1, s1) = norm_features(pre1, p, "bn1", eps, mode);
    let act1 = normed1.mapv(layers::relu);
    let (pre2, fc2) = layers::dense_forward(act1.view(), p.matrix("fc2.weight"), p.vector("fc2.bias"));
    let (normed2, bn2, s2) = norm_features(pre2, p, "bn2", eps, mode);
    let act2 = normed2
        .mapv(layers::relu)
        .into_shape_with_order((n, arch.gen_channels, ph, pw))
        .expect("fc2 width matches plane");
    let (logits, tconv) = layers::conv_transpose2d_forward(
        act2.view(),
        p.kernel_matrix("tconv.weight"),
        p.vector("tconv.bias"),
        arch.gen_kernel,
        2,
    );
    let out = logits
        .into_shape_with_order((n, h, w))
        .expect("single output channel")
        .mapv(layers::sigmoid);
    Ok((
        out.clone(),
        GenCache {
            fc1,
            bn1,
            normed1,
            fc2,
            bn2,
            normed2,
            tconv,
            out,
            stats: s1.zip(s2).map(|(a, b)| [a, b]),
        },
    ))
}

/// Backpropagates `d_out` (gradient w.r.t. the output images).
///
/// Returns the parameter gradients and the gradient w.r.t. the latent batch.
pub fn generator_backward<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &GenCache<T>,
    d_out: ArrayView3<'_, T>,
) -> (TensorMap<T>, Array2<T>) {
    let arch = &params.arch;
    let p = &params.tensors;
    let (n, h, w) = cache.out.dim();
    let (ph, pw) = arch.gen_plane();

    let d_logits = (&d_out * &cache.out.mapv(|s| s * (T::one() - s)))
        .into_shape_with_order((n, 1, h, w))
        .expect("contiguous")
        .into_dimensionality::<Ix4>()
        .expect("rank 4");
    let (d_act2, d_tw, d_tb) = layers::conv_transpose2d_backward(&cache.tconv, p.kernel_matrix("tconv.weight"), d_logits.view());
    let d_act2 = d_act2
        .into_shape_with_order((n, arch.gen_channels * ph * pw))
        .expect("contiguous");
    let d_normed2 = &d_act2 * &cache.normed2.mapv(layers::relu_grad);
    let (d_pre2, d_g2, d_be2) = layers::norm_backward(&cache.bn2, as_planes(&d_normed2).view());
    let (d_act1, d_w2, d_b2) = layers::dense_backward(&cache.fc2, p.matrix("fc2.weight"), as_rows(d_pre2).view());
    let d_normed1 = &d_act1 * &cache.normed1.mapv(layers::relu_grad);
    let (d_pre1, d_g1, d_be1) = layers::norm_backward(&cache.bn1, as_planes(&d_normed1).view());
    let (dz, d_w1, d_b1) = layers::dense_backward(&cache.fc1, p.matrix("fc1.weight"), as_rows(d_pre1).view());

    let mut grads = TensorMap::new();
    grads.insert("fc1.weight", d_w1.into_dyn());
    grads.insert("fc1.bias", d_b1.into_dyn());
    grads.insert("bn1.gamma", d_g1.into_dyn());
    grads.insert("bn1.beta", d_be1.into_dyn());
    grads.insert("fc2.weight", d_w2.into_dyn());
    grads.insert("fc2.bias", d_b2.into_dyn());
    grads.insert("bn2.gamma", d_g2.into_dyn());
    grads.insert("bn2.beta", d_be2.into_dyn());
    let k = arch.gen_kernel;
    grads.insert(
        "tconv.weight",
        d_tw.into_shape_with_order((arch.gen_channels, 1, k, k)).expect("kernel").into_dyn(),
    );
    grads.insert("tconv.bias", d_tb.into_dyn());
    (grads, dz)
}

/// Gradient w.r.t. the latent batch only (parameters held fixed).
pub fn generator_latent_grad<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &GenCache<T>,
    d_out: ArrayView3<'_, T>,
) -> Array2<T> {
    let arch = &params.arch;
    let p = &params.tensors;
    let (n, h, w) = cache.out.dim();
    let (ph, pw) = arch.gen_plane();
    let d_logits = (&d_out * &cache.out.mapv(|s| s * (T::one() - s)))
        .into_shape_with_order((n, 1, h, w))
        .expect("contiguous");
    let d_act2 = layers::conv_transpose2d_backward_input(&cache.tconv, p.kernel_matrix("tconv.weight"), d_logits.view())
        .into_shape_with_order((n, arch.gen_channels * ph * pw))
        .expect("contiguous");
    let d_normed2 = &d_act2 * &cache.normed2.mapv(layers::relu_grad);
    let d_pre2 = as_rows(layers::norm_backward_input(&cache.bn2, as_planes(&d_normed2).view()));
    let d_act1 = layers::dense_backward_input(p.matrix("fc2.weight"), d_pre2.view());
    let d_normed1 = &d_act1 * &cache.normed1.mapv(layers::relu_grad);
    let d_pre1 = as_rows(layers::norm_backward_input(&cache.bn1, as_planes(&d_normed1).view()));
    layers::dense_backward_input(p.matrix("fc1.weight"), d_pre1.view())
}

/// Folds the batch statistics of a train-mode pass into the running buffers.
pub fn update_generator_running_stats<T: Scalar>(params: &mut NetworkParams<T>, stats: &[BatchStats<T>; 2]) {
    let m = params.arch.bn_momentum;
    layers::update_running(&mut params.tensors, "bn1", &stats[0], m);
    layers::update_running(&mut params.tensors, "bn2", &stats[1], m);
}

/// Draws a `(n, latent_dim)` batch uniformly from `[-1, 1]`.
pub fn sample_latent<T: Scalar, R: rand::Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((n, dim), || rng::uniform(rng, -1.0, 1.0))
}

/// Stacks latent rows for a batch of size one.
pub fn single<T: Scalar>(z: &ndarray::Array1<T>) -> Array2<T> {
    z.view().insert_axis(Axis(0)).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchitectureDescriptor {
        ArchitectureDescriptor::custom((8, 8), 4)
    }

    #[test]
    fn latent_only_gradient_matches_full_backward() {
        let g = init_generator::<f64>(&small(), 8).unwrap();
        let z = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) / 4.0);
        let (out, cache) = generator_forward_cached(&g, z.view(), Mode::Eval).unwrap();
        let d = out.mapv(|v| v - 0.3);
        let (_, dz) = generator_backward(&g, &cache, d.view());
        assert_eq!(generator_latent_grad(&g, &cache, d.view()), dz);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_generator::<f32>(&small(), 3).unwrap();
        let b = init_generator::<f32>(&small(), 3).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        for (name, t) in a.tensors.iter() {
            if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("running_mean") {
                assert!(t.iter().all(|&v| v == 0.0));
            }
        }
        let c = init_generator::<f32>(&small(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_shape_range_and_width_check() {
        let g = init_generator::<f32>(&small(), 1).unwrap();
        let mut r = rng::stream(0, "z");
        let z = sample_latent::<f32, _>(5, 4, &mut r);
        let out = generator_forward(&g, z.view()).unwrap();
        assert_eq!(out.dim(), (5, 8, 8));
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = Array2::<f32>::zeros((2, 3));
        assert!(matches!(generator_forward(&g, bad.view()), Err(NetError::DimMismatch { .. })));
    }

    #[test]
    fn parameter_count_matches_descriptor() {
        let arch = small();
        let g = init_generator::<f64>(&arch, 0).unwrap();
        assert_eq!(g.param_count(), super::super::param_count(&arch.generator_shapes()));
        // 4*64 + 64 + 4*64 + 64*(8*4*4) + 128 + 4*128 + 8*25 + 1
        assert_eq!(g.param_count(), 256 + 64 + 256 + 8192 + 128 + 512 + 200 + 1);
    }
}
