//! Two stride-2 convolutions with leaky-ReLU (batch norm on the second)
//! followed by a fully-connected layer producing one logit per image.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView3, Axis, Ix4};

pub use super::layers::Mode;
use super::layers::{self, BatchStats, ConvCache, DenseCache, NormCache};
use super::{flatten4, zeros_tensor, ArchitectureDescriptor, NetError, NetworkParams, Role, TensorMap};
use crate::{rng, Scalar};

pub const INIT_STD: f64 = 0.02;
/// Truncated-normal draws beyond this many standard deviations are resampled.
pub const TRUNCATION: f64 = 2.0;

/// Convolution weights from a truncated normal, fully-connected weights
/// from Normal(0, 0.02²), zero biases, identity batch norm.
pub fn init_discriminator<T: Scalar>(
    arch: &ArchitectureDescriptor,
    seed: u64,
) -> Result<NetworkParams<T>, NetError> {
    arch.validate()?;
    let mut r = rng::stream(seed, "init-discriminator");
    let mut tensors = TensorMap::new();
    for (name, shape) in arch.discriminator_shapes() {
        let mut t = zeros_tensor::<T>(&shape);
        if name.starts_with("conv") && name.ends_with("weight") {
            t.mapv_inplace(|_| rng::truncated_normal(&mut r, INIT_STD, TRUNCATION));
        } else if name.ends_with("weight") {
            t.mapv_inplace(|_| rng::normal(&mut r, INIT_STD));
        } else if name.ends_with("gamma") || name.ends_with("running_var") {
            t.fill(T::one());
        }
        tensors.insert(name, t);
    }
    Ok(NetworkParams {
        arch: arch.clone(),
        role: Role::Discriminator,
        seed,
        tensors,
    })
}

pub struct DiscCache<T> {
    conv1: ConvCache<T>,
    pre1: Array4<T>,
    conv2: ConvCache<T>,
    norm: NormCache<T>,
    normed: Array4<T>,
    fc: DenseCache<T>,
    /// Batch statistics of the normalized layer (train mode only).
    pub stats: Option<BatchStats<T>>,
}

/// One logit per image.
pub fn discriminator_forward<T: Scalar>(
    params: &NetworkParams<T>,
    images: ArrayView3<'_, T>,
    mode: Mode,
) -> Result<Array1<T>, NetError> {
    discriminator_forward_cached(params, images, mode).map(|(l, _)| l)
}

pub fn discriminator_forward_cached<T: Scalar>(
    params: &NetworkParams<T>,
    images: ArrayView3<'_, T>,
    mode: Mode,
) -> Result<(Array1<T>, DiscCache<T>), NetError> {
    params.expect_role(Role::Discriminator)?;
    let arch = &params.arch;
    let (n, h, w) = images.dim();
    if (h, w) != arch.image_shape {
        return Err(NetError::DimMismatch {
            expected: format!("{:?}", arch.image_shape),
            actual: format!("{:?}", (h, w)),
        });
    }
    let p = &params.tensors;
    let slope = T::lit(arch.leaky_slope);
    let eps = T::lit(arch.bn_eps);
    let k = arch.disc_kernel;

    let x = images
        .to_owned()
        .into_shape_with_order((n, 1, h, w))
        .expect("contiguous")
        .into_dimensionality::<Ix4>()
        .expect("rank 4");
    let (pre1, conv1) = layers::conv2d_forward(x.view(), p.kernel_matrix("conv1.weight"), p.vector("conv1.bias"), k, 2);
    let act1 = pre1.mapv(|v| layers::leaky_relu(v, slope));
    let (pre2, conv2) = layers::conv2d_forward(act1.view(), p.kernel_matrix("conv2.weight"), p.vector("conv2.bias"), k, 2);
    let (normed, norm, stats) = layers::batch_norm(pre2.view(), p, "bn2", eps, mode);
    let act2 = normed.mapv(|v| layers::leaky_relu(v, slope));
    let flat = flatten4(act2.view());
    let (logits, fc) = layers::dense_forward(flat.view(), p.matrix("fc.weight"), p.vector("fc.bias"));
    let logits = logits.column(0).to_owned();
    Ok((
        logits,
        DiscCache {
            conv1,
            pre1,
            conv2,
            norm,
            normed,
            fc,
            stats,
        },
    ))
}

/// Backpropagates `d_logits`; returns parameter gradients and the gradient
/// w.r.t. the input images.
pub fn discriminator_backward<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &DiscCache<T>,
    d_logits: ArrayView1<'_, T>,
) -> (TensorMap<T>, ndarray::Array3<T>) {
    let arch = &params.arch;
    let p = &params.tensors;
    let slope = T::lit(arch.leaky_slope);
    let n = d_logits.len();
    let (h, w) = arch.image_shape;
    let k = arch.disc_kernel;
    let (c1, c2) = arch.disc_channels;

    let d_logits: Array2<T> = d_logits.to_owned().insert_axis(Axis(1));
    let (d_flat, d_fw, d_fb) = layers::dense_backward(&cache.fc, p.matrix("fc.weight"), d_logits.view());
    let d_act2 = d_flat
        .into_shape_with_order(cache.normed.raw_dim())
        .expect("contiguous");
    let d_normed = &d_act2 * &cache.normed.mapv(|v| layers::leaky_relu_grad(v, slope));
    let (d_pre2, d_gamma, d_beta) = layers::norm_backward(&cache.norm, d_normed.view());
    let (d_act1, d_w2, d_b2) = layers::conv2d_backward(&cache.conv2, p.kernel_matrix("conv2.weight"), d_pre2.view());
    let d_pre1 = &d_act1 * &cache.pre1.mapv(|v| layers::leaky_relu_grad(v, slope));
    let (d_x, d_w1, d_b1) = layers::conv2d_backward(&cache.conv1, p.kernel_matrix("conv1.weight"), d_pre1.view());

    let mut grads = TensorMap::new();
    grads.insert("conv1.weight", d_w1.into_shape_with_order((c1, 1, k, k)).expect("kernel").into_dyn());
    grads.insert("conv1.bias", d_b1.into_dyn());
    grads.insert("conv2.weight", d_w2.into_shape_with_order((c2, c1, k, k)).expect("kernel").into_dyn());
    grads.insert("conv2.bias", d_b2.into_dyn());
    grads.insert("bn2.gamma", d_gamma.into_dyn());
    grads.insert("bn2.beta", d_beta.into_dyn());
    grads.insert("fc.weight", d_fw.into_dyn());
    grads.insert("fc.bias", d_fb.into_dyn());
    let d_x = d_x.into_shape_with_order((n, h, w)).expect("single channel");
    (grads, d_x)
}

/// Exponential moving average of batch statistics into the running buffers.
pub fn update_running_stats<T: Scalar>(params: &mut NetworkParams<T>, stats: &BatchStats<T>) {
    let m = params.arch.bn_momentum;
    layers::update_running(&mut params.tensors, "bn2", stats, m);
}
