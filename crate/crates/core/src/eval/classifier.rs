//! Convolutional digit classifier used as an accuracy probe on denoised
//! images: (conv 5×5 + ReLU + 2×2 max-pool) ×2, a hidden fully-connected
//! ReLU layer with dropout, and a softmax output layer.

use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayView3, Axis, Ix4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::ImageSet;
use crate::nets::checkpoint::{load_tensors, save_tensors, CheckpointError};
use crate::nets::layers::{self, ConvCache, DenseCache, MaxPoolCache};
use crate::nets::{flatten4, TensorMap};
use crate::train::optim::{Adam, AdamConfig};
use crate::{rng, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierDescriptor {
    pub image_shape: (usize, usize),
    pub conv_channels: (usize, usize),
    pub kernel: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for ClassifierDescriptor {
    fn default() -> Self {
        Self {
            image_shape: (28, 28),
            conv_channels: (16, 32),
            kernel: 5,
            hidden: 128,
            classes: 10,
            dropout: 0.5,
        }
    }
}

impl ClassifierDescriptor {
    fn pooled(&self) -> (usize, usize) {
        (self.image_shape.0 / 4, self.image_shape.1 / 4)
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c1, c2) = self.conv_channels;
        let k = self.kernel;
        let (ph, pw) = self.pooled();
        vec![
            ("conv1.weight".into(), vec![c1, 1, k, k]),
            ("conv1.bias".into(), vec![c1]),
            ("conv2.weight".into(), vec![c2, c1, k, k]),
            ("conv2.bias".into(), vec![c2]),
            ("fc1.weight".into(), vec![c2 * ph * pw, self.hidden]),
            ("fc1.bias".into(), vec![self.hidden]),
            ("fc2.weight".into(), vec![self.hidden, self.classes]),
            ("fc2.bias".into(), vec![self.classes]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }
}

/// Frozen classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClassifier<T> {
    pub desc: ClassifierDescriptor,
    pub tensors: TensorMap<T>,
}

/// He-normal weights, zero biases.
pub fn init_probe_classifier<T: Scalar>(desc: &ClassifierDescriptor, seed: u64) -> ProbeClassifier<T> {
    let mut r = rng::stream(seed, "init-classifier");
    let mut tensors = TensorMap::new();
    for (name, shape) in desc.shapes() {
        let mut t = crate::nets::zeros_tensor::<T>(&shape);
        if name.ends_with("weight") {
            let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
            let std = (2.0 / fan_in as f64).sqrt();
            t.mapv_inplace(|_| rng::normal(&mut r, std));
        }
        tensors.insert(name, t);
    }
    ProbeClassifier {
        desc: desc.clone(),
        tensors,
    }
}

struct Cache<T> {
    conv1: ConvCache<T>,
    pre1: Array4<T>,
    pool1: MaxPoolCache,
    conv2: ConvCache<T>,
    pre2: Array4<T>,
    pool2: MaxPoolCache,
    pooled_dim: (usize, usize, usize, usize),
    fc1: DenseCache<T>,
    pre3: Array2<T>,
    mask: Option<Array2<T>>,
    fc2: DenseCache<T>,
}

fn as_batch<T: Scalar>(images: ArrayView3<'_, T>) -> Array4<T> {
    let (n, h, w) = images.dim();
    images
        .to_owned()
        .into_shape_with_order((n, 1, h, w))
        .expect("contiguous")
        .into_dimensionality::<Ix4>()
        .expect("rank 4")
}

impl<T: Scalar> ProbeClassifier<T> {
    /// Class logits; dropout is applied only when `dropout_rng` is given.
    fn forward<R: Rng>(&self, images: ArrayView3<'_, T>, dropout_rng: Option<&mut R>) -> (Array2<T>, Cache<T>) {
        let p = &self.tensors;
        let k = self.desc.kernel;
        let x = as_batch(images);
        let (pre1, conv1) = layers::conv2d_forward(x.view(), p.kernel_matrix("conv1.weight"), p.vector("conv1.bias"), k, 1);
        let (pooled1, pool1) = layers::max_pool2_forward(pre1.mapv(layers::relu).view());
        let (pre2, conv2) = layers::conv2d_forward(pooled1.view(), p.kernel_matrix("conv2.weight"), p.vector("conv2.bias"), k, 1);
        let (pooled2, pool2) = layers::max_pool2_forward(pre2.mapv(layers::relu).view());
        let pooled_dim = pooled2.dim();
        let flat = flatten4(pooled2.view());
        let (pre3, fc1) = layers::dense_forward(flat.view(), p.matrix("fc1.weight"), p.vector("fc1.bias"));
        let mut hidden = pre3.mapv(layers::relu);
        let mask = dropout_rng.map(|r| {
            let keep = 1.0 - self.desc.dropout;
            let scale = T::lit(1.0 / keep);
            let m = Array2::from_shape_simple_fn(hidden.raw_dim(), || {
                if r.random::<f64>() < keep { scale } else { T::zero() }
            });
            hidden *= &m;
            m
        });
        let (logits, fc2) = layers::dense_forward(hidden.view(), p.matrix("fc2.weight"), p.vector("fc2.bias"));
        (
            logits,
            Cache {
                conv1,
                pre1,
                pool1,
                conv2,
                pre2,
                pool2,
                pooled_dim,
                fc1,
                pre3,
                mask,
                fc2,
            },
        )
    }

    fn backward(&self, cache: &Cache<T>, d_logits: Array2<T>) -> TensorMap<T> {
        let p = &self.tensors;
        let (d_hidden, d_w2, d_b2) = layers::dense_backward(&cache.fc2, p.matrix("fc2.weight"), d_logits.view());
        let mut d_hidden = d_hidden;
        if let Some(m) = &cache.mask {
            d_hidden *= m;
        }
        let d_pre3 = &d_hidden * &cache.pre3.mapv(layers::relu_grad);
        let (d_flat, d_w1, d_b1) = layers::dense_backward(&cache.fc1, p.matrix("fc1.weight"), d_pre3.view());
        let d_pool2 = d_flat.into_shape_with_order(cache.pooled_dim).expect("contiguous");
        let d_act2 = layers::max_pool2_backward(&cache.pool2, d_pool2.view());
        let d_pre2 = &d_act2 * &cache.pre2.mapv(layers::relu_grad);
        let (d_pool1, d_cw2, d_cb2) = layers::conv2d_backward(&cache.conv2, p.kernel_matrix("conv2.weight"), d_pre2.view());
        let d_act1 = layers::max_pool2_backward(&cache.pool1, d_pool1.view());
        let d_pre1 = &d_act1 * &cache.pre1.mapv(layers::relu_grad);
        let (_, d_cw1, d_cb1) = layers::conv2d_backward(&cache.conv1, p.kernel_matrix("conv1.weight"), d_pre1.view());

        let mut g = TensorMap::new();
        let shape = |name: &str| p.get(name).raw_dim();
        g.insert("conv1.weight", d_cw1.into_shape_with_order(shape("conv1.weight")).expect("kernel"));
        g.insert("conv1.bias", d_cb1.into_dyn());
        g.insert("conv2.weight", d_cw2.into_shape_with_order(shape("conv2.weight")).expect("kernel"));
        g.insert("conv2.bias", d_cb2.into_dyn());
        g.insert("fc1.weight", d_w1.into_dyn());
        g.insert("fc1.bias", d_b1.into_dyn());
        g.insert("fc2.weight", d_w2.into_dyn());
        g.insert("fc2.bias", d_b2.into_dyn());
        g
    }

    /// Arg-max class for every image, evaluated in chunks.
    pub fn predict(&self, images: ArrayView3<'_, T>) -> Vec<u8> {
        let mut out = Vec::with_capacity(images.len_of(Axis(0)));
        for chunk in images.axis_chunks_iter(Axis(0), 500) {
            let (logits, _) = self.forward::<rng::StreamRng>(chunk, None);
            out.extend(logits.outer_iter().map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0usize, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0 as u8
            }));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        save_tensors(dir, serde_json::to_value(&self.desc)?, &self.tensors)
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let (meta, tensors) = load_tensors::<T>(dir)?;
        Ok(Self {
            desc: serde_json::from_value(meta)?,
            tensors,
        })
    }
}

/// Softmax cross-entropy; returns mean loss and the logit gradient.
fn softmax_xent<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> (T, Array2<T>) {
    let n = T::from_usize(labels.len()).unwrap();
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (mut row, &y) in grad.outer_iter_mut().zip(labels) {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
        loss -= row[y as usize].max(T::min_positive_value()).ln();
        row[y as usize] -= T::one();
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

/// Trains the probe with Adam on shuffled minibatches.
pub fn train_probe_classifier<T: Scalar>(
    train: &ImageSet<T>,
    desc: &ClassifierDescriptor,
    config: &ClassifierTraining,
    seed: u64,
) -> Result<(ProbeClassifier<T>, Vec<f64>), EvalError> {
    let labels = train.labels.as_ref().ok_or(EvalError::Unlabeled)?;
    if train.shape() != desc.image_shape {
        return Err(EvalError::ShapeMismatch(train.shape(), desc.image_shape));
    }
    let mut model = init_probe_classifier::<T>(desc, seed);
    let mut adam = Adam::new(config.adam, &model.tensors);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut r = rng::indexed_stream(seed, "classifier-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size.max(1)) {
            let x = train.images.select(Axis(0), idx);
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = model.forward(x.view(), Some(&mut r));
            let (loss, d_logits) = softmax_xent(&logits, &y);
            let grads = model.backward(&cache, d_logits);
            adam.update(&mut model.tensors, &grads);
            total += loss.as_f64();
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::info!("classifier epoch {} loss {mean:.4}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok((model, epoch_losses))
}

/// Fraction of images whose predicted class equals the given label.
pub fn classify_accuracy<T: Scalar>(
    classifier: &ProbeClassifier<T>,
    images: ArrayView3<'_, T>,
    labels: &[u8],
) -> Result<f64, EvalError> {
    let n = images.len_of(Axis(0));
    if n != labels.len() {
        return Err(EvalError::LengthMismatch(n, labels.len()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let pred = classifier.predict(images);
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / n as f64)
}

/// Averaged class probabilities, handy for reports.
pub fn class_histogram(pred: &[u8], classes: usize) -> Array1<f64> {
    let mut h = Array1::zeros(classes);
    for &p in pred {
        h[p as usize] += 1.0;
    }
    h / pred.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tiny_desc() -> ClassifierDescriptor {
        ClassifierDescriptor {
            image_shape: (8, 8),
            conv_channels: (3, 4),
            kernel: 3,
            hidden: 6,
            classes: 3,
            dropout: 0.5,
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let desc = tiny_desc();
        let mut model = init_probe_classifier::<f64>(&desc, 4);
        let x = Array3::from_shape_fn((3, 8, 8), |(n, i, j)| (((n + 1) * (i * 3 + j * 5)) % 11) as f64 / 10.0);
        let y = vec![0u8, 2, 1];
        let (logits, cache) = model.forward::<rng::StreamRng>(x.view(), None);
        let (_, d) = softmax_xent(&logits, &y);
        let grads = model.backward(&cache, d);
        let names = ["conv1.weight", "conv2.bias", "fc1.weight", "fc2.weight"];
        for name in names {
            for idx in [0usize, 3] {
                let analytic = grads.get(name).as_slice().unwrap()[idx];
                let h = 1e-6;
                let mut eval = |delta: f64| {
                    model.tensors.get_mut(name).as_slice_mut().unwrap()[idx] += delta;
                    let (l, _) = model.forward::<rng::StreamRng>(x.view(), None);
                    let loss = softmax_xent(&l, &y).0;
                    model.tensors.get_mut(name).as_slice_mut().unwrap()[idx] -= delta;
                    loss
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs()).max(1e-7);
                assert!((analytic - fd).abs() / denom < 1e-4, "{name}[{idx}]: {analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn accuracy_contract() {
        let desc = tiny_desc();
        let model = init_probe_classifier::<f32>(&desc, 1);
        let x = Array3::from_shape_fn((5, 8, 8), |(n, i, j)| ((n + i + j) % 2) as f32);
        let pred = model.predict(x.view());
        assert_eq!(classify_accuracy(&model, x.view(), &pred).unwrap(), 1.0);
        let one = classify_accuracy(&model, x.slice(ndarray::s![0..1, .., ..]), &[1]).unwrap();
        assert!(one == 0.0 || one == 1.0);
        assert!(matches!(
            classify_accuracy(&model, x.view(), &[0, 1]),
            Err(EvalError::LengthMismatch(5, 2))
        ));
    }
}
