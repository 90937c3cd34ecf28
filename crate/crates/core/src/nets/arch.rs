use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dcgan28,
    Infogan28,
    /// Same layer ladder with user-chosen sizes (small synthetic tasks).
    Custom,
}

/// Declarative description of a generator/discriminator pair.
///
/// Generator: `fc(latent -> gen_hidden)` + batch norm + ReLU,
/// `fc(gen_hidden -> gen_channels·(h/2)·(w/2))` + batch norm + ReLU, reshape,
/// transposed convolution `gen_channels -> 1` (stride 2), sigmoid.
///
/// Discriminator: conv `1 -> disc_channels.0` (stride 2) leaky-ReLU, conv
/// `disc_channels.0 -> disc_channels.1` (stride 2) + batch norm + leaky-ReLU,
/// `fc -> 1` logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    pub family: Family,
    pub latent_dim: usize,
    pub image_shape: (usize, usize),
    pub gen_hidden: usize,
    pub gen_channels: usize,
    pub gen_kernel: usize,
    pub disc_channels: (usize, usize),
    pub disc_kernel: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ArchitectureDescriptor {
    pub fn dcgan28() -> Self {
        Self {
            family: Family::Dcgan28,
            latent_dim: 100,
            image_shape: (28, 28),
            gen_hidden: 1024,
            gen_channels: 64,
            gen_kernel: 5,
            disc_channels: (64, 128),
            disc_kernel: 5,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }

    pub fn infogan28() -> Self {
        Self {
            family: Family::Infogan28,
            latent_dim: 62,
            gen_channels: 128,
            gen_kernel: 4,
            ..Self::dcgan28()
        }
    }

    /// Scaled-down ladder for small images.
    pub fn custom(image_shape: (usize, usize), latent_dim: usize) -> Self {
        Self {
            family: Family::Custom,
            latent_dim,
            image_shape,
            gen_hidden: 64,
            gen_channels: 8,
            gen_kernel: 5,
            disc_channels: (8, 16),
            disc_kernel: 5,
            ..Self::dcgan28()
        }
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.0 * self.image_shape.1
    }

    /// Spatial size of the generator's reshaped feature map.
    pub fn gen_plane(&self) -> (usize, usize) {
        (self.image_shape.0 / 2, self.image_shape.1 / 2)
    }

    /// Spatial size after the two stride-2 discriminator convolutions.
    pub fn disc_plane(&self) -> (usize, usize) {
        let (h, w) = self.image_shape;
        (h.div_ceil(2).div_ceil(2), w.div_ceil(2).div_ceil(2))
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let (h, w) = self.image_shape;
        let bad = |msg: &str| Err(NetError::BadDescriptor(msg.to_string()));
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return bad("image dimensions must be positive and even");
        }
        if self.latent_dim == 0 || self.gen_hidden == 0 || self.gen_channels == 0 {
            return bad("generator sizes must be positive");
        }
        if self.disc_channels.0 == 0 || self.disc_channels.1 == 0 {
            return bad("discriminator channels must be positive");
        }
        if self.gen_kernel < 2 || self.disc_kernel < 1 {
            return bad("kernel sizes too small");
        }
        if !(self.leaky_slope.is_finite() && self.bn_eps > 0.0 && (0.0..1.0).contains(&self.bn_momentum)) {
            return bad("activation/normalization constants out of range");
        }
        Ok(())
    }

    /// `(name, shape)` of every generator tensor.
    pub fn generator_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (ph, pw) = self.gen_plane();
        let fc2 = self.gen_channels * ph * pw;
        let k = self.gen_kernel;
        vec![
            ("fc1.weight".into(), vec![self.latent_dim, self.gen_hidden]),
            ("fc1.bias".into(), vec![self.gen_hidden]),
            ("bn1.gamma".into(), vec![self.gen_hidden]),
            ("bn1.beta".into(), vec![self.gen_hidden]),
            ("bn1.running_mean".into(), vec![self.gen_hidden]),
            ("bn1.running_var".into(), vec![self.gen_hidden]),
            ("fc2.weight".into(), vec![self.gen_hidden, fc2]),
            ("fc2.bias".into(), vec![fc2]),
            ("bn2.gamma".into(), vec![fc2]),
            ("bn2.beta".into(), vec![fc2]),
            ("bn2.running_mean".into(), vec![fc2]),
            ("bn2.running_var".into(), vec![fc2]),
            ("tconv.weight".into(), vec![self.gen_channels, 1, k, k]),
            ("tconv.bias".into(), vec![1]),
        ]
    }

    /// `(name, shape)` of every discriminator tensor.
    pub fn discriminator_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c1, c2) = self.disc_channels;
        let k = self.disc_kernel;
        let (ph, pw) = self.disc_plane();
        vec![
            ("conv1.weight".into(), vec![c1, 1, k, k]),
            ("conv1.bias".into(), vec![c1]),
            ("conv2.weight".into(), vec![c2, c1, k, k]),
            ("conv2.bias".into(), vec![c2]),
            ("bn2.gamma".into(), vec![c2]),
            ("bn2.beta".into(), vec![c2]),
            ("bn2.running_mean".into(), vec![c2]),
            ("bn2.running_var".into(), vec![c2]),
            ("fc.weight".into(), vec![c2 * ph * pw, 1]),
            ("fc.bias".into(), vec![1]),
        ]
    }
}

pub fn param_count(shapes: &[(String, Vec<usize>)]) -> usize {
    shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}
