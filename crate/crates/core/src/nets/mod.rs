//! Generator and discriminator networks with hand-written backward passes.

mod arch;
pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod layers;

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView4, Ix1, Ix2, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use arch::{param_count, ArchitectureDescriptor, Family};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use discriminator::{discriminator_backward, discriminator_forward, discriminator_forward_cached, init_discriminator, DiscCache, Mode};
pub use generator::{
    generator_backward, generator_forward, generator_forward_cached, generator_latent_grad, init_generator,
    update_generator_running_stats, GenCache,
};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: String, actual: String },
    #[error("invalid architecture: {0}")]
    BadDescriptor(String),
    #[error("expected {expected:?} parameters, got {actual:?}")]
    WrongRole { expected: Role, actual: Role },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Discriminator,
}

/// Named parameter tensors. Ordered so iteration (and serialization) is
/// deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap<T>(pub BTreeMap<String, ArrayD<T>>);

impl<T: Scalar> TensorMap<T> {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: ArrayD<T>) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &ArrayD<T> {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("tensor `{name}` missing from validated parameter set"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<T> {
        self.0
            .get_mut(name)
            .unwrap_or_else(|| panic!("tensor `{name}` missing from validated parameter set"))
    }

    pub fn vector(&self, name: &str) -> ArrayView1<'_, T> {
        self.get(name).view().into_dimensionality::<Ix1>().expect("rank-1 tensor")
    }

    pub fn matrix(&self, name: &str) -> ArrayView2<'_, T> {
        self.get(name).view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
    }

    /// Views a `[a, b, k, k]` kernel as an `(a, b·k·k)` matrix.
    pub fn kernel_matrix(&self, name: &str) -> ArrayView2<'_, T> {
        let t = self.get(name);
        let rows = t.shape()[0];
        let cols = t.len() / rows.max(1);
        t.view().into_shape_with_order((rows, cols)).expect("contiguous kernel")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<T>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.0.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        )
    }
}

/// Running statistics are state, not trainable parameters.
pub fn is_trainable(name: &str) -> bool {
    !name.ends_with("running_mean") && !name.ends_with("running_var")
}

/// Parameters of one network together with the descriptor they follow.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: ArchitectureDescriptor,
    pub role: Role,
    pub seed: u64,
    pub tensors: TensorMap<T>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.role {
            Role::Generator => self.arch.generator_shapes(),
            Role::Discriminator => self.arch.discriminator_shapes(),
        }
    }

    /// Checks every tensor against the descriptor and for finiteness.
    pub fn validate(&self) -> Result<(), NetError> {
        self.arch.validate()?;
        let shapes = self.expected_shapes();
        for (name, shape) in &shapes {
            let t = self
                .tensors
                .0
                .get(name)
                .ok_or_else(|| NetError::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(NetError::DimMismatch {
                    expected: format!("{name} {shape:?}"),
                    actual: format!("{:?}", t.shape()),
                });
            }
        }
        if self.tensors.len() != shapes.len() {
            return Err(NetError::BadDescriptor("unexpected extra tensors".into()));
        }
        if !self.tensors.all_finite() {
            return Err(NetError::BadDescriptor("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.total_len()
    }

    fn expect_role(&self, role: Role) -> Result<(), NetError> {
        if self.role == role {
            Ok(())
        } else {
            Err(NetError::WrongRole {
                expected: role,
                actual: self.role,
            })
        }
    }
}

pub(crate) fn zeros_tensor<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

/// Reshapes a rank-4 array into its `(N, C·H·W)` flattening.
pub(crate) fn flatten4<T: Scalar>(x: ArrayView4<'_, T>) -> ndarray::Array2<T> {
    let n = x.shape()[0];
    let rest = x.len() / n.max(1);
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, rest))
        .expect("contiguous")
}
