use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::nets::layers::{log_sigmoid, sigmoid};
use crate::Scalar;

/// Form of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// `−mean log σ(fake)`.
    #[default]
    NonSaturating,
    /// `mean log(1 − σ(fake))`, the literal minimax term.
    Minimax,
}

/// Loss values and their gradients w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct GanLosses<T> {
    pub loss_d: T,
    pub loss_g: T,
    pub d_real: Array1<T>,
    pub d_fake_for_d: Array1<T>,
    pub d_fake_for_g: Array1<T>,
}

/// `loss_d = −mean log σ(real) − mean log(1 − σ(fake))`; `loss_g` per `form`.
pub fn gan_losses<T: Scalar>(
    real: ArrayView1<'_, T>,
    fake: ArrayView1<'_, T>,
    form: GeneratorLoss,
) -> GanLosses<T> {
    let nr = T::from_usize(real.len().max(1)).unwrap();
    let nf = T::from_usize(fake.len().max(1)).unwrap();
    let real_term = -real.iter().map(|&r| log_sigmoid(r)).sum::<T>() / nr;
    // log(1 − σ(f)) = log σ(−f)
    let fake_term = -fake.iter().map(|&f| log_sigmoid(-f)).sum::<T>() / nf;
    let (loss_g, d_fake_for_g) = match form {
        GeneratorLoss::NonSaturating => (
            -fake.iter().map(|&f| log_sigmoid(f)).sum::<T>() / nf,
            fake.mapv(|f| (sigmoid(f) - T::one()) / nf),
        ),
        GeneratorLoss::Minimax => (-fake_term, fake.mapv(|f| -sigmoid(f) / nf)),
    };
    GanLosses {
        loss_d: real_term + fake_term,
        loss_g,
        d_real: real.mapv(|r| (sigmoid(r) - T::one()) / nr),
        d_fake_for_d: fake.mapv(|f| sigmoid(f) / nf),
        d_fake_for_g,
    }
}
