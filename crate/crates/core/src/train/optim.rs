use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nets::{is_trainable, TensorMap};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: TensorMap<T>,
    pub v: TensorMap<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &TensorMap<T>) -> Self {
        let mut m = TensorMap::new();
        for (name, t) in params.iter().filter(|(n, _)| is_trainable(n)) {
            m.insert(name.clone(), ArrayD::zeros(t.raw_dim()));
        }
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one bias-corrected update to every trainable tensor.
    pub fn update(&mut self, params: &mut TensorMap<T>, grads: &TensorMap<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (name, g) in grads.iter() {
            let m = self.m.get_mut(name);
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
            let v = self.v.get_mut(name);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
            let m = self.m.get(name);
            let v = self.v.get(name);
            let p = params.get_mut(name);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }

    /// Moment tensors prefixed `m.`/`v.` for archiving.
    pub fn to_tensors(&self) -> TensorMap<T> {
        let mut out = TensorMap::new();
        for (k, t) in self.m.iter() {
            out.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in self.v.iter() {
            out.insert(format!("v.{k}"), t.clone());
        }
        out
    }

    pub fn from_tensors(config: AdamConfig, step: u64, tensors: TensorMap<T>) -> Self {
        let mut m = TensorMap::new();
        let mut v = TensorMap::new();
        for (k, t) in tensors.0 {
            if let Some(name) = k.strip_prefix("m.") {
                m.insert(name, t);
            } else if let Some(name) = k.strip_prefix("v.") {
                v.insert(name, t);
            }
        }
        Self { config, step, m, v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = TensorMap::new();
        p.insert("w", arr1(&[1.0f64, -2.0]).into_dyn());
        let mut g = TensorMap::new();
        g.insert("w", arr1(&[3.0, -0.5]).into_dyn());
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        adam.update(&mut p, &g);
        let w = p.get("w");
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn running_stats_are_not_optimized() {
        let mut p = TensorMap::new();
        p.insert("bn.running_mean", arr1(&[0.0f32]).into_dyn());
        p.insert("bn.gamma", arr1(&[1.0f32]).into_dyn());
        let adam = Adam::new(AdamConfig::default(), &p);
        assert_eq!(adam.m.len(), 1);
        let round = Adam::from_tensors(adam.config, 0, adam.to_tensors());
        assert_eq!(round, adam);
    }
}
