//! Denoising- and demixing-GAN training loops.
//!
//! Each iteration draws one real minibatch, updates the discriminator once
//! and then every generator once. All randomness for epoch `e` comes from
//! the stream `("train-epoch", e)`, so resuming at an epoch boundary
//! replays an uninterrupted run exactly.

pub mod losses;
pub mod optim;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{CorruptionError, CorruptionSpec};
use crate::eval::{write_sample_grid, EvalError, GRID_SIDE};
use crate::io::write_atomic;
use crate::nets::checkpoint::{load_checkpoint, load_tensors, save_checkpoint, save_tensors, CheckpointError};
use crate::nets::discriminator::update_running_stats;
use crate::nets::generator::sample_latent;
use crate::nets::{
    discriminator_backward, discriminator_forward, discriminator_forward_cached, generator_backward, generator_forward,
    generator_forward_cached, init_discriminator, update_generator_running_stats, init_generator, ArchitectureDescriptor, Mode, NetError, NetworkParams,
    TensorMap,
};
use crate::{rng, Scalar};
pub use losses::{gan_losses, GanLosses, GeneratorLoss};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    ConfigInvalid(String),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration} (loss_d={loss_d}, loss_g={loss_g})")]
    NumericalDivergence {
        epoch: usize,
        iteration: usize,
        loss_d: f64,
        loss_g: f64,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("state file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One generator; its output is corrupted by a fresh sample before D.
    Denoise,
    /// Two generators whose outputs are summed before D.
    Demix,
}

/// How the two generators' latent batches relate in demixing mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ZLink {
    Independent,
    /// `z2 = z1`.
    Shared,
    /// `z2 = alpha · z1`.
    Scaled { alpha: f64 },
}

impl Default for ZLink {
    fn default() -> Self {
        Self::Independent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub arch: ArchitectureDescriptor,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: GeneratorLoss,
    pub d_steps_per_g_step: usize,
    pub z_link: ZLink,
    /// Corruption applied to generated samples in denoising mode.
    pub corruption: CorruptionSpec,
    /// Epochs (1-based) after which a checkpoint is written.
    pub checkpoint_epochs: Vec<usize>,
    /// Epochs (1-based) after which an 8×8 sample grid is written.
    pub grid_epochs: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Denoise,
            arch: ArchitectureDescriptor::dcgan28(),
            batch_size: 64,
            epochs: 64,
            adam: AdamConfig::default(),
            loss: GeneratorLoss::NonSaturating,
            d_steps_per_g_step: 1,
            z_link: ZLink::Independent,
            corruption: CorruptionSpec::sine(2),
            checkpoint_epochs: vec![1, 2, 5, 64],
            grid_epochs: vec![1, 2, 5, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::ConfigInvalid(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.d_steps_per_g_step != 1 {
            return bad("d_steps_per_g_step must be 1");
        }
        let a = self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam: need lr > 0, betas in [0,1), eps > 0");
        }
        match (self.mode, self.z_link) {
            (TrainMode::Denoise, ZLink::Independent) => {}
            (TrainMode::Denoise, _) => return bad("z_link only applies to demix mode"),
            (TrainMode::Demix, ZLink::Scaled { alpha }) if !alpha.is_finite() => {
                return bad("z_link.alpha must be finite")
            }
            _ => {}
        }
        self.arch.validate()?;
        if self.mode == TrainMode::Denoise {
            self.corruption.validate()?;
        }
        Ok(())
    }

    fn generator_count(&self) -> usize {
        match self.mode {
            TrainMode::Denoise => 1,
            TrainMode::Demix => 2,
        }
    }
}

/// Mean losses and discriminator outputs over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

/// Latent batches drawn for one iteration, one per generator.
pub struct StepRecord<'a, T> {
    pub epoch: usize,
    pub iteration: usize,
    pub latents: &'a [Array2<T>],
}

/// Complete trainable state: networks, optimizer moments and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct GanState<T> {
    pub config: TrainConfig,
    pub generators: Vec<NetworkParams<T>>,
    pub discriminator: NetworkParams<T>,
    pub gen_adams: Vec<Adam<T>>,
    pub disc_adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub d_updates: u64,
    pub g_updates: u64,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    epoch: usize,
    d_updates: u64,
    g_updates: u64,
    history: Vec<EpochStats>,
    gen_adam_steps: Vec<u64>,
    disc_adam_step: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Io(path.display().to_string(), e)
}

impl<T: Scalar> GanState<T> {
    /// Fresh networks. Generator `i` is seeded from `("generator-i", seed)`.
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let generators = (1..=config.generator_count())
            .map(|i| init_generator::<T>(&config.arch, rng::derive_seed(config.seed, &format!("generator-{i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let discriminator = init_discriminator::<T>(&config.arch, rng::derive_seed(config.seed, "discriminator"))?;
        let gen_adams = generators.iter().map(|g| Adam::new(config.adam, &g.tensors)).collect();
        let disc_adam = Adam::new(config.adam, &discriminator.tensors);
        Ok(Self {
            config,
            generators,
            discriminator,
            gen_adams,
            disc_adam,
            epoch: 0,
            d_updates: 0,
            g_updates: 0,
            history: Vec::new(),
        })
    }

    /// Writes the whole state under `dir` (networks, optimizer moments,
    /// counters and history).
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (i, (g, adam)) in self.generators.iter().zip(&self.gen_adams).enumerate() {
            save_checkpoint(&dir.join(format!("g{}", i + 1)), g, self.g_updates)?;
            save_tensors(&dir.join(format!("g{}_adam", i + 1)), serde_json::Value::Null, &adam.to_tensors())?;
        }
        save_checkpoint(&dir.join("d"), &self.discriminator, self.d_updates)?;
        save_tensors(&dir.join("d_adam"), serde_json::Value::Null, &self.disc_adam.to_tensors())?;
        let meta = StateMeta {
            config: self.config.clone(),
            epoch: self.epoch,
            d_updates: self.d_updates,
            g_updates: self.g_updates,
            history: self.history.clone(),
            gen_adam_steps: self.gen_adams.iter().map(|a| a.step).collect(),
            disc_adam_step: self.disc_adam.step,
        };
        let path = dir.join("state.json");
        write_atomic(&path, serde_json::to_string_pretty(&meta)?.as_bytes()).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: StateMeta = serde_json::from_str(&text)?;
        let mut generators = Vec::new();
        let mut gen_adams = Vec::new();
        for (i, &step) in meta.gen_adam_steps.iter().enumerate() {
            generators.push(load_checkpoint::<T>(&dir.join(format!("g{}", i + 1)))?.0);
            let (_, moments) = load_tensors::<T>(&dir.join(format!("g{}_adam", i + 1)))?;
            gen_adams.push(Adam::from_tensors(meta.config.adam, step, moments));
        }
        let (discriminator, _) = load_checkpoint::<T>(&dir.join("d"))?;
        let (_, moments) = load_tensors::<T>(&dir.join("d_adam"))?;
        let disc_adam = Adam::from_tensors(meta.config.adam, meta.disc_adam_step, moments);
        let state = Self {
            config: meta.config,
            generators,
            discriminator,
            gen_adams,
            disc_adam,
            epoch: meta.epoch,
            d_updates: meta.d_updates,
            g_updates: meta.g_updates,
            history: meta.history,
        };
        if state.generators.len() != state.config.generator_count() {
            return Err(TrainError::ConfigInvalid("generator count does not match mode".into()));
        }
        Ok(state)
    }

    /// One latent batch per generator, linked according to `z_link`.
    pub fn draw_latents<R: Rng>(&self, n: usize, r: &mut R) -> Vec<Array2<T>> {
        let dim = self.config.arch.latent_dim;
        let z1: Array2<T> = sample_latent(n, dim, r);
        if self.config.mode == TrainMode::Denoise {
            return vec![z1];
        }
        let z2 = match self.config.z_link {
            ZLink::Independent => sample_latent(n, dim, r),
            ZLink::Shared => z1.clone(),
            ZLink::Scaled { alpha } => z1.mapv(|v| v * T::lit(alpha)),
        };
        vec![z1, z2]
    }

    /// Runs epochs until `config.epochs` have completed (or `until`, if
    /// smaller), writing grids, checkpoints and `history.json` under `out`.
    pub fn train(
        &mut self,
        observations: ArrayView3<'_, T>,
        until: Option<usize>,
        out: Option<&Path>,
        mut observer: Option<&mut dyn FnMut(&StepRecord<'_, T>)>,
    ) -> Result<(), TrainError> {
        self.config.validate()?;
        let (k, h, w) = observations.dim();
        if (h, w) != self.config.arch.image_shape {
            return Err(NetError::DimMismatch {
                expected: format!("{:?}", self.config.arch.image_shape),
                actual: format!("{:?}", (h, w)),
            }
            .into());
        }
        if k == 0 {
            return Err(TrainError::ConfigInvalid("no training observations".into()));
        }
        let last = until.unwrap_or(self.config.epochs).min(self.config.epochs);
        let bs = self.config.batch_size.min(k);
        let batches = k / bs;
        while self.epoch < last {
            let e = self.epoch;
            let mut r = rng::indexed_stream(self.config.seed, "train-epoch", e as u64);
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut r);
            let mut sums = [0.0f64; 4];
            for it in 0..batches {
                let real = observations.select(Axis(0), &order[it * bs..(it + 1) * bs]);
                let latents = self.draw_latents(bs, &mut r);
                if let Some(obs) = observer.as_mut() {
                    obs(&StepRecord {
                        epoch: e,
                        iteration: it,
                        latents: &latents,
                    });
                }
                let l = self.step(real.view(), &latents, &mut r, e, it)?;
                sums[0] += l.loss_d.as_f64();
                sums[1] += l.loss_g.as_f64();
                sums[2] += l.d_real.as_f64();
                sums[3] += l.d_fake.as_f64();
            }
            self.epoch += 1;
            let n = batches as f64;
            let stats = EpochStats {
                epoch: self.epoch,
                loss_d: sums[0] / n,
                loss_g: sums[1] / n,
                d_real: sums[2] / n,
                d_fake: sums[3] / n,
            };
            log::info!(
                "epoch {} loss_d {:.4} loss_g {:.4} D(real) {:.3} D(fake) {:.3}",
                stats.epoch,
                stats.loss_d,
                stats.loss_g,
                stats.d_real,
                stats.d_fake
            );
            self.history.push(stats);
            if let Some(out) = out {
                self.emit(out)?;
            }
        }
        Ok(())
    }

    fn emit(&self, out: &Path) -> Result<(), TrainError> {
        let e = self.epoch;
        if self.config.grid_epochs.contains(&e) {
            for (i, grid) in self.fixed_samples()?.iter().enumerate() {
                let path = match self.config.mode {
                    TrainMode::Denoise => out.join("samples").join(format!("epoch_{e}.png")),
                    TrainMode::Demix => out.join("samples").join(format!("g{}", i + 1)).join(format!("epoch_{e}.png")),
                };
                write_sample_grid(grid.view(), &path)?;
            }
        }
        if self.config.checkpoint_epochs.contains(&e) {
            self.save(&checkpoint_dir(out, e))?;
        }
        let path = out.join("history.json");
        write_atomic(&path, serde_json::to_string_pretty(&self.history)?.as_bytes()).map_err(io_err(&path))
    }

    /// 64 samples per generator from the fixed grid latents.
    pub fn fixed_samples(&self) -> Result<Vec<Array3<T>>, TrainError> {
        let mut r = rng::stream(self.config.seed, "grid-z");
        let latents = self.draw_latents(GRID_SIDE * GRID_SIDE, &mut r);
        self.generators
            .iter()
            .zip(&latents)
            .map(|(g, z)| generator_forward(g, z.view()).map_err(Into::into))
            .collect()
    }

    /// Fake observations for the given latents: corrupted `G(z)` or `G1(z1) + G2(z2)`.
    pub fn fake_observations<R: Rng>(&self, latents: &[Array2<T>], r: &mut R) -> Result<Array3<T>, TrainError> {
        let mut fake = generator_forward(&self.generators[0], latents[0].view())?;
        for (g, z) in self.generators.iter().zip(latents).skip(1) {
            fake += &generator_forward(g, z.view())?;
        }
        self.corrupt(&mut fake, r)?;
        Ok(fake)
    }

    /// Adds a fresh corruption draw to every image (denoising mode only).
    fn corrupt<R: Rng>(&self, fake: &mut Array3<T>, r: &mut R) -> Result<(), TrainError> {
        if self.config.mode == TrainMode::Denoise {
            let shape = self.config.arch.image_shape;
            for mut img in fake.axis_iter_mut(Axis(0)) {
                img += &self.config.corruption.sample::<T, _>(shape, r)?;
            }
        }
        Ok(())
    }

    /// One discriminator update followed by one update of every generator.
    fn step<R: Rng>(
        &mut self,
        real: ArrayView3<'_, T>,
        latents: &[Array2<T>],
        r: &mut R,
        epoch: usize,
        iteration: usize,
    ) -> Result<StepLosses<T>, TrainError> {
        let mut fake: Option<Array3<T>> = None;
        let mut gen_caches = Vec::with_capacity(latents.len());
        for (g, z) in self.generators.iter().zip(latents) {
            let (out, cache) = generator_forward_cached(g, z.view(), Mode::Train)?;
            fake = Some(match fake {
                None => out,
                Some(acc) => acc + &out,
            });
            gen_caches.push(cache);
        }
        let mut fake = fake.expect("at least one generator");
        self.corrupt(&mut fake, r)?;

        let d = &self.discriminator;
        let (real_logits, real_cache) = discriminator_forward_cached(d, real, Mode::Train)?;
        let (fake_logits, fake_cache) = discriminator_forward_cached(d, fake.view(), Mode::Train)?;
        let l = gan_losses(real_logits.view(), fake_logits.view(), self.config.loss);
        if !(l.loss_d.is_finite() && l.loss_g.is_finite()) {
            return Err(TrainError::NumericalDivergence {
                epoch,
                iteration,
                loss_d: l.loss_d.as_f64(),
                loss_g: l.loss_g.as_f64(),
            });
        }
        let (mut grads, _) = discriminator_backward(d, &real_cache, l.d_real.view());
        let (fake_grads, _) = discriminator_backward(d, &fake_cache, l.d_fake_for_d.view());
        add_into(&mut grads, &fake_grads);
        self.disc_adam.update(&mut self.discriminator.tensors, &grads);
        for cache in [&real_cache, &fake_cache] {
            if let Some(stats) = &cache.stats {
                update_running_stats(&mut self.discriminator, stats);
            }
        }
        self.d_updates += 1;

        let (g_logits, g_cache) = discriminator_forward_cached(&self.discriminator, fake.view(), Mode::Train)?;
        let gl = gan_losses(real_logits.view(), g_logits.view(), self.config.loss);
        let (_, d_fake_images) = discriminator_backward(&self.discriminator, &g_cache, gl.d_fake_for_g.view());
        for ((g, adam), cache) in self.generators.iter_mut().zip(&mut self.gen_adams).zip(&gen_caches) {
            let (grads, _) = generator_backward(g, cache, d_fake_images.view());
            adam.update(&mut g.tensors, &grads);
            if let Some(stats) = &cache.stats {
                update_generator_running_stats(g, stats);
            }
        }
        self.g_updates += 1;

        let mean_prob = |v: &Array1<T>| {
            v.iter().map(|&x| crate::nets::layers::sigmoid(x).as_f64()).sum::<f64>() / v.len().max(1) as f64
        };
        Ok(StepLosses {
            loss_d: l.loss_d,
            loss_g: gl.loss_g,
            d_real: T::lit(mean_prob(&real_logits)),
            d_fake: T::lit(mean_prob(&fake_logits)),
        })
    }
}

struct StepLosses<T> {
    loss_d: T,
    loss_g: T,
    d_real: T,
    d_fake: T,
}

fn add_into<T: Scalar>(acc: &mut TensorMap<T>, other: &TensorMap<T>) {
    for (name, g) in other.iter() {
        *acc.get_mut(name) += g;
    }
}

/// Directory of the checkpoint written after epoch `epoch`.
pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch}"))
}

/// Trains a single generator against corrupted observations.
pub fn train_denoising_gan<T: Scalar>(
    config: &TrainConfig,
    observations: ArrayView3<'_, T>,
    out: Option<&Path>,
) -> Result<GanState<T>, TrainError> {
    if config.mode != TrainMode::Denoise {
        return Err(TrainError::ConfigInvalid("mode must be denoise".into()));
    }
    let mut state = GanState::new(config.clone())?;
    state.train(observations, None, out, None)?;
    Ok(state)
}

/// Trains two generators against superposed observations.
pub fn train_demixing_gan<T: Scalar>(
    config: &TrainConfig,
    mixtures: ArrayView3<'_, T>,
    out: Option<&Path>,
) -> Result<GanState<T>, TrainError> {
    if config.mode != TrainMode::Demix {
        return Err(TrainError::ConfigInvalid("mode must be demix".into()));
    }
    let mut state = GanState::new(config.clone())?;
    state.train(mixtures, None, out, None)?;
    Ok(state)
}

/// Fraction of correct real/fake calls by the discriminator in eval mode
/// (logit > 0 means "real").
pub fn discriminator_accuracy<T: Scalar>(
    disc: &NetworkParams<T>,
    real: ArrayView3<'_, T>,
    fake: ArrayView3<'_, T>,
) -> Result<f64, NetError> {
    let r = discriminator_forward(disc, real, Mode::Eval)?;
    let f = discriminator_forward(disc, fake, Mode::Eval)?;
    let hits = r.iter().filter(|&&v| v > T::zero()).count() + f.iter().filter(|&&v| v <= T::zero()).count();
    Ok(hits as f64 / (r.len() + f.len()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::SyntheticSource;

    fn tiny(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            arch: ArchitectureDescriptor::custom((8, 8), 4),
            batch_size: 8,
            epochs: 2,
            corruption: CorruptionSpec::lines_with(1, 0),
            checkpoint_epochs: vec![1, 2],
            grid_epochs: vec![2],
            seed: 3,
            ..Default::default()
        }
    }

    fn data(n: usize) -> Array3<f64> {
        SyntheticSource::HorizontalLines { count: 1 }
            .generate::<f64>(n, (8, 8), 1, "data")
            .unwrap()
            .images
    }

    #[test]
    fn one_step_changes_parameters_with_finite_losses() {
        let mut cfg = tiny(TrainMode::Denoise);
        cfg.epochs = 1;
        let x = data(8);
        let mut state = GanState::<f64>::new(cfg).unwrap();
        let before = state.clone();
        state.train(x.view(), None, None, None).unwrap();
        assert_eq!((state.d_updates, state.g_updates), (1, 1));
        assert!(state.history[0].loss_d.is_finite() && state.history[0].loss_g.is_finite());
        assert_ne!(state.generators[0].tensors, before.generators[0].tensors);
        assert_ne!(state.discriminator.tensors, before.discriminator.tensors);
    }

    #[test]
    fn z_links_hold_exactly() {
        let x = data(16);
        for (link, check) in [
            (ZLink::Shared, 1.0),
            (ZLink::Scaled { alpha: 0.1 }, 0.1),
        ] {
            let mut cfg = tiny(TrainMode::Demix);
            cfg.z_link = link;
            let mut state = GanState::<f64>::new(cfg).unwrap();
            let mut seen = 0;
            let mut obs = |s: &StepRecord<'_, f64>| {
                assert_eq!(s.latents[1], s.latents[0].mapv(|v| v * check));
                seen += 1;
            };
            state.train(x.view(), None, None, Some(&mut obs)).unwrap();
            assert_eq!(seen, 4);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let x = data(16);
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(TrainMode::Demix);
        let full = train_demixing_gan::<f64>(&cfg, x.view(), Some(dir.path())).unwrap();
        let mut resumed = GanState::<f64>::load(&checkpoint_dir(dir.path(), 1)).unwrap();
        assert_eq!(resumed.epoch, 1);
        resumed.train(x.view(), None, None, None).unwrap();
        assert_eq!(resumed, full);
        assert!(dir.path().join("samples/g2/epoch_2.png").exists());
    }

    #[test]
    fn config_rules() {
        let mut cfg = tiny(TrainMode::Denoise);
        cfg.z_link = ZLink::Shared;
        assert!(matches!(GanState::<f32>::new(cfg), Err(TrainError::ConfigInvalid(_))));
        let mut cfg = tiny(TrainMode::Demix);
        cfg.batch_size = 0;
        assert!(matches!(GanState::<f32>::new(cfg), Err(TrainError::ConfigInvalid(_))));
    }
}
