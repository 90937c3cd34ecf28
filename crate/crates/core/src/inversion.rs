//! Latent-space inversion: find `z` whose generated image best explains an
//! observation, for denoising, demixing and compressed sensing.
//!
//! Restarts run as rows of one latent batch. Adam acts elementwise and the
//! generators have no cross-sample layers, so each row evolves exactly as
//! an independent restart would.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Ix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::generator::sample_latent;
use crate::nets::{generator_forward, generator_forward_cached, generator_latent_grad, Mode, NetError, NetworkParams, TensorMap};
use crate::sensing::MeasurementOperator;
use crate::train::optim::{Adam, AdamConfig};
use crate::{rng, Scalar};

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("observation shape {actual:?} does not match generator output {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("objective became non-finite in restart {restart} at iteration {iteration}")]
    NonFiniteObjective { restart: usize, iteration: usize },
    #[error("invalid options: {0}")]
    Options(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// A differentiable map from latent rows to images.
pub trait LatentModel<T: Scalar> {
    fn latent_dim(&self) -> usize;
    fn output_shape(&self) -> (usize, usize);
    fn forward(&self, z: ArrayView2<'_, T>) -> Result<Array3<T>, InversionError>;
    /// Returns the outputs and `Jᵀ·upstream(outputs)` for each row.
    fn forward_vjp(
        &self,
        z: ArrayView2<'_, T>,
        upstream: &dyn Fn(&Array3<T>) -> Array3<T>,
    ) -> Result<(Array3<T>, Array2<T>), InversionError>;
}

impl<T: Scalar> LatentModel<T> for NetworkParams<T> {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn output_shape(&self) -> (usize, usize) {
        self.arch.image_shape
    }

    fn forward(&self, z: ArrayView2<'_, T>) -> Result<Array3<T>, InversionError> {
        Ok(generator_forward(self, z)?)
    }

    fn forward_vjp(
        &self,
        z: ArrayView2<'_, T>,
        upstream: &dyn Fn(&Array3<T>) -> Array3<T>,
    ) -> Result<(Array3<T>, Array2<T>), InversionError> {
        let (out, cache) = generator_forward_cached(self, z, Mode::Eval)?;
        let d_out = upstream(&out);
        let dz = generator_latent_grad(self, &cache, d_out.view());
        Ok((out, dz))
    }
}

/// `G(z) = z` laid out as an image; the closed-form toy for oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityModel {
    pub shape: (usize, usize),
}

impl<T: Scalar> LatentModel<T> for IdentityModel {
    fn latent_dim(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    fn output_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn forward(&self, z: ArrayView2<'_, T>) -> Result<Array3<T>, InversionError> {
        let dim = LatentModel::<T>::latent_dim(self);
        if z.ncols() != dim {
            return Err(InversionError::DimMismatch(format!("latent width {} vs {dim}", z.ncols())));
        }
        Ok(z.as_standard_layout()
            .into_owned()
            .into_shape_with_order((z.nrows(), self.shape.0, self.shape.1))
            .expect("contiguous"))
    }

    fn forward_vjp(
        &self,
        z: ArrayView2<'_, T>,
        upstream: &dyn Fn(&Array3<T>) -> Array3<T>,
    ) -> Result<(Array3<T>, Array2<T>), InversionError> {
        let out = LatentModel::<T>::forward(self, z)?;
        let d = upstream(&out);
        let dz = d.into_shape_with_order(z.dim()).expect("contiguous");
        Ok((out, dz))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionOptions {
    /// Latent penalty for denoising and compressed sensing.
    pub lambda: f64,
    /// Latent penalties for the two demixing components.
    pub lambda1: f64,
    pub lambda2: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub step_size: f64,
    /// Adam steps per block in the demixing alternation.
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            restarts: 10,
            iterations: 10_000,
            step_size: 0.01,
            inner_steps: 100,
            seed: 0,
        }
    }
}

impl InversionOptions {
    pub fn validate(&self) -> Result<(), InversionError> {
        let bad = |m: &str| Err(InversionError::Options(m.into()));
        if self.restarts == 0 || self.iterations == 0 || self.inner_steps == 0 {
            return bad("restarts, iterations and inner_steps must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambdas must be nonnegative");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult<T> {
    /// Best latent of the selected restart, one per generator.
    pub latents: Vec<Array1<T>>,
    /// Generator outputs at those latents.
    pub reconstructions: Vec<Array2<T>>,
    /// Objective per iteration (initial value first) for every restart.
    pub traces: Vec<Vec<f64>>,
    /// Lowest objective reached by each restart.
    pub restart_objectives: Vec<f64>,
    /// `‖y − A·vec(G(z))‖²` per restart (compressed sensing only).
    pub measurement_errors: Option<Vec<f64>>,
    pub selected_restart: usize,
    pub objective: f64,
}

fn sq_rows<T: Scalar>(a: &Array3<T>) -> Array1<T> {
    a.outer_iter().map(|r| r.iter().map(|&v| v * v).sum()).collect()
}

fn latent_sq<T: Scalar>(z: ArrayView2<'_, T>) -> Array1<T> {
    z.outer_iter().map(|r| r.dot(&r)).collect()
}

fn residual<T: Scalar>(out: &Array3<T>, target: ArrayView2<'_, T>) -> Array3<T> {
    out - &target.insert_axis(Axis(0))
}

fn check_shape<T: Scalar>(model: &dyn LatentModel<T>, target: (usize, usize)) -> Result<(), InversionError> {
    if model.output_shape() != target {
        return Err(InversionError::ShapeMismatch {
            expected: model.output_shape(),
            actual: target,
        });
    }
    Ok(())
}

/// Per-row `‖u − G(z)‖² + λ‖z‖²` and its latent gradient.
pub fn denoise_objective<T: Scalar>(
    model: &dyn LatentModel<T>,
    u: ArrayView2<'_, T>,
    z: ArrayView2<'_, T>,
    lambda: T,
) -> Result<(Array1<T>, Array2<T>), InversionError> {
    check_shape(model, u.dim())?;
    let two = T::lit(2.0);
    let (out, dz) = model.forward_vjp(z, &|out| residual(out, u) * two)?;
    let obj = sq_rows(&residual(&out, u)) + &(latent_sq(z) * lambda);
    Ok((obj, dz + &(&z * (two * lambda))))
}

/// Per-row `‖y − G1(z1) − G2(z2)‖² + λ1‖z1‖² + λ2‖z2‖²` and both gradients.
#[allow(clippy::too_many_arguments)]
pub fn demix_objective<T: Scalar>(
    g1: &dyn LatentModel<T>,
    g2: &dyn LatentModel<T>,
    y: ArrayView2<'_, T>,
    z1: ArrayView2<'_, T>,
    z2: ArrayView2<'_, T>,
    lambda1: T,
    lambda2: T,
) -> Result<(Array1<T>, Array2<T>, Array2<T>), InversionError> {
    check_shape(g1, y.dim())?;
    check_shape(g2, y.dim())?;
    let two = T::lit(2.0);
    let out2 = g2.forward(z2)?;
    let (out1, dz1) = g1.forward_vjp(z1, &|o1| residual(&(o1 + &out2), y) * two)?;
    let r = residual(&(&out1 + &out2), y);
    let (_, dz2) = g2.forward_vjp(z2, &|_| &r * two)?;
    let obj = sq_rows(&r) + &(latent_sq(z1) * lambda1) + &(latent_sq(z2) * lambda2);
    Ok((obj, dz1 + &(&z1 * (two * lambda1)), dz2 + &(&z2 * (two * lambda2))))
}

fn measure<T: Scalar>(op: &MeasurementOperator<T>, out: &Array3<T>) -> Array2<T> {
    let n = out.len_of(Axis(0));
    let flat = out
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, op.p()))
        .expect("contiguous");
    flat.dot(&op.a.t())
}

fn check_cs<T: Scalar>(model: &dyn LatentModel<T>, op: &MeasurementOperator<T>, y: &Array1<T>) -> Result<(), InversionError> {
    let (h, w) = model.output_shape();
    if op.m() == 0 || op.p() != h * w || y.len() != op.m() {
        return Err(InversionError::DimMismatch(format!(
            "operator {}×{}, image {h}×{w}, {} measurements",
            op.m(),
            op.p(),
            y.len()
        )));
    }
    Ok(())
}

/// Per-row `‖y − A·vec(G(z))‖² + λ‖z‖²` and its latent gradient.
pub fn cs_objective<T: Scalar>(
    model: &dyn LatentModel<T>,
    op: &MeasurementOperator<T>,
    y: &Array1<T>,
    z: ArrayView2<'_, T>,
    lambda: T,
) -> Result<(Array1<T>, Array2<T>), InversionError> {
    check_cs(model, op, y)?;
    let two = T::lit(2.0);
    let shape = model.output_shape();
    let (out, dz) = model.forward_vjp(z, &|out| {
        let r = measure(op, out) - y;
        (r.dot(&op.a) * two)
            .into_shape_with_order((out.len_of(Axis(0)), shape.0, shape.1))
            .expect("contiguous")
    })?;
    let r = measure(op, &out) - y;
    let obj: Array1<T> = r.outer_iter().map(|row| row.dot(&row)).collect::<Array1<T>>() + &(latent_sq(z) * lambda);
    Ok((obj, dz + &(&z * (two * lambda))))
}

/// Latent batch held as a single-tensor map so [`Adam`] can drive it.
struct LatentBatch<T> {
    params: TensorMap<T>,
    adam: Adam<T>,
}

impl<T: Scalar> LatentBatch<T> {
    fn new(z: Array2<T>, config: AdamConfig) -> Self {
        let mut params = TensorMap::new();
        params.insert("z", z.into_dyn());
        let adam = Adam::new(config, &params);
        Self { params, adam }
    }

    fn view(&self) -> ArrayView2<'_, T> {
        self.params.get("z").view().into_dimensionality::<Ix2>().expect("rank 2")
    }

    fn step(&mut self, grad: Array2<T>) {
        let mut g = TensorMap::new();
        g.insert("z", grad.into_dyn());
        self.adam.update(&mut self.params, &g);
    }
}

/// Best-of-trace bookkeeping for a batch of restarts.
struct Tracker<T> {
    traces: Vec<Vec<f64>>,
    best: Vec<f64>,
    best_z: Vec<Array2<T>>,
}

impl<T: Scalar> Tracker<T> {
    fn new(restarts: usize, latents: &[ArrayView2<'_, T>]) -> Self {
        Self {
            traces: vec![Vec::new(); restarts],
            best: vec![f64::INFINITY; restarts],
            best_z: latents.iter().map(|z| z.to_owned()).collect(),
        }
    }

    fn record(&mut self, obj: &Array1<T>, latents: &[ArrayView2<'_, T>], iteration: usize) -> Result<(), InversionError> {
        for (restart, &v) in obj.iter().enumerate() {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(InversionError::NonFiniteObjective { restart, iteration });
            }
            self.traces[restart].push(v);
            if v < self.best[restart] {
                self.best[restart] = v;
                for (store, z) in self.best_z.iter_mut().zip(latents) {
                    store.row_mut(restart).assign(&z.row(restart));
                }
            }
        }
        Ok(())
    }
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |b, i| if values[i] < values[b] { i } else { b })
}

fn initial_latents<T: Scalar>(dims: &[usize], opts: &InversionOptions) -> Vec<Array2<T>> {
    let mut out: Vec<Array2<T>> = dims.iter().map(|&d| Array2::zeros((opts.restarts, d))).collect();
    for i in 0..opts.restarts {
        let mut r = rng::indexed_stream(opts.seed, "inversion-restart", i as u64);
        for (z, &d) in out.iter_mut().zip(dims) {
            z.row_mut(i).assign(&sample_latent::<T, _>(1, d, &mut r).row(0));
        }
    }
    out
}

fn finish<T: Scalar>(
    models: &[&dyn LatentModel<T>],
    tracker: Tracker<T>,
    selected: usize,
    measurement_errors: Option<Vec<f64>>,
) -> Result<InversionResult<T>, InversionError> {
    let mut latents = Vec::new();
    let mut reconstructions = Vec::new();
    for (model, z) in models.iter().zip(&tracker.best_z) {
        let row = z.row(selected).to_owned();
        let img = model.forward(row.view().insert_axis(Axis(0)))?;
        reconstructions.push(img.index_axis(Axis(0), 0).to_owned());
        latents.push(row);
    }
    Ok(InversionResult {
        latents,
        reconstructions,
        objective: tracker.best[selected],
        restart_objectives: tracker.best,
        traces: tracker.traces,
        measurement_errors,
        selected_restart: selected,
    })
}

/// Single-generator descent shared by denoising and compressed sensing.
fn descend<T: Scalar>(
    model: &dyn LatentModel<T>,
    opts: &InversionOptions,
    objective: &dyn Fn(ArrayView2<'_, T>) -> Result<(Array1<T>, Array2<T>), InversionError>,
) -> Result<Tracker<T>, InversionError> {
    let z0 = initial_latents::<T>(&[model.latent_dim()], opts).remove(0);
    let mut batch = LatentBatch::new(z0, opts.adam());
    let mut tracker = Tracker::new(opts.restarts, &[batch.view()]);
    for it in 0..=opts.iterations {
        let (obj, grad) = objective(batch.view())?;
        tracker.record(&obj, &[batch.view()], it)?;
        if it < opts.iterations {
            batch.step(grad);
        }
    }
    Ok(tracker)
}

/// Recovers the clean image behind the corrupted observation `u`.
pub fn invert_denoise<T: Scalar>(
    model: &dyn LatentModel<T>,
    u: ArrayView2<'_, T>,
    opts: &InversionOptions,
) -> Result<InversionResult<T>, InversionError> {
    opts.validate()?;
    check_shape(model, u.dim())?;
    let lambda = T::lit(opts.lambda);
    let tracker = descend(model, opts, &|z| denoise_objective(model, u, z, lambda))?;
    let selected = argmin(&tracker.best);
    finish(&[model], tracker, selected, None)
}

/// Separates the mixture `y` into `G1(z1)` and `G2(z2)` by alternating
/// blocks of `inner_steps` Adam steps on each latent.
pub fn invert_demix<T: Scalar>(
    g1: &dyn LatentModel<T>,
    g2: &dyn LatentModel<T>,
    y: ArrayView2<'_, T>,
    opts: &InversionOptions,
) -> Result<InversionResult<T>, InversionError> {
    opts.validate()?;
    check_shape(g1, y.dim())?;
    check_shape(g2, y.dim())?;
    let (l1, l2) = (T::lit(opts.lambda1), T::lit(opts.lambda2));
    let mut init = initial_latents::<T>(&[g1.latent_dim(), g2.latent_dim()], opts);
    let z2 = init.pop().expect("two latents");
    let z1 = init.pop().expect("two latents");
    let mut b1 = LatentBatch::new(z1, opts.adam());
    let mut b2 = LatentBatch::new(z2, opts.adam());
    let mut tracker = Tracker::new(opts.restarts, &[b1.view(), b2.view()]);
    for it in 0..=opts.iterations {
        let (obj, d1, d2) = demix_objective(g1, g2, y, b1.view(), b2.view(), l1, l2)?;
        tracker.record(&obj, &[b1.view(), b2.view()], it)?;
        if it < opts.iterations {
            if (it / opts.inner_steps) % 2 == 0 {
                b1.step(d1);
            } else {
                b2.step(d2);
            }
        }
    }
    let selected = argmin(&tracker.best);
    finish(&[g1, g2], tracker, selected, None)
}

/// Recovers an image from `y = A·vec(x)`; the restart with the lowest
/// measurement error wins.
pub fn invert_cs<T: Scalar>(
    model: &dyn LatentModel<T>,
    op: &MeasurementOperator<T>,
    y: &Array1<T>,
    opts: &InversionOptions,
) -> Result<InversionResult<T>, InversionError> {
    opts.validate()?;
    check_cs(model, op, y)?;
    let lambda = T::lit(opts.lambda);
    let tracker = descend(model, opts, &|z| cs_objective(model, op, y, z, lambda))?;
    let out = model.forward(tracker.best_z[0].view())?;
    let r = measure(op, &out) - y;
    let errors: Vec<f64> = r.outer_iter().map(|row| row.dot(&row).as_f64()).collect();
    let selected = argmin(&errors);
    finish(&[model], tracker, selected, Some(errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn toy() -> IdentityModel {
        IdentityModel { shape: (1, 4) }
    }

    fn fast(lambda: f64) -> InversionOptions {
        InversionOptions {
            lambda,
            lambda1: lambda,
            lambda2: lambda,
            restarts: 3,
            iterations: 3000,
            ..Default::default()
        }
    }

    #[test]
    fn ridge_closed_form() {
        let u = arr2(&[[1.0f64, 1.0, 1.0, 1.0]]);
        let res = invert_denoise(&toy(), u.view(), &fast(0.5)).unwrap();
        for &v in &res.latents[0] {
            assert!((v - 2.0 / 3.0).abs() < 1e-6, "{v}");
        }
        assert!((res.objective - 4.0 / 3.0).abs() < 1e-6);
        for t in &res.traces {
            assert!(t.last().unwrap() <= &t[0]);
        }
    }

    #[test]
    fn demix_symmetric_closed_form() {
        let y = arr2(&[[3.0f64, 0.0, 0.0, 0.0]]);
        let res = invert_demix(&toy(), &toy(), y.view(), &fast(1.0)).unwrap();
        for z in &res.latents {
            assert!((z[0] - 1.0).abs() < 1e-6 && z.iter().skip(1).all(|v| v.abs() < 1e-6), "{z}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let u = arr2(&[[1.0f64, 2.0]]);
        assert!(matches!(
            invert_denoise(&toy(), u.view(), &fast(0.1)),
            Err(InversionError::ShapeMismatch { .. })
        ));
        let mut o = fast(0.1);
        o.restarts = 0;
        assert!(matches!(
            invert_denoise(&toy(), arr2(&[[0.0f64; 4]]).view(), &o),
            Err(InversionError::Options(_))
        ));
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 3.0]), 1);
    }
}
