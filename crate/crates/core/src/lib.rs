//! Generative priors for superposed signals: GAN training on corrupted or
//! mixed observations, latent-space inversion, classical baselines, and
//! finite-group checks of the identifiability arguments.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod corruption;
pub mod data;
pub mod eval;
pub mod ica;
pub mod inversion;
pub mod io;
pub mod nets;
pub mod rng;
pub mod sensing;
pub mod spectral;
pub mod train;
mod scalar;

pub use scalar::Scalar;

pub type ImageSet32 = data::ImageSet<f32>;
pub type ImageSet64 = data::ImageSet<f64>;
pub type NetworkParams32 = nets::NetworkParams<f32>;
pub type NetworkParams64 = nets::NetworkParams<f64>;
pub type GanState32 = train::GanState<f32>;
pub type GanState64 = train::GanState<f64>;
pub type MeasurementOperator32 = sensing::MeasurementOperator<f32>;
pub type MeasurementOperator64 = sensing::MeasurementOperator<f64>;
/// Floating-point law on `Z_n`.
pub type Distribution = spectral::DiscreteDistribution<f64>;
/// Exact rational law on `Z_n`.
pub type ExactDistribution = spectral::DiscreteDistribution<num_rational::Rational64>;
