//! Rotationally invariant denoising of rectangular matrices.
//!
//! Observations follow `Y = sqrt(lambda) S + Z` with `S` and `Z` of size
//! `N x M`, `N <= M`, and `Z` bi-rotationally invariant. The crate provides
//! the channel samplers ([`ensembles`]), kernel estimates of the singular
//! value density and its Hilbert transform ([`spectral`]), the rectangular
//! free-probability transforms ([`freeprob`]), the shrinkage estimators and
//! overlap predictions ([`rie`]), the MMSE formulas ([`mmse`]) and a
//! config-driven experiment runner ([`harness`]).
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensembles;
mod error;
pub mod freeprob;
pub mod harness;
pub mod mmse;
mod quad;
pub mod rie;
mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub use faer::Mat;

pub type Matrix = Mat<f64>;
pub type Spectrum = spectral::SingularSpectrum<f64>;
pub type Density = spectral::DensityEstimate<f64>;
pub type Params = ensembles::ChannelParams<f64>;
pub type Noise = ensembles::NoiseModel<f64>;
pub type Prior = ensembles::SignalPrior<f64>;
pub type Shrinkage = rie::ShrinkageResult<f64>;
pub type Measure = freeprob::MeasureRep<f64>;

pub type Matrix32 = Mat<f32>;
pub type Spectrum32 = spectral::SingularSpectrum<f32>;
pub type Density32 = spectral::DensityEstimate<f32>;
pub type Params32 = ensembles::ChannelParams<f32>;
pub type Noise32 = ensembles::NoiseModel<f32>;
pub type Shrinkage32 = rie::ShrinkageResult<f32>;
