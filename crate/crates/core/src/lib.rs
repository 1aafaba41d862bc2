//! Shallow-water striation toolkit.
//!
//! * [`modes`]: normal modes of a range-independent waveguide.
//! * [`field`]: array pressure from modal amplitudes with one coupling event.
//! * [`coupling`]: coupling matrices and the random coupling model.
//! * [`nliw`] and [`scene`]: internal-wave coupling and moving test scenes.
//! * [`dataset`]: training pairs and the `AISD` container.
//! * [`analysis`]: β-spectra, correlation, ranging and sweep metrics.
//! * [`nn`]: U-Net and VGG-style recovery networks.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix the
//! usual choices (physics in `f64`, networks in `f32`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod coupling;
pub mod dataset;
pub mod field;
pub mod image;
pub mod linalg;
pub mod modes;
pub mod nliw;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scene;

pub use scalar::Real;

pub type Environment = config::Environment<f64>;
pub type ModeSet = modes::ModeSet<f64>;
pub type WaveguideEnv = modes::WaveguideEnv<f64>;
pub type CouplingMatrix = coupling::CouplingMatrix<f64>;
pub type NliwShape = nliw::NliwShape<f64>;
pub type CoupledBand = nliw::CoupledBand<f64>;
pub type DatasetContext = dataset::DatasetContext<f64>;
pub type Sample = dataset::Sample<f64>;
pub type StoredSample = dataset::Sample<f32>;
pub type Image = image::StriationImage<f64>;
pub type Image32 = image::StriationImage<f32>;
pub type BetaSpectrum = analysis::BetaSpectrum<f64>;
pub type Network = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Tensor = nn::Tensor4<f32>;
