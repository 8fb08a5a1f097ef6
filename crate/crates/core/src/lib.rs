//! Learned single-step importance samplers.
//!
//! A small network `T` maps draws from an easy prior `q` onto a target
//! density `f`; the change of variables gives the sampling density
//! `q(z) / |det J_T(z)|` exactly, so Monte Carlo estimates stay unbiased.
//!
//! * [`nnet`] — the dense-MLP engine (forward-mode input Jacobians,
//!   reverse-mode parameter gradients, Adam).
//! * [`targets`] — priors, target densities and the quadrature oracle.
//! * [`reparam`] — the sampler, its losses and training loop.
//! * [`pdfnet`] — the pdf-approximation network used in MIS weights.
//! * [`estimator`] — unbiased estimators on a one-bounce toy scene.
//! * [`diagnostics`] — histograms, KL, coverage and injectivity checks.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common choice.

// `!(x > 0)` style checks are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod nnet;
pub mod pdfnet;
pub mod reparam;
pub mod rng;
pub mod scalar;
pub mod targets;

pub use error::{Error, Result};
pub use scalar::{Dual, Real, Scalar};

pub type SamplerModel64 = reparam::SamplerModel<f64>;
pub type SamplerModel32 = reparam::SamplerModel<f32>;
pub type PdfModel64 = pdfnet::PdfModel<f64>;
pub type PdfModel32 = pdfnet::PdfModel<f32>;
pub type TargetDensity64 = targets::TargetDensity<f64>;
pub type TargetDensity32 = targets::TargetDensity<f32>;
