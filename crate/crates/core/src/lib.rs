//! Probabilistic latent variable models built from a common generative
//! template: latent draws `z ~ p(z | θ)` followed by observations
//! `y ~ p(y | z, θ)`.
//!
//! * [`numerics`]: dense linear algebra and seeded random streams.
//! * [`distributions`]: samplers and densities (multivariate normal,
//!   Dirichlet, generalized Gaussian, stick-breaking weights).
//! * [`zoo`]: declarative model specs (PPCA, FA, ICA, CCA, IBFA, MBFA, GFA,
//!   LISREL, GSCA, matrix normal, Tobit, Airy, temporal), ancestral
//!   sampling, closed-form implied moments and reduction checks.
//! * [`deep`]: neural building blocks for deep latent Gaussian models,
//!   inverse autoregressive flows and amortized posteriors.
//! * [`estimators`]: closed-form and EM fitting for PPCA, FA, CCA, the
//!   Airy variance-components model and Dirichlet–Categorical updates.

pub mod deep;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod numerics;
pub mod zoo;

pub use error::{LvmError, Result};
pub use numerics::{Matrix, RngStream, SpdMatrix, Vector};
