//! Perturbation-mask explanations for multivariate time-series models.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradcore`] – dense reverse-mode autodiff with an Adam optimiser.
//! * [`datagen`] – synthetic regimes with ground-truth saliency.
//! * [`models`] – the white-box regressor and a GRU classifier.
//! * [`explainers`] – the contrastive sparse-gate mask explainer plus
//!   occlusion and integrated-gradient baselines.
//! * [`metrics`] – AUP/AUR, mask information/entropy, substitution and
//!   distribution-shift metrics.
//!
//! All numerical code is generic over [`Scalar`]; the aliases below fix the
//! width used by the experiments (`f64`).

pub mod datagen;
pub mod error;
pub mod explainers;
pub mod gradcore;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = gradcore::Tensor<f64>;
pub type Graph64 = gradcore::Graph<f64>;
pub type Tensor32 = gradcore::Tensor<f32>;
pub type Graph32 = gradcore::Graph<f32>;
