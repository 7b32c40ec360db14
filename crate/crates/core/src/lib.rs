//! Longitudinal screening risk modelling.
//!
//! A small dense-tensor autodiff engine drives a three-stage model: a frozen
//! per-visit encoder fuses the four images of a screening visit, a
//! transformer aggregates up to five yearly visits, and an additive-hazard
//! head turns the result into a nondecreasing five-year cumulative risk
//! curve. Around the model sit synthetic cohort generation, censoring-aware
//! trajectory expansion, training with early stopping and grid search, and
//! a pseudo-test-set evaluation protocol.

pub mod autograd;
pub mod checkpoint;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod survival;
pub mod temporal;
pub mod tensor;
pub mod trainer;
pub mod visit_encoder;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use model::{ModelConfig, RiskModel};
pub use survival::{LossWeights, RiskCurve};
pub use temporal::HistoryMask;
pub use tensor::Tensor;
