//! Latent-skill scaling laws for LLM benchmark performance.
//!
//! Benchmark scores of a model with `s` parameters trained on `t` tokens
//! are modelled through a handful of latent skills that grow with compute
//! along translog curves shared across model families, each family only
//! shifting the curves by an efficiency intercept.
//!
//! Module map:
//!
//! - [`dataset`]: score tables and lower-asymptote configuration
//! - [`design`]: compute features and the design matrix
//! - [`model`]: parameters and the forward model
//! - [`fit`]: robust (Huber) fitting with Adam and restarts
//! - [`identify`]: whitening, Geomin rotation, standardization
//! - [`baselines`]: FLOPs-only and PCA + FLOPs comparison laws
//! - [`evaluate`]: family leave-one-out cross-validation
//! - [`optimal`]: compute-optimal allocation of a FLOPs budget
//! - [`downstream`]: downstream-task and pass@k prediction from skills
//! - [`synth`]: synthetic data from known parameters

pub mod baselines;
pub mod dataset;
pub mod design;
pub mod downstream;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod identify;
pub mod model;
pub mod optim;
pub mod optimal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
