//! MBCRNet: multi-branch convolution and residual networks for multi-lead
//! ECG classification.
//!
//! The crate is self-contained: a dense f64 tensor engine with reverse-mode
//! automatic differentiation ([`tape`]), the DBCRN building blocks and the
//! three lead-feature-fusion model variants ([`nn`], [`model`]), an ECG
//! record format and preprocessing pipeline ([`data`]), a seeded synthetic
//! data generator ([`synth`]), and a training/evaluation harness with
//! stratified cross-validation ([`train`], [`folds`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod folds;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seeds;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
