//! Single-image deraining with closed-loop feedback.
//!
//! The network predicts a rain residual map and subtracts it from the input.
//! Two feedback mechanisms sharpen the residual during training and inference:
//! an error detector that estimates where a half-scale rain embedding is wrong
//! and rectifies it in place, and a feature compensator that injects rectified
//! rain embeddings back into the trunk at quarter and half scale.
//!
//! Everything runs on a small f64 reverse-mode autodiff engine built on
//! `ndarray`, sized so that training and the full test suite finish on a
//! laptop CPU in minutes.

pub mod blocks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod nn;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
