//! Deep normed embeddings for clinical time series.
//!
//! Patient states are mapped into the closed unit ball so that the squared
//! norm tracks mortality risk and the angle between non-survivor states tracks
//! which organ system is failing. The crate also carries the evaluation
//! protocol for such embeddings and an offline distributional RL stage whose
//! intermediate rewards are derived from the learned risk.
//!
//! The numeric core is generic over [`numerics::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which everything downstream uses.

pub mod cohort;
pub mod embedding;
pub mod error;
pub mod evalsuite;
pub mod numerics;
pub mod rlshape;
pub mod seed;

pub use error::{Error, Result};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape64 = numerics::Tape<f64>;
pub type Mlp64 = numerics::Mlp<f64>;
pub type Gru64 = numerics::Gru<f64>;
pub type Adam64 = numerics::Adam<f64>;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tape32 = numerics::Tape<f32>;
