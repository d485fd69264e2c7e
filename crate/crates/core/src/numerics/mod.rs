//! Dense tensors, reverse-mode differentiation, the encoder networks,
//! orthogonal initialization and Adam.

mod adam;
pub mod checkpoint;
mod init;
mod nn;
mod scalar;
mod tape;
mod tensor;

pub use adam::Adam;
pub use init::{orthogonal_init, orthogonality_residual, Init};
pub use nn::{Gru, GruLayer, GruSpec, Linear, Mlp, MlpSpec, OutputActivation, Parameters};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
