//! Offline distributional RL with rewards shaped by the learned risk.

mod c51;
mod mdp;
mod policy;
mod reward;
mod risk;

pub use c51::*;
pub use mdp::*;
pub use policy::*;
pub use reward::*;
pub use risk::*;
