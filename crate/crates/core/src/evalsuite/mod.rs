//! Evaluation of embeddings: AUROC tasks, linear probes, trajectory smoothness,
//! organ separation, ablation sweeps and report export.

mod ablation;
mod metrics;
mod probe;
mod report;
mod roc;
mod trajectory;

pub use ablation::*;
pub use metrics::*;
pub use probe::*;
pub use report::*;
pub use roc::*;
pub use trajectory::*;
