//! Normed embeddings: triplet sampling, the composite loss, training and the
//! comparison encoders.

mod baselines;
mod config;
mod loss;
mod model;
mod sampling;
mod train;

pub use baselines::{
    all_state_refs, corrupt, jitter, reconstruction_error, train_denoising_autoencoder, train_plain_triplet,
    DaeConfig, DaeResult, PlainTripletConfig,
};
pub use config::{CosineVariant, LossConfig, ReleaseTarget};
pub use loss::{
    cosine_loss, loss_contrastive, loss_intermediate, loss_terminal, loss_terms, total_loss, triplet_loss,
    EmbeddedTriplet, LossTerms, TripletLabels,
};
pub use model::{
    load_model, row_norms_sq, save_model, sidecar_path, EmbeddingModel, EncoderInput, EncoderKind, ModelConfig,
    Normalizer, OutputKind,
};
pub use sampling::{sample_triplet_batch, StateRef, Triplet, TripletSampler};
pub use train::{evaluate_loss, fit_validation_split, train, train_step, train_with, EpochRecord, TrainReport};

use std::path::Path;

use crate::error::Result;
use crate::numerics::Scalar;

/// Saves a trained normed model with the loss settings and cohort seed in its sidecar.
pub fn save_checkpoint<T: Scalar>(model: &EmbeddingModel<T>, loss: &LossConfig, cohort_seed: u64, path: &Path) -> Result<()> {
    let mut extra: Vec<(String, String)> = loss.to_kv().into_iter().map(|(k, v)| (format!("loss.{k}"), v)).collect();
    extra.push(("cohort_seed".into(), cohort_seed.to_string()));
    save_model(model, path, &extra)
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(EmbeddingModel<T>, LossConfig, Option<u64>)> {
    let (model, rest) = load_model(path)?;
    let mut loss = LossConfig::default();
    let mut cohort_seed = None;
    for (k, v) in rest {
        if let Some(key) = k.strip_prefix("loss.") {
            loss.set(key, &v)?;
        } else if k == "cohort_seed" {
            cohort_seed = v.parse().ok();
        }
    }
    Ok((model, loss, cohort_seed))
}
