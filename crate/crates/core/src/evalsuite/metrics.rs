//! Metrics computed directly from a trained embedding model.

use super::probe::{logistic_probe, ProbeConfig, ProbeResult};
use super::roc::{auroc_by_horizon, HorizonTask, RocResult};
use super::trajectory::{organ_separation, relative_jumps, time_to_event_curve, JumpStats, SeparationStats, TimeToEventCurve};
use crate::cohort::Cohort;
use crate::embedding::EmbeddingModel;
use crate::error::Result;
use crate::numerics::{Scalar, Tensor};

/// AUROC of `d(x)` on each horizon task.
pub fn norm_auroc<T: Scalar>(model: &EmbeddingModel<T>, cohort: &Cohort, horizons: &[usize]) -> Result<Vec<(usize, RocResult)>> {
    auroc_by_horizon(&model.risk_cohort(cohort)?, cohort, horizons)
}

pub fn model_jumps<T: Scalar>(model: &EmbeddingModel<T>, cohort: &Cohort) -> Result<JumpStats> {
    Ok(relative_jumps(&model.risk_cohort(cohort)?))
}

pub fn model_curve<T: Scalar>(model: &EmbeddingModel<T>, cohort: &Cohort, max_hours: usize) -> Result<TimeToEventCurve> {
    time_to_event_curve(&model.risk_cohort(cohort)?, cohort, max_hours)
}

pub fn model_separation<T: Scalar>(model: &EmbeddingModel<T>, cohort: &Cohort, t: usize) -> Result<SeparationStats> {
    organ_separation(&model.embed_cohort(cohort)?, cohort, t)
}

/// Per-state probe inputs: the embedding row, optionally followed by its
/// squared norm, and the owning patient index.
pub fn probe_features<T: Scalar>(embeddings: &[Tensor<T>], with_norm: bool) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut features = Vec::new();
    let mut groups = Vec::new();
    for (patient, e) in embeddings.iter().enumerate() {
        for r in 0..e.shape()[0] {
            let mut f: Vec<f64> = e.row(r).iter().map(|v| v.to_f64_lossy()).collect();
            if with_norm {
                f.push(f.iter().map(|x| x * x).sum());
            }
            features.push(f);
            groups.push(patient);
        }
    }
    (features, groups)
}

/// Linear probe of precomputed embeddings on each horizon task; every task
/// uses the same patient splits.
pub fn probe_embeddings<T: Scalar>(
    embeddings: &[Tensor<T>],
    cohort: &Cohort,
    horizons: &[usize],
    with_norm: bool,
    config: &ProbeConfig,
    seed: u64,
) -> Result<Vec<(usize, ProbeResult)>> {
    let (features, groups) = probe_features(embeddings, with_norm);
    horizons
        .iter()
        .map(|&h| Ok((h, logistic_probe(&features, &HorizonTask::new(h).labels(cohort), &groups, config, seed)?)))
        .collect()
}

/// Unweighted mean over horizons of the split-mean probe AUROC.
pub fn mean_probe_auroc(results: &[(usize, ProbeResult)]) -> f64 {
    results.iter().map(|(_, r)| r.mean_auroc).sum::<f64>() / results.len().max(1) as f64
}

/// Trace of the sample covariance (population normalization) of all embedded states.
pub fn embedding_covariance_trace<T: Scalar>(embeddings: &[Tensor<T>]) -> f64 {
    let rows: Vec<&[T]> = embeddings.iter().flat_map(|t| (0..t.shape()[0]).map(move |r| t.row(r))).collect();
    let Some(first) = rows.first() else { return 0.0 };
    let n = rows.len() as f64;
    (0..first.len())
        .map(|j| {
            let m = rows.iter().map(|r| r[j].to_f64_lossy()).sum::<f64>() / n;
            rows.iter().map(|r| (r[j].to_f64_lossy() - m).powi(2)).sum::<f64>() / n
        })
        .sum()
}
