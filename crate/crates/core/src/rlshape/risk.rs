use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::cohort::{Cohort, PatientTrajectory};
use crate::embedding::{load_checkpoint, row_norms_sq, save_checkpoint, train, EmbeddingModel, LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

/// Mean of per-member squared norms.
pub fn mean_squared_norm(norms_sq: &[f64]) -> f64 {
    norms_sq.iter().sum::<f64>() / norms_sq.len().max(1) as f64
}

/// Risk `d(s)` as the mean squared embedding norm over several networks.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskModel {
    pub members: Vec<EmbeddingModel<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskConfig {
    pub members: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            members: 10,
            model: ModelConfig {
                embedding_dim: 10,
                ..ModelConfig::default()
            },
            loss: LossConfig::default(),
        }
    }
}

impl RiskModel {
    pub fn new(members: Vec<EmbeddingModel<f64>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Config("a risk model needs at least one member".into()));
        };
        if members.iter().any(|m| m.config != first.config) {
            return Err(Error::Config("risk model members must share one architecture".into()));
        }
        Ok(Self { members })
    }

    pub fn compute_d(&self, traj: &PatientTrajectory, hour: usize) -> Result<f64> {
        let norms: Vec<f64> = self
            .members
            .iter()
            .map(|m| Ok(row_norms_sq(&m.embed_items(&[(traj, hour)])?)[0]))
            .collect::<Result<_>>()?;
        Ok(mean_squared_norm(&norms))
    }

    /// `d` of every state, one vector per patient.
    pub fn risk_cohort(&self, cohort: &Cohort) -> Result<Vec<Vec<f64>>> {
        let per_member: Vec<Vec<Vec<f64>>> = self.members.iter().map(|m| m.risk_cohort(cohort)).collect::<Result<_>>()?;
        let k = per_member.len() as f64;
        Ok(cohort
            .patients
            .iter()
            .enumerate()
            .map(|(i, p)| (0..p.len()).map(|h| per_member.iter().map(|m| m[i][h]).sum::<f64>() / k).collect())
            .collect())
    }

    /// Embedding of the first member, used for state augmentation.
    pub fn embed_cohort(&self, cohort: &Cohort) -> Result<Vec<Tensor<f64>>> {
        self.members[0].embed_cohort(cohort)
    }

    pub fn member_path(dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("member_{index:02}.ckpt"))
    }

    pub fn save(&self, dir: &Path, loss: &LossConfig, cohort_seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, m) in self.members.iter().enumerate() {
            save_checkpoint(m, loss, cohort_seed, &Self::member_path(dir, i))?;
        }
        Ok(())
    }

    /// Loads `member_00.ckpt`, `member_01.ckpt`, ... until the first missing index.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut members = Vec::new();
        while Self::member_path(dir, members.len()).exists() {
            members.push(load_checkpoint(&Self::member_path(dir, members.len()))?.0);
        }
        if members.is_empty() {
            return Err(Error::NotFound(Self::member_path(dir, 0)));
        }
        Self::new(members)
    }
}

/// Trains `config.members` networks, member `i` on a bootstrap resample (with
/// replacement, same size) of the patients, with its out-of-bag patients
/// selecting the best epoch.
pub fn train_risk_model(cohort: &Cohort, config: &RiskConfig, seed_value: u64) -> Result<RiskModel> {
    if config.members == 0 {
        return Err(Error::Config("risk model needs at least one member".into()));
    }
    let members = (0..config.members)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(seed_value, "risk.member", i as u64);
            let n = cohort.len();
            let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            for &p in &picks {
                in_bag[p] = true;
            }
            let oob: Vec<usize> = (0..n).filter(|&p| !in_bag[p]).collect();
            let bag = cohort.subset(&picks);
            let val = cohort.subset(&oob);
            let val = if val.has_both_outcomes() { val } else { bag.clone() };
            if !bag.has_both_outcomes() {
                return Err(Error::Sampling(format!("risk member {i}: bootstrap sample lacks an outcome")));
            }
            let mut model = EmbeddingModel::for_cohort(config.model.clone(), &bag, &mut rng)?;
            train(&mut model, &bag, &val, &config.loss, &mut rng)?;
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    RiskModel::new(members)
}
