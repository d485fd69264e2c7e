use crate::cohort::Cohort;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocResult {
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Mann–Whitney AUROC: the probability that a random positive outscores a
/// random negative, ties counting one half.
///
/// Counts are accumulated as integers (`2·wins + ties` over `2·P·N`), so the
/// result is exactly the pair-counting value.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("auroc scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        // -0.0 and 0.0 are one tie group
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        let neg = (j - i) as u128 - pos;
        doubled += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    let auroc = doubled as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocResult {
        auroc,
        positives,
        negatives,
    })
}

/// The five "within h hours of death" tasks.
pub const HORIZONS: [usize; 5] = [12, 24, 48, 72, 120];

/// State label: 1 iff the state belongs to a non-survivor and lies fewer than
/// `horizon` hours before death. Survivor states are always negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HorizonTask {
    pub horizon: usize,
}

impl HorizonTask {
    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    /// Labels for every state of the cohort, patients in order.
    pub fn labels(&self, cohort: &Cohort) -> Vec<bool> {
        cohort
            .patients
            .iter()
            .flat_map(|p| (0..p.len()).map(move |h| p.outcome.is_death() && p.hours_to_end(h) < self.horizon))
            .collect()
    }
}

/// AUROC of per-state scores (one vector per patient) on each horizon task.
pub fn auroc_by_horizon(scores: &[Vec<f64>], cohort: &Cohort, horizons: &[usize]) -> Result<Vec<(usize, RocResult)>> {
    if scores.len() != cohort.len() || scores.iter().zip(&cohort.patients).any(|(s, p)| s.len() != p.len()) {
        return Err(Error::shape("auroc_by_horizon scores", "one score per state", "mismatched lengths"));
    }
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    horizons
        .iter()
        .map(|&h| Ok((h, auroc(&flat, &HorizonTask::new(h).labels(cohort))?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineScore {
    Sofa,
    /// Sum of the four carried subscores.
    Sofa4,
}

impl BaselineScore {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineScore::Sofa => "sofa",
            BaselineScore::Sofa4 => "sofa4",
        }
    }
}

pub fn baseline_scores(cohort: &Cohort, score: BaselineScore) -> Vec<Vec<f64>> {
    cohort
        .patients
        .iter()
        .map(|p| {
            p.states
                .iter()
                .map(|s| match score {
                    BaselineScore::Sofa => s.scores.sofa as f64,
                    BaselineScore::Sofa4 => s.scores.sofa4() as f64,
                })
                .collect()
        })
        .collect()
}

pub fn baseline_score_auroc(cohort: &Cohort, horizons: &[usize], score: BaselineScore) -> Result<Vec<(usize, RocResult)>> {
    auroc_by_horizon(&baseline_scores(cohort, score), cohort, horizons)
}
