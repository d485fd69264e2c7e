use rand::Rng;
use rand_distr::{Distribution, WeightedIndex};

use super::config::LossConfig;
use super::loss::TripletLabels;
use crate::cohort::{near_terminal_hours, Cohort, OrganLabel, Outcome};
use crate::error::{Error, Result};

/// A state addressed by patient index (into the cohort) and hour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateRef {
    pub patient: usize,
    pub hour: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    /// Always a terminal state.
    pub anchor: StateRef,
    pub positive: StateRef,
    pub negative: StateRef,
    pub anchor_outcome: Outcome,
    /// Worst organ of each non-survivor member, `None` for survivors.
    pub anchor_organ: Option<OrganLabel>,
    pub positive_organ: Option<OrganLabel>,
    pub negative_organ: Option<OrganLabel>,
    /// `y_ap`: death anchor and positive share their worst organ.
    pub same_organ: bool,
}

impl Triplet {
    pub fn labels(&self) -> TripletLabels {
        TripletLabels {
            anchor_outcome: self.anchor_outcome,
            same_organ: self.same_organ,
        }
    }
}

/// Reusable sampler over one cohort.
///
/// Anchors are patients drawn with weight `nonsurvivor_weight` for
/// non-survivors and 1 for survivors; their terminal state is the anchor.
/// A non-survivor and a survivor state are then drawn uniformly from the last
/// `t` hours of two other patients.
#[derive(Clone, Debug)]
pub struct TripletSampler<'a> {
    cohort: &'a Cohort,
    anchors: WeightedIndex<f64>,
    deaths: Vec<usize>,
    releases: Vec<usize>,
    t: usize,
}

impl<'a> TripletSampler<'a> {
    pub fn new(cohort: &'a Cohort, config: &LossConfig) -> Result<Self> {
        let (deaths, releases): (Vec<usize>, Vec<usize>) =
            (0..cohort.len()).partition(|&i| cohort.patients[i].outcome.is_death());
        if deaths.is_empty() || releases.is_empty() {
            return Err(Error::Sampling(format!(
                "triplets need both outcomes, cohort has {} non-survivors and {} survivors",
                deaths.len(),
                releases.len()
            )));
        }
        if config.near_terminal_t == 0 {
            return Err(Error::Config("near_terminal_t must be at least 1".into()));
        }
        let weights = cohort
            .patients
            .iter()
            .map(|p| if p.outcome.is_death() { config.nonsurvivor_weight } else { 1.0 });
        let anchors = WeightedIndex::new(weights).map_err(|e| Error::Sampling(e.to_string()))?;
        Ok(Self {
            cohort,
            anchors,
            deaths,
            releases,
            t: config.near_terminal_t,
        })
    }

    pub fn cohort(&self) -> &'a Cohort {
        self.cohort
    }

    /// Uniform draw from `pool`, avoiding `exclude` whenever another choice exists.
    fn other_patient<R: Rng + ?Sized>(pool: &[usize], exclude: usize, rng: &mut R) -> usize {
        let excluded = pool.binary_search(&exclude).is_ok();
        if !excluded || pool.len() == 1 {
            return pool[rng.gen_range(0..pool.len())];
        }
        let k = rng.gen_range(0..pool.len() - 1);
        let pos = pool.binary_search(&exclude).expect("present");
        pool[if k >= pos { k + 1 } else { k }]
    }

    fn near_terminal<R: Rng + ?Sized>(&self, patient: usize, rng: &mut R) -> StateRef {
        let hours = near_terminal_hours(&self.cohort.patients[patient], self.t);
        StateRef {
            patient,
            hour: rng.gen_range(hours),
        }
    }

    fn organ(&self, s: StateRef) -> Option<OrganLabel> {
        let p = &self.cohort.patients[s.patient];
        p.outcome.is_death().then(|| p.states[s.hour].worst_organ())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Triplet {
        let a = self.anchors.sample(rng);
        let anchor_patient = &self.cohort.patients[a];
        let anchor = StateRef {
            patient: a,
            hour: anchor_patient.terminal_hour(),
        };
        let death_draw = self.near_terminal(Self::other_patient(&self.deaths, a, rng), rng);
        let release_draw = self.near_terminal(Self::other_patient(&self.releases, a, rng), rng);
        let (positive, negative) = match anchor_patient.outcome {
            Outcome::Death => (death_draw, release_draw),
            Outcome::Release => (release_draw, death_draw),
        };
        let anchor_organ = self.organ(anchor);
        let positive_organ = self.organ(positive);
        Triplet {
            anchor,
            positive,
            negative,
            anchor_outcome: anchor_patient.outcome,
            anchor_organ,
            positive_organ,
            negative_organ: self.organ(negative),
            same_organ: anchor_organ.is_some() && anchor_organ == positive_organ,
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<Triplet> {
        (0..size).map(|_| self.sample(rng)).collect()
    }
}

pub fn sample_triplet_batch<R: Rng + ?Sized>(cohort: &Cohort, config: &LossConfig, rng: &mut R) -> Result<Vec<Triplet>> {
    Ok(TripletSampler::new(cohort, config)?.sample_batch(config.batch_size, rng))
}
