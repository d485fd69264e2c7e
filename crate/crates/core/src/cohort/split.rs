use rand::seq::SliceRandom;
use rand::Rng;

use super::types::{Cohort, PatientTrajectory, StateVector};
use crate::error::{Error, Result};

/// Hour indices whose time-to-end is below `t`.
pub fn near_terminal_hours(traj: &PatientTrajectory, t: usize) -> std::ops::Range<usize> {
    let len = traj.len();
    len.saturating_sub(t)..len
}

/// States in the last `t` hours of the stay (the whole stay if it is shorter).
pub fn near_terminal_states(traj: &PatientTrajectory, t: usize) -> Result<&[StateVector]> {
    if t == 0 {
        return Err(Error::Config("near-terminal window must be at least 1 hour".into()));
    }
    Ok(&traj.states[near_terminal_hours(traj, t)])
}

/// Patient-level permutation split into `(train, test)` index lists.
pub fn split_indices<R: Rng + ?Sized>(n: usize, train_fraction: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    Ok((idx, test))
}

pub fn split_cohort<R: Rng + ?Sized>(cohort: &Cohort, train_fraction: f64, rng: &mut R) -> Result<(Cohort, Cohort)> {
    let (train, test) = split_indices(cohort.len(), train_fraction, rng)?;
    Ok((cohort.subset(&train), cohort.subset(&test)))
}
