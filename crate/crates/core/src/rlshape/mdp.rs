use std::io::Write;

use super::reward::RewardSpec;
use super::risk::RiskModel;
use crate::cohort::{write_cohort_csv_with, Cohort, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One hour-to-hour step of a logged stay.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub patient: usize,
    pub hour: usize,
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub d_s: f64,
    pub d_next: f64,
}

/// Per-state inputs of the Q-network: the 41 features, optionally followed by
/// an embedding row.
pub fn state_inputs(cohort: &Cohort, augment: Option<&[Tensor<f64>]>) -> Result<Vec<Vec<Vec<f64>>>> {
    if let Some(emb) = augment {
        if emb.len() != cohort.len() {
            return Err(Error::shape("state augmentation", cohort.len(), emb.len()));
        }
    }
    Ok(cohort
        .patients
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.states
                .iter()
                .enumerate()
                .map(|(h, s)| {
                    let mut v = s.features().to_vec();
                    if let Some(emb) = augment {
                        v.extend_from_slice(emb[i].row(h));
                    }
                    v
                })
                .collect()
        })
        .collect())
}

/// Transitions of every stay given cached per-state risk `d`. The last
/// transition of a stay is `done` and carries the terminal reward computed
/// from the risk of the stay's final state.
pub fn build_transitions(cohort: &Cohort, d: &[Vec<f64>], inputs: &[Vec<Vec<f64>>], spec: &RewardSpec) -> Result<Vec<Transition>> {
    if d.len() != cohort.len() || inputs.len() != cohort.len() {
        return Err(Error::shape("build_mdp", cohort.len(), format!("{} risks, {} inputs", d.len(), inputs.len())));
    }
    let mut out = Vec::with_capacity(cohort.num_states());
    for (i, p) in cohort.patients.iter().enumerate() {
        if d[i].len() != p.len() || inputs[i].len() != p.len() {
            return Err(Error::shape("build_mdp stay", p.len(), d[i].len()));
        }
        for h in 0..p.len().saturating_sub(1) {
            let done = h + 2 == p.len();
            let reward = if done {
                spec.terminal(p.outcome, d[i][h + 1])
            } else {
                spec.intermediate(d[i][h], d[i][h + 1])
            };
            out.push(Transition {
                patient: i,
                hour: h,
                state: inputs[i][h].clone(),
                action: p.actions[h].index(),
                reward,
                next_state: inputs[i][h + 1].clone(),
                done,
                d_s: d[i][h],
                d_next: d[i][h + 1],
            });
        }
    }
    Ok(out)
}

/// Transition dataset of `cohort` under `spec`, with `d` computed once per state.
pub fn build_mdp(cohort: &Cohort, risk: &RiskModel, spec: &RewardSpec, augment: bool) -> Result<Vec<Transition>> {
    let d = risk.risk_cohort(cohort)?;
    let emb = if augment { Some(risk.embed_cohort(cohort)?) } else { None };
    let inputs = state_inputs(cohort, emb.as_deref())?;
    build_transitions(cohort, &d, &inputs, spec)
}

pub fn input_dim(augment: Option<usize>) -> usize {
    STATE_DIM + augment.unwrap_or(0)
}

/// Cohort CSV rows extended with `r, done, d_s, d_s_next` of the transition
/// leaving each hour; the final hour of a stay leaves those columns empty
/// except `d_s`.
pub fn write_transitions_csv<W: Write>(cohort: &Cohort, transitions: &[Transition], writer: W) -> Result<()> {
    let mut by_patient: Vec<Vec<&Transition>> = vec![Vec::new(); cohort.len()];
    for t in transitions {
        by_patient
            .get_mut(t.patient)
            .ok_or_else(|| Error::shape("transition patient", cohort.len(), t.patient))?
            .push(t);
    }
    write_cohort_csv_with(cohort, writer, &["r", "done", "d_s", "d_s_next"], |i, p, h| {
        match by_patient[i].get(h) {
            Some(t) => vec![t.reward.to_string(), u8::from(t.done).to_string(), t.d_s.to_string(), t.d_next.to_string()],
            None => {
                let last = by_patient[i].last().map_or(String::new(), |t| t.d_next.to_string());
                debug_assert_eq!(h + 1, p.len());
                vec![String::new(), String::new(), last, String::new()]
            }
        }
    })
}
