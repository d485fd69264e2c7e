use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::c51::{argmax_lowest, c51_train, expected_values, greedy_action, C51Config, C51Report, QNetwork, NUM_ACTIONS};
use super::mdp::build_transitions;
use super::reward::RewardSpec;
use crate::cohort::{ActionPair, Cohort};
use crate::error::{Error, Result};
use crate::seed;

pub const MEMBER_FRACTION: (f64, f64) = (0.6, 0.85);

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub network: QNetwork,
    /// Sorted patient indices of the member's training subset.
    pub patients: Vec<usize>,
    pub fraction: f64,
    pub report: C51Report,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
}

/// Draws `k ~ U(0.6, 0.85)` and `⌊k·P⌋` patients without replacement for member `index`.
pub fn member_subset(num_patients: usize, seed_value: u64, index: usize) -> (f64, Vec<usize>) {
    let mut rng = seed::rng_for(seed_value, "rl.member.subset", index as u64);
    let k = rng.gen_range(MEMBER_FRACTION.0..=MEMBER_FRACTION.1);
    let count = ((k * num_patients as f64).floor() as usize).max(1).min(num_patients);
    let mut picks = sample(&mut rng, num_patients, count).into_vec();
    picks.sort_unstable();
    (k, picks)
}

/// Trains `n_members` c51 agents, each on its own random patient subset,
/// from cached per-state risk and Q-network inputs.
pub fn bootstrap_ensemble(
    cohort: &Cohort,
    d: &[Vec<f64>],
    inputs: &[Vec<Vec<f64>>],
    spec: &RewardSpec,
    config: &C51Config,
    n_members: usize,
    seed_value: u64,
) -> Result<Ensemble> {
    if n_members == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    if d.len() != cohort.len() || inputs.len() != cohort.len() {
        return Err(Error::shape("bootstrap_ensemble", cohort.len(), d.len()));
    }
    let members = (0..n_members)
        .into_par_iter()
        .map(|i| {
            let (fraction, patients) = member_subset(cohort.len(), seed_value, i);
            let sub = cohort.subset(&patients);
            let sub_d: Vec<Vec<f64>> = patients.iter().map(|&p| d[p].clone()).collect();
            let sub_in: Vec<Vec<Vec<f64>>> = patients.iter().map(|&p| inputs[p].clone()).collect();
            let transitions = build_transitions(&sub, &sub_d, &sub_in, spec)?;
            let mut rng = seed::rng_for(seed_value, "rl.member.train", i as u64);
            let (network, report) = c51_train(&transitions, config, &mut rng)?;
            Ok(EnsembleMember {
                network,
                patients,
                fraction,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

/// Most frequent action; ties go to the lowest index.
pub fn majority_vote(actions: &[usize]) -> usize {
    let mut counts = [0usize; NUM_ACTIONS];
    for &a in actions {
        counts[a] += 1;
    }
    let counts: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    argmax_lowest(&counts)
}

/// Element-wise mean of member distributions.
pub fn mean_distribution(dists: &[&[f64]]) -> Vec<f64> {
    let n = dists.len() as f64;
    let mut out = vec![0.0; dists.first().map_or(0, |d| d.len())];
    for d in dists {
        for (o, v) in out.iter_mut().zip(d.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueGroupStats {
    pub group: &'static str,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn group_stats(group: &'static str, mut values: Vec<f64>) -> ValueGroupStats {
    values.sort_by(f64::total_cmp);
    let count = values.len();
    ValueGroupStats {
        group,
        count,
        min: values.first().copied().unwrap_or(f64::NAN),
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values.last().copied().unwrap_or(f64::NAN),
        mean: values.iter().sum::<f64>() / count.max(1) as f64,
    }
}

/// Scales to `[0, 1]` by the minimum and maximum (all zeros if constant).
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReport {
    /// Percent of states per recommended action, majority vote of member greedy actions.
    pub averaged_actions: [f64; NUM_ACTIONS],
    /// Percent of states per greedy action of the member-mean distribution.
    pub averaged_values: [f64; NUM_ACTIONS],
    /// Percent of states per logged action.
    pub clinician: [f64; NUM_ACTIONS],
    /// Min-max-scaled optimal values: all survivors, all non-survivors,
    /// survivors within 24 h of release, non-survivors within 24 h of death.
    pub value_groups: Vec<ValueGroupStats>,
    pub states: usize,
}

fn percentages(actions: impl Iterator<Item = usize>) -> [f64; NUM_ACTIONS] {
    let mut counts = [0usize; NUM_ACTIONS];
    let mut n = 0;
    for a in actions {
        counts[a] += 1;
        n += 1;
    }
    counts.map(|c| 100.0 * c as f64 / n.max(1) as f64)
}

impl PolicyReport {
    /// No-treatment percentages: (averaged actions, averaged values, clinician).
    pub fn no_treatment(&self) -> (f64, f64, f64) {
        (self.averaged_actions[0], self.averaged_values[0], self.clinician[0])
    }

    pub fn actions_csv(&self) -> String {
        let mut s = String::from("action,vaso,fluids,averaged_actions_pct,averaged_values_pct,clinician_pct\n");
        for a in 0..NUM_ACTIONS {
            let p = ActionPair::from_index(a).expect("action index in range");
            let _ = writeln!(
                s,
                "{a},{},{},{},{},{}",
                p.vaso, p.fluids, self.averaged_actions[a], self.averaged_values[a], self.clinician[a]
            );
        }
        s
    }

    pub fn values_csv(&self) -> String {
        let mut s = String::from("group,count,min,q1,median,q3,max,mean\n");
        for g in &self.value_groups {
            let _ = writeln!(s, "{},{},{},{},{},{},{},{}", g.group, g.count, g.min, g.q1, g.median, g.q3, g.max, g.mean);
        }
        s
    }

    /// Box plot of the scaled value groups.
    pub fn values_svg(&self) -> String {
        let (w, h, m) = (520.0, 360.0, 40.0);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">Scaled optimal values</text>\n",
            w / 2.0
        );
        let y = |v: f64| h - m - (h - 2.0 * m) * if v.is_finite() { v } else { 0.0 };
        let slot = (w - 2.0 * m) / self.value_groups.len().max(1) as f64;
        let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{}\" x2=\"{m}\" y2=\"{m}\" stroke=\"black\"/>", h - m);
        for (i, g) in self.value_groups.iter().enumerate() {
            let cx = m + slot * (i as f64 + 0.5);
            let bw = slot * 0.4;
            let _ = writeln!(s, "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y(g.min), y(g.max));
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>",
                cx - bw / 2.0,
                y(g.q3),
                (y(g.q1) - y(g.q3)).max(0.0)
            );
            let _ = writeln!(
                s,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - bw / 2.0,
                y(g.median),
                cx + bw / 2.0,
                y(g.median)
            );
            let _ = writeln!(s, "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>", h - m + 16.0, g.group);
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Recommendation and value statistics of an ensemble over every state of `cohort`.
pub fn policy_report(ensemble: &Ensemble, cohort: &Cohort, inputs: &[Vec<Vec<f64>>]) -> Result<PolicyReport> {
    if ensemble.members.is_empty() {
        return Err(Error::Config("policy report needs at least one ensemble member".into()));
    }
    if inputs.len() != cohort.len() {
        return Err(Error::shape("policy_report inputs", cohort.len(), inputs.len()));
    }
    let states: Vec<&[f64]> = inputs.iter().flatten().map(|v| v.as_slice()).collect();
    let per_member: Vec<Vec<Vec<f64>>> = ensemble
        .members
        .par_iter()
        .map(|m| m.network.distributions(&states))
        .collect::<Result<_>>()?;
    let support = ensemble.members[0].network.support;

    let mut voted = Vec::with_capacity(states.len());
    let mut averaged = Vec::with_capacity(states.len());
    let mut values = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        let member_actions: Vec<usize> = per_member.iter().map(|d| greedy_action(&d[i], &support)).collect();
        voted.push(majority_vote(&member_actions));
        let mean = mean_distribution(&per_member.iter().map(|d| d[i].as_slice()).collect::<Vec<_>>());
        let ev = expected_values(&mean, &support);
        let a = argmax_lowest(&ev);
        averaged.push(a);
        values.push(ev[a]);
    }
    let scaled = min_max_scale(&values);

    let mut groups: [Vec<f64>; 4] = Default::default();
    let mut k = 0;
    for p in &cohort.patients {
        for h in 0..p.len() {
            let death = p.outcome.is_death();
            let v = scaled[k];
            groups[usize::from(death)].push(v);
            if p.hours_to_end(h) < 24 {
                groups[2 + usize::from(death)].push(v);
            }
            k += 1;
        }
    }
    let [surv, nonsurv, surv24, nonsurv24] = groups;
    Ok(PolicyReport {
        averaged_actions: percentages(voted.into_iter()),
        averaged_values: percentages(averaged.into_iter()),
        clinician: percentages(cohort.patients.iter().flat_map(|p| p.actions.iter().map(|a| a.index()))),
        value_groups: vec![
            group_stats("survivors", surv),
            group_stats("nonsurvivors", nonsurv),
            group_stats("survivors_last24h", surv24),
            group_stats("nonsurvivors_last24h", nonsurv24),
        ],
        states: states.len(),
    })
}
