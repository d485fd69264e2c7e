//! Statistics of risk trajectories and of the angular layout of embeddings.

use crate::cohort::{near_terminal_hours, Cohort, OrganLabel, Outcome};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Denominator floor for relative jumps.
pub const JUMP_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpStats {
    /// Mean of `|d(s_{t+1}) - d(s_t)| / d(s_t)` over counted pairs (0 if none).
    pub mean: f64,
    pub pairs: usize,
    /// Pairs skipped because `d(s_t) <= ε`.
    pub excluded: usize,
}

/// Relative jumps over consecutive in-stay pairs of per-state risks.
pub fn relative_jumps(risk: &[Vec<f64>]) -> JumpStats {
    let (mut sum, mut pairs, mut excluded) = (0.0, 0, 0);
    for d in risk {
        for w in d.windows(2) {
            if w[0] > JUMP_EPSILON {
                sum += (w[1] - w[0]).abs() / w[0];
                pairs += 1;
            } else {
                excluded += 1;
            }
        }
    }
    JumpStats {
        mean: if pairs > 0 { sum / pairs as f64 } else { 0.0 },
        pairs,
        excluded,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagBin {
    /// Hours before the terminal state.
    pub lag: usize,
    pub mean: f64,
    pub count: usize,
}

/// Mean risk by hours-to-end, split by outcome. Empty bins are omitted.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TimeToEventCurve {
    pub death: Vec<LagBin>,
    pub release: Vec<LagBin>,
}

impl TimeToEventCurve {
    pub fn bins(&self, outcome: Outcome) -> &[LagBin] {
        match outcome {
            Outcome::Death => &self.death,
            Outcome::Release => &self.release,
        }
    }
}

pub fn time_to_event_curve(risk: &[Vec<f64>], cohort: &Cohort, max_hours: usize) -> Result<TimeToEventCurve> {
    if risk.len() != cohort.len() {
        return Err(Error::shape("time_to_event_curve", cohort.len(), risk.len()));
    }
    let mut acc = [vec![(0.0, 0usize); max_hours + 1], vec![(0.0, 0usize); max_hours + 1]];
    for (d, p) in risk.iter().zip(&cohort.patients) {
        if d.len() != p.len() {
            return Err(Error::shape("time_to_event_curve stay", p.len(), d.len()));
        }
        let side = usize::from(!p.outcome.is_death());
        for (h, &v) in d.iter().enumerate() {
            let lag = p.hours_to_end(h);
            if lag <= max_hours {
                acc[side][lag].0 += v;
                acc[side][lag].1 += 1;
            }
        }
    }
    let collect = |bins: &[(f64, usize)]| -> Vec<LagBin> {
        bins.iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(lag, (s, n))| LagBin {
                lag,
                mean: s / *n as f64,
                count: *n,
            })
            .collect()
    };
    Ok(TimeToEventCurve {
        death: collect(&acc[0]),
        release: collect(&acc[1]),
    })
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::shape("spearman", "two equal-length samples of size >= 2", format!("{} and {}", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Config("spearman correlation undefined for a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between lag and mean risk over the bins of one outcome.
pub fn curve_spearman(curve: &TimeToEventCurve, outcome: Outcome) -> Result<f64> {
    let bins = curve.bins(outcome);
    let lags: Vec<f64> = bins.iter().map(|b| b.lag as f64).collect();
    let means: Vec<f64> = bins.iter().map(|b| b.mean).collect();
    spearman(&lags, &means)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationStats {
    pub within: f64,
    pub between: f64,
    /// `within - between`.
    pub gap: f64,
    pub states: usize,
    /// States per organ label, in [`OrganLabel::ALL`] order.
    pub per_organ: [usize; 4],
    /// States dropped for having a zero embedding.
    pub zero_embeddings: usize,
}

/// Mean pairwise cosine within and between worst-organ groups.
pub fn separation_from_vectors(vectors: &[Vec<f64>], labels: &[OrganLabel]) -> Result<SeparationStats> {
    if vectors.len() != labels.len() {
        return Err(Error::shape("organ_separation", vectors.len(), labels.len()));
    }
    let mut units = Vec::new();
    let mut kept = Vec::new();
    let mut zero = 0;
    for (v, l) in vectors.iter().zip(labels) {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            units.push(v.iter().map(|x| x / n).collect::<Vec<f64>>());
            kept.push(*l);
        } else {
            zero += 1;
        }
    }
    let (mut ws, mut wn, mut bs, mut bn) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            let c: f64 = units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum();
            if kept[i] == kept[j] {
                ws += c;
                wn += 1;
            } else {
                bs += c;
                bn += 1;
            }
        }
    }
    if wn == 0 || bn == 0 {
        return Err(Error::Sampling(format!(
            "organ separation needs within and between pairs, got {wn} and {bn}"
        )));
    }
    let mut per_organ = [0; 4];
    for l in &kept {
        per_organ[l.index()] += 1;
    }
    let (within, between) = (ws / wn as f64, bs / bn as f64);
    Ok(SeparationStats {
        within,
        between,
        gap: within - between,
        states: kept.len(),
        per_organ,
        zero_embeddings: zero,
    })
}

/// Near-death (last `t` hours) non-survivor embeddings with their worst-organ labels.
pub fn near_death_embeddings<T: Scalar>(
    embeddings: &[Tensor<T>],
    cohort: &Cohort,
    t: usize,
) -> (Vec<Vec<f64>>, Vec<OrganLabel>) {
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (e, p) in embeddings.iter().zip(&cohort.patients) {
        if !p.outcome.is_death() {
            continue;
        }
        for h in near_terminal_hours(p, t) {
            vectors.push(e.row(h).iter().map(|v| v.to_f64_lossy()).collect());
            labels.push(p.states[h].worst_organ());
        }
    }
    (vectors, labels)
}

pub fn organ_separation<T: Scalar>(embeddings: &[Tensor<T>], cohort: &Cohort, t: usize) -> Result<SeparationStats> {
    let (v, l) = near_death_embeddings(embeddings, cohort, t);
    separation_from_vectors(&v, &l)
}
