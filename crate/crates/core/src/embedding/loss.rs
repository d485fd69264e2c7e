//! The composite objective.
//!
//! Per triplet with squared norms `dA, dP, dN`:
//!
//! * terminal: `(dA - 1)²` for a death anchor, `λ1·dA` for a release anchor;
//! * contrastive: triplet hinge for release anchors, cosine loss against the
//!   positive for death anchors;
//! * intermediate: `λ2·(1{dP>1}dP + 1{dN>1}dN)`
//!   `+ λ3·(1{death}e^{-α dP} + 1{release}e^{-α dN})`
//!   `+ λ4·(1{death}dN + 1{release}dA)`.
//!
//! The batch loss is the mean of `β·terminal + (1-β)·contrastive + intermediate`.
//!
//! The free functions on slices are straightforward single-triplet versions;
//! [`loss_terms`] builds the same quantities for a batch on a tape.

use super::config::{CosineVariant, LossConfig, ReleaseTarget};
use crate::cohort::Outcome;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn loss_terminal(emb_a: &[f64], anchor_outcome: Outcome, lambda1: f64) -> f64 {
    let d = norm_sq(emb_a);
    match anchor_outcome {
        Outcome::Death => (d - 1.0).powi(2),
        Outcome::Release => lambda1 * d,
    }
}

pub fn triplet_loss(emb_a: &[f64], emb_p: &[f64], emb_n: &[f64], margin: f64) -> f64 {
    (dist(emb_a, emb_p) - dist(emb_a, emb_n) + margin).max(0.0)
}

/// Cosine loss between a death anchor and its positive. `same_organ` is `y_ap`.
///
/// The inner-product variant can be negative.
pub fn cosine_loss(emb_a: &[f64], emb_p: &[f64], same_organ: bool, config: &LossConfig) -> Result<f64> {
    match config.cosine_variant {
        CosineVariant::Standard => {
            let (na, np) = (norm_sq(emb_a), norm_sq(emb_p));
            if na == 0.0 || np == 0.0 {
                return Err(Error::UndefinedCosine);
            }
            let cos = emb_a.iter().zip(emb_p).map(|(x, y)| x * y).sum::<f64>() / (na * np).sqrt();
            Ok(if same_organ {
                1.0 - cos
            } else {
                (cos - config.cosine_margin).max(0.0)
            })
        }
        CosineVariant::InnerProduct => Ok(if same_organ {
            0.0
        } else {
            emb_a.iter().zip(emb_p).map(|(x, y)| x * y).sum()
        }),
    }
}

pub fn loss_contrastive(
    emb_a: &[f64],
    emb_p: &[f64],
    emb_n: &[f64],
    anchor_outcome: Outcome,
    same_organ: bool,
    config: &LossConfig,
) -> Result<f64> {
    match anchor_outcome {
        Outcome::Release => Ok(triplet_loss(emb_a, emb_p, emb_n, config.triplet_margin)),
        Outcome::Death => cosine_loss(emb_a, emb_p, same_organ, config),
    }
}

pub fn loss_intermediate(emb_p: &[f64], emb_n: &[f64], emb_a: &[f64], anchor_outcome: Outcome, config: &LossConfig) -> f64 {
    let (dp, dn, da) = (norm_sq(emb_p), norm_sq(emb_n), norm_sq(emb_a));
    let outside = |d: f64| if d > 1.0 { d } else { 0.0 };
    let containment = config.lambda2 * (outside(dp) + outside(dn));
    let (attract, pull) = match anchor_outcome {
        Outcome::Death => ((-config.alpha * dp).exp(), dn),
        Outcome::Release => (
            (-config.alpha * dn).exp(),
            match config.lambda4_release_target {
                ReleaseTarget::Anchor => da,
                ReleaseTarget::Positive => dp,
            },
        ),
    };
    containment + config.lambda3 * attract + config.lambda4 * pull
}

/// Embedded triplet for the slice-based reference loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedTriplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub anchor_outcome: Outcome,
    pub same_organ: bool,
}

/// Mean composite loss over already embedded triplets.
pub fn total_loss(batch: &[EmbeddedTriplet], config: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Sampling("empty triplet batch".into()));
    }
    let mut sum = 0.0;
    for t in batch {
        let term = loss_terminal(&t.anchor, t.anchor_outcome, config.lambda1);
        let con = loss_contrastive(&t.anchor, &t.positive, &t.negative, t.anchor_outcome, t.same_organ, config)?;
        let int = loss_intermediate(&t.positive, &t.negative, &t.anchor, t.anchor_outcome, config);
        sum += config.beta * term + (1.0 - config.beta) * con + int;
    }
    Ok(sum / batch.len() as f64)
}

/// Labels the batched loss needs for one triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletLabels {
    pub anchor_outcome: Outcome,
    /// `y_ap`; only meaningful for death anchors.
    pub same_organ: bool,
}

/// Batch means of each component plus the weighted total, all scalar nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub terminal: Var,
    pub contrastive: Var,
    pub intermediate: Var,
    pub total: Var,
}

impl LossTerms {
    /// `(name, value)` for each component, in reporting order.
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> [(&'static str, f64); 4] {
        let v = |x: Var| tape.value(x).item().to_f64_lossy();
        [
            ("terminal", v(self.terminal)),
            ("contrastive", v(self.contrastive)),
            ("intermediate", v(self.intermediate)),
            ("total", v(self.total)),
        ]
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite<T: Scalar>(&self, tape: &Tape<T>) -> Option<&'static str> {
        self.values(tape).into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

fn mask<T: Scalar>(tape: &mut Tape<T>, values: impl Iterator<Item = bool>) -> Var {
    let col = values.map(|b| if b { T::one() } else { T::zero() }).collect();
    tape.constant(Tensor::column(col))
}

/// Builds the composite loss for embedded anchors, positives and negatives
/// (`[batch, n]` each) on the tape.
pub fn loss_terms<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    labels: &[TripletLabels],
    config: &LossConfig,
) -> Result<LossTerms> {
    let batch = tape.value(anchor).rows();
    for v in [positive, negative] {
        if tape.value(v).shape() != tape.value(anchor).shape() {
            return Err(Error::shape(
                "loss_terms embeddings",
                format!("{:?}", tape.value(anchor).shape()),
                format!("{:?}", tape.value(v).shape()),
            ));
        }
    }
    if labels.len() != batch {
        return Err(Error::shape("loss_terms labels", batch, labels.len()));
    }
    let lit = |x: f64| T::lit(x);
    let death = mask(tape, labels.iter().map(|l| l.anchor_outcome.is_death()));
    let release = mask(tape, labels.iter().map(|l| !l.anchor_outcome.is_death()));

    let da = tape.row_norm_sq(anchor);
    let dp = tape.row_norm_sq(positive);
    let dn = tape.row_norm_sq(negative);

    // terminal
    let da_m1 = tape.add_scalar(da, lit(-1.0));
    let death_term = tape.square(da_m1);
    let death_term = tape.mul(death_term, death);
    let release_term = tape.scale(da, lit(config.lambda1));
    let release_term = tape.mul(release_term, release);
    let terminal = tape.add(death_term, release_term);

    // contrastive, release branch
    let ap = tape.sub(anchor, positive);
    let an = tape.sub(anchor, negative);
    let ap = tape.row_norm_sq(ap);
    let an = tape.row_norm_sq(an);
    let ap = tape.sqrt(ap);
    let an = tape.sqrt(an);
    let hinge = tape.sub(ap, an);
    let hinge = tape.add_scalar(hinge, lit(config.triplet_margin));
    let hinge = tape.relu(hinge);
    let triplet = tape.mul(hinge, release);

    // contrastive, death branch
    let same = mask(tape, labels.iter().map(|l| l.same_organ));
    let different = mask(tape, labels.iter().map(|l| !l.same_organ));
    let cosine = match config.cosine_variant {
        CosineVariant::Standard => {
            let (av, pv) = (tape.value(anchor), tape.value(positive));
            for (r, l) in labels.iter().enumerate() {
                let zero = |t: &Tensor<T>| t.row(r).iter().all(|x| *x == T::zero());
                if l.anchor_outcome.is_death() && (zero(av) || zero(pv)) {
                    return Err(Error::UndefinedCosine);
                }
            }
            let cos = tape.row_cosine(anchor, positive);
            let pull = tape.rsub_scalar(T::one(), cos);
            let pull = tape.mul(pull, same);
            let push = tape.add_scalar(cos, lit(-config.cosine_margin));
            let push = tape.relu(push);
            let push = tape.mul(push, different);
            tape.add(pull, push)
        }
        CosineVariant::InnerProduct => {
            let dot = tape.row_dot(anchor, positive);
            tape.mul(dot, different)
        }
    };
    let cosine = tape.mul(cosine, death);
    let contrastive = tape.add(triplet, cosine);

    // intermediate
    let outside = |tape: &mut Tape<T>, d: Var| {
        let flags: Vec<bool> = tape.value(d).data().iter().map(|x| *x > T::one()).collect();
        let m = mask(tape, flags.into_iter());
        tape.mul(d, m)
    };
    let op = outside(tape, dp);
    let on = outside(tape, dn);
    let containment = tape.add(op, on);
    let containment = tape.scale(containment, lit(config.lambda2));

    let ep = tape.scale(dp, lit(-config.alpha));
    let ep = tape.exp(ep);
    let ep = tape.mul(ep, death);
    let en = tape.scale(dn, lit(-config.alpha));
    let en = tape.exp(en);
    let en = tape.mul(en, release);
    let attract = tape.add(ep, en);
    let attract = tape.scale(attract, lit(config.lambda3));

    let pull_death = tape.mul(dn, death);
    let release_d = match config.lambda4_release_target {
        ReleaseTarget::Anchor => da,
        ReleaseTarget::Positive => dp,
    };
    let pull_release = tape.mul(release_d, release);
    let pull = tape.add(pull_death, pull_release);
    let pull = tape.scale(pull, lit(config.lambda4));

    let intermediate = tape.add(containment, attract);
    let intermediate = tape.add(intermediate, pull);

    let weighted_terminal = tape.scale(terminal, lit(config.beta));
    let weighted_contrastive = tape.scale(contrastive, lit(1.0 - config.beta));
    let per_triplet = tape.add(weighted_terminal, weighted_contrastive);
    let per_triplet = tape.add(per_triplet, intermediate);

    Ok(LossTerms {
        terminal: tape.mean(terminal),
        contrastive: tape.mean(contrastive),
        intermediate: tape.mean(intermediate),
        total: tape.mean(per_triplet),
    })
}
