use rand::Rng;

use super::config::LossConfig;
use super::loss::{loss_terms, LossTerms, TripletLabels};
use super::model::EmbeddingModel;
use super::sampling::{Triplet, TripletSampler};
use crate::cohort::{split_cohort, Cohort};
use crate::error::{Error, Result};
use crate::numerics::{Adam, Parameters, Scalar, Tape, Tensor};
use crate::seed;

/// Losses recorded after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_total: f64,
    pub val_terminal: f64,
    pub val_contrastive: f64,
    pub val_intermediate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Training loss of every batch, in order.
    pub batch_losses: Vec<f64>,
}

impl TrainReport {
    /// `epoch,train_loss,val_total,val_terminal,val_contrastive,val_intermediate` rows.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_total,val_terminal,val_contrastive,val_intermediate\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_total, e.val_terminal, e.val_contrastive, e.val_intermediate
            ));
        }
        s
    }
}

fn batch_terms<T: Scalar>(
    model: &EmbeddingModel<T>,
    tape: &mut Tape<T>,
    cohort: &Cohort,
    batch: &[Triplet],
    config: &LossConfig,
) -> Result<(Vec<crate::numerics::Var>, LossTerms)> {
    let vars = model.bind(tape);
    let refs = |f: fn(&Triplet) -> super::sampling::StateRef| batch.iter().map(f).collect::<Vec<_>>();
    let a = model.forward(tape, &vars, &model.encode_refs(cohort, &refs(|t| t.anchor)))?;
    let p = model.forward(tape, &vars, &model.encode_refs(cohort, &refs(|t| t.positive)))?;
    let n = model.forward(tape, &vars, &model.encode_refs(cohort, &refs(|t| t.negative)))?;
    let labels: Vec<TripletLabels> = batch.iter().map(Triplet::labels).collect();
    let terms = loss_terms(tape, a, p, n, &labels, config)?;
    Ok((vars, terms))
}

/// Loss components over a triplet set, averaged per triplet.
pub fn evaluate_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    cohort: &Cohort,
    triplets: &[Triplet],
    config: &LossConfig,
) -> Result<[f64; 4]> {
    let mut sums = [0.0; 4];
    for chunk in triplets.chunks(config.batch_size.max(1)) {
        let mut tape = Tape::new();
        let (_, terms) = batch_terms(model, &mut tape, cohort, chunk, config)?;
        for (s, (_, v)) in sums.iter_mut().zip(terms.values(&tape)) {
            *s += v * chunk.len() as f64;
        }
    }
    Ok(sums.map(|s| s / triplets.len().max(1) as f64))
}

/// One Adam step on a triplet batch; returns the batch's total loss.
pub fn train_step<T: Scalar>(
    model: &mut EmbeddingModel<T>,
    optimizer: &mut Adam<T>,
    cohort: &Cohort,
    batch: &[Triplet],
    config: &LossConfig,
    epoch: usize,
    batch_index: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (vars, terms) = batch_terms(model, &mut tape, cohort, batch, config)?;
    if let Some(term) = terms.first_non_finite(&tape) {
        return Err(Error::Divergence {
            epoch,
            batch: batch_index,
            term: term.to_string(),
        });
    }
    let mut grads = tape.backward(terms.total)?;
    let g: Vec<Tensor<T>> = vars.iter().map(|v| grads.take(*v)).collect();
    if g.iter().any(|t| !t.all_finite()) {
        return Err(Error::Divergence {
            epoch,
            batch: batch_index,
            term: "gradient".into(),
        });
    }
    optimizer.step(model.params_mut(), &g)?;
    Ok(tape.value(terms.total).item().to_f64_lossy())
}

/// Splits `cohort` into fitting and validation patients. When the validation
/// part lacks an outcome the fitting part doubles as the validation cohort.
pub fn fit_validation_split<R: Rng + ?Sized>(cohort: &Cohort, fit_fraction: f64, rng: &mut R) -> Result<(Cohort, Cohort)> {
    let (fit, val) = split_cohort(cohort, fit_fraction, rng)?;
    if val.has_both_outcomes() {
        Ok((fit, val))
    } else {
        let val = fit.clone();
        Ok((fit, val))
    }
}

/// Seeded mini-batch Adam with validation checkpointing. See [`train_with`].
pub fn train<T: Scalar, R: Rng + ?Sized>(
    model: &mut EmbeddingModel<T>,
    train_cohort: &Cohort,
    val_cohort: &Cohort,
    config: &LossConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    train_with(model, train_cohort, val_cohort, config, rng, |_, _| {})
}

/// Trains `model` in place and leaves it holding the weights of the epoch with
/// the lowest validation loss (earliest on ties).
///
/// The validation triplets are drawn once, from a generator seeded by the
/// first draw of `rng`. `on_epoch` sees the weights at the end of every epoch.
pub fn train_with<T: Scalar, R: Rng + ?Sized>(
    model: &mut EmbeddingModel<T>,
    train_cohort: &Cohort,
    val_cohort: &Cohort,
    config: &LossConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, &EmbeddingModel<T>),
) -> Result<TrainReport> {
    config.validate()?;
    let sampler = TripletSampler::new(train_cohort, config)?;
    let val_sampler = TripletSampler::new(val_cohort, config)?;
    let mut val_rng = seed::rng_for(rng.gen(), "embedding.validation", 0);
    let val_triplets = val_sampler.sample_batch(config.validation_size, &mut val_rng);

    let batches = config
        .batches_per_epoch
        .unwrap_or_else(|| train_cohort.len().div_ceil(config.batch_size).max(1));
    let mut optimizer = Adam::new(T::lit(config.learning_rate));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::with_capacity(config.epochs * batches);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;

    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        for b in 0..batches {
            let batch = sampler.sample_batch(config.batch_size, rng);
            let loss = train_step(model, &mut optimizer, train_cohort, &batch, config, epoch, b)?;
            sum += loss;
            batch_losses.push(loss);
        }
        let [terminal, contrastive, intermediate, total] = evaluate_loss(model, val_cohort, &val_triplets, config)?;
        if !total.is_finite() {
            let term = [("terminal", terminal), ("contrastive", contrastive), ("intermediate", intermediate)]
                .into_iter()
                .find(|(_, v)| !v.is_finite())
                .map_or("total", |(n, _)| n);
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                term: format!("validation {term}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_total: total,
            val_terminal: terminal,
            val_contrastive: contrastive,
            val_intermediate: intermediate,
        });
        on_epoch(epoch, model);
        if best.as_ref().map_or(true, |(v, _, _)| total < *v) {
            best = Some((total, epoch, model.params().into_iter().cloned().collect()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    for (p, b) in model.params_mut().into_iter().zip(params) {
        *p = b;
    }
    Ok(TrainReport {
        epochs,
        best_epoch,
        batch_losses,
    })
}
