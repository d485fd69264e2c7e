//! Comparison encoders: a denoising autoencoder and a plain triplet network.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::model::{EmbeddingModel, EncoderInput, ModelConfig, Normalizer, OutputKind};
use super::sampling::StateRef;
use crate::cohort::{Cohort, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::{Adam, Mlp, MlpSpec, OutputActivation, Parameters, Scalar, Tape, Tensor, Var};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct DaeConfig {
    pub code_dim: usize,
    /// Probability of zeroing each input entry.
    pub corruption: f64,
    pub decoder_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `None` means one pass over the training states.
    pub batches_per_epoch: Option<usize>,
    /// States in the fixed held-out reconstruction set.
    pub test_size: usize,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            code_dim: 3,
            corruption: 0.1,
            decoder_hidden: 128,
            epochs: 25,
            batch_size: 128,
            learning_rate: 3e-5,
            batches_per_epoch: None,
            test_size: 2048,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DaeResult<T = f64> {
    pub encoder: EmbeddingModel<T>,
    pub decoder: Mlp<T>,
    /// Held-out reconstruction MSE after each epoch.
    pub test_losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Every `(patient, hour)` of the cohort.
pub fn all_state_refs(cohort: &Cohort) -> Vec<StateRef> {
    cohort
        .patients
        .iter()
        .enumerate()
        .flat_map(|(patient, p)| (0..p.len()).map(move |hour| StateRef { patient, hour }))
        .collect()
}

/// Zeroes each entry with probability `p`; returns how many were zeroed.
pub fn corrupt<T: Scalar, R: Rng + ?Sized>(x: &mut Tensor<T>, p: f64, rng: &mut R) -> usize {
    let mut zeroed = 0;
    for v in x.data_mut() {
        if rng.gen::<f64>() < p {
            *v = T::zero();
            zeroed += 1;
        }
    }
    zeroed
}

fn sample_refs<R: Rng + ?Sized>(pool: &[StateRef], n: usize, rng: &mut R) -> Vec<StateRef> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

fn reconstruction<T: Scalar>(
    encoder: &EmbeddingModel<T>,
    decoder: &Mlp<T>,
    tape: &mut Tape<T>,
    enc_vars: &[Var],
    dec_vars: &[Var],
    noisy: &EncoderInput<T>,
    clean: &Tensor<T>,
) -> Result<Var> {
    let code = encoder.forward(tape, enc_vars, noisy)?;
    let out = decoder.forward(tape, dec_vars, code)?;
    let target = tape.constant(clean.clone());
    let diff = tape.sub(out, target);
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Corrupt-and-reconstruct training. The encoder shares the normed model's
/// architecture without the `tanh` output; the decoder has one ELU hidden
/// layer. Keeps the weights with the lowest held-out reconstruction error.
pub fn train_denoising_autoencoder<T: Scalar, R: Rng + ?Sized>(
    model_config: &ModelConfig,
    train: &Cohort,
    test: &Cohort,
    config: &DaeConfig,
    rng: &mut R,
) -> Result<DaeResult<T>> {
    if !(0.0..1.0).contains(&config.corruption) || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config(format!("invalid denoising settings {config:?}")));
    }
    let enc_cfg = ModelConfig {
        embedding_dim: config.code_dim,
        output: OutputKind::Linear,
        ..model_config.clone()
    };
    let mut encoder = EmbeddingModel::<T>::new(enc_cfg.clone(), Normalizer::fit(train)?, rng)?;
    let dec_spec = MlpSpec {
        input_dim: config.code_dim,
        hidden_dim: config.decoder_hidden,
        num_layers: 2,
        output_dim: STATE_DIM,
        output_activation: OutputActivation::None,
    };
    let mut decoder = Mlp::<T>::new(dec_spec, enc_cfg.init, rng)?;

    let pool = all_state_refs(train);
    let test_pool = all_state_refs(test);
    if pool.is_empty() || test_pool.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut test_rng = seed::rng_for(rng.gen(), "dae.test", 0);
    let test_refs = sample_refs(&test_pool, config.test_size.min(test_pool.len()), &mut test_rng);
    let test_clean = encoder.encode_refs(test, &test_refs);
    let mut test_noisy = test_clean.clone();
    test_noisy.map_tensors(|t| {
        corrupt(t, config.corruption, &mut test_rng);
    });

    let batches = config
        .batches_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(config.batch_size).max(1));
    let mut optimizer = Adam::new(T::lit(config.learning_rate));
    let mut test_losses = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor<T>>, Vec<Tensor<T>>)> = None;
    let n_enc = encoder.params().len();

    for epoch in 1..=config.epochs {
        for b in 0..batches {
            let refs = sample_refs(&pool, config.batch_size, rng);
            let clean = encoder.encode_refs(train, &refs);
            let mut noisy = clean.clone();
            noisy.map_tensors(|t| {
                corrupt(t, config.corruption, rng);
            });
            let mut tape = Tape::new();
            let ev = encoder.bind(&mut tape);
            let dv = decoder.bind(&mut tape);
            let loss = reconstruction(&encoder, &decoder, &mut tape, &ev, &dv, &noisy, &clean.current)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    term: "reconstruction".into(),
                });
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = ev.iter().chain(&dv).map(|v| g.take(*v)).collect();
            let mut params = encoder.params_mut();
            params.extend(decoder.params_mut());
            optimizer.step(params, &grads)?;
        }
        let mut tape = Tape::new();
        let ev: Vec<Var> = encoder.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let dv: Vec<Var> = decoder.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let loss = reconstruction(&encoder, &decoder, &mut tape, &ev, &dv, &test_noisy, &test_clean.current)?;
        let loss = tape.value(loss).item().to_f64_lossy();
        test_losses.push(loss);
        if best.as_ref().map_or(true, |(v, ..)| loss < *v) {
            best = Some((
                loss,
                epoch,
                encoder.params().into_iter().cloned().collect(),
                decoder.params().into_iter().cloned().collect(),
            ));
        }
    }
    let (_, best_epoch, enc, dec) = best.expect("at least one epoch");
    debug_assert_eq!(enc.len(), n_enc);
    for (p, b) in encoder.params_mut().into_iter().zip(enc) {
        *p = b;
    }
    for (p, b) in decoder.params_mut().into_iter().zip(dec) {
        *p = b;
    }
    Ok(DaeResult {
        encoder,
        decoder,
        test_losses,
        best_epoch,
    })
}

/// Mean squared reconstruction error of `states` after corruption with `p`.
pub fn reconstruction_error<T: Scalar, R: Rng + ?Sized>(
    dae: &DaeResult<T>,
    cohort: &Cohort,
    refs: &[StateRef],
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    let clean = dae.encoder.encode_refs(cohort, refs);
    let mut noisy = clean.clone();
    noisy.map_tensors(|t| {
        corrupt(t, p, rng);
    });
    let mut tape = Tape::new();
    let ev: Vec<Var> = dae.encoder.params().into_iter().map(|x| tape.constant(x.clone())).collect();
    let dv: Vec<Var> = dae.decoder.params().into_iter().map(|x| tape.constant(x.clone())).collect();
    let loss = reconstruction(&dae.encoder, &dae.decoder, &mut tape, &ev, &dv, &noisy, &clean.current)?;
    Ok(tape.value(loss).item().to_f64_lossy())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlainTripletConfig {
    pub embedding_dim: usize,
    /// Standard deviation of the noise added (in standardized units) to make positives.
    pub noise_std: f64,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub batches_per_epoch: Option<usize>,
}

impl Default for PlainTripletConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 3,
            noise_std: 0.1,
            margin: 0.2,
            epochs: 10,
            batch_size: 256,
            learning_rate: 3e-5,
            batches_per_epoch: None,
        }
    }
}

/// Adds independent `N(0, std²)` noise to every input entry.
pub fn jitter<T: Scalar, R: Rng + ?Sized>(input: &mut EncoderInput<T>, std: f64, rng: &mut R) -> Result<()> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("noise std {std}: {e}")))?;
    input.map_tensors(|t| {
        for v in t.data_mut() {
            *v = *v + T::lit(normal.sample(rng));
        }
    });
    Ok(())
}

/// Unsupervised-positive triplet baseline on unit-normalized outputs: the
/// anchor is a random state, the positive a jittered copy of it and the
/// negative a random state of a patient with the opposite outcome.
pub fn train_plain_triplet<T: Scalar, R: Rng + ?Sized>(
    model_config: &ModelConfig,
    cohort: &Cohort,
    config: &PlainTripletConfig,
    rng: &mut R,
) -> Result<EmbeddingModel<T>> {
    let cfg = ModelConfig {
        embedding_dim: config.embedding_dim,
        output: OutputKind::UnitSphere,
        ..model_config.clone()
    };
    let mut model = EmbeddingModel::<T>::new(cfg, Normalizer::fit(cohort)?, rng)?;
    let pool = all_state_refs(cohort);
    let (deaths, releases): (Vec<usize>, Vec<usize>) =
        (0..cohort.len()).partition(|&i| cohort.patients[i].outcome.is_death());
    if deaths.is_empty() || releases.is_empty() {
        return Err(Error::Sampling("plain triplet training needs both outcomes".into()));
    }
    let batches = config
        .batches_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(config.batch_size).max(1));
    let mut optimizer = Adam::new(T::lit(config.learning_rate));
    for epoch in 1..=config.epochs {
        for b in 0..batches {
            let anchors = sample_refs(&pool, config.batch_size, rng);
            let negatives: Vec<StateRef> = anchors
                .iter()
                .map(|a| {
                    let opposite = if cohort.patients[a.patient].outcome.is_death() { &releases } else { &deaths };
                    let patient = opposite[rng.gen_range(0..opposite.len())];
                    StateRef {
                        patient,
                        hour: rng.gen_range(0..cohort.patients[patient].len()),
                    }
                })
                .collect();
            let a_in = model.encode_refs(cohort, &anchors);
            let mut p_in = a_in.clone();
            jitter(&mut p_in, config.noise_std, rng)?;
            let n_in = model.encode_refs(cohort, &negatives);

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let a = model.forward(&mut tape, &vars, &a_in)?;
            let p = model.forward(&mut tape, &vars, &p_in)?;
            let n = model.forward(&mut tape, &vars, &n_in)?;
            let ap = tape.sub(a, p);
            let an = tape.sub(a, n);
            let ap = tape.row_norm_sq(ap);
            let an = tape.row_norm_sq(an);
            let ap = tape.sqrt(ap);
            let an = tape.sqrt(an);
            let h = tape.sub(ap, an);
            let h = tape.add_scalar(h, T::lit(config.margin));
            let h = tape.relu(h);
            let loss = tape.mean(h);
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    term: "triplet".into(),
                });
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|v| g.take(*v)).collect();
            optimizer.step(model.params_mut(), &grads)?;
        }
    }
    Ok(model)
}
