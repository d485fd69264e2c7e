use rand::Rng;

use super::mdp::Transition;
use crate::cohort::ActionPair;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Init, Mlp, MlpSpec, OutputActivation, Parameters, Tape, Tensor};

pub const NUM_ACTIONS: usize = ActionPair::COUNT;

/// Fixed return support `z_i = v_min + i·Δz`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Support {
    pub v_min: f64,
    pub v_max: f64,
    pub atoms: usize,
}

impl Support {
    pub fn new(v_min: f64, v_max: f64, atoms: usize) -> Result<Self> {
        if atoms < 2 || !(v_min < v_max) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Config(format!("invalid support: atoms {atoms}, range [{v_min}, {v_max}]")));
        }
        Ok(Self { v_min, v_max, atoms })
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.atoms - 1) as f64
    }

    pub fn atom(&self, i: usize) -> f64 {
        self.v_min + i as f64 * self.delta()
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.atoms).map(|i| self.atom(i)).collect()
    }

    pub fn expectation(&self, probs: &[f64]) -> f64 {
        probs.iter().enumerate().map(|(i, p)| p * self.atom(i)).sum()
    }
}

/// Projects a distribution on arbitrary atoms onto `support`: each atom is
/// clipped to `[v_min, v_max]` and its mass split linearly between the two
/// neighbouring support atoms.
pub fn c51_project(target_atoms: &[f64], probs: &[f64], support: &Support) -> Result<Vec<f64>> {
    if target_atoms.len() != probs.len() {
        return Err(Error::shape("c51_project", target_atoms.len(), probs.len()));
    }
    let mut m = vec![0.0; support.atoms];
    project_into(target_atoms.iter().copied().zip(probs.iter().copied()), support, &mut m);
    Ok(m)
}

fn project_into(pairs: impl Iterator<Item = (f64, f64)>, support: &Support, m: &mut [f64]) {
    let dz = support.delta();
    let top = (support.atoms - 1) as f64;
    for (z, p) in pairs {
        let b = ((z.clamp(support.v_min, support.v_max) - support.v_min) / dz).clamp(0.0, top);
        let l = b.floor();
        let u = b.ceil();
        if l == u {
            m[l as usize] += p;
        } else {
            m[l as usize] += p * (u - b);
            m[u as usize] += p * (b - l);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct C51Config {
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Soft target update rate, applied after every gradient step.
    pub tau: f64,
    pub epochs: usize,
    /// `None` means one pass over the transitions per epoch.
    pub batches_per_epoch: Option<usize>,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    /// Append the risk model's embedding to the state.
    pub augment: bool,
}

impl Default for C51Config {
    fn default() -> Self {
        Self {
            atoms: 51,
            v_min: -18.0,
            v_max: 18.0,
            gamma: 0.999,
            batch_size: 100,
            learning_rate: 3e-4,
            tau: 0.005,
            epochs: 8,
            batches_per_epoch: None,
            hidden_dim: 256,
            hidden_layers: 3,
            augment: false,
        }
    }
}

impl C51Config {
    pub fn support(&self) -> Result<Support> {
        Support::new(self.v_min, self.v_max, self.atoms)
    }

    pub fn validate(&self) -> Result<()> {
        self.support()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden_dim == 0 || self.batches_per_epoch == Some(0) {
            return Err(Error::Config("c51 batch size, epochs, hidden width and batches per epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("atoms", self.atoms.to_string()),
            ("v_min", self.v_min.to_string()),
            ("v_max", self.v_max.to_string()),
            ("gamma", self.gamma.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("tau", self.tau.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batches_per_epoch", self.batches_per_epoch.map_or("auto".into(), |b| b.to_string())),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("augment", self.augment.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "atoms" => self.atoms = num(key, value)?,
            "v_min" => self.v_min = num(key, value)?,
            "v_max" => self.v_max = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batches_per_epoch" => {
                self.batches_per_epoch = match value.trim() {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "hidden_layers" => self.hidden_layers = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown c51 setting `{key}`"))),
        }
        Ok(())
    }
}

/// Q-network: ELU trunk with a `9 × atoms` head, softmax per action.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub mlp: Mlp<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub support: Support,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: &C51Config, mean: Vec<f64>, scale: Vec<f64>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if mean.len() != input_dim || scale.len() != input_dim {
            return Err(Error::shape("QNetwork normalizer", input_dim, mean.len()));
        }
        let spec = MlpSpec {
            input_dim,
            hidden_dim: config.hidden_dim,
            num_layers: config.hidden_layers + 1,
            output_dim: NUM_ACTIONS * config.atoms,
            output_activation: OutputActivation::None,
        };
        Ok(Self {
            mlp: Mlp::new(spec, Init::Orthogonal, rng)?,
            mean,
            scale,
            support: config.support()?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn input_tensor(&self, states: &[&[f64]]) -> Result<Tensor<f64>> {
        let dim = self.input_dim();
        let mut data = Vec::with_capacity(states.len() * dim);
        for s in states {
            if s.len() != dim {
                return Err(Error::shape("QNetwork input", dim, s.len()));
            }
            data.extend(s.iter().zip(self.mean.iter().zip(&self.scale)).map(|(x, (m, sd))| (x - m) / sd));
        }
        Tensor::matrix(states.len(), dim, data)
    }

    /// Flattened `9 × atoms` action-value distributions per state.
    pub fn distributions(&self, states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(2048) {
            let mut tape = Tape::new();
            let vars: Vec<_> = self.mlp.params().into_iter().map(|p| tape.constant(p.clone())).collect();
            let x = tape.constant(self.input_tensor(chunk)?);
            let logits = self.mlp.forward(&mut tape, &vars, x)?;
            let lv = tape.value(logits);
            for r in 0..chunk.len() {
                let mut row = lv.row(r).to_vec();
                for block in row.chunks_mut(self.support.atoms) {
                    softmax_in_place(block);
                }
                out.push(row);
            }
        }
        Ok(out)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Expected value of each action's distribution.
pub fn expected_values(dists: &[f64], support: &Support) -> Vec<f64> {
    dists.chunks(support.atoms).map(|p| support.expectation(p)).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy action under expected value; ties go to the lowest action index.
pub fn greedy_action(dists: &[f64], support: &Support) -> usize {
    argmax_lowest(&expected_values(dists, support))
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct C51Report {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Per-dimension mean and standard deviation (1 where the spread vanishes).
pub fn fit_input_scaling(states: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let dim = states.first().map_or(0, |s| s.len());
    let n = states.len().max(1) as f64;
    let mean: Vec<f64> = (0..dim).map(|j| states.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let scale = (0..dim)
        .map(|j| {
            let v = states.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v.sqrt() > 1e-8 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Projected Bellman targets for a batch under the target network.
pub fn bellman_targets(target: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<Vec<f64>>> {
    let support = target.support;
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let dists = target.distributions(&next)?;
    let z = support.values();
    Ok(batch
        .iter()
        .zip(&dists)
        .map(|(t, d)| {
            let mut m = vec![0.0; support.atoms];
            if t.done {
                project_into(std::iter::once((t.reward, 1.0)), &support, &mut m);
            } else {
                let a = greedy_action(d, &support);
                let p = &d[a * support.atoms..(a + 1) * support.atoms];
                project_into(z.iter().zip(p).map(|(zj, pj)| (t.reward + gamma * zj, *pj)), &support, &mut m);
            }
            m
        })
        .collect())
}

/// One cross-entropy step of `online` toward the projected targets; returns the loss.
fn c51_step(
    online: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut Adam<f64>,
    batch: &[&Transition],
    gamma: f64,
    epoch: usize,
    batch_index: usize,
) -> Result<f64> {
    let atoms = online.support.atoms;
    let targets = bellman_targets(target, batch, gamma)?;
    let mut tape = Tape::new();
    let vars = online.mlp.bind(&mut tape);
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let x = tape.constant(online.input_tensor(&states)?);
    let logits = online.mlp.forward(&mut tape, &vars, x)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let chosen = tape.gather_block(logits, &actions, atoms);
    let logp = tape.log_softmax(chosen);
    let m = tape.constant(Tensor::matrix(batch.len(), atoms, targets.concat())?);
    let prod = tape.mul(m, logp);
    let total = tape.sum(prod);
    let loss = tape.scale(total, -1.0 / batch.len() as f64);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch: batch_index,
            term: "c51 cross-entropy".into(),
        });
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor<f64>> = vars.iter().map(|v| grads.take(*v)).collect();
    if g.iter().any(|t| !t.all_finite()) {
        return Err(Error::Divergence {
            epoch,
            batch: batch_index,
            term: "c51 gradient".into(),
        });
    }
    optimizer.step(online.mlp.params_mut(), &g)?;
    Ok(value)
}

/// Soft update `target ← τ·online + (1 − τ)·target`.
pub fn soft_update(target: &mut QNetwork, online: &QNetwork, tau: f64) {
    for (t, o) in target.mlp.params_mut().into_iter().zip(online.mlp.params()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
}

/// Trains a categorical distributional Q-network on a fixed transition set
/// with uniform replay and a soft-updated target network.
pub fn c51_train<R: Rng + ?Sized>(transitions: &[Transition], config: &C51Config, rng: &mut R) -> Result<(QNetwork, C51Report)> {
    config.validate()?;
    let Some(first) = transitions.first() else {
        return Err(Error::Config("c51 needs at least one transition".into()));
    };
    let dim = first.state.len();
    let states: Vec<&[f64]> = transitions.iter().map(|t| t.state.as_slice()).collect();
    let (mean, scale) = fit_input_scaling(&states);
    let mut online = QNetwork::new(dim, config, mean, scale, rng)?;
    let mut target = online.clone();
    let mut optimizer = Adam::new(config.learning_rate);
    let batches = config
        .batches_per_epoch
        .unwrap_or_else(|| transitions.len().div_ceil(config.batch_size).max(1));
    let mut report = C51Report::default();
    for epoch in 1..=config.epochs {
        let mut sum = 0.0;
        for b in 0..batches {
            let batch: Vec<&Transition> = (0..config.batch_size)
                .map(|_| &transitions[rng.gen_range(0..transitions.len())])
                .collect();
            sum += c51_step(&mut online, &target, &mut optimizer, &batch, config.gamma, epoch, b)?;
            soft_update(&mut target, &online, config.tau);
            report.steps += 1;
        }
        report.epoch_losses.push(sum / batches as f64);
    }
    Ok((online, report))
}
