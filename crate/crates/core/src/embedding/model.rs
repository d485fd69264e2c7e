use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use super::sampling::StateRef;
use crate::cohort::{Cohort, PatientTrajectory, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{self, NamedTensor};
use crate::numerics::{Gru, GruSpec, Init, Mlp, MlpSpec, OutputActivation, Parameters, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncoderKind {
    /// Plain MLP on the current state.
    #[default]
    Mlp,
    /// GRU over the recent history, concatenated with the current state and
    /// passed through an MLP head.
    Gru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputKind {
    /// `tanh` on the last layer: the normed embedding.
    #[default]
    Tanh,
    /// Raw last layer.
    Linear,
    /// Last layer scaled to unit norm.
    UnitSphere,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Gru => "gru",
        }
    }
}

impl OutputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::Tanh => "tanh",
            OutputKind::Linear => "linear",
            OutputKind::UnitSphere => "unit_sphere",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "gru" => Ok(EncoderKind::Gru),
            _ => Err(Error::Config(format!("unknown encoder `{s}`, expected mlp or gru"))),
        }
    }
}

impl FromStr for OutputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(OutputKind::Tanh),
            "linear" => Ok(OutputKind::Linear),
            "unit_sphere" => Ok(OutputKind::UnitSphere),
            _ => Err(Error::Config(format!("unknown output `{s}`"))),
        }
    }
}

fn init_name(init: Init) -> &'static str {
    match init {
        Init::Orthogonal => "orthogonal",
        Init::UniformFanIn => "uniform_fan_in",
    }
}

fn parse_init(s: &str) -> Result<Init> {
    match s {
        "orthogonal" => Ok(Init::Orthogonal),
        "uniform_fan_in" => Ok(Init::UniformFanIn),
        _ => Err(Error::Config(format!("unknown init `{s}`"))),
    }
}

/// Encoder architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub embedding_dim: usize,
    /// Width of the MLP (or of the MLP head for the GRU encoder).
    pub hidden_dim: usize,
    /// Linear layers in the MLP (or head).
    pub num_layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// Hours of history fed to the GRU, current hour included.
    pub horizon: usize,
    pub output: OutputKind,
    pub init: Init,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Mlp,
            embedding_dim: 3,
            hidden_dim: 512,
            num_layers: 8,
            gru_hidden: 128,
            gru_layers: 2,
            horizon: 12,
            output: OutputKind::Tanh,
            init: Init::Orthogonal,
        }
    }
}

impl ModelConfig {
    pub fn gru() -> Self {
        Self {
            encoder: EncoderKind::Gru,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::Config("embedding_dim, hidden_dim and num_layers must be positive".into()));
        }
        if self.encoder == EncoderKind::Gru && (self.gru_hidden == 0 || self.gru_layers == 0 || self.horizon == 0) {
            return Err(Error::Config("gru_hidden, gru_layers and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("encoder", self.encoder.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("gru_layers", self.gru_layers.to_string()),
            ("horizon", self.horizon.to_string()),
            ("output", self.output.to_string()),
            ("init", init_name(self.init).to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        };
        match key {
            "encoder" => self.encoder = v.parse()?,
            "embedding_dim" | "dim" => self.embedding_dim = num(v)?,
            "hidden_dim" => self.hidden_dim = num(v)?,
            "num_layers" => self.num_layers = num(v)?,
            "gru_hidden" => self.gru_hidden = num(v)?,
            "gru_layers" => self.gru_layers = num(v)?,
            "horizon" => self.horizon = num(v)?,
            "output" => self.output = v.parse()?,
            "init" => self.init = parse_init(v)?,
            _ => return Err(Error::Config(format!("unknown model setting `{key}`"))),
        }
        Ok(())
    }

    fn head_spec(&self) -> MlpSpec {
        let input_dim = match self.encoder {
            EncoderKind::Mlp => STATE_DIM,
            EncoderKind::Gru => self.gru_hidden + STATE_DIM,
        };
        MlpSpec {
            input_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            output_dim: self.embedding_dim,
            output_activation: match self.output {
                OutputKind::Tanh => OutputActivation::Tanh,
                _ => OutputActivation::None,
            },
        }
    }

    fn gru_spec(&self) -> GruSpec {
        GruSpec {
            input_dim: STATE_DIM,
            hidden_dim: self.gru_hidden,
            num_layers: self.gru_layers,
            horizon: self.horizon,
        }
    }
}

/// Per-feature standardization fitted on a training cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; STATE_DIM],
            std: vec![1.0; STATE_DIM],
        }
    }

    pub fn fit(cohort: &Cohort) -> Result<Self> {
        let n = cohort.num_states();
        if n == 0 {
            return Err(Error::EmptyCohort);
        }
        let mut mean = vec![0.0; STATE_DIM];
        let mut sq = vec![0.0; STATE_DIM];
        for p in &cohort.patients {
            for s in &p.states {
                for (k, v) in s.features().iter().enumerate() {
                    mean[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n as f64;
                let var = (s / n as f64 - *m * *m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply<T: Scalar>(&self, features: &[f64], out: &mut [T]) {
        for k in 0..STATE_DIM {
            out[k] = T::lit((features[k] - self.mean[k]) / self.std[k]);
        }
    }
}

/// Network inputs for a batch: the current state and, for the GRU encoder,
/// the history steps oldest first (the last step is the current state).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput<T> {
    pub current: Tensor<T>,
    pub history: Vec<Tensor<T>>,
}

impl<T: Scalar> EncoderInput<T> {
    pub fn rows(&self) -> usize {
        self.current.rows()
    }

    /// Applies `f` to every input tensor (current and history alike).
    pub fn map_tensors(&mut self, mut f: impl FnMut(&mut Tensor<T>)) {
        f(&mut self.current);
        for h in &mut self.history {
            f(h);
        }
    }
}

/// State encoder `f_θ` with its feature normalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T = f64> {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub gru: Option<Gru<T>>,
    pub head: Mlp<T>,
}

const INFERENCE_CHUNK: usize = 1024;

impl<T: Scalar> EmbeddingModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, normalizer: Normalizer, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let gru = match config.encoder {
            EncoderKind::Gru => Some(Gru::new(config.gru_spec(), config.init, rng)?),
            EncoderKind::Mlp => None,
        };
        let head = Mlp::new(config.head_spec(), config.init, rng)?;
        Ok(Self {
            config,
            normalizer,
            gru,
            head,
        })
    }

    /// Builds a model whose normalizer is fitted on `cohort`.
    pub fn for_cohort<R: Rng + ?Sized>(config: ModelConfig, cohort: &Cohort, rng: &mut R) -> Result<Self> {
        Self::new(config, Normalizer::fit(cohort)?, rng)
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Inputs for `(trajectory, hour)` items. Hours before the start of the
    /// stay are padded with the first state.
    pub fn encode_items(&self, items: &[(&PatientTrajectory, usize)]) -> EncoderInput<T> {
        let b = items.len();
        let mut scratch = vec![T::zero(); STATE_DIM];
        let mut fill = |offset: usize| -> Tensor<T> {
            let mut data = Vec::with_capacity(b * STATE_DIM);
            for &(p, hour) in items {
                let h = hour.saturating_sub(offset);
                self.normalizer.apply(&p.states[h].features(), &mut scratch);
                data.extend_from_slice(&scratch);
            }
            Tensor::matrix(b, STATE_DIM, data).expect("input shape")
        };
        let current = fill(0);
        let history = match self.config.encoder {
            EncoderKind::Mlp => Vec::new(),
            EncoderKind::Gru => {
                let horizon = self.config.horizon;
                (0..horizon)
                    .map(|step| if step + 1 == horizon { current.clone() } else { fill(horizon - 1 - step) })
                    .collect()
            }
        };
        EncoderInput { current, history }
    }

    pub fn encode_refs(&self, cohort: &Cohort, refs: &[StateRef]) -> EncoderInput<T> {
        let items: Vec<_> = refs.iter().map(|r| (&cohort.patients[r.patient], r.hour)).collect();
        self.encode_items(&items)
    }

    /// Forward pass using handles from [`Parameters::bind`].
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: &EncoderInput<T>) -> Result<Var> {
        let current = tape.constant(input.current.clone());
        let (gru_vars, head_vars) = vars.split_at(self.gru.as_ref().map_or(0, |g| g.params().len()));
        let head_input = match &self.gru {
            None => current,
            Some(gru) => {
                let seq: Vec<Var> = input.history.iter().map(|h| tape.constant(h.clone())).collect();
                let h = gru.forward(tape, gru_vars, &seq, None)?;
                tape.concat_cols(&[h, current])
            }
        };
        let out = self.head.forward(tape, head_vars, head_input)?;
        Ok(match self.config.output {
            OutputKind::UnitSphere => tape.row_normalize(out),
            _ => out,
        })
    }

    /// Embeddings `[n, embedding_dim]` without gradient bookkeeping.
    pub fn embed_input(&self, input: &EncoderInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }

    pub fn embed_items(&self, items: &[(&PatientTrajectory, usize)]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(items.len() * self.embedding_dim());
        for chunk in items.chunks(INFERENCE_CHUNK) {
            data.extend_from_slice(self.embed_input(&self.encode_items(chunk))?.data());
        }
        Tensor::matrix(items.len(), self.embedding_dim(), data)
    }

    /// All hourly embeddings of one stay, `[T, embedding_dim]`.
    pub fn embed_trajectory(&self, traj: &PatientTrajectory) -> Result<Tensor<T>> {
        let items: Vec<_> = (0..traj.len()).map(|h| (traj, h)).collect();
        self.embed_items(&items)
    }

    /// Embeddings of every state, one tensor per patient.
    pub fn embed_cohort(&self, cohort: &Cohort) -> Result<Vec<Tensor<T>>> {
        let items: Vec<_> = cohort
            .patients
            .iter()
            .flat_map(|p| (0..p.len()).map(move |h| (p, h)))
            .collect();
        let all = self.embed_items(&items)?;
        let mut out = Vec::with_capacity(cohort.len());
        let mut row = 0;
        for p in &cohort.patients {
            let idx: Vec<usize> = (row..row + p.len()).collect();
            out.push(all.select_rows(&idx));
            row += p.len();
        }
        Ok(out)
    }

    /// `d(x) = ‖f_θ(x)‖²` for every state, one vector per patient.
    pub fn risk_cohort(&self, cohort: &Cohort) -> Result<Vec<Vec<f64>>> {
        Ok(self.embed_cohort(cohort)?.iter().map(row_norms_sq).collect())
    }

    /// Tensors to persist: normalizer followed by the parameters.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor::new("normalizer.mean", &Tensor::<f64>::row_vector(self.normalizer.mean.clone())),
            NamedTensor::new("normalizer.std", &Tensor::<f64>::row_vector(self.normalizer.std.clone())),
        ];
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            out.push(NamedTensor::new(name, p));
        }
        out
    }

    /// Rebuilds a model of the given architecture from [`Self::named_tensors`] output.
    pub fn from_named_tensors(config: ModelConfig, tensors: &[NamedTensor]) -> Result<Self> {
        if tensors.len() < 2 || tensors[0].name != "normalizer.mean" || tensors[1].name != "normalizer.std" {
            return Err(Error::Checkpoint("missing normalizer tensors".into()));
        }
        let normalizer = Normalizer {
            mean: tensors[0].tensor.data().to_vec(),
            std: tensors[1].tensor.data().to_vec(),
        };
        if normalizer.mean.len() != STATE_DIM || normalizer.std.len() != STATE_DIM {
            return Err(Error::Checkpoint("normalizer has the wrong width".into()));
        }
        let mut model = Self::new(config, normalizer, &mut crate::seed::rng(0))?;
        let names = model.param_names();
        checkpoint::restore(&tensors[2..], &names, model.params_mut())?;
        Ok(model)
    }
}

/// Squared norm of each row.
pub fn row_norms_sq<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_f64_lossy().powi(2)).sum())
        .collect()
}

impl<T: Scalar> Parameters<T> for EmbeddingModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.gru.as_ref().map_or_else(Vec::new, |g| g.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.gru.as_mut().map_or_else(Vec::new, |g| g.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.gru.as_ref().map_or_else(Vec::new, |g| g.param_names());
        n.extend(self.head.param_names());
        n
    }
}

/// Path of the `key=value` sidecar written next to a checkpoint.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".config.txt");
    std::path::PathBuf::from(p)
}

/// Writes the container, its tensor manifest and a `key=value` sidecar with
/// the model architecture (`model.*`) followed by `extra` lines.
pub fn save_model<T: Scalar>(model: &EmbeddingModel<T>, path: &Path, extra: &[(String, String)]) -> Result<()> {
    checkpoint::write(path, &model.named_tensors())?;
    let mut text = String::new();
    for (k, v) in model.config.to_kv() {
        text.push_str(&format!("model.{k}={v}\n"));
    }
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    checkpoint::write_atomic(&sidecar_path(path), text.as_bytes())
}

/// Reads a checkpoint written by [`save_model`]; returns the model and all
/// sidecar lines that are not part of the architecture.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(EmbeddingModel<T>, Vec<(String, String)>)> {
    let tensors = checkpoint::read(path)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::NotFound(side));
    }
    let text = std::fs::read_to_string(&side)?;
    let mut config = ModelConfig::default();
    let mut rest = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed sidecar line `{line}`")))?;
        match k.strip_prefix("model.") {
            Some(key) => config.set(key, v)?,
            None => rest.push((k.to_string(), v.to_string())),
        }
    }
    Ok((EmbeddingModel::from_named_tensors(config, &tensors)?, rest))
}
