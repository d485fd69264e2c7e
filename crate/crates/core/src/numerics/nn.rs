//! The two encoder building blocks: a dense ELU network and a stacked GRU.

use rand::Rng;

use super::{Init, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Anything holding trainable tensors in a fixed order.
pub trait Parameters<T: Scalar> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn param_names(&self) -> Vec<String>;

    /// Registers every parameter on the tape, in `params()` order.
    fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputActivation {
    Tanh,
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of linear layers; every layer but the last is followed by ELU.
    pub num_layers: usize,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 512,
            num_layers: 8,
            output_dim,
            output_activation: OutputActivation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 || self.output_dim < 1 || self.input_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::Config(format!(
                "MLP needs num_layers, input, hidden and output dims >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let i = if l == 0 { self.input_dim } else { self.hidden_dim };
                let o = if l + 1 == self.num_layers {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (i, o)
            })
            .collect()
    }
}

/// Affine map `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, init: Init, rng: &mut R) -> Self {
        Self {
            weight: init.matrix(input, output, rng),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }
}

fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub spec: MlpSpec,
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear::new(i, o, init, rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_dims().into_iter().map(|(i, o)| Linear::zeros(i, o)).collect();
        Ok(Self { spec, layers })
    }

    /// Forward pass for a batch `input: [batch, input_dim]`, using the
    /// parameter handles returned by [`Parameters::bind`].
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: Var) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.spec.input_dim {
            return Err(Error::shape("mlp_forward input", self.spec.input_dim, width));
        }
        debug_assert_eq!(vars.len(), 2 * self.layers.len());
        let mut h = input;
        let n = self.layers.len();
        for l in 0..n {
            h = affine(tape, h, vars[2 * l], vars[2 * l + 1]);
            if l + 1 < n {
                h = tape.elu(h);
            }
        }
        if self.spec.output_activation == OutputActivation::Tanh {
            h = tape.tanh(h);
        }
        Ok(h)
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("mlp.{l}.weight"), format!("mlp.{l}.bias")])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Hours of history fed to the recurrence.
    pub horizon: usize,
}

impl GruSpec {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 128,
            num_layers: 2,
            horizon: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.hidden_dim < 1 || self.num_layers < 1 || self.input_dim < 1 {
            return Err(Error::Config(format!(
                "GRU needs horizon, hidden_dim, num_layers and input_dim >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One GRU layer, single bias per gate:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// ñ  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = (1 − z) ⊙ ñ + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer<T> {
    pub w_z: Tensor<T>,
    pub u_z: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_n: Tensor<T>,
    pub u_n: Tensor<T>,
    pub b_n: Tensor<T>,
}

impl<T: Scalar> GruLayer<T> {
    fn new<R: Rng + ?Sized>(input: usize, hidden: usize, init: Init, rng: &mut R) -> Self {
        Self {
            w_z: init.matrix(input, hidden, rng),
            u_z: init.matrix(hidden, hidden, rng),
            b_z: Tensor::zeros(1, hidden),
            w_r: init.matrix(input, hidden, rng),
            u_r: init.matrix(hidden, hidden, rng),
            b_r: Tensor::zeros(1, hidden),
            w_n: init.matrix(input, hidden, rng),
            u_n: init.matrix(hidden, hidden, rng),
            b_n: Tensor::zeros(1, hidden),
        }
    }

    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor::zeros(input, hidden),
            u_z: Tensor::zeros(hidden, hidden),
            b_z: Tensor::zeros(1, hidden),
            w_r: Tensor::zeros(input, hidden),
            u_r: Tensor::zeros(hidden, hidden),
            b_r: Tensor::zeros(1, hidden),
            w_n: Tensor::zeros(input, hidden),
            u_n: Tensor::zeros(hidden, hidden),
            b_n: Tensor::zeros(1, hidden),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_n, &self.u_n,
            &self.b_n,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }

    const NAMES: [&'static str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"];

    /// One recurrence step; `v` holds this layer's 9 bound parameters.
    fn step(tape: &mut Tape<T>, v: &[Var], x: Var, h: Var) -> Var {
        let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var| {
            let xw = tape.matmul(x, w);
            let hu = tape.matmul(h, u);
            let s = tape.add(xw, hu);
            let s = tape.add_row(s, b);
            tape.sigmoid(s)
        };
        let z = gate(tape, v[0], v[1], v[2]);
        let r = gate(tape, v[3], v[4], v[5]);
        let xw = tape.matmul(x, v[6]);
        let rh = tape.mul(r, h);
        let rhu = tape.matmul(rh, v[7]);
        let s = tape.add(xw, rhu);
        let s = tape.add_row(s, v[8]);
        let cand = tape.tanh(s);
        let one_minus_z = tape.rsub_scalar(T::one(), z);
        let keep_new = tape.mul(one_minus_z, cand);
        let keep_old = tape.mul(z, h);
        tape.add(keep_new, keep_old)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gru<T> {
    pub spec: GruSpec,
    pub layers: Vec<GruLayer<T>>,
}

impl<T: Scalar> Gru<T> {
    pub fn new<R: Rng + ?Sized>(spec: GruSpec, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.num_layers)
            .map(|l| {
                let input = if l == 0 { spec.input_dim } else { spec.hidden_dim };
                GruLayer::new(input, spec.hidden_dim, init, rng)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: GruSpec) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.num_layers)
            .map(|l| {
                let input = if l == 0 { spec.input_dim } else { spec.hidden_dim };
                GruLayer::zeros(input, spec.hidden_dim)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Runs the stack over `sequence` (one `[batch, input_dim]` node per hour,
    /// oldest first) and returns the top layer's final hidden state.
    ///
    /// `initial` optionally supplies one `[batch, hidden_dim]` state per layer;
    /// zeros are used otherwise.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        sequence: &[Var],
        initial: Option<&[Var]>,
    ) -> Result<Var> {
        if sequence.len() != self.spec.horizon {
            return Err(Error::shape("gru_forward sequence length", self.spec.horizon, sequence.len()));
        }
        let batch = tape.value(sequence[0]).rows();
        for &x in sequence {
            let v = tape.value(x);
            if v.cols() != self.spec.input_dim || v.rows() != batch {
                return Err(Error::shape(
                    "gru_forward step input",
                    format!("[{batch}, {}]", self.spec.input_dim),
                    format!("{:?}", v.shape()),
                ));
            }
        }
        if let Some(init) = initial {
            if init.len() != self.layers.len() {
                return Err(Error::shape("gru_forward initial states", self.layers.len(), init.len()));
            }
        }
        let mut hidden: Vec<Var> = match initial {
            Some(h) => h.to_vec(),
            None => (0..self.layers.len())
                .map(|_| tape.constant(Tensor::zeros(batch, self.spec.hidden_dim)))
                .collect(),
        };
        for &x in sequence {
            let mut input = x;
            for (l, h) in hidden.iter_mut().enumerate() {
                *h = GruLayer::step(tape, &vars[9 * l..9 * (l + 1)], input, *h);
                input = *h;
            }
        }
        Ok(*hidden.last().expect("at least one layer"))
    }
}

impl<T: Scalar> Parameters<T> for Gru<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| GruLayer::<T>::NAMES.iter().map(move |n| format!("gru.{l}.{n}")))
            .collect()
    }
}
