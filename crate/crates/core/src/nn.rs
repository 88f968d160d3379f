//! Dense layers and MLPs stored as plain tensors, with tape bindings for
//! differentiable forward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// `y = x W + b` with `W: [d_in, d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform `±1/√d_in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in.max(1) as f32).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
        let weight = Tensor::new(vec![d_in, d_out], draw(d_in * d_out)).expect("sized above");
        let bias = Tensor::vector(draw(d_out));
        Self { weight, bias }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add(xw, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Stack of linear layers. Every layer but the last is followed by the
/// activation unless `activate_last` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    /// `d_in → [d_hidden; n_hidden] → d_out`.
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        n_hidden: usize,
        d_hidden: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat(d_hidden).take(n_hidden));
        dims.push(d_out);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            activation,
            activate_last: false,
        }
    }

    /// Hidden trunk only: `d_in → [d_hidden; n_hidden]`, activated throughout.
    pub fn trunk<R: Rng + ?Sized>(
        d_in: usize,
        n_hidden: usize,
        d_hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat(d_hidden).take(n_hidden));
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            activation,
            activate_last: true,
        }
    }

    pub fn d_out(&self, d_in: usize) -> usize {
        self.layers.last().map_or(d_in, Linear::d_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            activation: self.activation,
            activate_last: self.activate_last,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Linear::tensors_mut).collect()
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last || self.activate_last {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(BoundLinear::vars).collect()
    }
}

/// Gaussian encoder: activated trunk, then separate mean and variance heads.
/// The variance head is `softplus(·) + floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEncoder {
    pub trunk: Mlp,
    pub mean: Linear,
    pub var: Linear,
}

impl GaussianEncoder {
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        n_hidden: usize,
        d_hidden: usize,
        d_latent: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let trunk = Mlp::trunk(d_in, n_hidden, d_hidden, activation, rng);
        let d = trunk.d_out(d_in);
        Self {
            mean: Linear::init(d, d_latent, rng),
            var: Linear::init(d, d_latent, rng),
            trunk,
        }
    }

    pub fn d_in(&self) -> usize {
        self.trunk.layers.first().map_or(self.mean.d_in(), Linear::d_in)
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params() + self.mean.n_params() + self.var.n_params()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            trunk: self.trunk.bind(tape),
            mean: self.mean.bind(tape),
            var: self.var.bind(tape),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.trunk.tensors();
        v.extend(self.mean.tensors());
        v.extend(self.var.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.trunk.tensors_mut();
        v.extend(self.mean.tensors_mut());
        v.extend(self.var.tensors_mut());
        v
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        let mut v = self.trunk.tensor_names(&format!("{prefix}.trunk"));
        v.extend([format!("{prefix}.mean.weight"), format!("{prefix}.mean.bias")]);
        v.extend([format!("{prefix}.var.weight"), format!("{prefix}.var.bias")]);
        v
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub trunk: BoundMlp,
    pub mean: BoundLinear,
    pub var: BoundLinear,
}

impl BoundEncoder {
    /// Returns `(mean, variance)`, each `[batch, d_latent]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, var_floor: f32) -> Result<(Var, Var)> {
        let h = self.trunk.forward(tape, x)?;
        let mu = self.mean.forward(tape, h)?;
        let raw = self.var.forward(tape, h)?;
        let sp = tape.softplus(raw);
        Ok((mu, tape.add_scalar(sp, var_floor)))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.trunk.vars();
        v.extend(self.mean.vars());
        v.extend(self.var.vars());
        v
    }
}

/// One-hot encodes labels into a `[n, k]` matrix.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!("label {y} at row {i} is out of range for {k} classes")));
        }
        data[i * k + y] = 1.0;
    }
    Tensor::matrix(labels.len(), k, data)
}
