//! Network assembly for the dual-latent model and the two reference baselines.
//!
//! Parameter groups:
//!
//! | group            | maps                       |
//! |------------------|----------------------------|
//! | `enc_z`          | x → (μ_z, σ²_z)            |
//! | `dec_z`          | z → x̂                      |
//! | `enc_w`          | (x, onehot y) → (μ_w, σ²_w) |
//! | `dec_zw`         | (z, w) → x̃                 |
//! | `adversary`      | x̂ → class logits           |
//!
//! The plain VAE has only `enc_z`/`dec_z`. The conditional VAE feeds the one-hot
//! label to both `enc_z` and `dec_z` and has no `w` path or adversary.

mod prior;

pub use prior::{estimate_class_means, PriorMeans, RunningMeans};

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bundle;
use crate::distributions::{taped, VAR_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{one_hot, Activation, BoundEncoder, BoundLinear, BoundMlp, GaussianEncoder, Linear, Mlp};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_KIND: &str = "model-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dual,
    PlainVae,
    ConditionalVae,
}

/// Observation model for reconstructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Unit-variance Gaussian; decoders output the mean.
    Gaussian,
    /// Independent Bernoulli per coordinate; decoders output logits and the
    /// reconstruction is `sigmoid(logits)`.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub x_dim: usize,
    pub n_classes: usize,
    pub d_latent: usize,
    pub n_hidden: usize,
    pub d_hidden: usize,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.d_latent == 0 || self.n_classes < 2 {
            return Err(Error::Config(format!(
                "model needs x_dim > 0, d_latent > 0 and at least 2 classes (got {}, {}, {})",
                self.x_dim, self.d_latent, self.n_classes
            )));
        }
        if self.n_hidden > 0 && self.d_hidden == 0 {
            return Err(Error::Config("d_hidden must be > 0 when n_hidden > 0".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count for this spec, independent of any built model.
    pub fn expected_param_count(&self) -> usize {
        let (h, nh, d, x, k) = (self.d_hidden, self.n_hidden, self.d_latent, self.x_dim, self.n_classes);
        let mlp = |d_in: usize, d_out: usize| -> usize {
            if nh == 0 {
                d_in * d_out + d_out
            } else {
                (d_in * h + h) + (nh - 1) * (h * h + h) + (h * d_out + d_out)
            }
        };
        let enc = |d_in: usize| -> usize {
            let trunk = if nh == 0 { 0 } else { (d_in * h + h) + (nh - 1) * (h * h + h) };
            let feat = if nh == 0 { d_in } else { h };
            trunk + 2 * (feat * d + d)
        };
        match self.kind {
            ModelKind::Dual => enc(x) + mlp(d, x) + enc(x + k) + mlp(2 * d, x) + (x * k + k),
            ModelKind::PlainVae => enc(x) + mlp(d, x),
            ModelKind::ConditionalVae => enc(x + k) + mlp(d + k, x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    EncoderZ,
    DecoderZ,
    EncoderW,
    DecoderJoint,
    Adversary,
}

impl ParamGroup {
    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::EncoderZ => "enc_z",
            ParamGroup::DecoderZ => "dec_z",
            ParamGroup::EncoderW => "enc_w",
            ParamGroup::DecoderJoint => "dec_zw",
            ParamGroup::Adversary => "adversary",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub enc_z: GaussianEncoder,
    pub dec_z: Mlp,
    pub enc_w: Option<GaussianEncoder>,
    pub dec_zw: Option<Mlp>,
    pub adversary: Option<Linear>,
    /// Running per-class means of z, used as the w-prior means outside training
    /// batches.
    pub prior: RunningMeans,
}

impl ModelState {
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let s = &spec;
        let (x, k, d) = (s.x_dim, s.n_classes, s.d_latent);
        let enc = |d_in: usize, rng: &mut R| GaussianEncoder::init(d_in, s.n_hidden, s.d_hidden, d, s.activation, rng);
        let dec = |d_in: usize, rng: &mut R| Mlp::init(d_in, s.n_hidden, s.d_hidden, x, s.activation, rng);
        let (enc_z, dec_z, enc_w, dec_zw, adversary) = match s.kind {
            ModelKind::Dual => {
                let ez = enc(x, rng);
                let dz = dec(d, rng);
                let ew = enc(x + k, rng);
                let dzw = dec(2 * d, rng);
                let adv = Linear::init(x, k, rng);
                (ez, dz, Some(ew), Some(dzw), Some(adv))
            }
            ModelKind::PlainVae => {
                let ez = enc(x, rng);
                (ez, dec(d, rng), None, None, None)
            }
            ModelKind::ConditionalVae => {
                let ez = enc(x + k, rng);
                (ez, dec(d + k, rng), None, None, None)
            }
        };
        Ok(Self {
            prior: RunningMeans::new(k, d),
            spec,
            enc_z,
            dec_z,
            enc_w,
            dec_zw,
            adversary,
        })
    }

    /// All parameters in a fixed order, tagged with their group.
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        fn tag<'a>(g: ParamGroup, names: Vec<String>, ts: Vec<&'a Tensor>) -> Vec<(String, ParamGroup, &'a Tensor)> {
            names.into_iter().zip(ts).map(|(n, t)| (n, g, t)).collect()
        }
        let mut out = tag(ParamGroup::EncoderZ, self.enc_z.tensor_names("enc_z"), self.enc_z.tensors());
        out.extend(tag(ParamGroup::DecoderZ, self.dec_z.tensor_names("dec_z"), self.dec_z.tensors()));
        if let Some(e) = &self.enc_w {
            out.extend(tag(ParamGroup::EncoderW, e.tensor_names("enc_w"), e.tensors()));
        }
        if let Some(d) = &self.dec_zw {
            out.extend(tag(ParamGroup::DecoderJoint, d.tensor_names("dec_zw"), d.tensors()));
        }
        if let Some(a) = &self.adversary {
            out.extend(tag(
                ParamGroup::Adversary,
                vec!["adversary.weight".into(), "adversary.bias".into()],
                vec![&a.weight, &a.bias],
            ));
        }
        out
    }

    /// Mutable parameters of either the adversary (`adversary = true`) or every
    /// other group, in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self, adversary: bool) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![];
        if adversary {
            if let Some(a) = &mut self.adversary {
                out.push(("adversary.weight".into(), &mut a.weight));
                out.push(("adversary.bias".into(), &mut a.bias));
            }
            return out;
        }
        let names = self.enc_z.tensor_names("enc_z");
        out.extend(names.into_iter().zip(self.enc_z.tensors_mut()));
        let names = self.dec_z.tensor_names("dec_z");
        out.extend(names.into_iter().zip(self.dec_z.tensors_mut()));
        if let Some(e) = &mut self.enc_w {
            let names = e.tensor_names("enc_w");
            out.extend(names.into_iter().zip(e.tensors_mut()));
        }
        if let Some(d) = &mut self.dec_zw {
            let names = d.tensor_names("dec_zw");
            out.extend(names.into_iter().zip(d.tensors_mut()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn group_param_count(&self, group: ParamGroup) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn has_joint_path(&self) -> bool {
        self.dec_zw.is_some()
    }

    /// Registers every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, _, t)| tape.param(t.clone()))
            .collect();
        self.bind_vars(&vars).expect("one leaf per parameter")
    }

    /// Assembles a [`BoundModel`] from caller-provided leaves, one per entry of
    /// [`named_params`](Self::named_params) and in that order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        let expected = self.named_params().len();
        if vars.len() != expected {
            return Err(Error::Contract(format!("expected {expected} parameter leaves, got {}", vars.len())));
        }
        let mut it = vars.iter().copied();
        let linear = |it: &mut dyn Iterator<Item = Var>| BoundLinear {
            weight: it.next().expect("counted"),
            bias: it.next().expect("counted"),
        };
        let mlp = |m: &Mlp, it: &mut dyn Iterator<Item = Var>| BoundMlp {
            layers: (0..m.layers.len()).map(|_| linear(it)).collect(),
            activation: m.activation,
            activate_last: m.activate_last,
        };
        let encoder = |e: &GaussianEncoder, it: &mut dyn Iterator<Item = Var>| BoundEncoder {
            trunk: mlp(&e.trunk, it),
            mean: linear(it),
            var: linear(it),
        };
        let enc_z = encoder(&self.enc_z, &mut it);
        let dec_z = mlp(&self.dec_z, &mut it);
        let enc_w = self.enc_w.as_ref().map(|e| encoder(e, &mut it));
        let dec_zw = self.dec_zw.as_ref().map(|d| mlp(d, &mut it));
        let adversary = self.adversary.as_ref().map(|_| linear(&mut it));
        Ok(BoundModel {
            kind: self.spec.kind,
            n_classes: self.spec.n_classes,
            likelihood: self.spec.likelihood,
            enc_z,
            dec_z,
            enc_w,
            dec_zw,
            adversary,
        })
    }

    pub fn check_inputs(&self, x: &Tensor, y: Option<&[usize]>) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.spec.x_dim {
            return Err(Error::Input(format!(
                "expected inputs of shape [n, {}], got {:?}",
                self.spec.x_dim,
                x.shape()
            )));
        }
        if let Some(pos) = x.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite input at row {}",
                pos / self.spec.x_dim
            )));
        }
        if let Some(y) = y {
            if y.len() != x.rows() {
                return Err(Error::Input(format!("{} labels for {} rows", y.len(), x.rows())));
            }
            if let Some(bad) = y.iter().find(|&&v| v >= self.spec.n_classes) {
                return Err(Error::Input(format!(
                    "label {bad} is out of range for {} classes",
                    self.spec.n_classes
                )));
            }
        }
        Ok(())
    }

    fn labels_for_kind<'a>(&self, y: Option<&'a [usize]>) -> Result<Option<&'a [usize]>> {
        match (self.spec.kind, y) {
            (ModelKind::ConditionalVae, None) => {
                Err(Error::Contract("the conditional VAE encoder needs labels".into()))
            }
            (ModelKind::ConditionalVae, y) => Ok(y),
            _ => Ok(None),
        }
    }

    /// `(μ_z, σ²_z)` for a batch. Labels are required only by the conditional VAE.
    pub fn encode_z(&self, x: &Tensor, y: Option<&[usize]>) -> Result<(Tensor, Tensor)> {
        self.check_inputs(x, y)?;
        let y = self.labels_for_kind(y)?;
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let oh = y.map(|y| one_hot(y, self.spec.n_classes)).transpose()?.map(|t| tape.constant(t));
        let (mu, var) = m.encode_z(&mut tape, xv, oh)?;
        Ok((tape.value(mu).clone(), tape.value(var).clone()))
    }

    /// `(μ_w, σ²_w)` for a labelled batch.
    pub fn encode_w(&self, x: &Tensor, y: &[usize]) -> Result<(Tensor, Tensor)> {
        self.check_inputs(x, Some(y))?;
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let oh = tape.constant(one_hot(y, self.spec.n_classes)?);
        let (mu, var) = m.encode_w(&mut tape, xv, oh)?;
        Ok((tape.value(mu).clone(), tape.value(var).clone()))
    }

    /// Reconstruction x̂ from z alone (for the conditional VAE, from `(z, y)`).
    pub fn decode_z(&self, z: &Tensor, y: Option<&[usize]>) -> Result<Tensor> {
        let y = self.labels_for_kind(y)?;
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let oh = y.map(|y| one_hot(y, self.spec.n_classes)).transpose()?.map(|t| tape.constant(t));
        let raw = m.decode_z(&mut tape, zv, oh)?;
        let mean = m.reconstruction(&mut tape, raw);
        Ok(tape.value(mean).clone())
    }

    /// Joint reconstruction x̃ from `(z, w)`.
    pub fn decode_zw(&self, z: &Tensor, w: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let wv = tape.constant(w.clone());
        let raw = m.decode_zw(&mut tape, zv, wv)?;
        let mean = m.reconstruction(&mut tape, raw);
        Ok(tape.value(mean).clone())
    }

    /// Row-wise class log-probabilities of the adversary on reconstructions.
    pub fn classify_reconstruction(&self, xhat: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let xv = tape.constant(xhat.clone());
        let lp = m.adversary_log_probs(&mut tape, xv)?;
        Ok(tape.value(lp).clone())
    }

    /// Writes the checkpoint bundle at `stem` (`stem.json` + `stem.bin`).
    pub fn save(&self, stem: &Path) -> Result<bundle::Manifest> {
        let params = self.named_params();
        let mut tensors: Vec<(&str, &Tensor)> = params.iter().map(|(n, _, t)| (n.as_str(), *t)).collect();
        tensors.push(("prior.means", &self.prior.means));
        let meta = serde_json::json!({
            "spec": self.spec,
            "prior_seen": self.prior.seen,
            "prior_momentum": self.prior.momentum,
        });
        bundle::write(stem, CHECKPOINT_KIND, meta, &tensors)
    }

    /// Reads a checkpoint, checking that every stored tensor matches the
    /// architecture recorded in its manifest.
    pub fn load(stem: &Path) -> Result<Self> {
        let (manifest, mut tensors) = bundle::read(stem, CHECKPOINT_KIND)?;
        #[derive(Deserialize)]
        struct Meta {
            spec: ModelSpec,
            prior_seen: Vec<bool>,
            prior_momentum: f32,
        }
        let meta: Meta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::Integrity(format!("checkpoint metadata: {e}")))?;
        // shapes come from the spec; every value is overwritten below
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut state = Self::init(meta.spec, &mut rng)?;
        let names: Vec<String> = state.named_params().into_iter().map(|(n, _, _)| n).collect();
        for name in &names {
            let loaded = bundle::take(&mut tensors, name)?;
            let slot = state.param_slot(name)?;
            if slot.shape() != loaded.shape() {
                return Err(Error::Integrity(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            *slot = loaded;
        }
        let means = bundle::take(&mut tensors, "prior.means")?;
        if means.shape() != state.prior.means.shape() || meta.prior_seen.len() != state.spec.n_classes {
            return Err(Error::Integrity("prior means do not match the architecture".into()));
        }
        if let Some((extra, _)) = tensors.first() {
            return Err(Error::Integrity(format!("unexpected tensor `{extra}` in checkpoint")));
        }
        state.prior = RunningMeans {
            means,
            seen: meta.prior_seen,
            momentum: meta.prior_momentum,
        };
        Ok(state)
    }

    fn param_slot(&mut self, name: &str) -> Result<&mut Tensor> {
        let adversary = name.starts_with("adversary.");
        self.params_mut(adversary)
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Integrity(format!("architecture has no tensor `{name}`")))
    }
}

/// A [`ModelState`] registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub kind: ModelKind,
    pub n_classes: usize,
    pub likelihood: Likelihood,
    pub enc_z: BoundEncoder,
    pub dec_z: BoundMlp,
    pub enc_w: Option<BoundEncoder>,
    pub dec_zw: Option<BoundMlp>,
    pub adversary: Option<BoundLinear>,
}

impl BoundModel {
    /// Leaves of every non-adversary group, in checkpoint order.
    pub fn main_vars(&self) -> Vec<Var> {
        let mut v = self.enc_z.vars();
        v.extend(self.dec_z.vars());
        if let Some(e) = &self.enc_w {
            v.extend(e.vars());
        }
        if let Some(d) = &self.dec_zw {
            v.extend(d.vars());
        }
        v
    }

    pub fn adversary_vars(&self) -> Vec<Var> {
        self.adversary.map(|a| a.vars().to_vec()).unwrap_or_default()
    }

    fn with_labels(&self, tape: &mut Tape, x: Var, onehot: Option<Var>) -> Result<Var> {
        match (self.kind, onehot) {
            (ModelKind::ConditionalVae, Some(oh)) => tape.concat_cols(x, oh),
            (ModelKind::ConditionalVae, None) => {
                Err(Error::Contract("the conditional VAE needs one-hot labels".into()))
            }
            _ => Ok(x),
        }
    }

    pub fn encode_z(&self, tape: &mut Tape, x: Var, onehot: Option<Var>) -> Result<(Var, Var)> {
        let input = self.with_labels(tape, x, onehot)?;
        self.enc_z.forward(tape, input, VAR_FLOOR as f32)
    }

    pub fn encode_w(&self, tape: &mut Tape, x: Var, onehot: Var) -> Result<(Var, Var)> {
        let enc = self
            .enc_w
            .as_ref()
            .ok_or_else(|| Error::Contract("this model has no w encoder".into()))?;
        let input = tape.concat_cols(x, onehot)?;
        enc.forward(tape, input, VAR_FLOOR as f32)
    }

    /// Raw decoder output (means or logits, see [`Likelihood`]).
    pub fn decode_z(&self, tape: &mut Tape, z: Var, onehot: Option<Var>) -> Result<Var> {
        let input = self.with_labels(tape, z, onehot)?;
        self.dec_z.forward(tape, input)
    }

    pub fn decode_zw(&self, tape: &mut Tape, z: Var, w: Var) -> Result<Var> {
        let dec = self
            .dec_zw
            .as_ref()
            .ok_or_else(|| Error::Contract("this model has no joint decoder".into()))?;
        let input = tape.concat_cols(z, w)?;
        dec.forward(tape, input)
    }

    /// Maps a raw decoder output to data space.
    pub fn reconstruction(&self, tape: &mut Tape, raw: Var) -> Var {
        match self.likelihood {
            Likelihood::Gaussian => raw,
            Likelihood::Bernoulli => tape.sigmoid(raw),
        }
    }

    /// Per-row `log p(x | raw decoder output)`.
    pub fn log_likelihood(&self, tape: &mut Tape, x: Var, raw: Var) -> Result<Var> {
        match self.likelihood {
            Likelihood::Gaussian => taped::gaussian_loglik(tape, x, raw),
            Likelihood::Bernoulli => taped::bernoulli_loglik(tape, x, raw),
        }
    }

    pub fn adversary_log_probs(&self, tape: &mut Tape, xhat: Var) -> Result<Var> {
        let adv = self
            .adversary
            .ok_or_else(|| Error::Contract("this model has no adversary".into()))?;
        self.classifier_log_probs(tape, adv, xhat)
    }

    /// Log-softmax of `xhat W + b` with arbitrary classifier leaves, so the
    /// trainer can score the same reconstruction under updated weights.
    pub fn classifier_log_probs(&self, tape: &mut Tape, adv: BoundLinear, xhat: Var) -> Result<Var> {
        let logits = adv.forward(tape, xhat)?;
        tape.log_softmax(logits)
    }
}

#[cfg(test)]
mod tests;
