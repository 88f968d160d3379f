//! The weighted training objective and its pieces, built on a tape.
//!
//! Encoders and decoders maximize
//!
//! ```text
//! rec_z·E[log p(x|z)] + rec·E[log p(x|z,w)] − kl_z·KL(q_z‖N(0,I)) − kl_w·KL(q_w‖N(μ̂_y,I)) + adv·CE
//! ```
//!
//! where CE is the cross-entropy of the adversary's prediction of y from the
//! z-only reconstruction x̂. The adversary minimizes CE alone.

use serde::{Deserialize, Serialize};

use crate::distributions::taped;
use crate::error::{Error, Result};
use crate::model::{BoundModel, ModelKind};
use crate::nn::BoundLinear;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Joint reconstruction `log p(x | z, w)`.
    pub rec: f32,
    /// z-only reconstruction `log p(x | z)`.
    pub rec_z: f32,
    pub kl_z: f32,
    pub kl_w: f32,
    /// Adversarial cross-entropy.
    pub adv: f32,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rec", self.rec),
            ("rec_z", self.rec_z),
            ("kl_z", self.kl_z),
            ("kl_w", self.kl_w),
            ("adv", self.adv),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight `{name}` must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Plain ELBO weighting used by the baselines.
    pub fn elbo() -> Self {
        Self {
            rec: 1.0,
            rec_z: 0.0,
            kl_z: 1.0,
            kl_w: 0.0,
            adv: 0.0,
        }
    }
}

/// Batch-mean values of each objective term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec_z: f64,
    pub rec_joint: f64,
    pub kl_z: f64,
    pub kl_w: f64,
    pub ce: f64,
}

impl LossComponents {
    /// The maximized objective.
    pub fn objective(&self, w: &LossWeights) -> f64 {
        w.rec_z as f64 * self.rec_z + w.rec as f64 * self.rec_joint
            - w.kl_z as f64 * self.kl_z
            - w.kl_w as f64 * self.kl_w
            + w.adv as f64 * self.ce
    }

    /// The minimized loss, `−objective`.
    pub fn total_loss(&self, w: &LossWeights) -> f64 {
        -self.objective(w)
    }

    pub fn is_finite(&self) -> bool {
        [self.rec_z, self.rec_joint, self.kl_z, self.kl_w, self.ce]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Joint-path negative ELBO per datum.
    pub fn neg_elbo(&self) -> f64 {
        -(self.rec_joint - self.kl_z - self.kl_w)
    }
}

/// Standard-normal draws for one step's reparameterized samples.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    pub eps_z: Tensor,
    pub eps_w: Option<Tensor>,
}

/// `(reconstruction, KL)` batch means of the z-only ELBO.
pub fn loss_z(tape: &mut Tape, model: &BoundModel, mu: Var, var: Var, z: Var, x: Var) -> Result<(Var, Var)> {
    let raw = model.decode_z(tape, z, None)?;
    let ll = model.log_likelihood(tape, x, raw)?;
    let kl = taped::kl_standard_normal(tape, mu, var)?;
    Ok((tape.mean(ll, None)?, tape.mean(kl, None)?))
}

/// `(reconstruction, KL_z, KL_w)` batch means of the joint ELBO, with the w
/// prior `N(prior_rows[i], I)` for row `i`.
#[allow(clippy::too_many_arguments)]
pub fn loss_w(
    tape: &mut Tape,
    model: &BoundModel,
    (mu_z, var_z): (Var, Var),
    (mu_w, var_w): (Var, Var),
    z: Var,
    w: Var,
    x: Var,
    prior_rows: Var,
) -> Result<(Var, Var, Var)> {
    let raw = model.decode_zw(tape, z, w)?;
    let ll = model.log_likelihood(tape, x, raw)?;
    let klz = taped::kl_standard_normal(tape, mu_z, var_z)?;
    let klw = taped::kl_unit_variance(tape, mu_w, var_w, prior_rows)?;
    Ok((tape.mean(ll, None)?, tape.mean(klz, None)?, tape.mean(klw, None)?))
}

/// Mean cross-entropy of a linear softmax classifier on `xhat` against `y`.
pub fn adversarial_ce(tape: &mut Tape, model: &BoundModel, adv: BoundLinear, xhat: Var, y: &[usize]) -> Result<Var> {
    let lp = model.classifier_log_probs(tape, adv, xhat)?;
    let picked = tape.pick_cols(lp, y)?;
    let m = tape.mean(picked, None)?;
    Ok(tape.neg(m))
}

/// Weighted objective (to maximize) from scalar component vars.
pub fn total_objective(tape: &mut Tape, parts: &ComponentVars, w: &LossWeights) -> Result<Var> {
    let mut acc = tape.scale(parts.rec_z, w.rec_z);
    let terms = [
        (parts.rec_joint, w.rec),
        (parts.kl_z, -w.kl_z),
        (parts.kl_w, -w.kl_w),
        (parts.ce, w.adv),
    ];
    for (v, c) in terms {
        let s = tape.scale(v, c);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Scalar vars for each term, all batch means.
#[derive(Clone, Copy, Debug)]
pub struct ComponentVars {
    pub rec_z: Var,
    pub rec_joint: Var,
    pub kl_z: Var,
    pub kl_w: Var,
    pub ce: Var,
}

impl ComponentVars {
    pub fn values(&self, tape: &Tape) -> LossComponents {
        let v = |x: Var| tape.value(x).data()[0] as f64;
        LossComponents {
            rec_z: v(self.rec_z),
            rec_joint: v(self.rec_joint),
            kl_z: v(self.kl_z),
            kl_w: v(self.kl_w),
            ce: v(self.ce),
        }
    }
}

/// Everything one forward pass of the model produces.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub mu_z: Var,
    pub var_z: Var,
    pub z: Var,
    /// z-only reconstruction in data space (input of the adversary).
    pub xhat: Var,
    pub w: Option<Var>,
    /// Per-class means of this batch's z samples, `[n_classes, d]`.
    pub class_means: Option<Var>,
    /// Components with a zero placeholder for CE; the trainer fills CE in
    /// with the adversary it wants to score against.
    pub parts: ComponentVars,
}

/// Builds the forward graph for one batch.
///
/// One z sample feeds both decoders. The w-prior means are the per-class
/// means of that sample; with `detach_prior_means` they are treated as
/// constants.
pub fn forward(
    tape: &mut Tape,
    model: &BoundModel,
    x: &Tensor,
    y: &[usize],
    noise: &StepNoise,
    detach_prior_means: bool,
) -> Result<ForwardPass> {
    let k = model.n_classes;
    let xv = tape.constant(x.clone());
    let onehot = tape.constant(crate::nn::one_hot(y, k)?);
    let zero = tape.constant(Tensor::scalar(0.0));
    let cond = (model.kind == ModelKind::ConditionalVae).then_some(onehot);

    let (mu_z, var_z) = model.encode_z(tape, xv, cond)?;
    let eps_z = tape.constant(noise.eps_z.clone());
    let z = taped::reparam(tape, mu_z, var_z, eps_z)?;
    let raw_z = model.decode_z(tape, z, cond)?;
    let xhat = model.reconstruction(tape, raw_z);
    let ll_z = model.log_likelihood(tape, xv, raw_z)?;
    let rec_z = tape.mean(ll_z, None)?;
    let klz_rows = taped::kl_standard_normal(tape, mu_z, var_z)?;
    let kl_z = tape.mean(klz_rows, None)?;

    if model.kind != ModelKind::Dual {
        // single decoder: the joint path is the same reconstruction
        return Ok(ForwardPass {
            mu_z,
            var_z,
            z,
            xhat,
            w: None,
            class_means: None,
            parts: ComponentVars {
                rec_z,
                rec_joint: rec_z,
                kl_z,
                kl_w: zero,
                ce: zero,
            },
        });
    }

    let eps_w = noise
        .eps_w
        .as_ref()
        .ok_or_else(|| Error::Contract("dual model needs w noise".into()))?;
    let (mu_w, var_w) = model.encode_w(tape, xv, onehot)?;
    let eps_w = tape.constant(eps_w.clone());
    let w = taped::reparam(tape, mu_w, var_w, eps_w)?;
    let mut means = tape.segment_mean(z, y, k)?;
    if detach_prior_means {
        means = tape.detach(means);
    }
    let prior_rows = tape.gather_rows(means, y)?;
    let raw_zw = model.decode_zw(tape, z, w)?;
    let ll_zw = model.log_likelihood(tape, xv, raw_zw)?;
    let rec_joint = tape.mean(ll_zw, None)?;
    let klw_rows = taped::kl_unit_variance(tape, mu_w, var_w, prior_rows)?;
    let kl_w = tape.mean(klw_rows, None)?;
    Ok(ForwardPass {
        mu_z,
        var_z,
        z,
        xhat,
        w: Some(w),
        class_means: Some(means),
        parts: ComponentVars {
            rec_z,
            rec_joint,
            kl_z,
            kl_w,
            ce: zero,
        },
    })
}

/// Fraction of rows whose arg-max log-probability equals the label.
pub fn accuracy(log_probs: &Tensor, y: &[usize]) -> f64 {
    let k = log_probs.cols();
    let hits = y
        .iter()
        .enumerate()
        .filter(|(i, &yi)| {
            let row = &log_probs.data()[i * k..(i + 1) * k];
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
            best.0 == yi
        })
        .count();
    hits as f64 / y.len().max(1) as f64
}
