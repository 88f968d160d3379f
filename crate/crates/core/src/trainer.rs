//! Alternating adversary / model updates with early stopping.
//!
//! Each step draws one set of reparameterization noise and builds a single
//! forward graph with the current parameters. The adversary is updated first
//! on the detached z-only reconstruction; the encoders and decoders are then
//! updated against the adversary's new weights, re-scored on the same graph.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::model::{estimate_class_means, ModelKind, ModelState};
use crate::nn::{BoundLinear, Linear};
use crate::objective::{accuracy, adversarial_ce, forward, total_objective, ComponentVars, LossComponents, LossWeights, StepNoise};
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    /// Adversary learning rate.
    pub lr_adv: f32,
    /// Encoder/decoder learning rate.
    pub lr_main: f32,
    /// Adversary updates per model update.
    #[serde(default = "defaults::one")]
    pub adversary_steps: usize,
    #[serde(default)]
    pub weight_decay: f32,
    /// Global gradient-norm cap per parameter group.
    #[serde(default)]
    pub clip_norm: Option<f32>,
    /// Treat the per-class z means used as w-prior means as constants.
    #[serde(default)]
    pub detach_prior_means: bool,
    #[serde(default = "defaults::divergence_loss")]
    pub divergence_loss: f64,
    #[serde(default = "defaults::divergence_epochs")]
    pub divergence_epochs: usize,
    /// Rows per forward pass during validation.
    #[serde(default = "defaults::eval_batch")]
    pub eval_batch: usize,
    /// Full-batch steps that refit the adversary on the validation
    /// reconstructions before scoring CE; 0 scores the current adversary.
    #[serde(default = "defaults::val_adversary_steps")]
    pub val_adversary_steps: usize,
}

mod defaults {
    pub fn batch_size() -> usize {
        128
    }
    pub fn max_epochs() -> usize {
        1000
    }
    pub fn patience() -> usize {
        50
    }
    pub fn one() -> usize {
        1
    }
    pub fn divergence_loss() -> f64 {
        1e6
    }
    pub fn divergence_epochs() -> usize {
        10
    }
    pub fn eval_batch() -> usize {
        4096
    }
    pub fn val_adversary_steps() -> usize {
        200
    }
}

impl TrainOptions {
    pub fn new(lr: f32) -> Self {
        Self {
            batch_size: defaults::batch_size(),
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            lr_adv: lr,
            lr_main: lr,
            adversary_steps: 1,
            weight_decay: 0.0,
            clip_norm: None,
            detach_prior_means: false,
            divergence_loss: defaults::divergence_loss(),
            divergence_epochs: defaults::divergence_epochs(),
            eval_batch: defaults::eval_batch(),
            val_adversary_steps: defaults::val_adversary_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.adversary_steps == 0 {
            return bad("adversary_steps must be at least 1".into());
        }
        for (name, v) in [("lr_adv", self.lr_adv), ("lr_main", self.lr_main), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("`{name}` must be finite and >= 0, got {v}"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

/// What one call to [`Trainer::step`] observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Components with CE scored under the adversary used for the model
    /// update.
    pub components: LossComponents,
    /// `−objective`, as minimized by the model update.
    pub total: f64,
    /// Adversary CE and accuracy before its update.
    pub adv_ce_before: f64,
    pub adv_accuracy: f64,
    pub skipped: bool,
}

/// Optimizer state and counters for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub weights: LossWeights,
    pub options: TrainOptions,
    opt_main: AdamW,
    opt_adv: Option<AdamW>,
    pub skipped_steps: usize,
}

fn shapes(params: &[(String, &mut Tensor)]) -> Vec<Vec<usize>> {
    params.iter().map(|(_, t)| t.shape().to_vec()).collect()
}

fn adamw(lr: f32, weight_decay: f32, shapes: &[Vec<usize>]) -> AdamW {
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    AdamW::new(
        AdamWConfig {
            weight_decay,
            ..AdamWConfig::with_lr(lr)
        },
        &refs,
    )
}

/// Draws the step's standard-normal noise.
pub fn sample_noise<R: Rng>(rng: &mut R, rows: usize, d: usize, dual: bool) -> StepNoise {
    let draw = |rng: &mut R| {
        let data = (0..rows * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::matrix(rows, d, data).expect("sized buffer")
    };
    let eps_z = draw(rng);
    let eps_w = dual.then(|| draw(rng));
    StepNoise { eps_z, eps_w }
}

fn collect_grads(tape: &Tape, loss: Var, vars: &[Var], params: &[(String, &mut Tensor)]) -> Result<Vec<Tensor>> {
    let mut g = tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, (_, p))| g.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Clips in place when asked; `false` when the gradients are not finite.
fn finite_after_clip(grads: &mut [Tensor], clip: Option<f32>) -> Result<bool> {
    match clip {
        Some(c) => Ok(!clip_grad_norm(grads, c)?.non_finite),
        None => Ok(grads.iter().all(|g| g.all_finite())),
    }
}

fn apply(opt: &mut AdamW, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
    let mut refs: Vec<(&str, &mut Tensor)> = params.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
    let g: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
    opt.step(&mut refs, &g)
}

impl Trainer {
    pub fn new(state: &mut ModelState, weights: LossWeights, options: TrainOptions) -> Result<Self> {
        weights.validate()?;
        options.validate()?;
        let main = shapes(&state.params_mut(false));
        let adv = shapes(&state.params_mut(true));
        Ok(Self {
            opt_main: adamw(options.lr_main, options.weight_decay, &main),
            opt_adv: (!adv.is_empty()).then(|| adamw(options.lr_adv, options.weight_decay, &adv)),
            weights,
            options,
            skipped_steps: 0,
        })
    }

    /// One alternating update on a batch with the given noise.
    ///
    /// A non-finite loss or gradient anywhere leaves every parameter and
    /// optimizer state as it was and increments `skipped_steps`.
    pub fn step(&mut self, state: &mut ModelState, x: &Tensor, y: &[usize], noise: &StepNoise) -> Result<StepMetrics> {
        state.check_inputs(x, Some(y))?;
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape);
        let fp = forward(&mut tape, &bound, x, y, noise, self.options.detach_prior_means)?;
        let mut metrics = StepMetrics {
            components: fp.parts.values(&tape),
            total: f64::NAN,
            adv_ce_before: 0.0,
            adv_accuracy: 0.0,
            skipped: false,
        };

        // adversary update on the reconstruction from the current model
        let mut new_adv = None;
        if let (Some(adv), Some(opt)) = (&state.adversary, &self.opt_adv) {
            let xhat = tape.value(fp.xhat).clone();
            let (mut adv, mut opt) = (adv.clone(), opt.clone());
            for k in 0..self.options.adversary_steps {
                let mut t = Tape::new();
                let xv = t.constant(xhat.clone());
                let b = adv.bind(&mut t);
                let ce = adversarial_ce(&mut t, &bound, b, xv, y)?;
                let ce_val = t.value(ce).data()[0] as f64;
                if k == 0 {
                    metrics.adv_ce_before = ce_val;
                    let lp = bound.classifier_log_probs(&mut t, b, xv)?;
                    metrics.adv_accuracy = accuracy(t.value(lp), y);
                }
                let mut params = vec![("adversary.weight".to_string(), &mut adv.weight), ("adversary.bias".to_string(), &mut adv.bias)];
                let mut grads = collect_grads(&t, ce, &b.vars(), &params)?;
                if !ce_val.is_finite() || !finite_after_clip(&mut grads, self.options.clip_norm)? {
                    return Ok(self.skip(metrics));
                }
                apply(&mut opt, &mut params, &grads)?;
            }
            new_adv = Some((adv, opt));
        }

        // model update against the adversary's new weights
        let mut parts: ComponentVars = fp.parts;
        if let Some((adv, _)) = &new_adv {
            let b = BoundLinear {
                weight: tape.constant(adv.weight.clone()),
                bias: tape.constant(adv.bias.clone()),
            };
            parts.ce = adversarial_ce(&mut tape, &bound, b, fp.xhat, y)?;
        }
        let objective = total_objective(&mut tape, &parts, &self.weights)?;
        let loss = tape.neg(objective);
        metrics.components = parts.values(&tape);
        metrics.total = tape.value(loss).data()[0] as f64;
        if !metrics.total.is_finite() || !metrics.components.is_finite() {
            return Ok(self.skip(metrics));
        }
        let main_vars = bound.main_vars();
        let mut opt_main = self.opt_main.clone();
        let z = tape.value(fp.z).clone();
        {
            let mut params = state.params_mut(false);
            let mut grads = collect_grads(&tape, loss, &main_vars, &params)?;
            if !finite_after_clip(&mut grads, self.options.clip_norm)? {
                return Ok(self.skip(metrics));
            }
            apply(&mut opt_main, &mut params, &grads)?;
        }
        self.opt_main = opt_main;
        if let Some((adv, opt)) = new_adv {
            state.adversary = Some(adv);
            self.opt_adv = Some(opt);
        }
        if state.spec.kind == ModelKind::Dual {
            let batch_means = estimate_class_means(&z, y, state.spec.n_classes, Some(&state.prior))?;
            state.prior.update(&batch_means);
        }
        Ok(metrics)
    }

    fn skip(&mut self, mut metrics: StepMetrics) -> StepMetrics {
        log::warn!("non-finite loss or gradient; skipping both updates");
        self.skipped_steps += 1;
        metrics.skipped = true;
        metrics
    }
}

/// Learning rate of the validation-time adversary refit.
const BEST_RESPONSE_LR: f32 = 0.05;

/// CE of a logistic classifier refit on `(xhat, y)` by `steps` full-batch
/// Adam steps, starting from `init`.
pub fn best_response_ce(init: &Linear, xhat: &Tensor, y: &[usize], steps: usize) -> Result<f64> {
    let mut adv = init.clone();
    let shapes = [adv.weight.shape().to_vec(), adv.bias.shape().to_vec()];
    let mut opt = adamw(BEST_RESPONSE_LR, 0.0, &shapes);
    let score = |adv: &Linear, t: &mut Tape| -> Result<(Var, BoundLinear)> {
        let xv = t.constant(xhat.clone());
        let b = adv.bind(t);
        let logits = b.forward(t, xv)?;
        let lp = t.log_softmax(logits)?;
        let picked = t.pick_cols(lp, y)?;
        let m = t.mean(picked, None)?;
        Ok((t.neg(m), b))
    };
    for _ in 0..steps {
        let mut t = Tape::new();
        let (ce, b) = score(&adv, &mut t)?;
        let mut params = vec![("w".to_string(), &mut adv.weight), ("b".to_string(), &mut adv.bias)];
        let grads = collect_grads(&t, ce, &b.vars(), &params)?;
        if !grads.iter().all(Tensor::all_finite) {
            break;
        }
        apply(&mut opt, &mut params, &grads)?;
    }
    let mut t = Tape::new();
    let (ce, _) = score(&adv, &mut t)?;
    Ok(t.value(ce).data()[0] as f64)
}

/// Weighted loss and joint-path negative ELBO on `data` with fixed noise.
///
/// The CE term is scored against an adversary refit on these
/// reconstructions for `adversary_steps` steps (see
/// [`TrainOptions::val_adversary_steps`]). Deterministic given `seed`.
pub fn evaluate_loss(
    state: &ModelState,
    data: &Dataset,
    weights: &LossWeights,
    eval_batch: usize,
    adversary_steps: usize,
    seed: u64,
) -> Result<(f64, f64, LossComponents)> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let dual = state.spec.kind == ModelKind::Dual;
    let mut sum = LossComponents::default();
    let n = data.len() as f64;
    let mut xhats = vec![];
    for idx in batch_indices::<rand_chacha::ChaCha8Rng>(data.len(), eval_batch.max(1), None)? {
        let b = data.batch(idx);
        let noise = sample_noise(&mut rng, b.y.len(), state.spec.d_latent, dual);
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape);
        let fp = forward(&mut tape, &bound, &b.x, &b.y, &noise, true)?;
        let mut parts = fp.parts;
        if let Some(adv) = bound.adversary {
            parts.ce = adversarial_ce(&mut tape, &bound, adv, fp.xhat, &b.y)?;
            xhats.push(tape.value(fp.xhat).clone());
        }
        let c = parts.values(&tape);
        let w = b.y.len() as f64 / n;
        sum.rec_z += w * c.rec_z;
        sum.rec_joint += w * c.rec_joint;
        sum.kl_z += w * c.kl_z;
        sum.kl_w += w * c.kl_w;
        sum.ce += w * c.ce;
    }
    if let (Some(adv), true) = (&state.adversary, adversary_steps > 0) {
        let d = data.dim();
        let all = Tensor::matrix(data.len(), d, xhats.into_iter().flat_map(Tensor::into_data).collect())?;
        sum.ce = best_response_ce(adv, &all, &data.y, adversary_steps)?;
    }
    Ok((sum.total_loss(weights), sum.neg_elbo(), sum))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub rec_z: f64,
    pub rec_joint: f64,
    pub kl_z: f64,
    pub kl_w: f64,
    pub ce: f64,
    pub val_loss: f64,
    pub val_nll: f64,
    pub adv_accuracy: f64,
    pub skipped_steps: usize,
}

impl EpochRecord {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            rec_z: self.rec_z,
            rec_joint: self.rec_joint,
            kl_z: self.kl_z,
            kl_w: self.kl_w,
            ce: self.ce,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub skipped_steps: usize,
}

impl TrainReport {
    /// Largest gap between a logged total and its recomputation from the
    /// logged components.
    pub fn decomposition_error(&self, weights: &LossWeights) -> f64 {
        self.epochs
            .iter()
            .map(|e| (e.components().total_loss(weights) - e.total).abs())
            .fold(0.0, f64::max)
    }
}

/// Trains until validation loss has not improved for `patience` epochs, then
/// restores the best parameters. Per-epoch rows go to `csv_out` when given.
pub fn fit<R: Rng>(
    state: &mut ModelState,
    train: &Dataset,
    val: &Dataset,
    weights: LossWeights,
    options: TrainOptions,
    rng: &mut R,
    csv_out: Option<&Path>,
) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be nonempty".into()));
    }
    let mut trainer = Trainer::new(state, weights, options.clone())?;
    let val_seed: u64 = rng.gen();
    let mut csv = match csv_out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some(csv::Writer::from_path(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e.into(),
            })?)
        }
        None => None,
    };
    let dual = state.spec.kind == ModelKind::Dual;
    let d = state.spec.d_latent;
    let n = train.len() as f64;

    let mut records = vec![];
    let mut best = (f64::INFINITY, 0usize, state.clone());
    let mut diverging = 0usize;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=options.max_epochs {
        let mut rec = EpochRecord {
            epoch,
            total: 0.0,
            rec_z: 0.0,
            rec_joint: 0.0,
            kl_z: 0.0,
            kl_w: 0.0,
            ce: 0.0,
            val_loss: 0.0,
            val_nll: 0.0,
            adv_accuracy: 0.0,
            skipped_steps: 0,
        };
        let skipped_before = trainer.skipped_steps;
        for idx in batch_indices(train.len(), options.batch_size, Some(&mut *rng))? {
            let b = train.batch(idx);
            let noise = sample_noise(rng, b.y.len(), d, dual);
            let m = trainer.step(state, &b.x, &b.y, &noise)?;
            let w = b.y.len() as f64 / n;
            let c = m.components;
            rec.total += w * m.total;
            rec.rec_z += w * c.rec_z;
            rec.rec_joint += w * c.rec_joint;
            rec.kl_z += w * c.kl_z;
            rec.kl_w += w * c.kl_w;
            rec.ce += w * c.ce;
            rec.adv_accuracy += w * m.adv_accuracy;
        }
        rec.skipped_steps = trainer.skipped_steps - skipped_before;
        let (val_loss, val_nll, _) = evaluate_loss(state, val, &weights, options.eval_batch, options.val_adversary_steps, val_seed)?;
        rec.val_loss = val_loss;
        rec.val_nll = val_nll;
        log::debug!("epoch {epoch}: train {:.4} val {:.4} nll {:.4}", rec.total, val_loss, val_nll);
        if let Some(w) = csv.as_mut() {
            w.serialize(rec).map_err(|e| Error::Contract(format!("csv: {e}")))?;
            w.flush().map_err(|e| Error::io(csv_out.unwrap(), e))?;
        }
        records.push(rec);

        if !(rec.total.abs() <= options.divergence_loss) {
            diverging += 1;
            if diverging >= options.divergence_epochs {
                stop = StopReason::Diverged;
                break;
            }
        } else {
            diverging = 0;
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, state.clone());
        } else if epoch - best.1 > options.patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let epochs_run = records.len();
    if best.1 > 0 {
        *state = best.2;
    }
    Ok(TrainReport {
        epochs: records,
        epochs_run,
        stop_reason: stop,
        best_epoch: best.1,
        best_val_loss: best.0,
        skipped_steps: trainer.skipped_steps,
    })
}
