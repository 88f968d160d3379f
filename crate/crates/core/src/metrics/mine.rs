//! Mutual information lower bound `sup_T E_joint[T] − ln E_marginal[e^T]`
//! with a neural statistic `T(z, w)`.
//!
//! The gradient of `ln E[e^T]` is estimated with an exponential moving
//! average of `E[e^T]` in the denominator, which removes most of the
//! minibatch bias. The reported bound is computed on held-out pairs, so an
//! overfit statistic cannot inflate it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    pub n_hidden: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Momentum of the running `E[e^T]`.
    pub ema: f64,
    /// Fraction of pairs held out for the final estimate.
    pub holdout: f64,
    /// Shuffles of `w` averaged in the held-out marginal term.
    pub eval_shuffles: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            n_hidden: 2,
            d_hidden: 128,
            epochs: 500,
            batch_size: 500,
            lr: 1e-3,
            ema: 0.99,
            holdout: 0.3,
            eval_shuffles: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineEstimate {
    /// Held-out bound; may be slightly negative from sampling noise.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub clamped: f64,
    /// Delta-method standard error of `raw`.
    pub std_err: f64,
    pub n_train: usize,
    pub n_eval: usize,
}

const MIN_RECOMMENDED: usize = 1000;

fn pairs(z: &Tensor, w: &Tensor, zi: &[usize], wi: &[usize]) -> Tensor {
    let (dz, dw) = (z.cols(), w.cols());
    let mut data = Vec::with_capacity(zi.len() * (dz + dw));
    for (&a, &b) in zi.iter().zip(wi) {
        data.extend_from_slice(z.row(a));
        data.extend_from_slice(w.row(b));
    }
    Tensor::matrix(zi.len(), dz + dw, data).expect("sized buffer")
}

fn statistic(net: &Mlp, x: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = net.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let t = b.forward(&mut tape, xv)?;
    Ok(tape.value(t).data().iter().map(|&v| v as f64).collect())
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Estimates `I(z; w)` from paired rows of `z` and `w`.
pub fn mine_mi(z: &Tensor, w: &Tensor, cfg: &MineConfig, seed: u64) -> Result<MineEstimate> {
    if z.rank() != 2 || w.rank() != 2 || z.rows() != w.rows() {
        return Err(Error::Shape {
            op: "mine_mi",
            lhs: z.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let n = z.rows();
    if n < 4 {
        return Err(Error::Input(format!("need at least 4 pairs, got {n}")));
    }
    if n < MIN_RECOMMENDED {
        log::warn!("MINE with {n} pairs: expect a wide error bar");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_eval = ((cfg.holdout * n as f64).round() as usize).clamp(2, n - 2);
    let (eval_idx, train_idx) = idx.split_at(n_eval);
    let mut train_idx = train_idx.to_vec();

    let mut net = Mlp::init(z.cols() + w.cols(), cfg.n_hidden, cfg.d_hidden, 1, Activation::Relu, &mut rng);
    let shapes: Vec<Vec<usize>> = net.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr), &refs);
    let mut ma: Option<f64> = None;

    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size.max(2)) {
            let mut shuffled = chunk.to_vec();
            shuffled.shuffle(&mut rng);
            let joint = pairs(z, w, chunk, chunk);
            let marg = pairs(z, w, chunk, &shuffled);

            let mut tape = Tape::new();
            let b = net.bind(&mut tape);
            let jv = tape.constant(joint);
            let mv = tape.constant(marg);
            let tj = b.forward(&mut tape, jv)?;
            let tm = b.forward(&mut tape, mv)?;
            let et = tape.exp(tm);
            let et_mean = tape.mean(et, None)?;
            let batch_et = tape.value(et_mean).data()[0] as f64;
            let avg = match ma {
                Some(m) => cfg.ema * m + (1.0 - cfg.ema) * batch_et,
                None => batch_et,
            };
            ma = Some(avg);
            // −E[T_joint] + E[e^T_marginal] / running average
            let tj_mean = tape.mean(tj, None)?;
            let ratio = tape.scale(et_mean, (1.0 / avg.max(1e-12)) as f32);
            let loss = tape.sub(ratio, tj_mean)?;
            if !tape.value(loss).all_finite() {
                return Err(Error::Divergence("MINE statistic overflowed".into()));
            }
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor> = b
                .vars()
                .iter()
                .zip(&shapes)
                .map(|(v, s)| g.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(s)))
                .collect();
            let mut params: Vec<(String, &mut Tensor)> = net.tensor_names("t").into_iter().zip(net.tensors_mut()).collect();
            let mut named: Vec<(&str, &mut Tensor)> = params.iter_mut().map(|(k, t)| (k.as_str(), &mut **t)).collect();
            let gr: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
            opt.step(&mut named, &gr)?;
        }
    }

    let tj = statistic(&net, &pairs(z, w, eval_idx, eval_idx))?;
    let mean_tj = tj.iter().sum::<f64>() / tj.len() as f64;
    let mut tm_all = Vec::with_capacity(n_eval * cfg.eval_shuffles.max(1));
    for _ in 0..cfg.eval_shuffles.max(1) {
        let mut perm = eval_idx.to_vec();
        perm.shuffle(&mut rng);
        tm_all.extend(statistic(&net, &pairs(z, w, eval_idx, &perm))?);
    }
    let raw = mean_tj - log_mean_exp(&tm_all);

    // delta method: Var[mean T_j] + Var[e^T_m] / (n E[e^T_m]^2)
    let var_tj = tj.iter().map(|t| (t - mean_tj).powi(2)).sum::<f64>() / (tj.len() - 1) as f64;
    let shift = tm_all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = tm_all.iter().map(|t| (t - shift).exp()).collect();
    let me = e.iter().sum::<f64>() / e.len() as f64;
    let ve = e.iter().map(|x| (x - me).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
    let std_err = (var_tj / tj.len() as f64 + ve / (e.len() as f64 * me * me)).sqrt();

    Ok(MineEstimate {
        raw,
        clamped: raw.max(0.0),
        std_err,
        n_train: train_idx.len(),
        n_eval,
    })
}
