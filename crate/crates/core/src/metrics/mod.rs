//! Held-out evaluation: likelihood bounds, divergence from known posteriors,
//! label-recoverability, latent dependence and marginal reconstruction error.

mod gnb;
mod mine;

use std::fs::OpenOptions;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::distributions::{kl_diag_gaussians, kl_gaussian_to_truncated_quadrature, taped, DiagGaussian, Estimate, TruncGaussian1D};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelState};
use crate::nn::one_hot;
use crate::seeds::derive;
use crate::tensor::{Tape, Tensor, Var};

pub use gnb::GaussianNb;
pub use mine::{mine_mi, MineConfig, MineEstimate};

/// Rows per forward pass.
const CHUNK: usize = 2048;
/// Quadrature intervals for the truncated-posterior KL.
pub const KL_QUADRATURE_POINTS: usize = 2000;
/// Fraction of the evaluation set used to fit the naive Bayes probe.
pub const PROBE_TRAIN_FRACTION: f64 = 0.7;

fn unsupported(metric: &str, context: impl Into<String>) -> Error {
    Error::Unsupported {
        metric: metric.into(),
        context: context.into(),
    }
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(CHUNK).map(move |s| (s..(s + CHUNK).min(n)).collect())
}

fn stack_rows(parts: Vec<Tensor>) -> Result<Tensor> {
    let cols = parts.first().map_or(0, Tensor::cols);
    let rows: usize = parts.iter().map(Tensor::rows).sum();
    let data: Vec<f32> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::matrix(rows, cols, data)
}

/// Posterior means and variances of both latents for every row.
#[derive(Clone, Debug, PartialEq)]
pub struct Encodings {
    pub mu_z: Tensor,
    pub var_z: Tensor,
    pub mu_w: Option<Tensor>,
    pub var_w: Option<Tensor>,
}

pub fn encode(state: &ModelState, data: &Dataset) -> Result<Encodings> {
    let cond = state.spec.kind == ModelKind::ConditionalVae;
    let (mut mz, mut vz, mut mw, mut vw) = (vec![], vec![], vec![], vec![]);
    for idx in chunks(data.len()) {
        let b = data.batch(idx);
        let (m, v) = state.encode_z(&b.x, cond.then_some(&b.y[..]))?;
        mz.push(m);
        vz.push(v);
        if state.enc_w.is_some() {
            let (m, v) = state.encode_w(&b.x, &b.y)?;
            mw.push(m);
            vw.push(v);
        }
    }
    let opt = |v: Vec<Tensor>| if v.is_empty() { Ok(None) } else { stack_rows(v).map(Some) };
    Ok(Encodings {
        mu_z: stack_rows(mz)?,
        var_z: stack_rows(vz)?,
        mu_w: opt(mw)?,
        var_w: opt(vw)?,
    })
}

/// Reconstruction from the posterior means through the joint decoder (or
/// the only decoder of a single-path model).
pub fn full_reconstruction(state: &ModelState, data: &Dataset, enc: &Encodings) -> Result<Tensor> {
    let mut out = vec![];
    for idx in chunks(data.len()) {
        let mz = enc.mu_z.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
        out.push(match (state.spec.kind, &enc.mu_w) {
            (ModelKind::Dual, Some(mw)) => state.decode_zw(&mz, &mw.select_rows(&idx))?,
            (ModelKind::ConditionalVae, _) => state.decode_z(&mz, Some(&y))?,
            _ => state.decode_z(&mz, None)?,
        });
    }
    stack_rows(out)
}

/// z-only reconstruction from the posterior means.
pub fn marginal_reconstruction(state: &ModelState, enc: &Encodings) -> Result<Tensor> {
    if state.spec.kind == ModelKind::ConditionalVae {
        return Err(unsupported("marginal_rmse", "the conditional VAE (its decoder needs a label)"));
    }
    let n = enc.mu_z.rows();
    let parts = chunks(n)
        .map(|idx| state.decode_z(&enc.mu_z.select_rows(&idx), None))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(parts)
}

/// Per-row log importance weights for one draw of the latents, or the
/// analytic-KL bound when `analytic` is set.
fn row_log_weights(state: &ModelState, x: &Tensor, y: &[usize], prior: &Tensor, rng: &mut ChaCha8Rng, analytic: bool) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = state.bind(&mut tape);
    let n = y.len();
    let d = state.spec.d_latent;
    let xv = tape.constant(x.clone());
    let oh = tape.constant(one_hot(y, state.spec.n_classes)?);
    let cond = (state.spec.kind == ModelKind::ConditionalVae).then_some(oh);
    let mut noise = |tape: &mut Tape| {
        let data = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        tape.constant(Tensor::matrix(n, d, data).expect("sized buffer"))
    };
    let (mu_z, var_z) = b.encode_z(&mut tape, xv, cond)?;
    let ez = noise(&mut tape);
    let z = taped::reparam(&mut tape, mu_z, var_z, ez)?;

    let zeros = tape.constant(Tensor::zeros(&[n, d]));
    let ones = tape.constant(Tensor::ones(&[n, d]));
    // (log-likelihood, sum of log prior − log posterior terms or −KL terms)
    let (ll, mut reg): (Var, Var);
    if state.spec.kind == ModelKind::Dual {
        let (mu_w, var_w) = b.encode_w(&mut tape, xv, oh)?;
        let ew = noise(&mut tape);
        let w = taped::reparam(&mut tape, mu_w, var_w, ew)?;
        let raw = b.decode_zw(&mut tape, z, w)?;
        ll = b.log_likelihood(&mut tape, xv, raw)?;
        let pm = tape.constant(prior.select_rows(y));
        reg = if analytic {
            let kz = taped::kl_standard_normal(&mut tape, mu_z, var_z)?;
            let kw = taped::kl_unit_variance(&mut tape, mu_w, var_w, pm)?;
            let s = tape.add(kz, kw)?;
            tape.neg(s)
        } else {
            let pz = taped::diag_gaussian_logpdf(&mut tape, z, zeros, ones)?;
            let qz = taped::diag_gaussian_logpdf(&mut tape, z, mu_z, var_z)?;
            let pw = taped::diag_gaussian_logpdf(&mut tape, w, pm, ones)?;
            let qw = taped::diag_gaussian_logpdf(&mut tape, w, mu_w, var_w)?;
            let a = tape.sub(pz, qz)?;
            let c = tape.sub(pw, qw)?;
            tape.add(a, c)?
        };
    } else {
        let raw = b.decode_z(&mut tape, z, cond)?;
        ll = b.log_likelihood(&mut tape, xv, raw)?;
        reg = if analytic {
            let kz = taped::kl_standard_normal(&mut tape, mu_z, var_z)?;
            tape.neg(kz)
        } else {
            let pz = taped::diag_gaussian_logpdf(&mut tape, z, zeros, ones)?;
            let qz = taped::diag_gaussian_logpdf(&mut tape, z, mu_z, var_z)?;
            tape.sub(pz, qz)?
        };
    }
    reg = tape.add(ll, reg)?;
    Ok(tape.value(reg).data().iter().map(|&v| v as f64).collect())
}

/// Per-datum negative log-likelihood bound in nats.
///
/// With one sample this is the joint-path negative ELBO with analytic KL
/// terms; with `k > 1` it is the importance-weighted bound
/// `−ln (1/k) Σ p(x, z, w | y) / q(z, w | x, y)`. The w prior uses the
/// model's running class means.
pub fn eval_nll(state: &ModelState, data: &Dataset, n_importance: usize, seed: u64) -> Result<Estimate> {
    if n_importance == 0 {
        return Err(Error::Input("n_importance must be at least 1".into()));
    }
    state.check_inputs(&data.x, Some(&data.y))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = state.prior.resolved();
    let mut per_row = Vec::with_capacity(data.len());
    for idx in chunks(data.len()) {
        let b = data.batch(idx);
        if n_importance == 1 {
            let lw = row_log_weights(state, &b.x, &b.y, &prior, &mut rng, true)?;
            per_row.extend(lw.into_iter().map(|v| -v));
            continue;
        }
        let draws = (0..n_importance)
            .map(|_| row_log_weights(state, &b.x, &b.y, &prior, &mut rng, false))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..b.y.len() {
            let m = draws.iter().map(|d| d[i]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = draws.iter().map(|d| (d[i] - m).exp()).sum();
            per_row.push(-(m + (s / n_importance as f64).ln()));
        }
    }
    Ok(Estimate::from_samples(&per_row))
}

fn is_parametric(data: &Dataset) -> bool {
    data.dim() == 1 && data.extras.contains_key("true_w")
}

/// Sign that aligns a latent axis with `x`. The standard-normal prior is
/// symmetric, so a learned latent is only defined up to this flip.
fn orientation(mu: &Tensor, x: &Tensor) -> f64 {
    let c: f64 = mu.data().iter().zip(x.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
    if c < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Average `KL(q(z|x) ‖ N(x/2, 1/2))` and `KL(q(w|x,y) ‖ p(w|x,y))` in nats
/// over the rows of a parametric dataset, where `p(w|x,y)` is `N(x/2, 1/2)`
/// truncated to the sign given by `y`. Each latent axis is oriented to
/// correlate positively with `x` first.
pub fn eval_kl_analytic_parametric(state: &ModelState, data: &Dataset) -> Result<(f64, Option<f64>)> {
    if !is_parametric(data) || state.spec.d_latent != 1 {
        return Err(unsupported("kl_analytic", "data without a known posterior (needs the 1-D additive model)"));
    }
    let enc = encode(state, data)?;
    let sz = orientation(&enc.mu_z, &data.x);
    let sw = enc.mu_w.as_ref().map(|m| orientation(m, &data.x));
    let n = data.len() as f64;
    let (mut kz, mut kw) = (0.0, 0.0);
    for i in 0..data.len() {
        let x = data.x.data()[i] as f64;
        let q = DiagGaussian::new(vec![sz * enc.mu_z.data()[i] as f64], vec![enc.var_z.data()[i] as f64])?;
        let p = DiagGaussian::new(vec![x / 2.0], vec![0.5])?;
        kz += kl_diag_gaussians(&q, &p)? / n;
        if let (Some(mw), Some(vw), Some(s)) = (&enc.mu_w, &enc.var_w, sw) {
            let qw = DiagGaussian::new(vec![s * mw.data()[i] as f64], vec![vw.data()[i] as f64])?;
            let t = TruncGaussian1D::sign_posterior(x, data.y[i]);
            kw += kl_gaussian_to_truncated_quadrature(&qw, &t, KL_QUADRATURE_POINTS)? / n;
        }
    }
    Ok((kz, enc.mu_w.is_some().then_some(kw)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaBayes {
    /// `|probe accuracy − Bayes accuracy| × 100`.
    pub delta: f64,
    pub probe_accuracy: f64,
    pub bayes_accuracy: f64,
}

/// Fits a Gaussian naive Bayes probe for `y` on `features` (70/30 split of
/// the rows, fixed by `seed`) and scores its held-out accuracy against the
/// Bayes-optimal one.
pub fn delta_bayes_features(features: &Tensor, y: &[usize], n_classes: usize, bayes_accuracy: f64, seed: u64) -> Result<DeltaBayes> {
    let data = Dataset::new(features.clone(), y.to_vec(), n_classes)?;
    let (fit, test) = data.split(PROBE_TRAIN_FRACTION, seed)?;
    let nb = GaussianNb::fit(&fit.x, &fit.y, n_classes)?;
    let acc = nb.accuracy(&test.x, &test.y);
    Ok(DeltaBayes {
        delta: (acc - bayes_accuracy).abs() * 100.0,
        probe_accuracy: acc,
        bayes_accuracy,
    })
}

/// Δ-Bayes on the full reconstruction from posterior means.
pub fn delta_bayes(state: &ModelState, data: &Dataset, bayes_accuracy: f64, seed: u64) -> Result<DeltaBayes> {
    let enc = encode(state, data)?;
    let xt = full_reconstruction(state, data, &enc)?;
    delta_bayes_features(&xt, &data.y, data.n_classes, bayes_accuracy, seed)
}

/// `I(z; w)` between posterior means.
/// MINE estimate of `I(z; w)` on the posterior means, or on one
/// reparameterized draw per row when `sampled` is set.
pub fn mi_zw(state: &ModelState, data: &Dataset, cfg: &MineConfig, sampled: bool, seed: u64) -> Result<MineEstimate> {
    let enc = encode(state, data)?;
    let (mw, vw) = match (enc.mu_w, enc.var_w) {
        (Some(m), Some(v)) => (m, v),
        _ => return Err(unsupported("mi_zw", format!("{:?} models (no w latent)", state.spec.kind))),
    };
    if !sampled {
        return mine_mi(&enc.mu_z, &mw, cfg, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 1));
    let mut draw = |mu: &Tensor, var: &Tensor| -> Result<Tensor> {
        let data = mu
            .data()
            .iter()
            .zip(var.data())
            .map(|(&m, &v)| m + v.sqrt() * rng.sample::<f32, _>(StandardNormal))
            .collect();
        Tensor::matrix(mu.rows(), mu.cols(), data)
    };
    let z = draw(&enc.mu_z, &enc.var_z)?;
    let w = draw(&mw, &vw)?;
    mine_mi(&z, &w, cfg, seed)
}

pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "rmse",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum();
    Ok((s / a.len().max(1) as f64).sqrt())
}

/// RMSE between the z-only reconstruction and the `marginal` column.
pub fn marginal_rmse(state: &ModelState, data: &Dataset) -> Result<f64> {
    let truth = data
        .extra("marginal")
        .map_err(|_| unsupported("marginal_rmse", "data without a ground-truth marginal"))?;
    let enc = encode(state, data)?;
    rmse(&marginal_reconstruction(state, &enc)?, truth)
}

/// Marginal stand-in for the conditional VAE: its decoder output averaged
/// over every label, with z from the observed label's posterior mean.
pub fn cvae_marginal_proxy_rmse(state: &ModelState, data: &Dataset) -> Result<f64> {
    if state.spec.kind != ModelKind::ConditionalVae {
        return Err(Error::Contract("the label-averaged proxy applies to the conditional VAE".into()));
    }
    let truth = data
        .extra("marginal")
        .map_err(|_| unsupported("marginal_rmse", "data without a ground-truth marginal"))?;
    let enc = encode(state, data)?;
    let k = state.spec.n_classes;
    let mut out = vec![];
    for idx in chunks(data.len()) {
        let mz = enc.mu_z.select_rows(&idx);
        let mut acc = Tensor::zeros(&[idx.len(), data.dim()]);
        for c in 0..k {
            let dec = state.decode_z(&mz, Some(&vec![c; idx.len()]))?;
            for (a, v) in acc.data_mut().iter_mut().zip(dec.data()) {
                *a += v / k as f32;
            }
        }
        out.push(acc);
    }
    rmse(&stack_rows(out)?, truth)
}

/// Baseline that predicts every test image as the average training image of
/// its observed class, `E[x | y]`.
pub fn class_average_rmse(train: &Dataset, test: &Dataset) -> Result<f64> {
    let truth = test
        .extra("marginal")
        .map_err(|_| unsupported("marginal_rmse", "data without a ground-truth marginal"))?;
    let groups: Vec<Vec<usize>> = (0..train.n_classes)
        .map(|k| (0..train.len()).filter(|&i| train.y[i] == k).collect())
        .collect();
    let means = group_means(&train.x, &groups)?;
    rmse(&means.select_rows(&test.y), truth)
}

/// Stronger variant that also knows the digit class: `E[x | digit, y]`.
pub fn class_digit_average_rmse(train: &Dataset, test: &Dataset) -> Result<f64> {
    let truth = test
        .extra("marginal")
        .map_err(|_| unsupported("marginal_rmse", "data without a ground-truth marginal"))?;
    let key = |d: &Dataset, i: usize| -> Result<usize> { Ok(d.extra("digit")?.data()[i] as usize * d.n_classes + d.y[i]) };
    let n_keys = 10 * train.n_classes;
    let mut groups = vec![vec![]; n_keys];
    for i in 0..train.len() {
        groups[key(train, i)?].push(i);
    }
    let means = group_means(&train.x, &groups)?;
    let idx = (0..test.len()).map(|i| key(test, i)).collect::<Result<Vec<_>>>()?;
    rmse(&means.select_rows(&idx), truth)
}

fn group_means(x: &Tensor, groups: &[Vec<usize>]) -> Result<Tensor> {
    let d = x.cols();
    let mut out = vec![0.0f32; groups.len() * d];
    for (g, rows) in groups.iter().enumerate() {
        for &i in rows {
            for (o, v) in out[g * d..(g + 1) * d].iter_mut().zip(x.row(i)) {
                *o += v / rows.len() as f32;
            }
        }
    }
    Tensor::matrix(groups.len(), d, out)
}

/// Everything computed for one evaluated run; absent metrics are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub experiment: String,
    pub seed: u64,
    pub model_kind: String,
    pub nll: Option<Estimate>,
    pub nll_iw: Option<Estimate>,
    /// nats; the `_x100` fields are the same numbers scaled by 100.
    pub kl_z: Option<f64>,
    pub kl_z_x100: Option<f64>,
    pub kl_w: Option<f64>,
    pub kl_w_x100: Option<f64>,
    pub delta_bayes: Option<DeltaBayes>,
    /// Probe fit on the w posterior means instead of the reconstruction.
    pub delta_bayes_latent: Option<DeltaBayes>,
    pub mi_zw: Option<MineEstimate>,
    pub marginal_rmse: Option<f64>,
    /// Conditional-decoder output averaged over labels.
    pub marginal_proxy_rmse: Option<f64>,
    pub class_average_rmse: Option<f64>,
    pub class_digit_average_rmse: Option<f64>,
}

pub const CSV_HEADER: [&str; 15] = [
    "experiment",
    "seed",
    "model_kind",
    "nll",
    "nll_se",
    "nll_iw",
    "kl_z_x100",
    "kl_w_x100",
    "delta_bayes",
    "delta_bayes_latent",
    "mi_zw",
    "mi_zw_raw",
    "marginal_rmse",
    "marginal_proxy_rmse",
    "class_average_rmse",
];

impl EvalReport {
    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        vec![
            self.experiment.clone(),
            self.seed.to_string(),
            self.model_kind.clone(),
            f(self.nll.map(|e| e.value)),
            f(self.nll.map(|e| e.std_err)),
            f(self.nll_iw.map(|e| e.value)),
            f(self.kl_z_x100),
            f(self.kl_w_x100),
            f(self.delta_bayes.map(|d| d.delta)),
            f(self.delta_bayes_latent.map(|d| d.delta)),
            f(self.mi_zw.map(|m| m.clamped)),
            f(self.mi_zw.map(|m| m.raw)),
            f(self.marginal_rmse),
            f(self.marginal_proxy_rmse),
            f(self.class_average_rmse),
        ]
    }

    /// Appends one row, writing the header first when the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let io = |e: csv::Error| Error::io(path, e.into());
        if fresh {
            w.write_record(CSV_HEADER).map_err(io)?;
        }
        w.write_record(self.csv_row()).map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
