//! End-to-end runs: data from a config, training into a run directory, and
//! evaluation of a stored checkpoint.
//!
//! A run directory holds `config.json`, `model.json`/`model.bin`,
//! `epochs.csv` and `train_report.json`; evaluation adds `eval.json` and
//! appends to `eval.csv`. Data is never stored there: it is regenerated from
//! the config and seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{build_baseline, BaselineKind};
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::datasets::idx::{parse_idx, IdxData};
use crate::datasets::{
    colored_digits, colorize_and_flip, gen_parametric, gen_swiss_roll, parametric_bayes_accuracy, swiss_roll_bayes_accuracy, Dataset,
    ParametricSample,
};
use crate::error::{Error, Result};
use crate::metrics::{
    class_average_rmse, class_digit_average_rmse, cvae_marginal_proxy_rmse, delta_bayes, delta_bayes_features, encode,
    eval_kl_analytic_parametric, eval_nll, marginal_rmse, mi_zw, EvalReport,
};
use crate::model::{ModelKind, ModelSpec, ModelState};
use crate::seeds::{self, derive, Stream};
use crate::trainer::{fit, StopReason, TrainReport};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_STEM: &str = "model";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Generates the full dataset described by `spec`.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    match spec {
        DatasetSpec::Parametric { n } => ParametricSample::to_dataset(&gen_parametric(*n, seed)?),
        DatasetSpec::SwissRoll { .. } => gen_swiss_roll(&spec.swiss_roll_config().expect("swiss roll spec"), seed),
        DatasetSpec::ColoredDigits {
            n_sources,
            noise_rate,
            downsample_to,
            idx_images: Some(images),
            idx_labels: Some(labels),
        } => {
            let pixels = match parse_idx(images)? {
                IdxData::Images { pixels, .. } => pixels,
                IdxData::Labels(_) => return Err(Error::Config(format!("{} holds labels, not images", images.display()))),
            };
            let digits: Vec<usize> = match parse_idx(labels)? {
                IdxData::Labels(l) => l.into_iter().map(usize::from).collect(),
                IdxData::Images { .. } => return Err(Error::Config(format!("{} holds images, not labels", labels.display()))),
            };
            let n = (*n_sources).min(pixels.rows()).min(digits.len());
            let idx: Vec<usize> = (0..n).collect();
            colorize_and_flip(&pixels.select_rows(&idx), Some(&digits[..n]), *noise_rate, seed, *downsample_to)
        }
        DatasetSpec::ColoredDigits {
            n_sources,
            noise_rate,
            downsample_to,
            ..
        } => colored_digits(*n_sources, *noise_rate, seed, *downsample_to),
    }
}

/// Test rows first, then validation rows out of the remainder.
pub fn split(data: &Dataset, cfg: &ExperimentConfig) -> Result<Splits> {
    let seed = seeds::stream_seed(cfg.seed, Stream::Data);
    let (test, rest) = data.split(cfg.split.test_fraction, derive(seed, 10))?;
    let (val, train) = rest.split(cfg.split.val_fraction, derive(seed, 11))?;
    Ok(Splits { train, val, test })
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let data = build_dataset(&cfg.dataset, seeds::stream_seed(cfg.seed, Stream::Data))?;
    split(&data, cfg)
}

/// Accuracy of the optimal classifier on observed labels, when known.
pub fn bayes_accuracy(spec: &DatasetSpec) -> Option<f64> {
    match spec {
        DatasetSpec::Parametric { .. } => Some(parametric_bayes_accuracy()),
        DatasetSpec::SwissRoll { noise_rate, .. } => Some(swiss_roll_bayes_accuracy(*noise_rate)),
        // the coloring is a deterministic function of the clean label
        DatasetSpec::ColoredDigits { noise_rate, .. } => Some(1.0 - noise_rate),
    }
}

pub fn model_spec(cfg: &ExperimentConfig, data: &Dataset) -> ModelSpec {
    ModelSpec {
        kind: cfg.model.kind,
        x_dim: data.dim(),
        n_classes: data.n_classes,
        d_latent: cfg.model.d_latent,
        n_hidden: cfg.model.n_hidden,
        d_hidden: cfg.model.d_hidden,
        activation: cfg.model.activation,
        likelihood: cfg.likelihood(),
    }
}

/// Trains the configured model on `splits`. Per-epoch rows go to
/// `epochs_csv` when given.
pub fn train(cfg: &ExperimentConfig, splits: &Splits, epochs_csv: Option<&Path>) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    let spec = model_spec(cfg, &splits.train);
    let mut init = seeds::rng(cfg.seed, Stream::Init);
    let (mut state, weights) = match BaselineKind::from_model_kind(spec.kind) {
        None => (ModelState::init(spec, &mut init)?, cfg.weights),
        Some(b) => build_baseline(b, &spec, &mut init)?,
    };
    let mut rng = seeds::rng(cfg.seed, Stream::Train);
    let report = fit(&mut state, &splits.train, &splits.val, weights, cfg.train.clone(), &mut rng, epochs_csv)?;
    Ok((state, report))
}

/// Evaluates `state` on the test split according to `cfg.metrics`. A metric
/// that is switched on but does not apply to the model or data is an
/// [`Error::Unsupported`].
pub fn evaluate(cfg: &ExperimentConfig, state: &ModelState, splits: &Splits) -> Result<EvalReport> {
    let m = &cfg.metrics;
    let test = &splits.test;
    let seed = seeds::stream_seed(cfg.seed, Stream::Metric);
    let kind = state.spec.kind;
    let dual = kind == ModelKind::Dual;
    let mut r = EvalReport {
        experiment: cfg.name.clone(),
        seed: cfg.seed,
        model_kind: serde_json::to_value(kind)?.as_str().unwrap_or_default().to_string(),
        nll: Some(eval_nll(state, test, 1, derive(seed, 0))?),
        ..EvalReport::default()
    };
    if m.nll_importance > 1 {
        r.nll_iw = Some(eval_nll(state, test, m.nll_importance, derive(seed, 1))?);
    }
    if m.kl_analytic {
        let (kz, kw) = eval_kl_analytic_parametric(state, test)?;
        r.kl_z = Some(kz);
        r.kl_z_x100 = Some(100.0 * kz);
        r.kl_w = kw;
        r.kl_w_x100 = kw.map(|v| 100.0 * v);
    }
    if m.delta_bayes {
        if let Some(bayes) = bayes_accuracy(&cfg.dataset) {
            r.delta_bayes = Some(delta_bayes(state, test, bayes, derive(seed, 2))?);
            if dual {
                let mw = encode(state, test)?.mu_w.expect("dual model has w");
                r.delta_bayes_latent = Some(delta_bayes_features(&mw, &test.y, test.n_classes, bayes, derive(seed, 3))?);
            }
        }
    }
    if m.mi {
        r.mi_zw = Some(mi_zw(state, test, &m.mine, m.mi_sampled, derive(seed, 4))?);
    }
    if m.marginal_rmse {
        match kind {
            ModelKind::ConditionalVae => r.marginal_proxy_rmse = Some(cvae_marginal_proxy_rmse(state, test)?),
            _ => r.marginal_rmse = Some(marginal_rmse(state, test)?),
        }
        let fit_on = splits.train.clone();
        r.class_average_rmse = Some(class_average_rmse(&fit_on, test)?);
        if test.extra("digit").is_ok() {
            r.class_digit_average_rmse = Some(class_digit_average_rmse(&fit_on, test)?);
        }
    }
    Ok(r)
}

/// What [`run_train`] left behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains into `run_dir`. A diverged run still writes its partial report
/// before returning [`Error::Divergence`].
pub fn run_train(cfg: &ExperimentConfig, run_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(run_dir.to_path_buf());
    write_json(&run_dir.join(CONFIG_FILE), &resolved)?;
    let t0 = std::time::Instant::now();
    let splits = load_splits(cfg)?;
    let (state, report) = train(cfg, &splits, Some(&run_dir.join(EPOCHS_FILE)))?;
    write_json(&run_dir.join(TRAIN_REPORT_FILE), &report)?;
    if report.stop_reason == StopReason::Diverged {
        return Err(Error::Divergence(format!(
            "loss stayed above {} for {} epochs; partial report in {}",
            cfg.train.divergence_loss,
            cfg.train.divergence_epochs,
            run_dir.display()
        )));
    }
    state.save(&run_dir.join(CHECKPOINT_STEM))?;
    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        stop_reason: report.stop_reason,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Reads the stored config of a run directory.
pub fn load_run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let path = run_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    ExperimentConfig::load(&path)
}

/// Loads the checkpoint of a run directory and checks it against the
/// architecture its config implies.
pub fn load_run_model(run_dir: &Path, cfg: &ExperimentConfig, splits: &Splits) -> Result<ModelState> {
    let stem = run_dir.join(CHECKPOINT_STEM);
    let manifest = crate::bundle::manifest_path(&stem);
    if !manifest.exists() {
        return Err(Error::MissingArtifact(manifest));
    }
    let state = ModelState::load(&stem)?;
    let expected = model_spec(cfg, &splits.train);
    if state.spec != expected {
        return Err(Error::Integrity(format!(
            "checkpoint architecture {:?} does not match the run config {:?}",
            state.spec, expected
        )));
    }
    Ok(state)
}

/// Evaluates a finished run, writing `eval.json` and appending to
/// `eval.csv` in the run directory.
pub fn run_eval(run_dir: &Path, overrides: &[String]) -> Result<EvalReport> {
    let cfg = load_run_config(run_dir)?.with_overrides(overrides)?;
    let splits = load_splits(&cfg)?;
    let state = load_run_model(run_dir, &cfg, &splits)?;
    let report = evaluate(&cfg, &state, &splits)?;
    write_json(&run_dir.join(EVAL_FILE), &report)?;
    report.append_csv(&run_dir.join(EVAL_CSV))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::parametric();
        c.dataset = DatasetSpec::Parametric { n: 600 };
        c.train.max_epochs = 3;
        c.metrics.nll_importance = 4;
        c
    }

    #[test]
    fn splits_are_disjoint_and_cover_the_data() {
        let c = tiny();
        let s = load_splits(&c).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 600);
        assert_eq!(s.test.len(), 120);
        assert_eq!(s.val.len(), 48);
        let mut xs: Vec<u32> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|d| d.x.data().iter().map(|v| v.to_bits()))
            .collect();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs.len(), 600);
    }

    #[test]
    fn bayes_accuracy_per_dataset() {
        assert!((bayes_accuracy(&DatasetSpec::Parametric { n: 10 }).unwrap() - 0.75).abs() < 1e-12);
        let s = ExperimentConfig::swiss_roll(0.3).dataset;
        assert!((bayes_accuracy(&s).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn evaluation_fills_only_applicable_metrics() {
        let c = tiny();
        let s = load_splits(&c).unwrap();
        let (state, _) = train(&c, &s, None).unwrap();
        let r = evaluate(&c, &state, &s).unwrap();
        assert!(r.nll.is_some() && r.nll_iw.is_some() && r.kl_z.is_some() && r.delta_bayes.is_some());
        assert!(r.mi_zw.is_none() && r.marginal_rmse.is_none());
        assert_eq!(r.model_kind, "dual");

        let b = c.as_baseline(ModelKind::PlainVae);
        let (state, _) = train(&b, &s, None).unwrap();
        let r = evaluate(&b, &state, &s).unwrap();
        assert!(r.delta_bayes_latent.is_none() && r.kl_w.is_none());
        assert_eq!(r.model_kind, "plain_vae");

        let mut mi = b.clone();
        mi.metrics.mi = true;
        assert!(matches!(evaluate(&mi, &state, &s), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn idx_sources_feed_the_colored_pipeline() {
        use crate::datasets::idx::{encode_images, encode_labels, write_idx};
        use crate::tensor::Tensor;
        let dir = tempfile::tempdir().unwrap();
        let px = Tensor::matrix(6, 16, (0..96).map(|i| (i % 7) as f32 / 6.0).collect()).unwrap();
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
        write_idx(&ip, &encode_images(&px, 4, 4).unwrap()).unwrap();
        write_idx(&lp, &encode_labels(&[0, 1, 2, 3, 4, 5])).unwrap();
        let spec = DatasetSpec::ColoredDigits {
            n_sources: 5,
            noise_rate: 0.0,
            downsample_to: Some(2),
            idx_images: Some(ip),
            idx_labels: Some(lp),
        };
        let d = build_dataset(&spec, 0).unwrap();
        assert_eq!((d.len(), d.dim()), (10, 12));
        assert_eq!(d.y, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn missing_run_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_eval(dir.path(), &[]), Err(Error::MissingArtifact(_))));
    }
}
