//! Experiment configuration: strict JSON schema, shipped presets and
//! dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::SwissRollConfig;
use crate::error::{Error, Result};
use crate::metrics::MineConfig;
use crate::model::{Likelihood, ModelKind};
use crate::nn::Activation;
use crate::objective::LossWeights;
use crate::trainer::TrainOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Parametric {
        n: usize,
    },
    SwissRoll {
        n: usize,
        noise_rate: f64,
        #[serde(default = "defaults::jitter")]
        jitter: f64,
        #[serde(default = "defaults::yes")]
        standardize: bool,
    },
    /// Two colorings per source image. Sources are procedural glyphs unless
    /// both IDX paths are given.
    ColoredDigits {
        n_sources: usize,
        noise_rate: f64,
        #[serde(default)]
        downsample_to: Option<usize>,
        #[serde(default)]
        idx_images: Option<PathBuf>,
        #[serde(default)]
        idx_labels: Option<PathBuf>,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Parametric { .. } => "parametric",
            DatasetSpec::SwissRoll { .. } => "swiss_roll",
            DatasetSpec::ColoredDigits { .. } => "colored_digits",
        }
    }

    pub fn noise_rate(&self) -> Option<f64> {
        match self {
            DatasetSpec::Parametric { .. } => None,
            DatasetSpec::SwissRoll { noise_rate, .. } | DatasetSpec::ColoredDigits { noise_rate, .. } => Some(*noise_rate),
        }
    }

    pub fn swiss_roll_config(&self) -> Option<SwissRollConfig> {
        match self {
            DatasetSpec::SwissRoll {
                n,
                noise_rate,
                jitter,
                standardize,
            } => Some(SwissRollConfig {
                n: *n,
                noise_rate: *noise_rate,
                jitter: *jitter,
                standardize: *standardize,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |r: f64| {
            if (0.0..=0.5).contains(&r) {
                Ok(())
            } else {
                Err(Error::Config(format!("dataset.noise_rate must lie in [0, 0.5], got {r}")))
            }
        };
        match self {
            DatasetSpec::Parametric { n } | DatasetSpec::SwissRoll { n, .. } if *n < 10 => {
                Err(Error::Config(format!("dataset.n must be at least 10, got {n}")))
            }
            DatasetSpec::Parametric { .. } => Ok(()),
            DatasetSpec::SwissRoll { noise_rate, jitter, .. } => {
                rate(*noise_rate)?;
                if !(*jitter >= 0.0) {
                    return Err(Error::Config(format!("dataset.jitter must be >= 0, got {jitter}")));
                }
                Ok(())
            }
            DatasetSpec::ColoredDigits {
                n_sources,
                noise_rate,
                downsample_to,
                idx_images,
                idx_labels,
            } => {
                rate(*noise_rate)?;
                if *n_sources < 5 {
                    return Err(Error::Config(format!("dataset.n_sources must be at least 5, got {n_sources}")));
                }
                if downsample_to == &Some(0) {
                    return Err(Error::Config("dataset.downsample_to must be positive".into()));
                }
                if idx_images.is_some() != idx_labels.is_some() {
                    return Err(Error::Config("dataset.idx_images and dataset.idx_labels go together".into()));
                }
                Ok(())
            }
        }
    }
}

/// Held-out fractions. The test set is carved off first; the validation set
/// comes out of what remains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ModelKind,
    pub d_latent: usize,
    pub n_hidden: usize,
    pub d_hidden: usize,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
    /// Defaults to Bernoulli for images and Gaussian otherwise.
    #[serde(default)]
    pub likelihood: Option<Likelihood>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Importance samples for the tightened NLL; 0 skips it.
    #[serde(default = "defaults::nll_importance")]
    pub nll_importance: usize,
    /// Parametric data only.
    #[serde(default)]
    pub kl_analytic: bool,
    #[serde(default = "defaults::yes")]
    pub delta_bayes: bool,
    /// Dual models only.
    #[serde(default)]
    pub mi: bool,
    /// Estimate MI on reparameterized samples instead of posterior means.
    #[serde(default)]
    pub mi_sampled: bool,
    /// Data with a ground-truth marginal only.
    #[serde(default)]
    pub marginal_rmse: bool,
    #[serde(default)]
    pub mine: MineConfig,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            nll_importance: defaults::nll_importance(),
            kl_analytic: false,
            delta_bayes: true,
            mi: false,
            mi_sampled: false,
            marginal_rmse: false,
            mine: MineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    pub model: ArchSpec,
    pub weights: LossWeights,
    pub train: TrainOptions,
    #[serde(default)]
    pub metrics: MetricsSpec,
    /// Run directory; the CLI fills this in when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

mod defaults {
    use crate::nn::Activation;

    pub fn jitter() -> f64 {
        0.05
    }
    pub fn yes() -> bool {
        true
    }
    pub fn activation() -> Activation {
        Activation::Relu
    }
    pub fn nll_importance() -> usize {
        64
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "parametric",
    "swiss_roll",
    "swiss_roll_0.0",
    "swiss_roll_0.1",
    "swiss_roll_0.2",
    "swiss_roll_0.3",
    "swiss_roll_0.4",
    "colored_digits",
    "colored_digits_0.1",
    "colored_digits_0.3",
];

impl ExperimentConfig {
    /// One-dimensional additive model, 20k points, 2×8 MLPs.
    pub fn parametric() -> Self {
        let mut train = TrainOptions::new(1e-3);
        train.max_epochs = 300;
        Self {
            name: "parametric".into(),
            seed: 0,
            dataset: DatasetSpec::Parametric { n: 20_000 },
            split: SplitSpec::default(),
            model: ArchSpec {
                kind: ModelKind::Dual,
                d_latent: 1,
                n_hidden: 2,
                d_hidden: 8,
                activation: Activation::Relu,
                likelihood: None,
            },
            weights: LossWeights {
                rec: 0.7,
                kl_z: 0.7,
                kl_w: 0.2,
                adv: 0.8,
                rec_z: 0.3,
            },
            train,
            metrics: MetricsSpec {
                kl_analytic: true,
                ..MetricsSpec::default()
            },
            output_dir: None,
        }
    }

    /// Swiss roll, 20k points, 2×128 MLPs, at the given label-flip rate.
    pub fn swiss_roll(noise_rate: f64) -> Self {
        let mut train = TrainOptions::new(1e-3);
        train.max_epochs = 300;
        Self {
            name: format!("swiss_roll_{noise_rate:.1}"),
            seed: 0,
            dataset: DatasetSpec::SwissRoll {
                n: 20_000,
                noise_rate,
                jitter: defaults::jitter(),
                standardize: true,
            },
            split: SplitSpec::default(),
            model: ArchSpec {
                kind: ModelKind::Dual,
                d_latent: 2,
                n_hidden: 2,
                d_hidden: 128,
                activation: Activation::Relu,
                likelihood: None,
            },
            weights: LossWeights {
                rec: 0.9,
                kl_z: 0.2,
                kl_w: 0.2,
                adv: 8.0,
                rec_z: 0.1,
            },
            train,
            metrics: MetricsSpec {
                mi: true,
                ..MetricsSpec::default()
            },
            output_dir: None,
        }
    }

    /// 5k glyph sources in two colorings at 14×14, 2×256 MLPs.
    pub fn colored_digits(noise_rate: f64) -> Self {
        let mut train = TrainOptions::new(1e-4);
        train.max_epochs = 200;
        Self {
            name: format!("colored_digits_{noise_rate:.1}"),
            seed: 0,
            dataset: DatasetSpec::ColoredDigits {
                n_sources: 5000,
                noise_rate,
                downsample_to: Some(14),
                idx_images: None,
                idx_labels: None,
            },
            split: SplitSpec::default(),
            model: ArchSpec {
                kind: ModelKind::Dual,
                d_latent: 8,
                n_hidden: 2,
                d_hidden: 256,
                activation: Activation::Relu,
                likelihood: None,
            },
            weights: LossWeights {
                rec: 0.5,
                kl_z: 1e-4,
                kl_w: 1e-4,
                adv: 0.1,
                rec_z: 0.5,
            },
            train,
            metrics: MetricsSpec {
                marginal_rmse: true,
                ..MetricsSpec::default()
            },
            output_dir: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let rate = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad noise rate in preset name `{name}`")))
        };
        let cfg = match name {
            "parametric" => Self::parametric(),
            "swiss_roll" => Self::swiss_roll(0.3),
            "colored_digits" => Self::colored_digits(0.3),
            _ => {
                if let Some(r) = name.strip_prefix("swiss_roll_") {
                    Self::swiss_roll(rate(r)?)
                } else if let Some(r) = name.strip_prefix("colored_digits_") {
                    Self::colored_digits(rate(r)?)
                } else {
                    return Err(Error::Config(format!(
                        "unknown preset `{name}`; known: {}",
                        PRESET_NAMES.join(", ")
                    )));
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Baseline variant of this config: same data, seed and architecture,
    /// plain ELBO weights.
    pub fn as_baseline(&self, kind: ModelKind) -> Self {
        let mut c = self.clone();
        c.model.kind = kind;
        if kind != ModelKind::Dual {
            c.weights = LossWeights::elbo();
            c.metrics.mi = false;
        }
        c
    }

    pub fn likelihood(&self) -> Likelihood {
        self.model.likelihood.unwrap_or(match self.dataset {
            DatasetSpec::ColoredDigits { .. } => Likelihood::Bernoulli,
            _ => Likelihood::Gaussian,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.weights.validate()?;
        self.train.validate()?;
        let s = self.split;
        for (k, v) in [("split.test_fraction", s.test_fraction), ("split.val_fraction", s.val_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("`{k}` must lie in (0, 1), got {v}")));
            }
        }
        if self.model.d_latent == 0 {
            return Err(Error::Config("model.d_latent must be positive".into()));
        }
        if self.model.n_hidden > 0 && self.model.d_hidden == 0 {
            return Err(Error::Config("model.d_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Parses and validates. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `key.path=value` overrides. Values parse as JSON and fall
    /// back to a bare string, so `model.kind=plain_vae` works unquoted.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key.path=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut tree, path, value)?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(tree: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for (i, k) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            // typos in the leaf key are caught by deny_unknown_fields on reparse
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*k)
            .ok_or_else(|| Error::Config(format!("unknown config key `{}`", keys[..=i].join("."))))?;
    }
    Ok(())
}
