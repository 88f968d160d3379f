//! Swiss roll with labels from a lengthwise split and random label flips.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_noise_rate, Dataset};
use crate::distributions::simpson;
use crate::error::Result;
use crate::tensor::Tensor;

pub const T_MIN: f64 = 1.5 * PI;
pub const T_MAX: f64 = 4.5 * PI;
pub const LENGTH: f64 = 21.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwissRollConfig {
    pub n: usize,
    pub noise_rate: f64,
    /// Standard deviation of Gaussian noise added to every coordinate.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Rescale coordinates by the manifold's population mean and standard
    /// deviation.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_jitter() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl SwissRollConfig {
    pub fn new(n: usize, noise_rate: f64) -> Self {
        Self {
            n,
            noise_rate,
            jitter: default_jitter(),
            standardize: true,
        }
    }
}

/// Population `(mean, sd)` of each coordinate of the noiseless manifold under
/// `t ~ U[T_MIN, T_MAX]`, `length ~ U[0, LENGTH]`.
pub fn population_moments() -> [(f64, f64); 3] {
    let span = T_MAX - T_MIN;
    let moment = |f: &dyn Fn(f64) -> f64| simpson(&|t| f(t) / span, T_MIN, T_MAX, 20_000);
    let m1 = moment(&|t| t * t.cos());
    let s1 = (moment(&|t| (t * t.cos()).powi(2)) - m1 * m1).sqrt();
    let m3 = moment(&|t| t * t.sin());
    let s3 = (moment(&|t| (t * t.sin()).powi(2)) - m3 * m3).sqrt();
    [(m1, s1), (LENGTH / 2.0, LENGTH / 12f64.sqrt()), (m3, s3)]
}

/// Points `(t cos t, length, t sin t)` with `y_clean = 1[length > LENGTH/2]`
/// (the population median) and observed `y` flipped with probability
/// `noise_rate`. Side columns: `y_clean`, `t`, `length`.
pub fn gen_swiss_roll(cfg: &SwissRollConfig, seed: u64) -> Result<Dataset> {
    check_noise_rate(cfg.noise_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, cfg.jitter.max(0.0)).expect("finite sd");
    let moments = population_moments();
    let n = cfg.n;
    let mut x = Vec::with_capacity(n * 3);
    let (mut y, mut y_clean, mut ts, mut lens) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let t = rng.gen_range(T_MIN..T_MAX);
        let length = rng.gen_range(0.0..LENGTH);
        let clean = usize::from(length > LENGTH / 2.0);
        let point = [t * t.cos(), length, t * t.sin()];
        for (c, v) in point.iter().enumerate() {
            let mut v = v + jitter.sample(&mut rng);
            if cfg.standardize {
                v = (v - moments[c].0) / moments[c].1;
            }
            x.push(v as f32);
        }
        let flipped = rng.gen_bool(cfg.noise_rate);
        y.push(if flipped { 1 - clean } else { clean });
        y_clean.push(clean as f32);
        ts.push(t as f32);
        lens.push(length as f32);
    }
    Dataset::new(Tensor::matrix(n, 3, x)?, y, 2)?
        .with_extra("y_clean", Tensor::matrix(n, 1, y_clean)?)?
        .with_extra("t", Tensor::matrix(n, 1, ts)?)?
        .with_extra("length", Tensor::matrix(n, 1, lens)?)
}

/// Best achievable accuracy for the observed labels: the clean label is a
/// deterministic function of the point, so only the flips are irreducible.
pub fn swiss_roll_bayes_accuracy(noise_rate: f64) -> f64 {
    1.0 - noise_rate
}
