//! One-dimensional additive model: `z, w ~ N(0, 1)`, `x = z + w`,
//! `y = 1[w > 0]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParametricSample {
    pub x: f32,
    pub y: usize,
    pub true_z: f32,
    pub true_w: f32,
}

pub fn gen_parametric(n: usize, seed: u64) -> Result<Vec<ParametricSample>> {
    if n == 0 {
        return Err(Error::Input("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let true_z: f32 = StandardNormal.sample(&mut rng);
            let true_w: f32 = StandardNormal.sample(&mut rng);
            ParametricSample {
                x: true_z + true_w,
                y: usize::from(true_w > 0.0),
                true_z,
                true_w,
            }
        })
        .collect())
}

impl ParametricSample {
    /// `[n, 1]` features with `true_z` and `true_w` as side columns.
    pub fn to_dataset(samples: &[ParametricSample]) -> Result<Dataset> {
        let col = |f: fn(&ParametricSample) -> f32| {
            Tensor::matrix(samples.len(), 1, samples.iter().map(f).collect())
        };
        Dataset::new(col(|s| s.x)?, samples.iter().map(|s| s.y).collect(), 2)?
            .with_extra("true_z", col(|s| s.true_z)?)?
            .with_extra("true_w", col(|s| s.true_w)?)
    }
}

/// Accuracy of the optimal rule `ŷ = 1[x > 0]`. `x` and `w` are jointly
/// Gaussian with correlation `1/√2`, so agreement of signs has probability
/// `1/2 + asin(1/√2)/π = 3/4`.
pub fn parametric_bayes_accuracy() -> f64 {
    0.5 + std::f64::consts::FRAC_1_SQRT_2.asin() / std::f64::consts::PI
}
