//! Gaussian naive Bayes: per-class diagonal Gaussians fit by maximum
//! likelihood.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor as a fraction of the largest feature variance.
const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNb {
    pub log_priors: Vec<f64>,
    /// `[class][feature]`.
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(x: &Tensor, y: &[usize], n_classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.rows() != y.len() {
            return Err(Error::Shape {
                op: "GaussianNb::fit",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len()],
            });
        }
        let d = x.cols();
        let mut counts = vec![0usize; n_classes];
        let mut means = vec![vec![0.0f64; d]; n_classes];
        for (i, &k) in y.iter().enumerate() {
            if k >= n_classes {
                return Err(Error::Input(format!("label {k} out of range")));
            }
            counts[k] += 1;
            for (m, &v) in means[k].iter_mut().zip(x.row(i)) {
                *m += v as f64;
            }
        }
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::Contract("naive Bayes needs at least two classes present".into()));
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
        }
        let mut vars = vec![vec![0.0f64; d]; n_classes];
        for (i, &k) in y.iter().enumerate() {
            for j in 0..d {
                vars[k][j] += (x.get2(i, j) as f64 - means[k][j]).powi(2);
            }
        }
        // smoothing relative to the pooled per-feature variance
        let n = y.len() as f64;
        let max_var = (0..d)
            .map(|j| {
                let m = (0..y.len()).map(|i| x.get2(i, j) as f64).sum::<f64>() / n;
                (0..y.len()).map(|i| (x.get2(i, j) as f64 - m).powi(2)).sum::<f64>() / n
            })
            .fold(0.0, f64::max);
        let eps = VAR_SMOOTHING * max_var.max(f64::MIN_POSITIVE);
        for (v, &c) in vars.iter_mut().zip(&counts) {
            v.iter_mut().for_each(|s| *s = *s / c.max(1) as f64 + eps);
        }
        let log_priors = counts
            .iter()
            .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
            .collect();
        Ok(Self { log_priors, means, vars })
    }

    /// Unnormalized per-class log posterior for one row.
    pub fn joint_log_likelihood(&self, row: &[f32]) -> Vec<f64> {
        self.log_priors
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(&lp, (m, v))| {
                lp + row
                    .iter()
                    .zip(m.iter().zip(v))
                    .map(|(&x, (&mu, &var))| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x as f64 - mu).powi(2) / var))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        (0..x.rows())
            .map(|i| {
                let ll = self.joint_log_likelihood(x.row(i));
                (0..ll.len()).fold(0, |b, k| if ll[k] > ll[b] { k } else { b })
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> f64 {
        let hits = self.predict(x).iter().zip(y).filter(|(a, b)| a == b).count();
        hits as f64 / y.len().max(1) as f64
    }
}
