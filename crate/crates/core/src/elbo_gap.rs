//! Gap between the full-posterior bound and the factorized bound on a
//! one-dimensional linear-Gaussian model.
//!
//! Model: `z ~ N(0, 1)`, `w | y ~ N(m_y, s_w²)`, `x = z + w + e` with
//! `e ~ N(0, σ²)`. For a factorized `q(z|x) q(w|x,y)`,
//!
//! ```text
//! [log p(x|y) − KL(q_w ‖ p(w|x,y))] − L_w  =  E_{q_w}[KL(q_z ‖ p(z|w,x,y))]
//! ```
//!
//! where `L_w` is the factorized ELBO. The left side is estimated by
//! sampling `L_w`; the right side is closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::{kl_diag_gaussians, normal_logpdf, DiagGaussian, Estimate};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianProblem {
    /// `m_y` for each class.
    pub class_means: Vec<f64>,
    pub var_w: f64,
    pub noise_var: f64,
    pub x: f64,
    pub y: usize,
}

/// One-dimensional Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normal1 {
    pub mean: f64,
    pub var: f64,
}

impl Normal1 {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::Domain {
                op: "Normal1::new",
                detail: format!("N({mean}, {var}) is not a valid Gaussian"),
            });
        }
        Ok(Self { mean, var })
    }

    fn kl(self, other: Normal1) -> Result<f64> {
        kl_diag_gaussians(
            &DiagGaussian::new(vec![self.mean], vec![self.var])?,
            &DiagGaussian::new(vec![other.mean], vec![other.var])?,
        )
    }

    fn logpdf(self, v: f64) -> f64 {
        normal_logpdf(v, self.mean, self.var)
    }
}

impl LinearGaussianProblem {
    pub fn validate(&self) -> Result<()> {
        if self.y >= self.class_means.len() {
            return Err(Error::Input(format!("label {} out of range", self.y)));
        }
        if !(self.var_w > 0.0 && self.noise_var > 0.0) {
            return Err(Error::Domain {
                op: "LinearGaussianProblem",
                detail: "variances must be positive".into(),
            });
        }
        Ok(())
    }

    fn m_y(&self) -> f64 {
        self.class_means[self.y]
    }

    /// `p(x | y) = N(m_y, 1 + s_w² + σ²)`.
    pub fn log_evidence(&self) -> f64 {
        normal_logpdf(self.x, self.m_y(), 1.0 + self.var_w + self.noise_var)
    }

    /// `p(w | x, y)`, with z and e integrated out.
    pub fn w_posterior(&self) -> Normal1 {
        let lik_var = 1.0 + self.noise_var;
        let var = 1.0 / (1.0 / self.var_w + 1.0 / lik_var);
        Normal1 {
            mean: var * (self.m_y() / self.var_w + self.x / lik_var),
            var,
        }
    }

    /// `p(z | w, x, y) = N(gain (x − w), gain σ²)` with `gain = 1 / (1 + σ²)`.
    pub fn z_conditional(&self, w: f64) -> Normal1 {
        let gain = 1.0 / (1.0 + self.noise_var);
        Normal1 {
            mean: gain * (self.x - w),
            var: gain * self.noise_var,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboGap {
    pub lhs: Estimate,
    pub rhs: f64,
    pub abs_diff: f64,
}

impl ElboGap {
    /// Discrepancy in units of the left side's standard error.
    pub fn z_score(&self) -> f64 {
        self.abs_diff / self.lhs.std_err.max(f64::MIN_POSITIVE)
    }
}

/// Closed-form `E_{q_w}[KL(q_z ‖ p(z|w,x,y))]`. The conditional mean is
/// linear in w, so only the first two moments of `q_w` enter.
pub fn expected_conditional_kl(problem: &LinearGaussianProblem, q_z: Normal1, q_w: Normal1) -> f64 {
    let p = problem.z_conditional(q_w.mean);
    let gain = 1.0 / (1.0 + problem.noise_var);
    let sq = (q_z.mean - p.mean).powi(2) + gain * gain * q_w.var;
    0.5 * (q_z.var / p.var + sq / p.var - 1.0 - (q_z.var / p.var).ln())
}

/// Evaluates both sides of the gap identity with `n_samples` draws of the
/// factorized bound.
pub fn verify_elbo_gap(
    problem: &LinearGaussianProblem,
    q_z: Normal1,
    q_w: Normal1,
    n_samples: usize,
    seed: u64,
) -> Result<ElboGap> {
    problem.validate()?;
    if n_samples < 2 {
        return Err(Error::Input("need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior_z = Normal1 { mean: 0.0, var: 1.0 };
    let prior_w = Normal1 {
        mean: problem.m_y(),
        var: problem.var_w,
    };
    let obs = |z: f64, w: f64| normal_logpdf(problem.x, z + w, problem.noise_var);
    let base = problem.log_evidence() - q_w.kl(problem.w_posterior())?;
    let terms: Vec<f64> = (0..n_samples)
        .map(|_| {
            let z = q_z.mean + q_z.var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let w = q_w.mean + q_w.var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let l_w = obs(z, w) + prior_z.logpdf(z) - q_z.logpdf(z) + prior_w.logpdf(w) - q_w.logpdf(w);
            base - l_w
        })
        .collect();
    let lhs = Estimate::from_samples(&terms);
    let rhs = expected_conditional_kl(problem, q_z, q_w);
    Ok(ElboGap {
        lhs,
        rhs,
        abs_diff: (lhs.value - rhs).abs(),
    })
}
