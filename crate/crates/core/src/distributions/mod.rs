//! Gaussian variational machinery.
//!
//! The value-level types here ([`DiagGaussian`], [`TruncGaussian1D`]) work in
//! `f64` and are used for evaluation and as independent references for the
//! taped training losses in [`taped`].

pub mod taped;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Variance floor applied after the softplus variance heads.
pub const VAR_FLOOR: f64 = 1e-6;

/// Log-density assigned to samples that fall outside a truncated support in
/// Monte Carlo KL estimates.
pub const OUT_OF_SUPPORT_LOGPDF: f64 = -30.0;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, with an asymptotic branch for the far left tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x < -8.0 {
        // Φ(x) ≈ φ(x)/(-x) · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸)
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
            + 105.0 / (x2 * x2 * x2 * x2);
        -0.5 * x2 - HALF_LN_2PI - (-x).ln() + series.ln()
    } else {
        normal_cdf(x).ln()
    }
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mu.len() != var.len() {
            return Err(Error::Contract(format!(
                "mean has {} dims but variance has {}",
                mu.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                op: "DiagGaussian",
                detail: format!("variance {v} is not strictly positive"),
            });
        }
        Ok(Self { mu, var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn logprob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Contract(format!(
                "point has {} dims, distribution has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x
            .iter()
            .zip(self.mu.iter().zip(&self.var))
            .map(|(&xi, (&m, &v))| normal_logpdf(xi, m, v))
            .sum())
    }

    /// `μ + √var ⊙ ε`, with the variance floored at [`VAR_FLOOR`].
    pub fn reparam_sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.var)
            .zip(eps)
            .map(|((m, v), e)| m + v.max(VAR_FLOOR).sqrt() * e)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.reparam_sample(&eps)
    }
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Contract(format!(
            "KL between {}-dim and {}-dim Gaussians",
            q.dim(),
            p.dim()
        )));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let ratio = q.var[i] / p.var[i];
        let d = q.mu[i] - p.mu[i];
        kl += 0.5 * (ratio + d * d / p.var[i] - 1.0 - ratio.ln());
    }
    Ok(kl.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Support `(0, ∞)`.
    Positive,
    /// Support `(−∞, 0]`.
    Negative,
}

/// One-dimensional Gaussian truncated at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncGaussian1D {
    pub mu: f64,
    pub var: f64,
    pub side: Side,
}

impl TruncGaussian1D {
    pub fn new(mu: f64, var: f64, side: Side) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::Domain {
                op: "TruncGaussian1D",
                detail: format!("variance {var} is not strictly positive"),
            });
        }
        Ok(Self { mu, var, side })
    }

    /// Posterior of `w` in the additive model `x = z + w`, `z, w ~ N(0, 1)`,
    /// after observing the sign label `y = 1[w > 0]`: `N(x/2, 1/2)` truncated
    /// to the side selected by `y`.
    pub fn sign_posterior(x: f64, y: usize) -> Self {
        let side = if y == 1 { Side::Positive } else { Side::Negative };
        Self {
            mu: x / 2.0,
            var: 0.5,
            side,
        }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn in_support(&self, w: f64) -> bool {
        match self.side {
            Side::Positive => w > 0.0,
            Side::Negative => w <= 0.0,
        }
    }

    /// Signed standardized truncation point: the mass kept is `Φ(alpha)`.
    fn alpha(&self) -> f64 {
        let a = self.mu / self.sd();
        match self.side {
            Side::Positive => a,
            Side::Negative => -a,
        }
    }

    /// `ln` of the probability mass the untruncated Gaussian puts on the support.
    pub fn log_normalizer(&self) -> f64 {
        log_normal_cdf(self.alpha())
    }

    /// Log-density; `-∞` outside the support.
    pub fn logpdf(&self, w: f64) -> f64 {
        if !self.in_support(w) {
            return f64::NEG_INFINITY;
        }
        normal_logpdf(w, self.mu, self.var) - self.log_normalizer()
    }

    pub fn pdf(&self, w: f64) -> f64 {
        self.logpdf(w).exp()
    }

    /// Inverse Mills ratio `φ(α)/Φ(α)`, stable for very negative `α`.
    fn mills(&self) -> f64 {
        let a = self.alpha();
        (-0.5 * a * a - HALF_LN_2PI - log_normal_cdf(a)).exp()
    }

    pub fn mean(&self) -> f64 {
        let shift = self.sd() * self.mills();
        match self.side {
            Side::Positive => self.mu + shift,
            Side::Negative => self.mu - shift,
        }
    }

    pub fn variance(&self) -> f64 {
        let a = self.alpha();
        let lam = self.mills();
        self.var * (1.0 - a * lam - lam * lam)
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            value: mean,
            std_err: (var / n).sqrt(),
        }
    }
}

fn truncated_logpdf_capped(t: &TruncGaussian1D, w: f64) -> f64 {
    if t.in_support(w) {
        t.logpdf(w)
    } else {
        OUT_OF_SUPPORT_LOGPDF
    }
}

/// Monte Carlo `KL(q ‖ t)` for a 1-D Gaussian `q`.
///
/// Draws of `q` outside the truncated support are scored with
/// [`OUT_OF_SUPPORT_LOGPDF`] instead of `-∞`.
pub fn kl_gaussian_to_truncated<R: Rng + ?Sized>(
    q: &DiagGaussian,
    t: &TruncGaussian1D,
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if q.dim() != 1 {
        return Err(Error::Contract(format!("expected a 1-D Gaussian, got {} dims", q.dim())));
    }
    if n_samples < 1000 {
        return Err(Error::Contract(format!("n_samples must be >= 1000, got {n_samples}")));
    }
    let (m, v) = (q.mu[0], q.var[0]);
    let sd = v.sqrt();
    let terms: Vec<f64> = (0..n_samples)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            let w = m + sd * e;
            normal_logpdf(w, m, v) - truncated_logpdf_capped(t, w)
        })
        .collect();
    Ok(Estimate::from_samples(&terms))
}

/// Quadrature counterpart of [`kl_gaussian_to_truncated`] (same capped
/// functional), using composite Simpson on each side of zero over
/// `μ ± 12σ` of `q`.
pub fn kl_gaussian_to_truncated_quadrature(
    q: &DiagGaussian,
    t: &TruncGaussian1D,
    n_points: usize,
) -> Result<f64> {
    if q.dim() != 1 {
        return Err(Error::Contract(format!("expected a 1-D Gaussian, got {} dims", q.dim())));
    }
    let (m, v) = (q.mu[0], q.var[0]);
    let sd = v.sqrt();
    let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
    let integrand = |w: f64| {
        let lq = normal_logpdf(w, m, v);
        lq.exp() * (lq - truncated_logpdf_capped(t, w))
    };
    let mut total = 0.0;
    // the integrand jumps at 0, so integrate each side separately
    let pieces: Vec<(f64, f64)> = if lo < 0.0 && hi > 0.0 {
        vec![(lo, 0.0), (0.0, hi)]
    } else {
        vec![(lo, hi)]
    };
    for (a, b) in pieces {
        let width = (b - a) / (hi - lo);
        let n = ((n_points as f64 * width).ceil() as usize).max(2);
        // keep each piece strictly on one side for the support test
        let nudge = 1e-12 * (b - a);
        total += simpson(&integrand, a + nudge, b - nudge, n);
    }
    Ok(total)
}

/// Composite Simpson's rule with `n` intervals (rounded up to even).
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
