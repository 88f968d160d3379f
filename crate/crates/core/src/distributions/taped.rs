//! Batched, differentiable versions of the Gaussian terms used in training.
//! Each function takes `[batch, dim]` operands and returns a `[batch]` vector
//! of per-datum values.

use super::HALF_LN_2PI;
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// `μ + √var ⊙ ε`.
pub fn reparam(tape: &mut Tape, mu: Var, var: Var, eps: Var) -> Result<Var> {
    let sd = tape.sqrt(var)?;
    let noise = tape.mul(sd, eps)?;
    tape.add(mu, noise)
}

/// `KL(N(μ, var) ‖ N(0, I))` per row.
pub fn kl_standard_normal(tape: &mut Tape, mu: Var, var: Var) -> Result<Var> {
    let mu2 = tape.square(mu);
    kl_from_parts(tape, mu2, var)
}

/// `KL(N(μ, var) ‖ N(m, I))` per row.
pub fn kl_unit_variance(tape: &mut Tape, mu: Var, var: Var, prior_mean: Var) -> Result<Var> {
    let d = tape.sub(mu, prior_mean)?;
    let d2 = tape.square(d);
    kl_from_parts(tape, d2, var)
}

fn kl_from_parts(tape: &mut Tape, sq_dist: Var, var: Var) -> Result<Var> {
    let log_var = tape.log(var)?;
    let a = tape.add(var, sq_dist)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -1.0);
    let per_row = tape.sum(c, Some(1))?;
    Ok(tape.scale(per_row, 0.5))
}

/// Unit-variance Gaussian log-likelihood `log N(x; mean, I)` per row.
pub fn gaussian_loglik(tape: &mut Tape, x: Var, mean: Var) -> Result<Var> {
    let dim = tape.shape(x).get(1).copied().unwrap_or(1);
    let d = tape.sub(x, mean)?;
    let d2 = tape.square(d);
    let s = tape.sum(d2, Some(1))?;
    let half = tape.scale(s, -0.5);
    Ok(tape.add_scalar(half, -(dim as f64 * HALF_LN_2PI) as f32))
}

/// Per-pixel Bernoulli log-likelihood from logits, `Σ x·l − softplus(l)`,
/// evaluated for targets in `[0, 1]`.
pub fn bernoulli_loglik(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    let xl = tape.mul(x, logits)?;
    let sp = tape.softplus(logits);
    let d = tape.sub(xl, sp)?;
    tape.sum(d, Some(1))
}

/// Diagonal Gaussian log-density `log N(z; μ, var)` per row.
pub fn diag_gaussian_logpdf(tape: &mut Tape, z: Var, mu: Var, var: Var) -> Result<Var> {
    let dim = tape.shape(z).get(1).copied().unwrap_or(1);
    let d = tape.sub(z, mu)?;
    let d2 = tape.square(d);
    let q = tape.div(d2, var)?;
    let lv = tape.log(var)?;
    let s = tape.add(q, lv)?;
    let row = tape.sum(s, Some(1))?;
    let half = tape.scale(row, -0.5);
    Ok(tape.add_scalar(half, -(dim as f64 * HALF_LN_2PI) as f32))
}
